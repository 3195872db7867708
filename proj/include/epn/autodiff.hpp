#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "epn/tensor.hpp"

namespace epn::ad {

/// One vertex of the computation graph. Nodes are created through Tape and
/// live for the lifetime of the tape that produced them. The gradient
/// accumulator is allocated on first touch and always matches the value
/// shape; leaves that never receive gradient keep an empty accumulator.
struct Node {
  Tensor value;
  Tensor grad;
  const char* op = "leaf";
  bool requires_grad = false;
  std::vector<Node*> parents;
  std::function<void()> backprop;  // adds this node's grad into its parents
};

/// Append-only computation graph. Creation order is a topological order, so
/// backward() is a single reverse sweep that visits each node exactly once.
/// Gradients accumulate across backward() calls; call zero_grad() between
/// passes that must not mix.
class Tape {
 public:
  Node* leaf(Tensor value, bool requires_grad = false) {
    Node* n = push("leaf", {});
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
  }

  /// 2-D correlation, kernels [Cout,Cin,k,k] over images [Cin,H,W], no bias.
  /// k=3 zero-pads by 1 so the spatial size is preserved; k=1 mixes channels.
  Node* conv2d(Node* input, Node* kernel) {
    const Tensor& in = input->value;
    const Tensor& kr = kernel->value;
    if (in.rank() != 3)
      throw std::invalid_argument("conv2d: input must be [C,H,W], got " + in.shape_str());
    if (kr.rank() != 4)
      throw std::invalid_argument("conv2d: kernel must be [Cout,Cin,k,k], got " + kr.shape_str());
    const std::size_t k = kr.dim(2);
    if (kr.dim(3) != k || (k != 1 && k != 3))
      throw std::invalid_argument("conv2d: kernel spatial dimensions must be 1x1 or 3x3, got " +
                                  std::to_string(kr.dim(2)) + "x" + std::to_string(kr.dim(3)));
    if (kr.dim(1) != in.dim(0))
      throw std::invalid_argument("conv2d: kernel input-channel dimension " +
                                  std::to_string(kr.dim(1)) + " does not match input channels " +
                                  std::to_string(in.dim(0)));

    Node* n = push("conv2d", {input, kernel});
    n->value = Tensor({kr.dim(0), in.dim(1), in.dim(2)});
    conv_forward(in, kr, n->value);
    if (n->requires_grad) {
      n->backprop = [n, input, kernel]() {
        if (input->requires_grad)
          conv_backward_input(n->grad, kernel->value, ensure_grad(input));
        if (kernel->requires_grad)
          conv_backward_kernel(n->grad, input->value, ensure_grad(kernel));
      };
    }
    return n;
  }

  Node* relu(Node* x) {
    Node* n = push("relu", {x});
    n->value = x->value;
    for (double& v : n->value.values()) v = v > 0.0 ? v : 0.0;
    if (n->requires_grad) {
      n->backprop = [n, x]() {
        if (!x->requires_grad) return;
        Tensor& gx = ensure_grad(x);
        const Tensor& v = x->value;
        for (std::size_t i = 0; i < v.size(); ++i)
          if (v[i] > 0.0) gx[i] += n->grad[i];
      };
    }
    return n;
  }

  /// Channel-wise shrinkage: sign(x) * max(|x| - |theta_c|, 0) on [C,H,W].
  /// Thresholds enter through their absolute value; the dead zone and the
  /// kink itself carry zero gradient.
  Node* soft_threshold(Node* x, Node* thresholds) {
    const Tensor& in = x->value;
    const Tensor& th = thresholds->value;
    if (in.rank() != 3)
      throw std::invalid_argument("soft_threshold: input must be [C,H,W], got " + in.shape_str());
    if (th.rank() != 1 || th.dim(0) != in.dim(0))
      throw std::invalid_argument("soft_threshold: threshold count " +
                                  std::to_string(th.size()) + " does not match channel count " +
                                  std::to_string(in.dim(0)));

    Node* n = push("soft_threshold", {x, thresholds});
    n->value = Tensor(in.shape());
    const std::size_t plane = in.dim(1) * in.dim(2);
    for (std::size_t c = 0; c < in.dim(0); ++c) {
      const double t = std::fabs(th[c]);
      for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
        const double v = in[i];
        n->value[i] = v > t ? v - t : (v < -t ? v + t : 0.0);
      }
    }
    if (n->requires_grad) {
      n->backprop = [n, x, thresholds, plane]() {
        const Tensor& in = x->value;
        const Tensor& th = thresholds->value;
        for (std::size_t c = 0; c < in.dim(0); ++c) {
          const double t = std::fabs(th[c]);
          const double sign_t = th[c] > 0.0 ? 1.0 : (th[c] < 0.0 ? -1.0 : 0.0);
          double acc = 0.0;
          for (std::size_t i = c * plane; i < (c + 1) * plane; ++i) {
            const double v = in[i];
            if (v > t || v < -t) {
              if (x->requires_grad) ensure_grad(x)[i] += n->grad[i];
              acc += n->grad[i] * (v > 0.0 ? -1.0 : 1.0);
            }
          }
          if (thresholds->requires_grad) ensure_grad(thresholds)[c] += acc * sign_t;
        }
      };
    }
    return n;
  }

  Node* matmul(Node* a, Node* b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.rank() != 2 || bv.rank() != 2)
      throw std::invalid_argument("matmul: operands must be matrices, got " + av.shape_str() +
                                  " and " + bv.shape_str());
    if (av.dim(1) != bv.dim(0))
      throw std::invalid_argument("matmul: inner dimension " + std::to_string(av.dim(1)) +
                                  " does not match " + std::to_string(bv.dim(0)));
    Node* n = push("matmul", {a, b});
    n->value = Tensor({av.dim(0), bv.dim(1)});
    matmul_acc(av, bv, n->value);
    if (n->requires_grad) {
      n->backprop = [n, a, b]() {
        const std::size_t m = a->value.dim(0), k = a->value.dim(1), p = b->value.dim(1);
        const Tensor& gy = n->grad;
        if (a->requires_grad) {
          Tensor& ga = ensure_grad(a);  // ga[i,l] += sum_j gy[i,j] * b[l,j]
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l) {
              double acc = 0.0;
              const double* gr = gy.data() + i * p;
              const double* br = b->value.data() + l * p;
              for (std::size_t j = 0; j < p; ++j) acc += gr[j] * br[j];
              ga[i * k + l] += acc;
            }
        }
        if (b->requires_grad) {
          Tensor& gb = ensure_grad(b);  // gb[l,j] += sum_i a[i,l] * gy[i,j]
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t l = 0; l < k; ++l) {
              const double w = a->value[i * k + l];
              const double* gr = gy.data() + i * p;
              double* dst = gb.data() + l * p;
              for (std::size_t j = 0; j < p; ++j) dst[j] += w * gr[j];
            }
        }
      };
    }
    return n;
  }

  Node* transpose(Node* a) {
    const Tensor& av = a->value;
    if (av.rank() != 2)
      throw std::invalid_argument("transpose: operand must be a matrix, got " + av.shape_str());
    Node* n = push("transpose", {a});
    const std::size_t m = av.dim(0), p = av.dim(1);
    n->value = Tensor({p, m});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p; ++j) n->value(j, i) = av(i, j);
    if (n->requires_grad) {
      n->backprop = [n, a, m, p]() {
        if (!a->requires_grad) return;
        Tensor& ga = ensure_grad(a);
        for (std::size_t j = 0; j < p; ++j)
          for (std::size_t i = 0; i < m; ++i) ga(i, j) += n->grad(j, i);
      };
    }
    return n;
  }

  /// Row-wise softmax with max subtraction for overflow safety.
  Node* softmax_rows(Node* a) {
    const Tensor& av = a->value;
    if (av.rank() != 2)
      throw std::invalid_argument("softmax_rows: operand must be a matrix, got " + av.shape_str());
    Node* n = push("softmax_rows", {a});
    const std::size_t m = av.dim(0), p = av.dim(1);
    n->value = Tensor({m, p});
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = av.data() + i * p;
      double* out = n->value.data() + i * p;
      double mx = row[0];
      for (std::size_t j = 1; j < p; ++j) mx = std::max(mx, row[j]);
      double sum = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        out[j] = std::exp(row[j] - mx);
        sum += out[j];
      }
      for (std::size_t j = 0; j < p; ++j) out[j] /= sum;
    }
    if (n->requires_grad) {
      n->backprop = [n, a, m, p]() {
        if (!a->requires_grad) return;
        Tensor& ga = ensure_grad(a);
        for (std::size_t i = 0; i < m; ++i) {
          const double* s = n->value.data() + i * p;
          const double* gy = n->grad.data() + i * p;
          double dot = 0.0;
          for (std::size_t j = 0; j < p; ++j) dot += s[j] * gy[j];
          double* dst = ga.data() + i * p;
          for (std::size_t j = 0; j < p; ++j) dst[j] += s[j] * (gy[j] - dot);
        }
      };
    }
    return n;
  }

  /// Stack a's channels before b's; spatial sizes must agree.
  Node* concat_channels(Node* a, Node* b) {
    const Tensor& av = a->value;
    const Tensor& bv = b->value;
    if (av.rank() != 3 || bv.rank() != 3)
      throw std::invalid_argument("concat_channels: operands must be [C,H,W], got " +
                                  av.shape_str() + " and " + bv.shape_str());
    if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
      throw std::invalid_argument("concat_channels: spatial size " + std::to_string(av.dim(1)) +
                                  "x" + std::to_string(av.dim(2)) + " does not match " +
                                  std::to_string(bv.dim(1)) + "x" + std::to_string(bv.dim(2)));
    Node* n = push("concat_channels", {a, b});
    n->value = Tensor({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
    std::copy(av.data(), av.data() + av.size(), n->value.data());
    std::copy(bv.data(), bv.data() + bv.size(), n->value.data() + av.size());
    if (n->requires_grad) {
      n->backprop = [n, a, b]() {
        const std::size_t na = a->value.size();
        if (a->requires_grad) {
          Tensor& ga = ensure_grad(a);
          for (std::size_t i = 0; i < na; ++i) ga[i] += n->grad[i];
        }
        if (b->requires_grad) {
          Tensor& gb = ensure_grad(b);
          for (std::size_t i = 0; i < b->value.size(); ++i) gb[i] += n->grad[na + i];
        }
      };
    }
    return n;
  }

  Node* add(Node* a, Node* b) { return elementwise(a, b, "add", +1.0); }
  Node* sub(Node* a, Node* b) { return elementwise(a, b, "sub", -1.0); }

  /// Multiply tensor x by the (learnable) scalar node s.
  Node* scale(Node* s, Node* x) {
    if (s->value.size() != 1)
      throw std::invalid_argument("scale: scale factor must be a scalar, got " +
                                  s->value.shape_str());
    Node* n = push("scale", {s, x});
    const double sv = s->value[0];
    n->value = x->value;
    for (double& v : n->value.values()) v *= sv;
    if (n->requires_grad) {
      n->backprop = [n, s, x]() {
        if (s->requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < x->value.size(); ++i) acc += n->grad[i] * x->value[i];
          ensure_grad(s)[0] += acc;
        }
        if (x->requires_grad) {
          Tensor& gx = ensure_grad(x);
          const double sv = s->value[0];
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += sv * n->grad[i];
        }
      };
    }
    return n;
  }

  /// Multiply by a compile-time constant (not a learnable quantity).
  Node* mul_scalar(Node* x, double c) {
    Node* n = push("mul_scalar", {x});
    n->value = x->value;
    for (double& v : n->value.values()) v *= c;
    if (n->requires_grad) {
      n->backprop = [n, x, c]() {
        if (!x->requires_grad) return;
        Tensor& gx = ensure_grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += c * n->grad[i];
      };
    }
    return n;
  }

  Node* reshape(Node* x, std::vector<std::size_t> shape) {
    Node* n = push("reshape", {x});
    n->value = x->value.reshaped(std::move(shape));
    if (n->requires_grad) {
      n->backprop = [n, x]() {
        if (!x->requires_grad) return;
        Tensor& gx = ensure_grad(x);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += n->grad[i];
      };
    }
    return n;
  }

  /// Sum of squares, reduced to a scalar node.
  Node* squared_norm(Node* x) {
    Node* n = push("squared_norm", {x});
    double acc = 0.0;
    for (double v : x->value.values()) acc += v * v;
    n->value = Tensor::scalar(acc);
    if (n->requires_grad) {
      n->backprop = [n, x]() {
        if (!x->requires_grad) return;
        Tensor& gx = ensure_grad(x);
        const double g = n->grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * g * x->value[i];
      };
    }
    return n;
  }

  Node* sum(Node* x) {
    Node* n = push("sum", {x});
    double acc = 0.0;
    for (double v : x->value.values()) acc += v;
    n->value = Tensor::scalar(acc);
    if (n->requires_grad) {
      n->backprop = [n, x]() {
        if (!x->requires_grad) return;
        Tensor& gx = ensure_grad(x);
        const double g = n->grad[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
      };
    }
    return n;
  }

  /// Reverse sweep from a scalar loss. A second sweep on the same tape needs
  /// an explicit zero_grad() first; intermediate accumulators would otherwise
  /// mix the two passes.
  void backward(Node* loss) {
    if (loss->value.size() != 1)
      throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                  loss->value.shape_str());
    if (backward_done_)
      throw std::logic_error("backward: gradients already populated; call zero_grad() first");
    backward_done_ = true;
    ensure_grad(loss)[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = *it;
      if (n.backprop && n.grad.size() != 0) n.backprop();
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) n.grad = Tensor();
    backward_done_ = false;
  }

  std::size_t size() const { return nodes_.size(); }

  static Tensor grad_or_zero(const Node* n) {
    return n->grad.size() != 0 ? n->grad : Tensor(n->value.shape());
  }

 private:
  Node* push(const char* op, std::vector<Node*> parents) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.op = op;
    for (Node* p : parents)
      if (p->requires_grad) n.requires_grad = true;
    n.parents = std::move(parents);
    return &n;
  }

  static Tensor& ensure_grad(Node* n) {
    if (n->grad.size() == 0) n->grad = Tensor(n->value.shape());
    return n->grad;
  }

  Node* elementwise(Node* a, Node* b, const char* op, double sign_b) {
    if (!a->value.same_shape(b->value))
      throw std::invalid_argument(std::string(op) + ": shape " + a->value.shape_str() +
                                  " does not match " + b->value.shape_str());
    Node* n = push(op, {a, b});
    n->value = a->value;
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] += sign_b * b->value[i];
    if (n->requires_grad) {
      n->backprop = [n, a, b, sign_b]() {
        if (a->requires_grad) {
          Tensor& ga = ensure_grad(a);
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += n->grad[i];
        }
        if (b->requires_grad) {
          Tensor& gb = ensure_grad(b);
          for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += sign_b * n->grad[i];
        }
      };
    }
    return n;
  }

  static void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    if (p == 1) {  // matrix-vector: accumulate in a register
      for (std::size_t i = 0; i < m; ++i) {
        double acc = 0.0;
        const double* row = a.data() + i * k;
        for (std::size_t l = 0; l < k; ++l) acc += row[l] * b[l];
        out[i] = acc;
      }
      return;
    }
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t l = 0; l < k; ++l) {
        const double w = a[i * k + l];
        const double* br = b.data() + l * p;
        double* dst = out.data() + i * p;
        for (std::size_t j = 0; j < p; ++j) dst[j] += w * br[j];
      }
  }

  // One kernel row applied to one image row: dst += kl*src[x-1] + kc*src[x]
  // + kr*src[x+1] with zero padding at both ends.
  static void conv_row3(double* dst, const double* src, double kl, double kc, double kr,
                        std::size_t w) {
    if (w == 1) {
      dst[0] += kc * src[0];
      return;
    }
    dst[0] += kc * src[0] + kr * src[1];
    for (std::size_t x = 1; x + 1 < w; ++x)
      dst[x] += kl * src[x - 1] + kc * src[x] + kr * src[x + 1];
    dst[w - 1] += kl * src[w - 2] + kc * src[w - 1];
  }

  static void conv_forward(const Tensor& in, const Tensor& kr, Tensor& out) {
    const std::size_t cout = kr.dim(0), cin = kr.dim(1), k = kr.dim(2);
    const std::size_t H = in.dim(1), W = in.dim(2);
    if (k == 1) {
      for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t ic = 0; ic < cin; ++ic) {
          const double w = kr(oc, ic, 0, 0);
          const double* src = &in(ic, 0, 0);
          double* dst = &out(oc, 0, 0);
          for (std::size_t i = 0; i < H * W; ++i) dst[i] += w * src[i];
        }
      return;
    }
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t ic = 0; ic < cin; ++ic)
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const double kl = kr(oc, ic, ky, 0);
          const double kc = kr(oc, ic, ky, 1);
          const double kx = kr(oc, ic, ky, 2);
          const std::ptrdiff_t dy = std::ptrdiff_t(ky) - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0;
          const std::size_t y1 = dy > 0 ? H - 1 : H;
          for (std::size_t y = y0; y < y1; ++y)
            conv_row3(&out(oc, y, 0), &in(ic, std::size_t(std::ptrdiff_t(y) + dy), 0), kl, kc,
                      kx, W);
        }
  }

  static void conv_backward_input(const Tensor& gy, const Tensor& kr, Tensor& din) {
    const std::size_t cout = kr.dim(0), cin = kr.dim(1), k = kr.dim(2);
    const std::size_t H = din.dim(1), W = din.dim(2);
    if (k == 1) {
      for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t ic = 0; ic < cin; ++ic) {
          const double w = kr(oc, ic, 0, 0);
          const double* src = &gy(oc, 0, 0);
          double* dst = &din(ic, 0, 0);
          for (std::size_t i = 0; i < H * W; ++i) dst[i] += w * src[i];
        }
      return;
    }
    // correlation with the flipped kernel: din[ic, y, x] gets the kernel row
    // reversed and the row offset negated
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t ic = 0; ic < cin; ++ic)
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const double kl = kr(oc, ic, ky, 2);
          const double kc = kr(oc, ic, ky, 1);
          const double kx = kr(oc, ic, ky, 0);
          const std::ptrdiff_t dy = 1 - std::ptrdiff_t(ky);
          const std::size_t y0 = dy < 0 ? 1 : 0;
          const std::size_t y1 = dy > 0 ? H - 1 : H;
          for (std::size_t y = y0; y < y1; ++y)
            conv_row3(&din(ic, y, 0), &gy(oc, std::size_t(std::ptrdiff_t(y) + dy), 0), kl, kc,
                      kx, W);
        }
  }

  static void conv_backward_kernel(const Tensor& gy, const Tensor& in, Tensor& dk) {
    const std::size_t cout = dk.dim(0), cin = dk.dim(1), k = dk.dim(2);
    const std::size_t H = in.dim(1), W = in.dim(2);
    if (k == 1) {
      for (std::size_t oc = 0; oc < cout; ++oc)
        for (std::size_t ic = 0; ic < cin; ++ic) {
          const double* g = &gy(oc, 0, 0);
          const double* src = &in(ic, 0, 0);
          double acc = 0.0;
          for (std::size_t i = 0; i < H * W; ++i) acc += g[i] * src[i];
          dk(oc, ic, 0, 0) += acc;
        }
      return;
    }
    for (std::size_t oc = 0; oc < cout; ++oc)
      for (std::size_t ic = 0; ic < cin; ++ic)
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t dy = std::ptrdiff_t(ky) - 1;
          const std::size_t y0 = dy < 0 ? 1 : 0;
          const std::size_t y1 = dy > 0 ? H - 1 : H;
          double acc_l = 0.0, acc_c = 0.0, acc_r = 0.0;
          for (std::size_t y = y0; y < y1; ++y) {
            const double* g = &gy(oc, y, 0);
            const double* src = &in(ic, std::size_t(std::ptrdiff_t(y) + dy), 0);
            if (W == 1) {
              acc_c += g[0] * src[0];
              continue;
            }
            acc_c += g[0] * src[0];
            acc_r += g[0] * src[1];
            for (std::size_t x = 1; x + 1 < W; ++x) {
              acc_l += g[x] * src[x - 1];
              acc_c += g[x] * src[x];
              acc_r += g[x] * src[x + 1];
            }
            acc_l += g[W - 1] * src[W - 2];
            acc_c += g[W - 1] * src[W - 1];
          }
          dk(oc, ic, ky, 0) += acc_l;
          dk(oc, ic, ky, 1) += acc_c;
          dk(oc, ic, ky, 2) += acc_r;
        }
  }

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace epn::ad
