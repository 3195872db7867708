// Regenerates the bundled grayscale fixture images under data/fixtures/.
// The images are procedural (overlapping shapes, bars, textures, blobs) so
// the repository carries no external image data. They are deliberately
// edge-rich at several scales: piecewise-constant geometry is where a
// sparsity prior buys something over a plain linear reconstruction.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "epn/pipeline.hpp"
#include "epn/rng.hpp"

using epn::Rng;
using epn::cs::Image;

namespace {

constexpr std::size_t kSize = 160;

Image blank(double v) {
  Image img;
  img.width = img.height = kSize;
  img.channels = 1;
  img.pixels.assign(kSize * kSize, v);
  return img;
}

double& px(Image& img, std::size_t x, std::size_t y) { return img.pixels[y * img.width + x]; }

void add_blob(Image& img, double cx, double cy, double sigma, double amp) {
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = double(x) - cx, dy = double(y) - cy;
      px(img, x, y) += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
}

void fill_rect(Image& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h,
               double v) {
  for (std::size_t y = y0; y < std::min(img.height, y0 + h); ++y)
    for (std::size_t x = x0; x < std::min(img.width, x0 + w); ++x) px(img, x, y) = v;
}

void fill_ellipse(Image& img, double cx, double cy, double rx, double ry, double v) {
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = (double(x) - cx) / rx, dy = (double(y) - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) px(img, x, y) = v;
    }
}

void fill_bar(Image& img, double cx, double cy, double angle, double len, double thick,
              double v) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double dx = double(x) - cx, dy = double(y) - cy;
      const double along = dx * ca + dy * sa;
      const double across = -dx * sa + dy * ca;
      if (std::fabs(along) <= len * 0.5 && std::fabs(across) <= thick * 0.5) px(img, x, y) = v;
    }
}

void clamp01(Image& img) {
  for (double& v : img.pixels) v = std::clamp(v, 0.0, 1.0);
}

// Overlapping rectangles and ellipses at many scales.
Image mosaic_image(Rng& rng, int shapes) {
  Image img = blank(rng.uniform(0.2, 0.8));
  for (int i = 0; i < shapes; ++i) {
    const double v = rng.uniform(0.02, 0.98);
    const std::size_t sz = 4 + std::size_t(rng.below(56));
    if (rng.below(2) == 0) {
      fill_rect(img, std::size_t(rng.below(kSize - 8)), std::size_t(rng.below(kSize - 8)),
                sz, 4 + std::size_t(rng.below(56)), v);
    } else {
      fill_ellipse(img, rng.uniform(8, kSize - 8.0), rng.uniform(8, kSize - 8.0),
                   rng.uniform(3, 30), rng.uniform(3, 30), v);
    }
  }
  clamp01(img);
  return img;
}

// Thin bars at random orientations over a mid background.
Image bars_image(Rng& rng) {
  Image img = blank(rng.uniform(0.3, 0.7));
  for (int i = 0; i < 34; ++i) {
    fill_bar(img, rng.uniform(0, kSize), rng.uniform(0, kSize), rng.uniform(0, 3.14159),
             rng.uniform(20, 110), rng.uniform(2, 9), rng.uniform(0.02, 0.98));
  }
  clamp01(img);
  return img;
}

// Smooth blobs with a few hard shapes punched through; keeps some low-
// frequency content in the corpus.
Image blobs_image(Rng& rng) {
  Image img = blank(0.4);
  for (int i = 0; i < 10; ++i)
    add_blob(img, rng.uniform(0, kSize), rng.uniform(0, kSize), rng.uniform(8, 26),
             rng.uniform(-0.5, 0.6));
  for (int i = 0; i < 6; ++i)
    fill_rect(img, std::size_t(rng.below(kSize - 20)), std::size_t(rng.below(kSize - 20)),
              6 + std::size_t(rng.below(26)), 6 + std::size_t(rng.below(26)),
              rng.uniform(0.05, 0.95));
  clamp01(img);
  return img;
}

}  // namespace

int main(int argc, char** argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : "data/fixtures";
  std::filesystem::create_directories(out);
  Rng rng(20240801);
  std::vector<Image> images;
  images.push_back(mosaic_image(rng, 70));
  images.push_back(bars_image(rng));
  images.push_back(blobs_image(rng));
  images.push_back(mosaic_image(rng, 40));
  images.push_back(bars_image(rng));
  images.push_back(mosaic_image(rng, 90));
  images.push_back(blobs_image(rng));
  images.push_back(mosaic_image(rng, 55));
  for (std::size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "fixture_%02zu.pgm", i);
    epn::cs::write_pgm((out / name).string(), images[i]);
    std::cout << "wrote " << (out / name).string() << "\n";
  }
  return 0;
}
