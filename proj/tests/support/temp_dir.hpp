#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

namespace epn::test {

/// Scoped working directory under the system temp root.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& prefix) {
    static std::atomic<int> counter{0};
    path = std::filesystem::temp_directory_path() /
           (prefix + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }

  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }

  std::string str() const { return path.string(); }
};

}  // namespace epn::test
