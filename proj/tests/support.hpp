#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <gtest/gtest.h>

#include "biotwin/error.hpp"

// Asserts that `stmt` throws biotwin::Error of the given kind.
#define EXPECT_ERROR_KIND(stmt, expected_kind)                                        \
  do {                                                                                \
    try {                                                                             \
      stmt;                                                                           \
      ADD_FAILURE() << "expected " << biotwin::to_string(expected_kind) << " error"; \
    } catch (const biotwin::Error& e) {                                               \
      EXPECT_EQ(e.kind(), expected_kind) << e.what();                                 \
    }                                                                                 \
  } while (0)

namespace testing_support {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("biotwin-" + tag + "-" + std::to_string(rd()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace testing_support
