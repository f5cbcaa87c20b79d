// Copyright 2026 The tissueseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Shared helpers for the unit tests.

#ifndef TISSUESEG_TESTS_TEST_UTIL_HPP_
#define TISSUESEG_TESTS_TEST_UTIL_HPP_

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "tissueseg/error.hpp"
#include "tissueseg/log.hpp"
#include "tissueseg/tensor.hpp"

namespace tissueseg::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("tissueseg_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Captures warnings for the lifetime of the object.
class WarningCollector {
 public:
  WarningCollector() {
    previous_ = set_warning_sink([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCollector() { set_warning_sink(previous_); }

  bool contains(const std::string& needle) const {
    for (const auto& m : messages) {
      if (m.find(needle) != std::string::npos) return true;
    }
    return false;
  }

  std::vector<std::string> messages;

 private:
  WarningSink previous_;
};

inline Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng, float lo = -1.0f,
                            float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(c, h, w);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace tissueseg::testing

// Asserts that stmt throws tissueseg::Error carrying the given code.
#define EXPECT_ERROR_CODE(stmt, expected)                                          \
  do {                                                                             \
    try {                                                                          \
      stmt;                                                                        \
      ADD_FAILURE() << "expected " << ::tissueseg::error_code_name(expected);      \
    } catch (const ::tissueseg::Error& e) {                                        \
      EXPECT_EQ(e.code(), expected) << e.what();                                   \
    }                                                                              \
  } while (0)

#endif  // TISSUESEG_TESTS_TEST_UTIL_HPP_
