// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <unistd.h>

#include "oracles.hpp"
#include "tensorize/dense_tensor.hpp"
#include "tensorize/toy_model.hpp"

namespace testing_support {

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("tensorize-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
    [[nodiscard]] const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline tensorize::Matrix random_matrix(tensorize::DeterministicRng& rng, std::size_t rows, std::size_t cols) {
    tensorize::Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

inline oracle::Mat to_oracle(const tensorize::Matrix& m) {
    oracle::Mat o(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
    for (std::size_t i = 0; i < o.rows; ++i)
        for (std::size_t j = 0; j < o.cols; ++j) o(i, j) = m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return o;
}

inline tensorize::Matrix from_oracle(const oracle::Mat& o) {
    tensorize::Matrix m(static_cast<Eigen::Index>(o.rows), static_cast<Eigen::Index>(o.cols));
    for (std::size_t i = 0; i < o.rows; ++i)
        for (std::size_t j = 0; j < o.cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = o(i, j);
    return m;
}

inline double rel_diff(const tensorize::Matrix& a, const tensorize::Matrix& b) {
    const double ref = a.norm();
    return ref > 0.0 ? (a - b).norm() / ref : (a - b).norm();
}

} // namespace testing_support
