// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tensorize/dense_tensor.hpp"

namespace tensorize {

struct SvdResult {
    Matrix u;                            // M x r, orthonormal columns
    std::vector<double> singular_values; // r kept values, non-increasing
    Matrix vt;                           // r x N, orthonormal rows
    std::size_t rank_kept = 0;
    double discarded_weight = 0.0;       // sum of squares of dropped values
};

/// Thin SVD keeping at most `max_rank` singular values.
///
/// A value is kept when it exceeds max(rel_tol, eps_floor) * sigma_1, where
/// eps_floor = max(M, N) * machine epsilon is the usual numerical-rank cutoff.
/// At least one value is always kept. The sign of each left singular vector
/// is fixed so that its largest-magnitude entry is positive (first one wins
/// on ties); the matching row of vt is flipped with it.
SvdResult truncated_svd(const Matrix& a, std::size_t max_rank, double rel_tol = 0.0);
SvdResult truncated_svd(const DenseTensor& a, std::size_t max_rank, double rel_tol = 0.0);

/// k factors of n, non-increasing, minimising max - min. Ties go to the
/// lexicographically smallest sequence. Pads with 1 when n has too few
/// prime factors.
std::vector<std::size_t> balanced_factorization(std::uint64_t n, std::size_t k);

} // namespace tensorize
