// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

#include "tensorize/dense_tensor.hpp"

namespace tensorize {

/// How the row and column indices of an M x N matrix are split across k cores.
struct IndexScheme {
    std::vector<std::size_t> row_factors;
    std::vector<std::size_t> col_factors;

    [[nodiscard]] std::size_t cores() const noexcept { return row_factors.size(); }
    [[nodiscard]] std::size_t rows() const;
    [[nodiscard]] std::size_t cols() const;

    /// Throws ArgumentError unless both lists are non-empty, equally long and positive.
    void validate() const;

    /// balanced_factorization applied to both dimensions.
    static IndexScheme balanced(std::size_t rows, std::size_t cols, std::size_t k);

    friend bool operator==(const IndexScheme&, const IndexScheme&) = default;
};

/// Largest bond each cut can carry without truncation: the smaller of the
/// interleaved dimensions on either side of the cut. Length k - 1.
std::vector<std::size_t> saturating_bonds(const IndexScheme& scheme);

/// A bond cap that never truncates for this scheme.
std::size_t full_bond(const IndexScheme& scheme);

struct CoreDims {
    std::size_t left = 1;
    std::size_t row = 1;
    std::size_t col = 1;
    std::size_t right = 1;

    [[nodiscard]] std::size_t size() const noexcept { return left * row * col * right; }
    friend bool operator==(const CoreDims&, const CoreDims&) = default;
};

/// A weight matrix factorised as a chain of 4-axis cores
/// (left_bond, row_phys, col_phys, right_bond).
struct MpoLayer {
    std::vector<DenseTensor> cores;
    IndexScheme scheme;
    std::size_t max_bond = 1;
    std::vector<std::size_t> bond_dims; // k - 1 internal bonds
    std::size_t rows = 0;
    std::size_t cols = 0;
    double truncation_error = 0.0;      // sqrt of summed discarded weight
    DType dtype = DType::f64;

    [[nodiscard]] CoreDims core_dims(std::size_t i) const;
    /// Throws ArgumentError on any broken structural invariant.
    void validate() const;
};

struct DecomposeOptions {
    std::size_t max_bond = 1;
    double rel_tol = 0.0;
    /// Optional per-bond caps (length k - 1), applied on top of max_bond.
    std::vector<std::size_t> bond_caps;
};

/// Left-to-right TT-SVD sweep over the interleaved index order
/// (m1, n1, ..., mk, nk). Cores are computed in f64 and stored as w's dtype
/// (f64 for integer inputs).
MpoLayer decompose(const DenseTensor& w, const IndexScheme& scheme, std::size_t max_bond,
                   double rel_tol = 0.0);
MpoLayer decompose(const DenseTensor& w, const IndexScheme& scheme, const DecomposeOptions& options);
MpoLayer decompose(const Matrix& w, const IndexScheme& scheme, const DecomposeOptions& options);

/// Re-encodes every core in `dtype`.
MpoLayer with_dtype(const MpoLayer& layer, DType dtype);

Matrix reconstruct_matrix(const MpoLayer& layer);
/// Dense f64 reconstruction, shape (M, N).
DenseTensor reconstruct(const MpoLayer& layer);

/// layer * x for x of shape (N, B), without forming the dense matrix.
DenseTensor apply(const MpoLayer& layer, const DenseTensor& x);
Matrix apply(const MpoLayer& layer, const Matrix& x);

std::size_t param_count(const MpoLayer& layer);

/// f64 working copy of an MPO's cores, used where cores are updated in place
/// (training) and by the matrix-free contraction.
struct MpoChain {
    std::vector<CoreDims> dims;
    std::vector<Eigen::VectorXd> cores; // row-major (left, row, col, right)

    [[nodiscard]] std::size_t rows() const;
    [[nodiscard]] std::size_t cols() const;
    [[nodiscard]] std::size_t param_count() const;
};

MpoChain to_chain(const MpoLayer& layer);
/// Rebuilds a layer from updated cores. Bond sizes are read off the cores and
/// the truncation error is carried over from `like`.
MpoLayer from_chain(const MpoChain& chain, const MpoLayer& like, DType dtype);

/// Intermediate states kept by chain_apply for the backward pass.
struct ChainCache {
    std::vector<Eigen::VectorXd> inputs; // state entering core t
    std::size_t batch = 0;
};

Matrix chain_apply(const MpoChain& chain, const Matrix& x, ChainCache* cache = nullptr);

/// Backward pass of chain_apply. Accumulates dL/dcore into `core_grads`
/// (resized as needed) and returns dL/dx.
Matrix chain_backward(const MpoChain& chain, const ChainCache& cache, const Matrix& dy,
                      std::vector<Eigen::VectorXd>& core_grads);

} // namespace tensorize
