// SPDX-License-Identifier: Apache-2.0
#include "tensorize/mpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tensorize/errors.hpp"
#include "tensorize/linalg.hpp"

namespace tensorize {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using MutMap = Eigen::Map<Matrix>;

std::size_t product(const std::vector<std::size_t>& v) {
    return std::accumulate(v.begin(), v.end(), std::size_t{1}, std::multiplies<>());
}

// Core flattened as rows (row, right) x cols (left, col): the operator that
// maps a (left, col) slice of the running state to a (row, right) slice.
Matrix core_operator(const CoreDims& d, const Eigen::VectorXd& core) {
    Matrix g(static_cast<Eigen::Index>(d.row * d.right), static_cast<Eigen::Index>(d.left * d.col));
    for (std::size_t l = 0; l < d.left; ++l)
        for (std::size_t i = 0; i < d.row; ++i)
            for (std::size_t j = 0; j < d.col; ++j)
                for (std::size_t r = 0; r < d.right; ++r) {
                    g(static_cast<Eigen::Index>(i * d.right + r), static_cast<Eigen::Index>(l * d.col + j)) =
                        core(static_cast<Eigen::Index>(((l * d.row + i) * d.col + j) * d.right + r));
                }
    return g;
}

void check_chain(const MpoChain& chain) {
    if (chain.dims.empty() || chain.dims.size() != chain.cores.size()) {
        throw ArgumentError("MPO chain has no cores or mismatched core storage");
    }
    if (chain.dims.front().left != 1 || chain.dims.back().right != 1) {
        throw ArgumentError("MPO boundary bonds must be 1");
    }
    for (std::size_t t = 0; t < chain.dims.size(); ++t) {
        if (static_cast<std::size_t>(chain.cores[t].size()) != chain.dims[t].size()) {
            throw ArgumentError("MPO core " + std::to_string(t) + " storage does not match its dims");
        }
        if (t + 1 < chain.dims.size() && chain.dims[t].right != chain.dims[t + 1].left) {
            throw ArgumentError("MPO cores " + std::to_string(t) + " and " + std::to_string(t + 1) +
                                " do not share a bond size");
        }
    }
}

} // namespace

std::size_t IndexScheme::rows() const { return product(row_factors); }
std::size_t IndexScheme::cols() const { return product(col_factors); }

void IndexScheme::validate() const {
    if (row_factors.empty() || row_factors.size() != col_factors.size()) {
        throw ArgumentError("index scheme needs equally many row and column factors (got " +
                            std::to_string(row_factors.size()) + " and " +
                            std::to_string(col_factors.size()) + ")");
    }
    for (std::size_t i = 0; i < row_factors.size(); ++i) {
        if (row_factors[i] == 0 || col_factors[i] == 0) {
            throw ArgumentError("index scheme factors must be positive");
        }
    }
}

IndexScheme IndexScheme::balanced(std::size_t rows, std::size_t cols, std::size_t k) {
    return IndexScheme{balanced_factorization(rows, k), balanced_factorization(cols, k)};
}

std::vector<std::size_t> saturating_bonds(const IndexScheme& scheme) {
    scheme.validate();
    const std::size_t k = scheme.cores();
    std::vector<std::size_t> out;
    std::size_t left = 1;
    std::size_t total = scheme.rows() * scheme.cols();
    for (std::size_t i = 0; i + 1 < k; ++i) {
        left *= scheme.row_factors[i] * scheme.col_factors[i];
        out.push_back(std::min(left, total / left));
    }
    return out;
}

std::size_t full_bond(const IndexScheme& scheme) {
    const auto bonds = saturating_bonds(scheme);
    return bonds.empty() ? 1 : *std::max_element(bonds.begin(), bonds.end());
}

CoreDims MpoLayer::core_dims(std::size_t i) const {
    const std::size_t k = scheme.cores();
    return CoreDims{
        i == 0 ? 1 : bond_dims.at(i - 1),
        scheme.row_factors.at(i),
        scheme.col_factors.at(i),
        i + 1 == k ? 1 : bond_dims.at(i),
    };
}

void MpoLayer::validate() const {
    scheme.validate();
    const std::size_t k = scheme.cores();
    if (cores.size() != k || bond_dims.size() + 1 != k) {
        throw ArgumentError("MPO layer core/bond counts do not match its scheme");
    }
    if (scheme.rows() != rows || scheme.cols() != cols) {
        throw ArgumentError("MPO layer shape does not match its scheme");
    }
    for (std::size_t i = 0; i < k; ++i) {
        const CoreDims d = core_dims(i);
        const Shape expected{d.left, d.row, d.col, d.right};
        if (cores[i].shape() != expected) {
            throw ArgumentError("MPO core " + std::to_string(i) + " has shape " +
                                shape_string(cores[i].shape()) + ", expected " + shape_string(expected));
        }
    }
}

MpoLayer decompose(const DenseTensor& w, const IndexScheme& scheme, std::size_t max_bond, double rel_tol) {
    return decompose(w, scheme, DecomposeOptions{max_bond, rel_tol, {}});
}

MpoLayer decompose(const DenseTensor& w, const IndexScheme& scheme, const DecomposeOptions& options) {
    if (w.rank() != 2) {
        throw ArgumentError("decompose expects a matrix, got shape " + shape_string(w.shape()));
    }
    MpoLayer layer = decompose(w.to_matrix(), scheme, options);
    const DType target = is_floating(w.dtype()) ? w.dtype() : DType::f64;
    return target == DType::f64 ? layer : with_dtype(layer, target);
}

MpoLayer decompose(const Matrix& w, const IndexScheme& scheme, const DecomposeOptions& options) {
    scheme.validate();
    const auto rows = static_cast<std::size_t>(w.rows());
    const auto cols = static_cast<std::size_t>(w.cols());
    if (scheme.rows() != rows || scheme.cols() != cols) {
        throw ArgumentError("index scheme describes a " + std::to_string(scheme.rows()) + "x" +
                            std::to_string(scheme.cols()) + " matrix, got " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    }
    if (options.max_bond < 1) {
        throw ArgumentError("max_bond must be >= 1");
    }
    const std::size_t k = scheme.cores();
    if (!options.bond_caps.empty()) {
        if (options.bond_caps.size() + 1 != k) {
            throw ArgumentError("bond_caps needs " + std::to_string(k - 1) + " entries");
        }
        if (std::find(options.bond_caps.begin(), options.bond_caps.end(), 0u) != options.bond_caps.end()) {
            throw ArgumentError("bond_caps entries must be >= 1");
        }
    }

    MpoLayer layer;
    layer.scheme = scheme;
    layer.max_bond = options.max_bond;
    layer.rows = rows;
    layer.cols = cols;
    layer.dtype = DType::f64;

    if (k == 1) {
        layer.cores.push_back(reshape(DenseTensor::from_matrix(w), {1, rows, cols, 1}));
        return layer;
    }

    // (m1..mk, n1..nk) -> (m1, n1, ..., mk, nk)
    Shape split = scheme.row_factors;
    split.insert(split.end(), scheme.col_factors.begin(), scheme.col_factors.end());
    std::vector<std::size_t> perm(2 * k);
    for (std::size_t i = 0; i < k; ++i) {
        perm[2 * i] = i;
        perm[2 * i + 1] = k + i;
    }
    std::vector<double> carry = permute_axes(reshape(DenseTensor::from_matrix(w), split), perm).to_f64();

    double discarded = 0.0;
    std::size_t left = 1;
    std::size_t remaining = rows * cols;
    for (std::size_t i = 0; i + 1 < k; ++i) {
        const std::size_t phys = scheme.row_factors[i] * scheme.col_factors[i];
        const std::size_t m = left * phys;
        remaining /= phys;
        std::size_t cap = options.max_bond;
        if (!options.bond_caps.empty()) {
            cap = std::min(cap, options.bond_caps[i]);
        }
        const ConstMap unfolding(carry.data(), static_cast<Eigen::Index>(m),
                                 static_cast<Eigen::Index>(remaining));
        SvdResult svd = truncated_svd(Matrix(unfolding), cap, options.rel_tol);
        discarded += svd.discarded_weight;
        const std::size_t r = svd.rank_kept;

        layer.cores.push_back(DenseTensor::from_values(
            DType::f64, {left, scheme.row_factors[i], scheme.col_factors[i], r},
            std::span<const double>(svd.u.data(), static_cast<std::size_t>(svd.u.size()))));
        layer.bond_dims.push_back(r);

        Matrix next = Eigen::Map<const Eigen::VectorXd>(svd.singular_values.data(),
                                                        static_cast<Eigen::Index>(r))
                          .asDiagonal() *
                      svd.vt;
        carry.assign(next.data(), next.data() + next.size());
        left = r;
    }
    layer.cores.push_back(DenseTensor::from_values(
        DType::f64, {left, scheme.row_factors[k - 1], scheme.col_factors[k - 1], 1}, carry));
    layer.truncation_error = std::sqrt(discarded);
    return layer;
}

MpoLayer with_dtype(const MpoLayer& layer, DType dtype) {
    if (!is_floating(dtype)) {
        throw ArgumentError(std::string("MPO cores cannot be stored as ") + dtype_name(dtype));
    }
    MpoLayer out = layer;
    for (auto& core : out.cores) {
        core = core.cast(dtype);
    }
    out.dtype = dtype;
    return out;
}

Matrix reconstruct_matrix(const MpoLayer& layer) {
    layer.validate();
    const std::size_t k = layer.scheme.cores();
    Matrix acc = Matrix::Ones(1, 1);
    for (std::size_t t = 0; t < k; ++t) {
        const CoreDims d = layer.core_dims(t);
        const auto values = layer.cores[t].to_f64();
        const ConstMap core(values.data(), static_cast<Eigen::Index>(d.left),
                            static_cast<Eigen::Index>(d.row * d.col * d.right));
        Matrix joined = acc * core;
        acc = ConstMap(joined.data(), joined.size() / static_cast<Eigen::Index>(d.right),
                       static_cast<Eigen::Index>(d.right));
    }

    Shape interleaved;
    for (std::size_t t = 0; t < k; ++t) {
        interleaved.push_back(layer.scheme.row_factors[t]);
        interleaved.push_back(layer.scheme.col_factors[t]);
    }
    std::vector<std::size_t> perm(2 * k);
    for (std::size_t i = 0; i < k; ++i) {
        perm[i] = 2 * i;
        perm[k + i] = 2 * i + 1;
    }
    const DenseTensor flat = DenseTensor::from_values(
        DType::f64, interleaved, std::span<const double>(acc.data(), static_cast<std::size_t>(acc.size())));
    return reshape(permute_axes(flat, perm), {layer.rows, layer.cols}).to_matrix();
}

DenseTensor reconstruct(const MpoLayer& layer) {
    return DenseTensor::from_matrix(reconstruct_matrix(layer));
}

Matrix apply(const MpoLayer& layer, const Matrix& x) {
    layer.validate();
    return chain_apply(to_chain(layer), x);
}

DenseTensor apply(const MpoLayer& layer, const DenseTensor& x) {
    if (x.rank() != 2) {
        throw ArgumentError("apply expects x of shape (N, B), got " + shape_string(x.shape()));
    }
    return DenseTensor::from_matrix(apply(layer, x.to_matrix()));
}

std::size_t param_count(const MpoLayer& layer) {
    std::size_t total = 0;
    for (std::size_t i = 0; i < layer.scheme.cores(); ++i) {
        total += layer.core_dims(i).size();
    }
    return total;
}

std::size_t MpoChain::rows() const {
    std::size_t r = 1;
    for (const auto& d : dims) r *= d.row;
    return r;
}

std::size_t MpoChain::cols() const {
    std::size_t c = 1;
    for (const auto& d : dims) c *= d.col;
    return c;
}

std::size_t MpoChain::param_count() const {
    std::size_t total = 0;
    for (const auto& d : dims) total += d.size();
    return total;
}

MpoChain to_chain(const MpoLayer& layer) {
    layer.validate();
    MpoChain chain;
    for (std::size_t t = 0; t < layer.cores.size(); ++t) {
        chain.dims.push_back(layer.core_dims(t));
        const auto values = layer.cores[t].to_f64();
        chain.cores.emplace_back(Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                                   static_cast<Eigen::Index>(values.size())));
    }
    return chain;
}

MpoLayer from_chain(const MpoChain& chain, const MpoLayer& like, DType dtype) {
    check_chain(chain);
    MpoLayer out;
    out.max_bond = like.max_bond;
    out.truncation_error = like.truncation_error;
    out.dtype = DType::f64;
    for (std::size_t t = 0; t < chain.dims.size(); ++t) {
        const CoreDims& d = chain.dims[t];
        out.scheme.row_factors.push_back(d.row);
        out.scheme.col_factors.push_back(d.col);
        if (t + 1 < chain.dims.size()) {
            out.bond_dims.push_back(d.right);
        }
        out.cores.push_back(DenseTensor::from_values(
            DType::f64, {d.left, d.row, d.col, d.right},
            std::span<const double>(chain.cores[t].data(), static_cast<std::size_t>(chain.cores[t].size()))));
    }
    out.rows = chain.rows();
    out.cols = chain.cols();
    out.validate();
    return dtype == DType::f64 ? out : with_dtype(out, dtype);
}

// The running state entering core t is laid out as
// (row prefix P, left bond, col index n_t, suffix R) where P covers the row
// indices already produced and R the remaining col indices times the batch.
Matrix chain_apply(const MpoChain& chain, const Matrix& x, ChainCache* cache) {
    check_chain(chain);
    const std::size_t n = chain.cols();
    if (static_cast<std::size_t>(x.rows()) != n || x.cols() < 1) {
        throw ArgumentError("apply: x has " + std::to_string(x.rows()) + " rows, layer expects " +
                            std::to_string(n));
    }
    const auto batch = static_cast<std::size_t>(x.cols());
    Eigen::VectorXd state = Eigen::Map<const Eigen::VectorXd>(x.data(), x.size());
    if (cache) {
        cache->inputs.clear();
        cache->batch = batch;
    }

    std::size_t prefix = 1;
    std::size_t suffix = n * batch;
    for (std::size_t t = 0; t < chain.dims.size(); ++t) {
        const CoreDims& d = chain.dims[t];
        suffix /= d.col;
        const Matrix g = core_operator(d, chain.cores[t]);
        Eigen::VectorXd next(static_cast<Eigen::Index>(prefix * d.row * d.right * suffix));
        const auto in_block = static_cast<Eigen::Index>(d.left * d.col * suffix);
        const auto out_block = static_cast<Eigen::Index>(d.row * d.right * suffix);
        for (std::size_t p = 0; p < prefix; ++p) {
            const ConstMap s(state.data() + static_cast<Eigen::Index>(p) * in_block,
                             static_cast<Eigen::Index>(d.left * d.col), static_cast<Eigen::Index>(suffix));
            MutMap o(next.data() + static_cast<Eigen::Index>(p) * out_block,
                     static_cast<Eigen::Index>(d.row * d.right), static_cast<Eigen::Index>(suffix));
            o.noalias() = g * s;
        }
        if (cache) {
            cache->inputs.push_back(std::move(state));
        }
        state = std::move(next);
        prefix *= d.row;
    }
    return ConstMap(state.data(), static_cast<Eigen::Index>(prefix), static_cast<Eigen::Index>(batch));
}

Matrix chain_backward(const MpoChain& chain, const ChainCache& cache, const Matrix& dy,
                      std::vector<Eigen::VectorXd>& core_grads) {
    check_chain(chain);
    const std::size_t k = chain.dims.size();
    const std::size_t batch = cache.batch;
    if (cache.inputs.size() != k || static_cast<std::size_t>(dy.rows()) != chain.rows() ||
        static_cast<std::size_t>(dy.cols()) != batch) {
        throw ArgumentError("chain_backward: cache or upstream gradient does not match the chain");
    }
    core_grads.resize(k);
    for (std::size_t t = 0; t < k; ++t) {
        if (static_cast<std::size_t>(core_grads[t].size()) != chain.dims[t].size()) {
            core_grads[t] = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(chain.dims[t].size()));
        }
    }

    // Prefix/suffix sizes seen by each core on the forward pass.
    std::vector<std::size_t> prefixes(k), suffixes(k);
    std::size_t prefix = 1;
    std::size_t suffix = chain.cols() * batch;
    for (std::size_t t = 0; t < k; ++t) {
        suffix /= chain.dims[t].col;
        prefixes[t] = prefix;
        suffixes[t] = suffix;
        prefix *= chain.dims[t].row;
    }

    Eigen::VectorXd upstream = Eigen::Map<const Eigen::VectorXd>(dy.data(), dy.size());
    for (std::size_t t = k; t-- > 0;) {
        const CoreDims& d = chain.dims[t];
        const std::size_t p_count = prefixes[t];
        const std::size_t s = suffixes[t];
        const Matrix g = core_operator(d, chain.cores[t]);
        const Eigen::VectorXd& input = cache.inputs[t];
        const auto in_block = static_cast<Eigen::Index>(d.left * d.col * s);
        const auto out_block = static_cast<Eigen::Index>(d.row * d.right * s);

        Matrix dg = Matrix::Zero(g.rows(), g.cols());
        Eigen::VectorXd downstream(static_cast<Eigen::Index>(p_count) * in_block);
        for (std::size_t p = 0; p < p_count; ++p) {
            const ConstMap in(input.data() + static_cast<Eigen::Index>(p) * in_block,
                              static_cast<Eigen::Index>(d.left * d.col), static_cast<Eigen::Index>(s));
            const ConstMap dout(upstream.data() + static_cast<Eigen::Index>(p) * out_block,
                                static_cast<Eigen::Index>(d.row * d.right), static_cast<Eigen::Index>(s));
            MutMap din(downstream.data() + static_cast<Eigen::Index>(p) * in_block,
                       static_cast<Eigen::Index>(d.left * d.col), static_cast<Eigen::Index>(s));
            dg.noalias() += dout * in.transpose();
            din.noalias() = g.transpose() * dout;
        }

        Eigen::VectorXd& grad = core_grads[t];
        for (std::size_t l = 0; l < d.left; ++l)
            for (std::size_t i = 0; i < d.row; ++i)
                for (std::size_t j = 0; j < d.col; ++j)
                    for (std::size_t r = 0; r < d.right; ++r) {
                        grad(static_cast<Eigen::Index>(((l * d.row + i) * d.col + j) * d.right + r)) +=
                            dg(static_cast<Eigen::Index>(i * d.right + r), static_cast<Eigen::Index>(l * d.col + j));
                    }
        upstream = std::move(downstream);
    }
    return ConstMap(upstream.data(), static_cast<Eigen::Index>(chain.cols()), static_cast<Eigen::Index>(batch));
}

} // namespace tensorize
