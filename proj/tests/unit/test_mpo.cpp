// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "tensorize/errors.hpp"
#include "tensorize/mpo.hpp"

using namespace tensorize;
using testing_support::random_matrix;
using testing_support::rel_diff;

namespace {

IndexScheme scheme(std::vector<std::size_t> rows, std::vector<std::size_t> cols) {
    return IndexScheme{std::move(rows), std::move(cols)};
}

} // namespace

TEST_CASE("216x216 worked example") {
    DeterministicRng rng(10);
    const Matrix w = random_matrix(rng, 216, 216);
    const auto layer = decompose(w, scheme({6, 6, 6}, {6, 6, 6}), DecomposeOptions{4, 0.0, {}});
    CHECK(layer.bond_dims == std::vector<std::size_t>{4, 4});
    CHECK(param_count(layer) == 864);
    CHECK(param_count(layer) == 2 * 36 * 4 + 36 * 4 * 4);
    std::size_t buffer_total = 0;
    for (const auto& c : layer.cores) buffer_total += c.size();
    CHECK(param_count(layer) == buffer_total);
    CHECK(layer.core_dims(1) == CoreDims{4, 6, 6, 4});
}

TEST_CASE("identity factorises with bond 1") {
    const auto layer = decompose(DenseTensor::from_matrix(Matrix::Identity(4, 4)), scheme({2, 2}, {2, 2}), 4);
    CHECK(layer.bond_dims == std::vector<std::size_t>{1});
    CHECK(layer.truncation_error == 0.0);
    CHECK(param_count(layer) == 8);
    CHECK((reconstruct_matrix(layer) - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-12);
    DeterministicRng rng(11);
    const Matrix x = random_matrix(rng, 4, 5);
    CHECK((apply(layer, x) - x).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("Kronecker product is rank one in the interleaved order") {
    DeterministicRng rng(12);
    const Matrix a = random_matrix(rng, 3, 2), b = random_matrix(rng, 4, 5);
    const Matrix w = testing_support::from_oracle(oracle::kronecker(testing_support::to_oracle(a), testing_support::to_oracle(b)));
    const auto layer = decompose(w, scheme({3, 4}, {2, 5}), DecomposeOptions{1, 0.0, {}});
    CHECK(layer.bond_dims == std::vector<std::size_t>{1});
    CHECK((reconstruct_matrix(layer) - w).norm() <= 1e-10);
}

TEST_CASE("single cut error equals the dense SVD oracle") {
    DeterministicRng rng(13);
    const Matrix w = random_matrix(rng, 8, 8);
    const auto layer = decompose(w, scheme({2, 4}, {2, 4}), DecomposeOptions{1, 0.0, {}});
    const double err = (w - reconstruct_matrix(layer)).norm();
    const auto r = oracle::single_cut_matricization(testing_support::to_oracle(w), 2, 4, 2, 4);
    CHECK(r.rows == 4);
    CHECK(r.cols == 16);
    CHECK(std::abs(err - oracle::best_rank_error(r, 1)) <= 1e-9);
    CHECK(std::abs(layer.truncation_error - err) <= 1e-9);
}

TEST_CASE("cores are left-canonical") {
    DeterministicRng rng(14);
    const Matrix w = random_matrix(rng, 48, 60);
    const auto layer = decompose(w, IndexScheme::balanced(48, 60, 3), DecomposeOptions{5, 0.0, {}});
    for (std::size_t i = 0; i + 1 < layer.cores.size(); ++i) {
        const CoreDims d = layer.core_dims(i);
        const auto v = layer.cores[i].to_f64();
        const Eigen::Map<const Matrix> core(v.data(), static_cast<Eigen::Index>(d.left * d.row * d.col),
                                            static_cast<Eigen::Index>(d.right));
        const Matrix gram = core.transpose() * core;
        CHECK((gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff() <= 1e-6);
    }
}

TEST_CASE("error certificate and monotonicity in chi") {
    DeterministicRng rng(15);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 8 + rng.below(57), n = 8 + rng.below(57), k = 2 + rng.below(2);
        const Matrix w = random_matrix(rng, m, n);
        const auto s = IndexScheme::balanced(m, n, k);
        double previous = INFINITY;
        for (std::size_t chi = 1; chi <= full_bond(s); chi *= 2) {
            const auto layer = decompose(w, s, DecomposeOptions{chi, 0.0, {}});
            const double err = (w - reconstruct_matrix(layer)).norm();
            CHECK(err <= layer.truncation_error + 1e-8);
            CHECK(layer.truncation_error <= previous + 1e-12);
            for (auto b : layer.bond_dims) CHECK(b <= chi);
            previous = layer.truncation_error;
        }
    }
}

TEST_CASE("full bond reconstructs exactly") {
    DeterministicRng rng(16);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t m = 1 + rng.below(64), n = 1 + rng.below(64), k = 2 + rng.below(2);
        const DenseTensor w = DenseTensor::from_matrix(random_matrix(rng, m, n), DType::f32);
        const auto s = IndexScheme::balanced(m, n, k);
        const auto layer = decompose(w, s, full_bond(s));
        CHECK(layer.dtype == DType::f32);
        CHECK(rel_diff(w.to_matrix(), reconstruct_matrix(layer)) <= 1e-6);
    }
}

TEST_CASE("saturating bonds bound every cut") {
    const auto s = scheme({2, 3, 4}, {5, 1, 2});
    CHECK(saturating_bonds(s) == std::vector<std::size_t>{10, 8});
    CHECK(full_bond(s) == 10);
    CHECK(saturating_bonds(scheme({6, 6, 6}, {6, 6, 6})) == std::vector<std::size_t>{36, 36});
}

TEST_CASE("per-bond caps and rel_tol") {
    DeterministicRng rng(17);
    const Matrix w = random_matrix(rng, 64, 64);
    const auto capped = decompose(w, IndexScheme::balanced(64, 64, 3), DecomposeOptions{8, 0.0, {3, 5}});
    CHECK(capped.bond_dims == std::vector<std::size_t>{3, 5});
    CHECK_THROWS_AS(decompose(w, IndexScheme::balanced(64, 64, 3), DecomposeOptions{8, 0.0, {3}}), ArgumentError);
    const auto loose = decompose(w, IndexScheme::balanced(64, 64, 3), DecomposeOptions{16, 0.9, {}});
    CHECK(loose.bond_dims.front() < 16);
}

TEST_CASE("single core layer is the matrix itself") {
    DeterministicRng rng(18);
    const Matrix w = random_matrix(rng, 5, 7);
    const auto layer = decompose(w, scheme({5}, {7}), DecomposeOptions{1, 0.0, {}});
    CHECK(layer.truncation_error == 0.0);
    CHECK(layer.bond_dims.empty());
    CHECK(reconstruct_matrix(layer) == w);
    CHECK(param_count(layer) == 35);
}

TEST_CASE("apply matches reconstruct then multiply") {
    DeterministicRng rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 4 + rng.below(40), n = 4 + rng.below(40), k = 1 + rng.below(3);
        const auto s = IndexScheme::balanced(m, n, k);
        const auto layer = decompose(DenseTensor::from_matrix(random_matrix(rng, m, n), DType::f32), s, 1 + rng.below(6));
        const Matrix x = random_matrix(rng, n, 3);
        const Matrix expected = reconstruct_matrix(layer) * x;
        CHECK(rel_diff(expected, apply(layer, x)) <= 1e-6);
        const auto out = apply(layer, DenseTensor::from_matrix(x.col(0), DType::f32));
        CHECK(out.shape() == Shape{m, 1});
    }
    const auto layer = decompose(Matrix::Identity(6, 6), IndexScheme::balanced(6, 6, 2), DecomposeOptions{4, 0.0, {}});
    CHECK_THROWS_AS(apply(layer, Matrix::Zero(5, 2)), ArgumentError);
}

TEST_CASE("scheme validation") {
    CHECK_THROWS_AS(decompose(Matrix::Zero(6, 6), scheme({2, 3}, {6}), DecomposeOptions{1, 0.0, {}}), ArgumentError);
    CHECK_THROWS_AS(decompose(Matrix::Zero(6, 6), scheme({2, 2}, {2, 3}), DecomposeOptions{1, 0.0, {}}), ArgumentError);
    CHECK_THROWS_AS(decompose(Matrix::Zero(6, 6), scheme({2, 3}, {2, 3}), DecomposeOptions{0, 0.0, {}}), ArgumentError);
}

TEST_CASE("dtype round trip through with_dtype and chains") {
    DeterministicRng rng(20);
    const Matrix w = random_matrix(rng, 36, 36);
    const auto layer = decompose(w, IndexScheme::balanced(36, 36, 2), DecomposeOptions{3, 0.0, {}});
    const auto half = with_dtype(layer, DType::f16);
    for (const auto& c : half.cores) CHECK(c.dtype() == DType::f16);
    CHECK(rel_diff(reconstruct_matrix(layer), reconstruct_matrix(half)) <= 1e-2);
    const auto back = from_chain(to_chain(layer), layer, DType::f64);
    CHECK(back.cores == layer.cores);
    CHECK(back.bond_dims == layer.bond_dims);
}
