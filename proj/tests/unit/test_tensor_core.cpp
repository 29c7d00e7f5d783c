// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "tensorize/errors.hpp"
#include "tensorize/linalg.hpp"

using namespace tensorize;
using testing_support::random_matrix;

TEST_CASE("dtype storage sizes") {
    CHECK(storage_bytes(DType::f64, 3) == 24);
    CHECK(storage_bytes(DType::f32, 3) == 12);
    CHECK(storage_bytes(DType::f16, 3) == 6);
    CHECK(storage_bytes(DType::i8, 3) == 3);
    CHECK(storage_bytes(DType::i4packed, 3) == 2);
    CHECK(storage_bytes(DType::i4packed, 4) == 2);
    for (auto d : {DType::f64, DType::f32, DType::f16, DType::i8, DType::i4packed}) {
        CHECK(parse_dtype(dtype_name(d)) == d);
    }
    CHECK_FALSE(parse_dtype("bf16").has_value());
}

TEST_CASE("tensor construction validates shape and buffer") {
    CHECK_THROWS_AS(DenseTensor(DType::f32, {2, 2}, std::vector<std::uint8_t>(15)), ArgumentError);
    CHECK_THROWS_AS(DenseTensor(DType::f32, {2, 0}, {}), ArgumentError);
    CHECK_THROWS_AS(DenseTensor(DType::f32, {}, std::vector<std::uint8_t>(4)), ArgumentError);
    const std::vector<double> bad{1.5};
    CHECK_THROWS_AS(DenseTensor::from_values(DType::i8, {1}, bad), ArgumentError);
    const std::vector<double> wide{8.0};
    CHECK_THROWS_AS(DenseTensor::from_values(DType::i4packed, {1}, wide), ArgumentError);
}

TEST_CASE("i4packed stores low nibble first") {
    const std::vector<double> v{1, -2, 7};
    const auto t = DenseTensor::from_values(DType::i4packed, {3}, v);
    REQUIRE(t.byte_size() == 2);
    CHECK(t.bytes()[0] == 0xE1); // -2 -> 0xE in the high nibble, 1 in the low
    CHECK(t.bytes()[1] == 0x07);
    CHECK(t.to_f64() == v);
}

TEST_CASE("f16 is widened exactly on read") {
    const std::vector<double> v{1.0, -0.5, 65504.0, 0.0009765625};
    const auto t = DenseTensor::from_values(DType::f16, {4}, v);
    CHECK(t.byte_size() == 8);
    CHECK(t.to_f64() == v);
    CHECK(t.bytes()[0] == 0x00);
    CHECK(t.bytes()[1] == 0x3C);
}

TEST_CASE("permute_axes") {
    SUBCASE("identity is bit-identical") {
        DeterministicRng rng(1);
        std::vector<double> v(24);
        for (auto& x : v) x = rng.normal();
        const auto t = DenseTensor::from_values(DType::f32, {2, 3, 4}, v);
        const std::vector<std::size_t> id{0, 1, 2};
        CHECK(permute_axes(t, id) == t);
    }
    SUBCASE("transpose of a 2x3 matrix") {
        const std::vector<double> v{1, 2, 3, 4, 5, 6};
        const std::vector<std::size_t> p{1, 0};
        const auto out = permute_axes(DenseTensor::from_values(DType::f64, {2, 3}, v), p);
        CHECK(out.shape() == Shape{3, 2});
        CHECK(out.to_f64() == std::vector<double>{1, 4, 2, 5, 3, 6});
    }
    SUBCASE("matches the index-arithmetic oracle at every position") {
        DeterministicRng rng(2);
        std::vector<double> v(24);
        for (auto& x : v) x = rng.normal();
        const std::vector<std::size_t> p{2, 0, 1};
        const auto out = permute_axes(DenseTensor::from_values(DType::f64, {2, 3, 4}, v), p);
        CHECK(out.shape() == Shape{4, 2, 3});
        CHECK(out.to_f64() == oracle::permute(v, {2, 3, 4}, {2, 0, 1}));
    }
    SUBCASE("inverse permutation round-trips for every dtype") {
        DeterministicRng rng(3);
        std::vector<double> v(60);
        for (auto& x : v) x = static_cast<double>(static_cast<int>(rng.below(15)) - 7);
        const std::vector<std::size_t> p{1, 3, 0, 2}, inv{2, 0, 3, 1};
        for (auto d : {DType::f64, DType::f32, DType::f16, DType::i8, DType::i4packed}) {
            const auto t = DenseTensor::from_values(d, {3, 1, 4, 5}, v);
            const auto there = permute_axes(t, p);
            CHECK(there.to_f64() == oracle::permute(v, {3, 1, 4, 5}, {1, 3, 0, 2}));
            CHECK(permute_axes(there, inv) == t);
        }
    }
    SUBCASE("invalid permutations") {
        const auto t = DenseTensor::zeros(DType::f32, {2, 3});
        const std::vector<std::size_t> short_perm{0}, repeated{0, 0}, out_of_range{0, 2};
        CHECK_THROWS_AS(permute_axes(t, short_perm), ArgumentError);
        CHECK_THROWS_AS(permute_axes(t, repeated), ArgumentError);
        CHECK_THROWS_AS(permute_axes(t, out_of_range), ArgumentError);
    }
}

TEST_CASE("reshape") {
    const auto big = DenseTensor::zeros(DType::f32, {216, 216});
    const auto six = reshape(big, {6, 6, 6, 6, 6, 6});
    CHECK(six.size() == 46656);
    CHECK(six.bytes().size() == big.bytes().size());

    const std::vector<double> v{1, 2, 3, 4};
    const auto sq = reshape(DenseTensor::from_values(DType::f64, {4}, v), {2, 2});
    CHECK(sq.to_matrix()(1, 0) == 3.0);
    CHECK_THROWS_AS(reshape(DenseTensor::zeros(DType::f64, {2, 3}), {4}), ArgumentError);
}

TEST_CASE("frobenius_norm") {
    CHECK(frobenius_norm(DenseTensor::zeros(DType::f32, {3, 3})) == 0.0);
    const std::vector<double> v{3, 4};
    CHECK(frobenius_norm(DenseTensor::from_values(DType::f64, {1, 2}, v)) == 5.0);

    DeterministicRng rng(4);
    std::vector<double> w(100);
    double s = 0.0;
    for (auto& x : w) {
        x = rng.normal();
        s += x * x;
    }
    CHECK(std::abs(frobenius_norm(DenseTensor::from_values(DType::f64, {100}, w)) - std::sqrt(s)) <= 1e-12 * std::sqrt(s));
    CHECK_THROWS_AS(frobenius_norm(DenseTensor::zeros(DType::i4packed, {4})), ArgumentError);
}

TEST_CASE("truncated_svd small cases") {
    const Matrix i3 = Matrix::Identity(3, 3);
    const auto r = truncated_svd(i3, 3);
    CHECK(r.singular_values == std::vector<double>{1, 1, 1});
    CHECK(r.discarded_weight == 0.0);

    Matrix d = Matrix::Zero(3, 3);
    d.diagonal() << 3, 2, 1;
    const auto rd = truncated_svd(d, 2);
    REQUIRE(rd.rank_kept == 2);
    CHECK(rd.singular_values[0] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(rd.singular_values[1] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(rd.discarded_weight == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("truncated_svd agrees with the Gram eigenvalue oracle") {
    DeterministicRng rng(5);
    const Matrix a = random_matrix(rng, 5, 4);
    const auto r = truncated_svd(a, 4);
    REQUIRE(r.rank_kept == 4);
    CHECK((r.u.transpose() * r.u - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((r.vt * r.vt.transpose() - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-12);
    Matrix rebuilt = r.u * Eigen::Map<const Eigen::VectorXd>(r.singular_values.data(), 4).asDiagonal() * r.vt;
    CHECK((a - rebuilt).norm() <= 1e-12 * a.norm());
    const auto expected = oracle::singular_values(testing_support::to_oracle(a));
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(r.singular_values[i] - expected[i]) <= 1e-10);
}

TEST_CASE("truncated_svd sign convention and discarded weight") {
    DeterministicRng rng(6);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = 2 + rng.below(20), n = 2 + rng.below(20);
        const Matrix a = random_matrix(rng, m, n);
        const std::size_t cap = 1 + rng.below(std::min(m, n));
        const auto r = truncated_svd(a, cap);
        CHECK(r.rank_kept == cap);
        for (Eigen::Index c = 0; c < r.u.cols(); ++c) {
            Eigen::Index arg = 0;
            r.u.col(c).cwiseAbs().maxCoeff(&arg);
            CHECK(r.u(arg, c) > 0.0);
        }
        for (std::size_t i = 1; i < r.singular_values.size(); ++i) CHECK(r.singular_values[i] <= r.singular_values[i - 1]);
        const Matrix rebuilt =
            r.u * Eigen::Map<const Eigen::VectorXd>(r.singular_values.data(), static_cast<Eigen::Index>(cap)).asDiagonal() * r.vt;
        const double resid2 = (a - rebuilt).squaredNorm();
        CHECK(std::abs(resid2 - r.discarded_weight) <= 1e-8 * std::max(1.0, r.discarded_weight));
        const double oracle_err = oracle::best_rank_error(testing_support::to_oracle(a), cap);
        CHECK(std::abs(std::sqrt(r.discarded_weight) - oracle_err) <= 1e-9);
    }
}

TEST_CASE("truncated_svd full rank reconstruction on 200 random matrices") {
    DeterministicRng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 1 + rng.below(64), n = 1 + rng.below(64);
        const Matrix a = random_matrix(rng, m, n);
        const bool f32 = trial % 2 == 1;
        const DenseTensor t = DenseTensor::from_matrix(a, f32 ? DType::f32 : DType::f64);
        const Matrix src = t.to_matrix();
        const auto r = truncated_svd(t, std::min(m, n));
        const Matrix rebuilt =
            r.u * Eigen::Map<const Eigen::VectorXd>(r.singular_values.data(), static_cast<Eigen::Index>(r.rank_kept)).asDiagonal() *
            r.vt;
        CHECK(testing_support::rel_diff(src, rebuilt) <= (f32 ? 1e-6 : 1e-12));
    }
}

TEST_CASE("truncated_svd rel_tol and errors") {
    Matrix d = Matrix::Zero(4, 4);
    d.diagonal() << 10, 1, 0.05, 0.001;
    CHECK(truncated_svd(d, 4, 0.004).rank_kept == 3);
    CHECK(truncated_svd(d, 4, 0.01).rank_kept == 2);
    CHECK(truncated_svd(d, 4, 0.2).rank_kept == 1);
    CHECK(truncated_svd(Matrix::Zero(3, 2), 2).rank_kept == 1);
    CHECK_THROWS_AS(truncated_svd(d, 0), ArgumentError);
    Matrix bad = d;
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(truncated_svd(bad, 2), NumericalError);
}

TEST_CASE("balanced_factorization") {
    CHECK(balanced_factorization(216, 3) == std::vector<std::size_t>{6, 6, 6});
    CHECK(balanced_factorization(16, 2) == std::vector<std::size_t>{4, 4});
    CHECK(balanced_factorization(12, 2) == std::vector<std::size_t>{4, 3});
    CHECK(balanced_factorization(12, 2) == oracle::balanced_factorization(12, 2));
    CHECK(balanced_factorization(7, 3) == std::vector<std::size_t>{7, 1, 1});
    CHECK(balanced_factorization(1, 2) == std::vector<std::size_t>{1, 1});
    CHECK(balanced_factorization(64, 1) == std::vector<std::size_t>{64});

    DeterministicRng rng(8);
    for (int trial = 0; trial < 300; ++trial) {
        const std::uint64_t n = 1 + rng.below(1000000);
        const std::size_t k = 1 + rng.below(5);
        const auto f = balanced_factorization(n, k);
        REQUIRE(f.size() == k);
        std::uint64_t prod = 1;
        for (auto x : f) prod *= x;
        CHECK(prod == n);
        CHECK(std::is_sorted(f.rbegin(), f.rend()));
    }
    for (std::uint64_t n = 1; n <= 400; ++n) {
        for (std::size_t k = 1; k <= 4; ++k) {
            CHECK(balanced_factorization(n, k) == oracle::balanced_factorization(n, k));
        }
    }
}
