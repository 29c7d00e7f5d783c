// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "tensorize/errors.hpp"
#include "tensorize/quantization.hpp"

using namespace tensorize;

namespace {

DenseTensor row_tensor(std::vector<double> v, std::size_t rows, DType dtype = DType::f32) {
    const std::size_t cols = v.size() / rows;
    return DenseTensor::from_values(dtype, {rows, cols}, v);
}

// Elementwise |w - dq| <= scale/2 + 1e-7 with the group's scale.
bool within_bound(const DenseTensor& w, const QuantizedTensor& q) {
    const auto a = w.to_f64();
    const auto b = dequantize(q).to_f64();
    const std::size_t group = q.granularity == Granularity::per_row ? q.original_shape[1] : a.size();
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (std::abs(a[i] - b[i]) > static_cast<double>(q.scales[i / group]) / 2.0 + 1e-7) return false;
    }
    return true;
}

} // namespace

TEST_CASE("all-zero tensor") {
    const auto w = DenseTensor::zeros(DType::f32, {4, 4});
    const auto q = quantize_affine(w, 8, Granularity::per_tensor);
    CHECK(q.scales == std::vector<float>{1.0f});
    CHECK(q.zero_points == std::vector<std::int32_t>{0});
    for (double v : q.qdata.to_f64()) CHECK(v == 0.0);
    CHECK(dequantize(q).to_f64() == w.to_f64());
}

TEST_CASE("hand-evaluated int8 row") {
    const auto w = row_tensor({-1, 0, 1}, 1);
    const auto q = quantize_affine(w, 8);
    CHECK(q.scales[0] == doctest::Approx(1.0 / 127.0).epsilon(1e-7));
    CHECK(q.qdata.to_f64() == std::vector<double>{-127, 0, 127});
    const auto back = dequantize(q).to_f64();
    CHECK(back == std::vector<double>{-1, 0, 1});
}

TEST_CASE("int4 per-row bound on a random 8x8") {
    DeterministicRng rng(30);
    std::vector<double> v(64);
    for (auto& x : v) x = rng.uniform(-1, 1);
    const auto w = row_tensor(v, 8);
    const auto q = quantize_affine(w, 4);
    CHECK(q.qdata.dtype() == DType::i4packed);
    CHECK(q.scales.size() == 8);
    CHECK(within_bound(w, q));
    for (double x : q.qdata.to_f64()) CHECK(std::abs(x) <= 7);
}

TEST_CASE("fixed point of quantize after dequantize") {
    DeterministicRng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t rows = 1 + rng.below(6), cols = 1 + rng.below(40);
        std::vector<double> v(rows * cols);
        const double mag = std::pow(10.0, rng.uniform(-6, 6));
        for (auto& x : v) x = mag * rng.normal();
        const auto w = row_tensor(v, rows);
        for (int bits : {4, 8}) {
            for (auto g : {Granularity::per_row, Granularity::per_tensor}) {
                const auto q = quantize_affine(w, bits, g);
                CHECK(within_bound(w, q));
                const auto again = quantize_affine(dequantize(q), bits, g);
                CHECK(again.qdata == q.qdata);
                CHECK(again.scales == q.scales);
            }
        }
    }
}

TEST_CASE("storage accounting") {
    const auto w = DenseTensor::zeros(DType::f32, {10, 7});
    CHECK(quantize_affine(w, 8).storage_bytes() == 70 + 40);
    CHECK(quantize_affine(w, 4).storage_bytes() == 35 + 40);
    CHECK(quantize_affine(w, 4, Granularity::per_tensor).storage_bytes() == 35 + 4);
}

TEST_CASE("rejections") {
    CHECK_THROWS_AS(quant_max(5), ArgumentError);
    CHECK(quant_max(8) == 127);
    CHECK(quant_max(4) == 7);
    auto v = std::vector<double>{1, std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(quantize_affine(DenseTensor::from_values(DType::f64, {1, 2}, v), 8), ArgumentError);
    CHECK_THROWS_AS(quantize_affine(DenseTensor::zeros(DType::f32, {4}), 8), ArgumentError);
    CHECK(parse_granularity("per_row") == Granularity::per_row);
    CHECK_FALSE(parse_granularity("per_col").has_value());
}
