// SPDX-License-Identifier: Apache-2.0
#include "tensorize/quantization.hpp"

#include <algorithm>
#include <cmath>

#include "tensorize/errors.hpp"

namespace tensorize {

namespace {

// The scale that dequantize(q_max) maps back onto. Iterating to a fixed point
// makes quantize(dequantize(q)) return the same scales bit for bit.
float settle_scale(float scale, int qmax) {
    for (int i = 0; i < 8; ++i) {
        const float peak = scale * static_cast<float>(qmax);
        const auto next = static_cast<float>(static_cast<double>(peak) / qmax);
        if (next == scale) {
            break;
        }
        scale = next;
    }
    return scale;
}

} // namespace

const char* granularity_name(Granularity g) noexcept {
    return g == Granularity::per_tensor ? "per_tensor" : "per_row";
}

std::optional<Granularity> parse_granularity(std::string_view name) noexcept {
    if (name == "per_tensor") return Granularity::per_tensor;
    if (name == "per_row") return Granularity::per_row;
    return std::nullopt;
}

int quant_max(int bits) {
    if (bits == 8) return 127;
    if (bits == 4) return 7;
    throw ArgumentError("quantization bits must be 4 or 8, got " + std::to_string(bits));
}

std::size_t QuantizedTensor::storage_bytes() const {
    return qdata.byte_size() + scales.size() * sizeof(float);
}

QuantizedTensor quantize_affine(const DenseTensor& w, int bits, Granularity granularity) {
    const int qmax = quant_max(bits);
    if (w.rank() != 2) {
        throw ArgumentError("quantize_affine expects a matrix, got shape " + shape_string(w.shape()));
    }
    if (w.dtype() == DType::i4packed) {
        throw ArgumentError("cannot quantize an i4packed tensor");
    }
    const std::size_t rows = w.shape()[0];
    const std::size_t cols = w.shape()[1];
    const auto values = w.to_f64();
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw ArgumentError("quantize_affine: input contains non-finite values");
        }
    }

    const std::size_t groups = granularity == Granularity::per_row ? rows : 1;
    const std::size_t group_len = granularity == Granularity::per_row ? cols : rows * cols;

    QuantizedTensor out;
    out.bits = bits;
    out.granularity = granularity;
    out.original_shape = w.shape();
    out.scales.resize(groups);
    out.zero_points.assign(groups, 0);

    std::vector<double> q(values.size());
    for (std::size_t g = 0; g < groups; ++g) {
        const auto first = values.begin() + static_cast<std::ptrdiff_t>(g * group_len);
        double peak = 0.0;
        for (auto it = first; it != first + static_cast<std::ptrdiff_t>(group_len); ++it) {
            peak = std::max(peak, std::abs(static_cast<double>(static_cast<float>(*it))));
        }
        float scale = 1.0f;
        if (peak > 0.0) {
            scale = settle_scale(static_cast<float>(peak / qmax), qmax);
        }
        if (!(scale > 0.0f) || !std::isfinite(scale)) {
            throw ArgumentError("quantize_affine: group " + std::to_string(g) + " has no usable scale");
        }
        out.scales[g] = scale;
        for (std::size_t i = 0; i < group_len; ++i) {
            const std::size_t idx = g * group_len + i;
            const double r = std::round(values[idx] / static_cast<double>(scale));
            q[idx] = std::clamp(r, static_cast<double>(-qmax), static_cast<double>(qmax));
        }
    }
    out.qdata = DenseTensor::from_values(bits == 8 ? DType::i8 : DType::i4packed, w.shape(), q);
    return out;
}

DenseTensor dequantize(const QuantizedTensor& q) {
    if (q.original_shape.size() != 2 || q.qdata.shape() != q.original_shape) {
        throw ArgumentError("quantized tensor shape is inconsistent");
    }
    const std::size_t rows = q.original_shape[0];
    const std::size_t cols = q.original_shape[1];
    const std::size_t groups = q.granularity == Granularity::per_row ? rows : 1;
    if (q.scales.size() != groups || q.zero_points.size() != groups) {
        throw ArgumentError("quantized tensor has " + std::to_string(q.scales.size()) + " scales, expected " +
                            std::to_string(groups));
    }
    const std::size_t group_len = q.granularity == Granularity::per_row ? cols : rows * cols;
    std::vector<float> out(rows * cols);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::size_t g = i / group_len;
        const auto level = static_cast<float>(q.qdata.at(i) - q.zero_points[g]);
        out[i] = q.scales[g] * level;
    }
    return DenseTensor::from_f32(q.original_shape, out);
}

} // namespace tensorize
