// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "tensorize/dense_tensor.hpp"

namespace tensorize {

enum class Granularity { per_tensor, per_row };

const char* granularity_name(Granularity g) noexcept;
std::optional<Granularity> parse_granularity(std::string_view name) noexcept;

/// Symmetric integer quantization of a matrix. Values live in
/// [-127, 127] (8 bit) or [-7, 7] (4 bit); zero points are always 0.
struct QuantizedTensor {
    DenseTensor qdata; // i8 or i4packed, shape == original_shape
    std::vector<float> scales;
    std::vector<std::int32_t> zero_points;
    Shape original_shape;
    int bits = 8;
    Granularity granularity = Granularity::per_row;

    /// Payload bytes: packed values plus f32 scales.
    [[nodiscard]] std::size_t storage_bytes() const;
};

int quant_max(int bits);

/// scale = max|group| / q_max (1 for an all-zero group), q = round(w / scale).
/// Scales are nudged by at most an ulp so that re-quantizing the dequantized
/// tensor reproduces them exactly.
QuantizedTensor quantize_affine(const DenseTensor& w, int bits, Granularity granularity = Granularity::per_row);

/// f32 tensor of scale * (q - zero_point).
DenseTensor dequantize(const QuantizedTensor& q);

} // namespace tensorize
