// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace tensorize {

enum class DType { f64, f32, f16, i8, i4packed };

using Shape = std::vector<std::size_t>;

/// Row-major double matrix; the working form of every numerical routine.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const char* dtype_name(DType dtype) noexcept;
std::optional<DType> parse_dtype(std::string_view name) noexcept;
bool is_floating(DType dtype) noexcept;

std::size_t element_count(const Shape& shape);
/// Bytes needed to store `count` elements; i4packed stores two per byte.
std::size_t storage_bytes(DType dtype, std::size_t count);

std::string shape_string(const Shape& shape);

/// Contiguous row-major n-dimensional array with an explicit storage dtype.
///
/// The buffer holds the little-endian encoding of each element. f16 is a
/// storage format only; arithmetic reads go through to_f64(). i4packed keeps
/// two signed 4-bit values per byte, low nibble first.
class DenseTensor {
public:
    DenseTensor() = default;

    /// Takes ownership of an already-encoded buffer. Throws ArgumentError when
    /// its length does not match dtype x shape.
    DenseTensor(DType dtype, Shape shape, std::vector<std::uint8_t> bytes);

    /// Encodes `values` into `dtype`. Integer dtypes require integral values
    /// inside the representable range.
    static DenseTensor from_values(DType dtype, Shape shape, std::span<const double> values);
    static DenseTensor from_f32(Shape shape, std::span<const float> values);
    static DenseTensor from_matrix(const Matrix& m, DType dtype = DType::f64);
    static DenseTensor zeros(DType dtype, Shape shape);

    [[nodiscard]] DType dtype() const noexcept { return dtype_; }
    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t rank() const noexcept { return shape_.size(); }
    [[nodiscard]] std::size_t size() const noexcept { return count_; }
    [[nodiscard]] std::size_t byte_size() const noexcept { return bytes_.size(); }
    [[nodiscard]] std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }

    [[nodiscard]] double at(std::size_t flat_index) const;
    [[nodiscard]] std::vector<double> to_f64() const;
    /// Rank-2 tensors only.
    [[nodiscard]] Matrix to_matrix() const;
    /// Re-encodes the values in another dtype.
    [[nodiscard]] DenseTensor cast(DType dtype) const;

    friend bool operator==(const DenseTensor& a, const DenseTensor& b) = default;

private:
    DType dtype_ = DType::f64;
    Shape shape_{1};
    std::size_t count_ = 1;
    std::vector<std::uint8_t> bytes_ = std::vector<std::uint8_t>(8, 0);
};

/// Rearranges axes so that output axis i is input axis perm[i].
DenseTensor permute_axes(const DenseTensor& t, std::span<const std::size_t> perm);

/// Reinterprets the row-major buffer under a new shape.
DenseTensor reshape(const DenseTensor& t, Shape new_shape);

/// Accumulated in f64. Not defined for i4packed.
double frobenius_norm(const DenseTensor& t);

} // namespace tensorize
