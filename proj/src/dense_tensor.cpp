// SPDX-License-Identifier: Apache-2.0
#include "tensorize/dense_tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "tensorize/errors.hpp"

namespace tensorize {

static_assert(std::endian::native == std::endian::little,
              "buffers are stored in host order, which must be little-endian");

namespace {

std::size_t element_width(DType dtype) {
    switch (dtype) {
    case DType::f64: return 8;
    case DType::f32: return 4;
    case DType::f16: return 2;
    case DType::i8: return 1;
    case DType::i4packed: return 0;
    }
    return 0;
}

int nibble_value(std::uint8_t byte, bool high) {
    const int raw = high ? (byte >> 4) : (byte & 0x0F);
    return raw >= 8 ? raw - 16 : raw;
}

void check_shape(const Shape& shape) {
    if (shape.empty()) {
        throw ArgumentError("tensor rank must be at least 1");
    }
    for (auto d : shape) {
        if (d == 0) {
            throw ArgumentError("tensor shape entries must be positive, got " + shape_string(shape));
        }
    }
}

std::vector<std::int8_t> unpack_i4(std::span<const std::uint8_t> bytes, std::size_t count) {
    std::vector<std::int8_t> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        out[i] = static_cast<std::int8_t>(nibble_value(bytes[i / 2], (i % 2) == 1));
    }
    return out;
}

std::vector<std::uint8_t> pack_i4(std::span<const std::int8_t> values) {
    std::vector<std::uint8_t> out((values.size() + 1) / 2, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto nib = static_cast<std::uint8_t>(values[i] & 0x0F);
        out[i / 2] |= (i % 2 == 0) ? nib : static_cast<std::uint8_t>(nib << 4);
    }
    return out;
}

} // namespace

const char* dtype_name(DType dtype) noexcept {
    switch (dtype) {
    case DType::f64: return "f64";
    case DType::f32: return "f32";
    case DType::f16: return "f16";
    case DType::i8: return "i8";
    case DType::i4packed: return "i4packed";
    }
    return "?";
}

std::optional<DType> parse_dtype(std::string_view name) noexcept {
    if (name == "f64") return DType::f64;
    if (name == "f32") return DType::f32;
    if (name == "f16") return DType::f16;
    if (name == "i8") return DType::i8;
    if (name == "i4packed") return DType::i4packed;
    return std::nullopt;
}

bool is_floating(DType dtype) noexcept {
    return dtype == DType::f64 || dtype == DType::f32 || dtype == DType::f16;
}

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t storage_bytes(DType dtype, std::size_t count) {
    if (dtype == DType::i4packed) {
        return (count + 1) / 2;
    }
    return count * element_width(dtype);
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ')';
    return os.str();
}

DenseTensor::DenseTensor(DType dtype, Shape shape, std::vector<std::uint8_t> bytes)
    : dtype_(dtype), shape_(std::move(shape)), bytes_(std::move(bytes)) {
    check_shape(shape_);
    count_ = element_count(shape_);
    if (bytes_.size() != storage_bytes(dtype_, count_)) {
        throw ArgumentError("buffer of " + std::to_string(bytes_.size()) + " bytes does not match " +
                            dtype_name(dtype_) + shape_string(shape_));
    }
}

DenseTensor DenseTensor::from_values(DType dtype, Shape shape, std::span<const double> values) {
    check_shape(shape);
    const std::size_t count = element_count(shape);
    if (values.size() != count) {
        throw ArgumentError("got " + std::to_string(values.size()) + " values for shape " +
                            shape_string(shape));
    }
    std::vector<std::uint8_t> bytes(storage_bytes(dtype, count));
    auto check_int = [](double v, double lo, double hi) {
        if (!(v >= lo && v <= hi) || std::nearbyint(v) != v) {
            throw ArgumentError("value " + std::to_string(v) + " is not representable as an integer in [" +
                                std::to_string(static_cast<int>(lo)) + ", " +
                                std::to_string(static_cast<int>(hi)) + "]");
        }
    };
    switch (dtype) {
    case DType::f64:
        std::memcpy(bytes.data(), values.data(), bytes.size());
        break;
    case DType::f32:
        for (std::size_t i = 0; i < count; ++i) {
            const auto f = static_cast<float>(values[i]);
            std::memcpy(bytes.data() + 4 * i, &f, 4);
        }
        break;
    case DType::f16:
        for (std::size_t i = 0; i < count; ++i) {
            const Eigen::half h(static_cast<float>(values[i]));
            const std::uint16_t raw = Eigen::numext::bit_cast<std::uint16_t>(h);
            std::memcpy(bytes.data() + 2 * i, &raw, 2);
        }
        break;
    case DType::i8:
        for (std::size_t i = 0; i < count; ++i) {
            check_int(values[i], -128, 127);
            bytes[i] = static_cast<std::uint8_t>(static_cast<std::int8_t>(values[i]));
        }
        break;
    case DType::i4packed: {
        std::vector<std::int8_t> small(count);
        for (std::size_t i = 0; i < count; ++i) {
            check_int(values[i], -8, 7);
            small[i] = static_cast<std::int8_t>(values[i]);
        }
        bytes = pack_i4(small);
        break;
    }
    }
    return DenseTensor(dtype, std::move(shape), std::move(bytes));
}

DenseTensor DenseTensor::from_f32(Shape shape, std::span<const float> values) {
    check_shape(shape);
    if (values.size() != element_count(shape)) {
        throw ArgumentError("got " + std::to_string(values.size()) + " values for shape " +
                            shape_string(shape));
    }
    std::vector<std::uint8_t> bytes(values.size() * 4);
    std::memcpy(bytes.data(), values.data(), bytes.size());
    return DenseTensor(DType::f32, std::move(shape), std::move(bytes));
}

DenseTensor DenseTensor::from_matrix(const Matrix& m, DType dtype) {
    return from_values(dtype, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
                       std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
}

DenseTensor DenseTensor::zeros(DType dtype, Shape shape) {
    check_shape(shape);
    const auto count = element_count(shape);
    return DenseTensor(dtype, std::move(shape), std::vector<std::uint8_t>(storage_bytes(dtype, count), 0));
}

double DenseTensor::at(std::size_t i) const {
    if (i >= count_) {
        throw ArgumentError("flat index " + std::to_string(i) + " out of range");
    }
    switch (dtype_) {
    case DType::f64: {
        double v;
        std::memcpy(&v, bytes_.data() + 8 * i, 8);
        return v;
    }
    case DType::f32: {
        float v;
        std::memcpy(&v, bytes_.data() + 4 * i, 4);
        return v;
    }
    case DType::f16: {
        std::uint16_t raw;
        std::memcpy(&raw, bytes_.data() + 2 * i, 2);
        return static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(raw));
    }
    case DType::i8:
        return static_cast<std::int8_t>(bytes_[i]);
    case DType::i4packed:
        return nibble_value(bytes_[i / 2], (i % 2) == 1);
    }
    return 0.0;
}

std::vector<double> DenseTensor::to_f64() const {
    std::vector<double> out(count_);
    if (dtype_ == DType::f64) {
        std::memcpy(out.data(), bytes_.data(), bytes_.size());
        return out;
    }
    for (std::size_t i = 0; i < count_; ++i) {
        out[i] = at(i);
    }
    return out;
}

Matrix DenseTensor::to_matrix() const {
    if (rank() != 2) {
        throw ArgumentError("expected a rank-2 tensor, got shape " + shape_string(shape_));
    }
    Matrix m(static_cast<Eigen::Index>(shape_[0]), static_cast<Eigen::Index>(shape_[1]));
    const auto values = to_f64();
    std::copy(values.begin(), values.end(), m.data());
    return m;
}

DenseTensor DenseTensor::cast(DType dtype) const {
    if (dtype == dtype_) {
        return *this;
    }
    const auto values = to_f64();
    return from_values(dtype, shape_, values);
}

DenseTensor permute_axes(const DenseTensor& t, std::span<const std::size_t> perm) {
    const std::size_t rank = t.rank();
    if (perm.size() != rank) {
        throw ArgumentError("permutation has " + std::to_string(perm.size()) + " entries for a rank-" +
                            std::to_string(rank) + " tensor");
    }
    std::vector<bool> seen(rank, false);
    for (auto p : perm) {
        if (p >= rank || seen[p]) {
            throw ArgumentError("invalid permutation: repeated or out-of-range axis " + std::to_string(p));
        }
        seen[p] = true;
    }

    const Shape& in_shape = t.shape();
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = in_shape[perm[i]];
    }

    // Row-major strides of the source, reordered to follow the output axes.
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i > 0; --i) {
        in_strides[i - 1] = in_strides[i] * in_shape[i];
    }
    std::vector<std::size_t> strides(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        strides[i] = in_strides[perm[i]];
    }

    const std::size_t count = t.size();
    std::vector<std::size_t> source(count);
    std::vector<std::size_t> index(rank, 0);
    std::size_t offset = 0;
    for (std::size_t n = 0; n < count; ++n) {
        source[n] = offset;
        for (std::size_t axis = rank; axis-- > 0;) {
            ++index[axis];
            offset += strides[axis];
            if (index[axis] < out_shape[axis]) {
                break;
            }
            offset -= strides[axis] * index[axis];
            index[axis] = 0;
        }
    }

    if (t.dtype() == DType::i4packed) {
        const auto values = unpack_i4(t.bytes(), count);
        std::vector<std::int8_t> out(count);
        for (std::size_t n = 0; n < count; ++n) {
            out[n] = values[source[n]];
        }
        return DenseTensor(DType::i4packed, std::move(out_shape), pack_i4(out));
    }

    const std::size_t width = element_width(t.dtype());
    const auto in = t.bytes();
    std::vector<std::uint8_t> out(in.size());
    for (std::size_t n = 0; n < count; ++n) {
        std::memcpy(out.data() + n * width, in.data() + source[n] * width, width);
    }
    return DenseTensor(t.dtype(), std::move(out_shape), std::move(out));
}

DenseTensor reshape(const DenseTensor& t, Shape new_shape) {
    check_shape(new_shape);
    if (element_count(new_shape) != t.size()) {
        throw ArgumentError("cannot reshape " + shape_string(t.shape()) + " into " +
                            shape_string(new_shape));
    }
    const auto bytes = t.bytes();
    return DenseTensor(t.dtype(), std::move(new_shape), std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
}

double frobenius_norm(const DenseTensor& t) {
    if (t.dtype() == DType::i4packed) {
        throw ArgumentError("frobenius_norm is not defined for i4packed tensors");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = t.at(i);
        sum += v * v;
    }
    return std::sqrt(sum);
}

} // namespace tensorize
