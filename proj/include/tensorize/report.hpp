// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensorize/dense_tensor.hpp"

namespace tensorize {

struct LayerReport {
    std::string name;
    std::string action; // tensorize | quantize | keep
    std::uint64_t params_before = 0;
    std::uint64_t params_after = 0;
    std::uint64_t bytes_before = 0;
    std::uint64_t bytes_after = 0;
    double rel_error = 0.0;
    std::vector<std::size_t> bond_dims;
    std::string note;
};

struct ReportTotals {
    std::uint64_t params_before = 0;
    std::uint64_t params_after = 0;
    std::uint64_t bytes_before = 0;
    std::uint64_t bytes_after = 0;
    double parameter_reduction_pct = 0.0;
    double byte_reduction_pct = 0.0;
};

struct CompressionReport {
    std::vector<LayerReport> layers;

    [[nodiscard]] ReportTotals totals() const;
};

enum class ReportFormat { json, csv };

/// Columns: name, action, params_before, params_after, bytes_before,
/// bytes_after, rel_error, bond_dims; one totals row/object at the end.
std::string emit_report(const CompressionReport& report, ReportFormat format);

/// 100 * (1 - after / before); 0 when before is 0.
double reduction_pct(std::uint64_t before, std::uint64_t after);

/// Payload bytes of a model with `params` weights stored as `dtype`.
std::uint64_t model_bytes(std::uint64_t params, DType dtype);

/// Decimal gigabytes (1e9 bytes), the unit model cards use.
double decimal_gb(std::uint64_t bytes);

} // namespace tensorize
