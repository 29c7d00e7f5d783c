// SPDX-License-Identifier: Apache-2.0
#include "tensorize/report.hpp"

#include <charconv>
#include <sstream>

#include <json.hpp>

namespace tensorize {

namespace {

std::string number(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fixed2(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
    return std::string(buf, res.ptr);
}

std::string bonds_text(const std::vector<std::size_t>& bonds) {
    std::string out;
    for (std::size_t i = 0; i < bonds.size(); ++i) {
        out += (i ? ";" : "") + std::to_string(bonds[i]);
    }
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        out += c;
        if (c == '"') out += '"';
    }
    return out + "\"";
}

} // namespace

double reduction_pct(std::uint64_t before, std::uint64_t after) {
    if (before == 0) {
        return 0.0;
    }
    return 100.0 * (1.0 - static_cast<double>(after) / static_cast<double>(before));
}

ReportTotals CompressionReport::totals() const {
    ReportTotals t;
    for (const auto& row : layers) {
        t.params_before += row.params_before;
        t.params_after += row.params_after;
        t.bytes_before += row.bytes_before;
        t.bytes_after += row.bytes_after;
    }
    t.parameter_reduction_pct = reduction_pct(t.params_before, t.params_after);
    t.byte_reduction_pct = reduction_pct(t.bytes_before, t.bytes_after);
    return t;
}

std::string emit_report(const CompressionReport& report, ReportFormat format) {
    const ReportTotals totals = report.totals();
    if (format == ReportFormat::json) {
        nlohmann::ordered_json out;
        out["layers"] = nlohmann::ordered_json::array();
        for (const auto& row : report.layers) {
            nlohmann::ordered_json j;
            j["name"] = row.name;
            j["action"] = row.action;
            j["params_before"] = row.params_before;
            j["params_after"] = row.params_after;
            j["bytes_before"] = row.bytes_before;
            j["bytes_after"] = row.bytes_after;
            j["rel_error"] = row.rel_error;
            j["bond_dims"] = row.bond_dims;
            if (!row.note.empty()) {
                j["note"] = row.note;
            }
            out["layers"].push_back(std::move(j));
        }
        nlohmann::ordered_json t;
        t["params_before"] = totals.params_before;
        t["params_after"] = totals.params_after;
        t["bytes_before"] = totals.bytes_before;
        t["bytes_after"] = totals.bytes_after;
        t["parameter_reduction_pct"] = totals.parameter_reduction_pct;
        t["byte_reduction_pct"] = totals.byte_reduction_pct;
        out["totals"] = std::move(t);
        return out.dump(2) + "\n";
    }

    std::ostringstream os;
    os << "name,action,params_before,params_after,bytes_before,bytes_after,rel_error,bond_dims\n";
    for (const auto& row : report.layers) {
        os << csv_field(row.name) << ',' << row.action << ',' << row.params_before << ',' << row.params_after << ','
           << row.bytes_before << ',' << row.bytes_after << ',' << number(row.rel_error) << ','
           << bonds_text(row.bond_dims) << '\n';
    }
    // The totals row carries both reduction bases in the action column.
    os << "TOTAL," << "param_reduction_pct=" << fixed2(totals.parameter_reduction_pct)
       << ";byte_reduction_pct=" << fixed2(totals.byte_reduction_pct) << ',' << totals.params_before << ','
       << totals.params_after << ',' << totals.bytes_before << ',' << totals.bytes_after << ",,\n";
    return os.str();
}

std::uint64_t model_bytes(std::uint64_t params, DType dtype) {
    return storage_bytes(dtype, params);
}

double decimal_gb(std::uint64_t bytes) {
    return static_cast<double>(bytes) / 1e9;
}

} // namespace tensorize
