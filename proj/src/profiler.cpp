// SPDX-License-Identifier: Apache-2.0
#include "tensorize/profiler.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "tensorize/errors.hpp"
#include "tensorize/mpo.hpp"
#include "tensorize/plan.hpp"

namespace tensorize {

std::vector<ChiPoint> parse_chi_grid(const std::string& text) {
    std::vector<ChiPoint> grid;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto first = item.find_first_not_of(" \t");
        item = first == std::string::npos ? std::string{} : item.substr(first, item.find_last_not_of(" \t") - first + 1);
        if (item == "full") {
            grid.emplace_back(std::nullopt);
            continue;
        }
        std::size_t v = 0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || res.ec != std::errc{} || res.ptr != item.data() + item.size() || v == 0) {
            throw ArgumentError("chi grid entry '" + item + "' is not a positive integer or 'full'");
        }
        grid.emplace_back(v);
    }
    if (grid.empty()) {
        throw ArgumentError("chi grid is empty");
    }
    return grid;
}

namespace {

std::vector<ChiPoint> normalize_grid(const std::vector<ChiPoint>& grid) {
    if (grid.empty()) {
        throw ArgumentError("chi grid is empty");
    }
    std::vector<std::size_t> caps;
    for (const auto& p : grid) {
        if (!p) continue;
        if (*p == 0) throw ArgumentError("chi grid entries must be >= 1");
        caps.push_back(*p);
    }
    std::sort(caps.begin(), caps.end());
    if (std::adjacent_find(caps.begin(), caps.end()) != caps.end()) {
        throw ArgumentError("chi grid has duplicate entries");
    }
    if (std::count(grid.begin(), grid.end(), std::nullopt) > 1) {
        throw ArgumentError("chi grid lists 'full' more than once");
    }
    std::vector<ChiPoint> out(caps.begin(), caps.end());
    out.emplace_back(std::nullopt);
    return out;
}

} // namespace

std::vector<SensitivityCurve> profile(const Checkpoint& ckpt, const ModelManifest& manifest,
                                      const std::vector<std::string>& target_layers,
                                      const std::vector<ChiPoint>& chi_grid, const Evaluator& evaluator,
                                      std::uint64_t seed, const ProfileOptions& options) {
    const std::vector<ChiPoint> grid = normalize_grid(chi_grid);
    if (target_layers.empty()) {
        throw ArgumentError("no target layers to profile");
    }
    for (const auto& name : target_layers) {
        if (!manifest.find(name)) {
            throw DataError(DataError::Kind::missing_tensor, "layer '" + name + "' is not in the manifest");
        }
        if (!ckpt.contains(name)) {
            throw DataError(DataError::Kind::missing_tensor, "layer '" + name + "' has no dense weight in the checkpoint");
        }
        if (!is_floating(ckpt.get(name).dtype())) {
            throw DataError(DataError::Kind::schema, "layer '" + name + "' is not stored as floating point");
        }
    }

    std::vector<SensitivityCurve> curves;
    double baseline = 0.0;
    std::string baseline_error;
    try {
        baseline = evaluator(ckpt, manifest, seed);
    } catch (const std::exception& e) {
        baseline_error = std::string("baseline evaluation failed: ") + e.what();
    }

    Checkpoint work = ckpt;
    for (const auto& name : target_layers) {
        SensitivityCurve curve;
        curve.layer = name;
        curve.baseline = baseline;
        curve.seed = seed;
        curve.error = baseline_error;
        if (!curve.error.empty()) {
            curves.push_back(std::move(curve));
            continue;
        }
        const DenseTensor original = ckpt.get(name);
        const Matrix w = original.to_matrix();
        const IndexScheme scheme = IndexScheme::balanced(w.rows(), w.cols(), options.cores);
        for (const auto& chi : grid) {
            const std::size_t cap = chi ? *chi : full_bond(scheme);
            const MpoLayer mpo = decompose(w, scheme, DecomposeOptions{cap, 0.0, {}});
            std::size_t realized = 1;
            for (auto b : mpo.bond_dims) realized = std::max(realized, b);
            work.tensors.at(name) = DenseTensor::from_matrix(reconstruct_matrix(mpo), original.dtype());
            try {
                curve.points.push_back({chi, evaluator(work, manifest, seed), realized});
            } catch (const std::exception& e) {
                curve.error = e.what();
                break;
            }
        }
        work.tensors.at(name) = original;
        curves.push_back(std::move(curve));
    }
    return curves;
}

std::vector<std::string> select_layers(const ModelManifest& manifest, const std::string& glob) {
    std::vector<std::string> out;
    for (const auto& l : manifest.layers) {
        if (glob_match(glob, l.name)) out.push_back(l.name);
    }
    return out;
}

namespace {

std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace

std::string curves_csv(const std::vector<SensitivityCurve>& curves) {
    std::ostringstream os;
    os << "layer,chi,metric,baseline,seed,max_bond\n";
    for (const auto& c : curves) {
        for (const auto& p : c.points) {
            os << c.layer << ',' << (p.chi ? std::to_string(*p.chi) : "full") << ',' << num(p.metric) << ','
               << num(c.baseline) << ',' << c.seed << ',' << p.max_bond << '\n';
        }
        if (!c.error.empty()) {
            std::string msg = c.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            os << c.layer << ",error," << msg << ',' << num(c.baseline) << ',' << c.seed << ",\n";
        }
    }
    return os.str();
}

} // namespace tensorize
