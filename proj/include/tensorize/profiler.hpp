// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tensorize/checkpoint.hpp"
#include "tensorize/manifest.hpp"

namespace tensorize {

/// (checkpoint, manifest, seed) -> metric in [0, 1]. Must be deterministic.
using Evaluator = std::function<double(const Checkpoint&, const ModelManifest&, std::uint64_t)>;

/// A grid entry: a bond cap, or nullopt for the full (exact) point.
using ChiPoint = std::optional<std::size_t>;

/// Parses "1,2,4,full". Entries must be positive integers or `full`.
std::vector<ChiPoint> parse_chi_grid(const std::string& text);

struct CurvePoint {
    ChiPoint chi;
    double metric = 0.0;
    std::size_t max_bond = 0; // realized largest bond of the decomposition
};

struct SensitivityCurve {
    std::string layer;
    double baseline = 0.0;
    std::vector<CurvePoint> points; // ascending chi, full last
    std::uint64_t seed = 0;
    std::string error;              // evaluator failure; points may be partial
};

struct ProfileOptions {
    std::size_t cores = 3;
};

/// For each target layer and each grid point, replaces only that layer by
/// its MPO reconstruction (cast back to the stored dtype) and evaluates.
/// A `full` point is always included. `ckpt` is never modified.
std::vector<SensitivityCurve> profile(const Checkpoint& ckpt, const ModelManifest& manifest,
                                      const std::vector<std::string>& target_layers,
                                      const std::vector<ChiPoint>& chi_grid, const Evaluator& evaluator,
                                      std::uint64_t seed, const ProfileOptions& options = {});

/// Manifest layers whose name matches the glob, in manifest order.
std::vector<std::string> select_layers(const ModelManifest& manifest, const std::string& glob);

/// Columns layer,chi,metric,baseline,seed,max_bond; curves with an error get
/// a single row with chi=error.
std::string curves_csv(const std::vector<SensitivityCurve>& curves);

} // namespace tensorize
