// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tensorize/dense_tensor.hpp"
#include "tensorize/manifest.hpp"
#include "tensorize/mpo.hpp"
#include "tensorize/quantization.hpp"

namespace tensorize {

struct KeepAction {
    friend bool operator==(const KeepAction&, const KeepAction&) = default;
};

/// Unset fields fall back to the plan defaults when the plan is resolved.
struct TensorizeAction {
    std::optional<IndexScheme> scheme; // explicit factors; otherwise balanced over k
    std::optional<std::size_t> k;
    std::optional<std::size_t> chi;
    std::optional<DType> store_dtype;
    std::optional<double> rel_tol;
    std::vector<std::size_t> bond_caps;

    friend bool operator==(const TensorizeAction&, const TensorizeAction&) = default;
};

struct QuantizeAction {
    int bits = 4;
    Granularity granularity = Granularity::per_row;

    friend bool operator==(const QuantizeAction&, const QuantizeAction&) = default;
};

using PlanAction = std::variant<KeepAction, TensorizeAction, QuantizeAction>;

const char* action_name(const PlanAction& action) noexcept;

struct PlanRule {
    std::string pattern; // glob over layer names
    PlanAction action;
};

struct PlanDefaults {
    std::size_t k = 3;
    std::optional<std::size_t> chi;
    DType store_dtype = DType::f16;
    double rel_tol = 0.0;
};

/// Layers in the first `count` blocks are kept rather than compressed below
/// `min_fraction` of their original parameters.
struct EarlyBlockGuard {
    int count = 0;
    double min_fraction = 0.5;
};

/// Declarative per-layer compression actions. Resolution order: exclusion
/// globs, then the built-in exclusions (embedding, head and each block's last
/// MLP layer), then the first matching rule, then the default action.
struct CompressionPlan {
    int schema = 1;
    PlanDefaults defaults;
    /// Tensorize unmatched layers with the defaults; otherwise keep them.
    bool tensorize_unmatched = false;
    std::vector<PlanRule> rules;
    std::vector<std::string> exclusions;
    bool default_exclusions = true;
    EarlyBlockGuard early_blocks;
};

/// Parses the JSON plan schema (version 1). Unknown keys and invalid values
/// raise DataError(schema) naming the JSON path, e.g. "plan.rules[0].chi".
CompressionPlan parse_plan(std::string_view text);

/// A tensorize action with every field filled in.
struct ResolvedTensorize {
    IndexScheme scheme;
    std::size_t chi = 1;
    DType store_dtype = DType::f16;
    double rel_tol = 0.0;
    std::vector<std::size_t> bond_caps;
};

struct Disposition {
    std::variant<KeepAction, ResolvedTensorize, QuantizeAction> action;
    std::string reason; // which rule or exclusion decided it
};

bool glob_match(const std::string& pattern, const std::string& name);

/// Decides what happens to `layer`. Throws ArgumentError when an explicit
/// scheme does not fit the layer shape.
Disposition resolve_layer(const CompressionPlan& plan, const ModelManifest& manifest, const ManifestLayer& layer);

} // namespace tensorize
