// SPDX-License-Identifier: Apache-2.0
#include "tensorize/plan.hpp"

#include <set>

#include <fnmatch.h>

#include <json.hpp>

#include "tensorize/errors.hpp"

namespace tensorize {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what) {
    throw DataError(DataError::Kind::schema, path + ": " + what);
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) {
            fail(path + "." + key, "unknown key");
        }
    }
}

std::size_t positive(const json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<long long>() < 1) {
        fail(path, "must be an integer >= 1");
    }
    return v.get<std::size_t>();
}

double non_negative(const json& v, const std::string& path) {
    if (!v.is_number() || !(v.get<double>() >= 0.0)) {
        fail(path, "must be a non-negative number");
    }
    return v.get<double>();
}

DType store_dtype(const json& v, const std::string& path) {
    if (v.is_string()) {
        const auto d = parse_dtype(v.get<std::string>());
        if (d && is_floating(*d)) {
            return *d;
        }
    }
    fail(path, "must be one of \"f16\", \"f32\", \"f64\"");
}

std::vector<std::size_t> positive_list(const json& v, const std::string& path) {
    if (!v.is_array() || v.empty()) {
        fail(path, "must be a non-empty array of integers >= 1");
    }
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(positive(v[i], path + "[" + std::to_string(i) + "]"));
    }
    return out;
}

std::string pattern_string(const json& v, const std::string& path) {
    if (!v.is_string() || v.get<std::string>().empty()) {
        fail(path, "must be a non-empty glob string");
    }
    return v.get<std::string>();
}

TensorizeAction parse_tensorize(const json& rule, const std::string& path) {
    TensorizeAction t;
    if (rule.contains("k")) t.k = positive(rule["k"], path + ".k");
    if (rule.contains("chi")) t.chi = positive(rule["chi"], path + ".chi");
    if (rule.contains("store_dtype")) t.store_dtype = store_dtype(rule["store_dtype"], path + ".store_dtype");
    if (rule.contains("rel_tol")) t.rel_tol = non_negative(rule["rel_tol"], path + ".rel_tol");
    if (rule.contains("bond_caps")) t.bond_caps = positive_list(rule["bond_caps"], path + ".bond_caps");
    if (rule.contains("scheme")) {
        const json& s = rule["scheme"];
        const std::string sp = path + ".scheme";
        if (!s.is_object()) fail(sp, "must be an object with rows and cols");
        reject_unknown(s, {"rows", "cols"}, sp);
        if (!s.contains("rows") || !s.contains("cols")) fail(sp, "needs both rows and cols");
        IndexScheme scheme{positive_list(s["rows"], sp + ".rows"), positive_list(s["cols"], sp + ".cols")};
        if (scheme.row_factors.size() != scheme.col_factors.size()) {
            fail(sp, "rows and cols must have the same length");
        }
        if (t.k && *t.k != scheme.cores()) {
            fail(path + ".k", "disagrees with the explicit scheme length");
        }
        t.scheme = std::move(scheme);
    }
    if (!t.bond_caps.empty()) {
        const std::size_t k = t.scheme ? t.scheme->cores() : t.k.value_or(0);
        if (k != 0 && t.bond_caps.size() + 1 != k) {
            fail(path + ".bond_caps", "needs k - 1 = " + std::to_string(k - 1) + " entries");
        }
    }
    return t;
}

PlanRule parse_rule(const json& rule, const std::string& path) {
    if (!rule.is_object()) fail(path, "must be an object");
    if (!rule.contains("pattern")) fail(path + ".pattern", "missing");
    if (!rule.contains("action") || !rule["action"].is_string()) {
        fail(path + ".action", "must be \"keep\", \"tensorize\" or \"quantize\"");
    }
    PlanRule out;
    out.pattern = pattern_string(rule["pattern"], path + ".pattern");
    const std::string action = rule["action"].get<std::string>();
    if (action == "keep") {
        reject_unknown(rule, {"pattern", "action"}, path);
        out.action = KeepAction{};
    } else if (action == "tensorize") {
        reject_unknown(rule, {"pattern", "action", "k", "chi", "store_dtype", "rel_tol", "scheme", "bond_caps"}, path);
        out.action = parse_tensorize(rule, path);
    } else if (action == "quantize") {
        reject_unknown(rule, {"pattern", "action", "bits", "granularity"}, path);
        QuantizeAction q;
        if (rule.contains("bits")) {
            const json& b = rule["bits"];
            if (!b.is_number_integer() || (b.get<int>() != 4 && b.get<int>() != 8)) {
                fail(path + ".bits", "must be 4 or 8");
            }
            q.bits = b.get<int>();
        }
        if (rule.contains("granularity")) {
            const json& g = rule["granularity"];
            const auto parsed = g.is_string() ? parse_granularity(g.get<std::string>()) : std::nullopt;
            if (!parsed) fail(path + ".granularity", "must be \"per_row\" or \"per_tensor\"");
            q.granularity = *parsed;
        }
        out.action = q;
    } else {
        fail(path + ".action", "must be \"keep\", \"tensorize\" or \"quantize\"");
    }
    return out;
}

bool is_last_mlp_of_block(const ModelManifest& manifest, const ManifestLayer& layer) {
    if (layer.kind != LayerKind::mlp || !layer.block_index) {
        return false;
    }
    const ManifestLayer* last = nullptr;
    for (const auto& l : manifest.layers) {
        if (l.kind == LayerKind::mlp && l.block_index == layer.block_index) {
            last = &l;
        }
    }
    return last == &layer || (last && last->name == layer.name);
}

} // namespace

const char* action_name(const PlanAction& action) noexcept {
    switch (action.index()) {
    case 1: return "tensorize";
    case 2: return "quantize";
    default: return "keep";
    }
}

CompressionPlan parse_plan(std::string_view text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(DataError::Kind::malformed_json, std::string("plan: ") + e.what());
    }
    const std::string base = "plan";
    if (!root.is_object()) fail(base, "must be a JSON object");
    reject_unknown(root, {"schema", "defaults", "default_action", "rules", "exclusions", "default_exclusions", "early_blocks"}, base);

    CompressionPlan plan;
    if (root.contains("schema")) {
        if (!root["schema"].is_number_integer() || root["schema"].get<int>() != 1) {
            fail(base + ".schema", "only schema version 1 is supported");
        }
    }
    if (root.contains("defaults")) {
        const json& d = root["defaults"];
        const std::string p = base + ".defaults";
        if (!d.is_object()) fail(p, "must be an object");
        reject_unknown(d, {"k", "chi", "store_dtype", "rel_tol"}, p);
        if (d.contains("k")) plan.defaults.k = positive(d["k"], p + ".k");
        if (d.contains("chi")) plan.defaults.chi = positive(d["chi"], p + ".chi");
        if (d.contains("store_dtype")) plan.defaults.store_dtype = store_dtype(d["store_dtype"], p + ".store_dtype");
        if (d.contains("rel_tol")) plan.defaults.rel_tol = non_negative(d["rel_tol"], p + ".rel_tol");
    }
    plan.tensorize_unmatched = plan.defaults.chi.has_value();
    if (root.contains("default_action")) {
        const json& a = root["default_action"];
        const std::string p = base + ".default_action";
        if (a == "tensorize") {
            if (!plan.defaults.chi) fail(p, "tensorize needs defaults.chi");
            plan.tensorize_unmatched = true;
        } else if (a == "keep") {
            plan.tensorize_unmatched = false;
        } else {
            fail(p, "must be \"tensorize\" or \"keep\"");
        }
    }
    if (root.contains("rules")) {
        const json& rules = root["rules"];
        if (!rules.is_array()) fail(base + ".rules", "must be an array");
        for (std::size_t i = 0; i < rules.size(); ++i) {
            const std::string p = base + ".rules[" + std::to_string(i) + "]";
            PlanRule rule = parse_rule(rules[i], p);
            if (const auto* t = std::get_if<TensorizeAction>(&rule.action); t && !t->chi && !plan.defaults.chi) {
                fail(p + ".chi", "missing and no defaults.chi to fall back on");
            }
            plan.rules.push_back(std::move(rule));
        }
    }
    if (root.contains("exclusions")) {
        const json& ex = root["exclusions"];
        if (!ex.is_array()) fail(base + ".exclusions", "must be an array of glob strings");
        for (std::size_t i = 0; i < ex.size(); ++i) {
            plan.exclusions.push_back(pattern_string(ex[i], base + ".exclusions[" + std::to_string(i) + "]"));
        }
    }
    if (root.contains("default_exclusions")) {
        if (!root["default_exclusions"].is_boolean()) fail(base + ".default_exclusions", "must be a boolean");
        plan.default_exclusions = root["default_exclusions"].get<bool>();
    }
    if (root.contains("early_blocks")) {
        const json& e = root["early_blocks"];
        const std::string p = base + ".early_blocks";
        if (!e.is_object()) fail(p, "must be an object");
        reject_unknown(e, {"count", "min_fraction"}, p);
        if (e.contains("count")) {
            if (!e["count"].is_number_integer() || e["count"].get<int>() < 0) fail(p + ".count", "must be an integer >= 0");
            plan.early_blocks.count = e["count"].get<int>();
        }
        if (e.contains("min_fraction")) {
            const double f = non_negative(e["min_fraction"], p + ".min_fraction");
            if (f > 1.0) fail(p + ".min_fraction", "must be in [0, 1]");
            plan.early_blocks.min_fraction = f;
        }
    }
    return plan;
}

bool glob_match(const std::string& pattern, const std::string& name) {
    return ::fnmatch(pattern.c_str(), name.c_str(), 0) == 0;
}

Disposition resolve_layer(const CompressionPlan& plan, const ModelManifest& manifest, const ManifestLayer& layer) {
    for (const auto& pattern : plan.exclusions) {
        if (glob_match(pattern, layer.name)) {
            return {KeepAction{}, "excluded by '" + pattern + "'"};
        }
    }
    if (plan.default_exclusions) {
        if (layer.kind == LayerKind::embedding || layer.kind == LayerKind::head) {
            return {KeepAction{}, std::string("default exclusion: ") + layer_kind_name(layer.kind) + " layer"};
        }
        if (is_last_mlp_of_block(manifest, layer)) {
            return {KeepAction{}, "default exclusion: last MLP layer of block " + std::to_string(*layer.block_index)};
        }
    }

    const PlanAction* chosen = nullptr;
    std::string reason;
    for (std::size_t i = 0; i < plan.rules.size(); ++i) {
        if (glob_match(plan.rules[i].pattern, layer.name)) {
            chosen = &plan.rules[i].action;
            reason = "rule " + std::to_string(i) + " '" + plan.rules[i].pattern + "'";
            break;
        }
    }
    const PlanAction fallback = plan.tensorize_unmatched ? PlanAction{TensorizeAction{}} : PlanAction{KeepAction{}};
    if (!chosen) {
        chosen = &fallback;
        reason = "default action";
    }

    if (const auto* q = std::get_if<QuantizeAction>(chosen)) {
        return {*q, reason};
    }
    if (const auto* t = std::get_if<TensorizeAction>(chosen)) {
        ResolvedTensorize r;
        if (t->scheme) {
            if (t->scheme->rows() != layer.output_dim || t->scheme->cols() != layer.input_dim) {
                throw ArgumentError("layer '" + layer.name + "': explicit scheme describes " +
                                    std::to_string(t->scheme->rows()) + "x" + std::to_string(t->scheme->cols()) +
                                    ", weight is " + std::to_string(layer.output_dim) + "x" +
                                    std::to_string(layer.input_dim));
            }
            r.scheme = *t->scheme;
        } else {
            r.scheme = IndexScheme::balanced(layer.output_dim, layer.input_dim, t->k.value_or(plan.defaults.k));
        }
        r.chi = t->chi ? *t->chi : plan.defaults.chi.value_or(1);
        r.store_dtype = t->store_dtype.value_or(plan.defaults.store_dtype);
        r.rel_tol = t->rel_tol.value_or(plan.defaults.rel_tol);
        r.bond_caps = t->bond_caps;
        if (!r.bond_caps.empty() && r.bond_caps.size() + 1 != r.scheme.cores()) {
            throw ArgumentError("layer '" + layer.name + "': bond_caps needs " +
                                std::to_string(r.scheme.cores() - 1) + " entries");
        }
        return {r, reason};
    }
    return {KeepAction{}, reason};
}

} // namespace tensorize
