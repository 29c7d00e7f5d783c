// SPDX-License-Identifier: Apache-2.0
#include "tensorize/manifest.hpp"

#include <set>

#include <json.hpp>

#include "tensorize/errors.hpp"
#include "tensorize/file_util.hpp"

namespace tensorize {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
    throw DataError(DataError::Kind::schema, "manifest" + path + ": " + what);
}

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& path) {
    for (const auto& [key, value] : obj.items()) {
        if (!allowed.count(key)) {
            schema_error(path + "." + key, "unknown key");
        }
    }
}

std::size_t positive_dim(const json& obj, const char* key, const std::string& path) {
    if (!obj.contains(key)) {
        schema_error(path + "." + key, "missing");
    }
    const json& v = obj.at(key);
    if (!v.is_number_unsigned() || v.get<std::uint64_t>() == 0) {
        schema_error(path + "." + key, "must be a positive integer");
    }
    return v.get<std::size_t>();
}

} // namespace

const char* layer_kind_name(LayerKind kind) noexcept {
    switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::attention_proj: return "attention_proj";
    case LayerKind::mlp: return "mlp";
    case LayerKind::embedding: return "embedding";
    case LayerKind::head: return "head";
    }
    return "?";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) noexcept {
    if (name == "dense") return LayerKind::dense;
    if (name == "attention_proj") return LayerKind::attention_proj;
    if (name == "mlp") return LayerKind::mlp;
    if (name == "embedding") return LayerKind::embedding;
    if (name == "head") return LayerKind::head;
    return std::nullopt;
}

const ManifestLayer* ModelManifest::find(const std::string& name) const {
    for (const auto& layer : layers) {
        if (layer.name == name) {
            return &layer;
        }
    }
    return nullptr;
}

ModelManifest parse_manifest(std::string_view text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(DataError::Kind::malformed_json, std::string("manifest: ") + e.what());
    }
    if (!root.is_object()) {
        schema_error("", "must be a JSON object");
    }
    reject_unknown(root, {"model_name", "version", "layers"}, "");

    ModelManifest m;
    if (root.contains("model_name")) {
        if (!root["model_name"].is_string()) schema_error(".model_name", "must be a string");
        m.model_name = root["model_name"].get<std::string>();
    }
    if (root.contains("version")) {
        const json& v = root["version"];
        if (v.is_string()) {
            m.version = v.get<std::string>();
        } else if (v.is_number_integer()) {
            m.version = std::to_string(v.get<long long>());
        } else {
            schema_error(".version", "must be a string or integer");
        }
    }
    if (!root.contains("layers") || !root["layers"].is_array()) {
        schema_error(".layers", "must be an array");
    }
    std::set<std::string> seen;
    std::size_t i = 0;
    for (const auto& entry : root["layers"]) {
        const std::string path = ".layers[" + std::to_string(i++) + "]";
        if (!entry.is_object()) {
            schema_error(path, "must be an object");
        }
        reject_unknown(entry, {"name", "kind", "input_dim", "output_dim", "block_index"}, path);
        ManifestLayer layer;
        if (!entry.contains("name") || !entry["name"].is_string() || entry["name"].get<std::string>().empty()) {
            schema_error(path + ".name", "must be a non-empty string");
        }
        layer.name = entry["name"].get<std::string>();
        if (!seen.insert(layer.name).second) {
            schema_error(path + ".name", "duplicate layer '" + layer.name + "'");
        }
        if (!entry.contains("kind") || !entry["kind"].is_string()) {
            schema_error(path + ".kind", "must be a string");
        }
        const auto kind = parse_layer_kind(entry["kind"].get<std::string>());
        if (!kind) {
            schema_error(path + ".kind", "must be one of dense, attention_proj, mlp, embedding, head");
        }
        layer.kind = *kind;
        layer.input_dim = positive_dim(entry, "input_dim", path);
        layer.output_dim = positive_dim(entry, "output_dim", path);
        if (entry.contains("block_index") && !entry["block_index"].is_null()) {
            if (!entry["block_index"].is_number_integer()) {
                schema_error(path + ".block_index", "must be an integer or null");
            }
            layer.block_index = entry["block_index"].get<int>();
        }
        m.layers.push_back(std::move(layer));
    }
    return m;
}

std::string manifest_json(const ModelManifest& manifest) {
    json layers = json::array();
    for (const auto& l : manifest.layers) {
        json entry = {
            {"name", l.name},
            {"kind", layer_kind_name(l.kind)},
            {"input_dim", l.input_dim},
            {"output_dim", l.output_dim},
        };
        entry["block_index"] = l.block_index ? json(*l.block_index) : json(nullptr);
        layers.push_back(std::move(entry));
    }
    const json root = {{"model_name", manifest.model_name}, {"version", manifest.version}, {"layers", layers}};
    return root.dump(2) + "\n";
}

ModelManifest read_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_file_text(path));
}

void write_manifest(const ModelManifest& manifest, const std::filesystem::path& path) {
    write_file_atomic(path, manifest_json(manifest));
}

std::filesystem::path manifest_path_for(const std::filesystem::path& checkpoint_path) {
    auto out = checkpoint_path;
    out.replace_extension(".manifest.json");
    return out;
}

void check_manifest(const ModelManifest& manifest, const Checkpoint& ckpt) {
    for (const auto& layer : manifest.layers) {
        Shape shape;
        if (ckpt.contains(layer.name)) {
            shape = ckpt.get(layer.name).shape();
        } else if (has_mpo(ckpt, layer.name)) {
            const MpoLayer mpo = load_mpo(ckpt, layer.name);
            shape = {mpo.rows, mpo.cols};
        } else if (has_quantized(ckpt, layer.name)) {
            shape = load_quantized(ckpt, layer.name).original_shape;
        } else {
            throw DataError(DataError::Kind::missing_tensor,
                            "manifest layer '" + layer.name + "' has no weight in the checkpoint");
        }
        if (shape != Shape{layer.output_dim, layer.input_dim}) {
            throw DataError(DataError::Kind::schema, "manifest layer '" + layer.name + "' declares (" +
                                                         std::to_string(layer.output_dim) + "," +
                                                         std::to_string(layer.input_dim) + ") but the weight is " +
                                                         shape_string(shape));
        }
    }
}

} // namespace tensorize
