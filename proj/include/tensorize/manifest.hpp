// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tensorize/checkpoint.hpp"

namespace tensorize {

enum class LayerKind { dense, attention_proj, mlp, embedding, head };

const char* layer_kind_name(LayerKind kind) noexcept;
std::optional<LayerKind> parse_layer_kind(std::string_view name) noexcept;

/// One weight matrix of the model. `name` is the tensor holding the weight,
/// shaped (output_dim, input_dim).
struct ManifestLayer {
    std::string name;
    LayerKind kind = LayerKind::dense;
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    std::optional<int> block_index;

    friend bool operator==(const ManifestLayer&, const ManifestLayer&) = default;
};

struct ModelManifest {
    std::string model_name;
    std::string version = "1";
    std::vector<ManifestLayer> layers;

    [[nodiscard]] const ManifestLayer* find(const std::string& name) const;

    friend bool operator==(const ModelManifest&, const ModelManifest&) = default;
};

/// Throws DataError(schema) with the offending JSON path.
ModelManifest parse_manifest(std::string_view text);
std::string manifest_json(const ModelManifest& manifest);
ModelManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const ModelManifest& manifest, const std::filesystem::path& path);

/// `<dir>/<stem>.manifest.json` for a checkpoint at `<dir>/<stem>.<ext>`.
std::filesystem::path manifest_path_for(const std::filesystem::path& checkpoint_path);

/// Every layer must resolve to a weight (dense, MPO or quantized) whose shape
/// is (output_dim, input_dim).
void check_manifest(const ModelManifest& manifest, const Checkpoint& ckpt);

} // namespace tensorize
