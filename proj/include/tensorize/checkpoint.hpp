// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tensorize/dense_tensor.hpp"
#include "tensorize/mpo.hpp"
#include "tensorize/quantization.hpp"

namespace tensorize {

/// Named tensors plus a string->string metadata map.
///
/// On disk: an 8-byte little-endian header length, a JSON header mapping each
/// tensor name to {"dtype", "shape", "data_offsets"} (plus "__metadata__"),
/// then the raw little-endian payloads in name order. The layout is the
/// common safetensors container, so files interoperate with ML tooling.
struct Checkpoint {
    std::map<std::string, DenseTensor> tensors;
    std::map<std::string, std::string> metadata;

    /// Throws DataError(name_collision) if `name` already exists.
    void add(const std::string& name, DenseTensor tensor);
    [[nodiscard]] const DenseTensor& get(const std::string& name) const;
    [[nodiscard]] bool contains(const std::string& name) const { return tensors.count(name) != 0; }

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Metadata key listing the logical shapes of i4packed tensors, which the
/// container stores as U8 byte blobs.
inline constexpr const char* kPackedShapesKey = "__i4packed__";

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Returns the number of bytes written. The file appears atomically.
std::size_t write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

struct TensorListing {
    std::string name;
    DType dtype;
    Shape shape;
    std::size_t bytes;
};

struct CheckpointListing {
    std::vector<TensorListing> tensors;
    std::map<std::string, std::string> metadata;
    std::size_t file_bytes = 0;
    std::size_t payload_bytes = 0;
};

CheckpointListing inspect(const std::filesystem::path& path);
std::string listing_text(const CheckpointListing& listing);
/// Stable key order, so identical files print identical JSON.
std::string listing_json(const CheckpointListing& listing);

// Layer storage conventions. A tensorized layer L is stored as tensors
// L.mpo.core0 .. L.mpo.core{k-1} with metadata key "L.mpo"; a quantized layer
// as L.q.data / L.q.scales with metadata key "L.q".

std::string mpo_core_name(const std::string& layer, std::size_t index);
std::string mpo_meta_key(const std::string& layer);
std::string quant_data_name(const std::string& layer);
std::string quant_scales_name(const std::string& layer);
std::string quant_meta_key(const std::string& layer);

/// `stored_rel_error` records the relative reconstruction error of the stored
/// cores against the source matrix; negative means unknown.
void store_mpo(Checkpoint& ckpt, const std::string& layer, const MpoLayer& mpo, double stored_rel_error = -1.0);
[[nodiscard]] bool has_mpo(const Checkpoint& ckpt, const std::string& layer);
MpoLayer load_mpo(const Checkpoint& ckpt, const std::string& layer);
/// Recorded stored_rel_error, or negative when absent.
double mpo_stored_rel_error(const Checkpoint& ckpt, const std::string& layer);

void store_quantized(Checkpoint& ckpt, const std::string& layer, const QuantizedTensor& q);
[[nodiscard]] bool has_quantized(const Checkpoint& ckpt, const std::string& layer);
QuantizedTensor load_quantized(const Checkpoint& ckpt, const std::string& layer);

/// Layer names that carry MPO / quantization metadata, sorted.
std::vector<std::string> mpo_layers(const Checkpoint& ckpt);
std::vector<std::string> quantized_layers(const Checkpoint& ckpt);

/// The dense weight of `layer` however it is stored: as-is, reconstructed
/// from MPO cores (f64), or dequantized (f32).
DenseTensor materialize(const Checkpoint& ckpt, const std::string& layer);

} // namespace tensorize
