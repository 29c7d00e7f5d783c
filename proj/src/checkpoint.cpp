// SPDX-License-Identifier: Apache-2.0
#include "tensorize/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "tensorize/errors.hpp"
#include "tensorize/file_util.hpp"

namespace tensorize {

using nlohmann::json;

namespace {

constexpr const char* kMetadataKey = "__metadata__";

const char* container_dtype(DType dtype) {
    switch (dtype) {
    case DType::f64: return "F64";
    case DType::f32: return "F32";
    case DType::f16: return "F16";
    case DType::i8: return "I8";
    case DType::i4packed: return "U8";
    }
    return "?";
}

std::optional<DType> from_container_dtype(const std::string& name) {
    if (name == "F64") return DType::f64;
    if (name == "F32") return DType::f32;
    if (name == "F16") return DType::f16;
    if (name == "I8") return DType::i8;
    return std::nullopt;
}

void check_name(const std::string& name) {
    if (name.empty()) {
        throw DataError(DataError::Kind::schema, "tensor names must be non-empty");
    }
    if (name == kMetadataKey) {
        throw DataError(DataError::Kind::schema, std::string("tensor name ") + kMetadataKey + " is reserved");
    }
    for (unsigned char c : name) {
        if (c < 0x20 || c > 0x7E) {
            throw DataError(DataError::Kind::schema, "tensor name '" + name + "' is not printable ASCII");
        }
    }
}

[[noreturn]] void malformed(const std::string& what) {
    throw DataError(DataError::Kind::malformed_json, "checkpoint header: " + what);
}

Shape parse_shape(const json& j, const std::string& where) {
    if (!j.is_array()) {
        malformed(where + ": shape must be an array");
    }
    Shape shape;
    for (const auto& d : j) {
        if (!d.is_number_unsigned() || d.get<std::uint64_t>() == 0) {
            malformed(where + ": shape entries must be positive integers");
        }
        shape.push_back(d.get<std::size_t>());
    }
    // Scalars (rank 0) are read as one-element vectors.
    if (shape.empty()) {
        shape.push_back(1);
    }
    return shape;
}

json parse_json_text(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(DataError::Kind::malformed_json, what + ": " + e.what());
    }
}

} // namespace

void Checkpoint::add(const std::string& name, DenseTensor tensor) {
    check_name(name);
    if (!tensors.emplace(name, std::move(tensor)).second) {
        throw DataError(DataError::Kind::name_collision, "duplicate tensor name '" + name + "'");
    }
}

const DenseTensor& Checkpoint::get(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) {
        throw DataError(DataError::Kind::missing_tensor, "checkpoint has no tensor '" + name + "'");
    }
    return it->second;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
    json header = json::object();
    json packed = json::object();
    std::size_t offset = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        check_name(name);
        Shape shape = t.shape();
        if (t.dtype() == DType::i4packed) {
            packed[name] = t.shape();
            shape = {t.byte_size()};
        }
        header[name] = {
            {"dtype", container_dtype(t.dtype())},
            {"shape", shape},
            {"data_offsets", {offset, offset + t.byte_size()}},
        };
        offset += t.byte_size();
    }
    if (ckpt.metadata.count(kPackedShapesKey)) {
        throw DataError(DataError::Kind::schema, std::string("metadata key ") + kPackedShapesKey + " is reserved");
    }
    if (!ckpt.metadata.empty() || !packed.empty()) {
        json meta(ckpt.metadata);
        if (!packed.empty()) {
            meta[kPackedShapesKey] = packed.dump();
        }
        header[kMetadataKey] = meta;
    }

    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    std::vector<std::uint8_t> out(8 + text.size() + offset);
    const auto len = static_cast<std::uint64_t>(text.size());
    std::memcpy(out.data(), &len, 8);
    std::memcpy(out.data() + 8, text.data(), text.size());
    std::size_t pos = 8 + text.size();
    for (const auto& [name, t] : ckpt.tensors) {
        const auto bytes = t.bytes();
        std::memcpy(out.data() + pos, bytes.data(), bytes.size());
        pos += bytes.size();
    }
    return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) {
        throw DataError(DataError::Kind::truncated_file,
                        "file has " + std::to_string(bytes.size()) + " bytes, shorter than the length prefix");
    }
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data(), 8);
    if (header_len > bytes.size() - 8) {
        throw DataError(DataError::Kind::truncated_file, "header length " + std::to_string(header_len) +
                                                             " exceeds the " + std::to_string(bytes.size() - 8) +
                                                             " bytes that follow");
    }
    const std::string text(reinterpret_cast<const char*>(bytes.data() + 8), header_len);
    const json header = parse_json_text(text, "checkpoint header");
    if (!header.is_object()) {
        malformed("top level must be an object");
    }

    const std::size_t payload_begin = 8 + header_len;
    const std::size_t payload_size = bytes.size() - payload_begin;

    Checkpoint ckpt;
    json packed = json::object();
    if (header.contains(kMetadataKey)) {
        const json& meta = header.at(kMetadataKey);
        if (!meta.is_object()) {
            malformed("__metadata__ must be an object");
        }
        for (const auto& [key, value] : meta.items()) {
            if (!value.is_string()) {
                malformed("__metadata__ values must be strings");
            }
            if (key == kPackedShapesKey) {
                packed = parse_json_text(value.get<std::string>(), "i4packed shape table");
                if (!packed.is_object()) {
                    malformed("i4packed shape table must be an object");
                }
            } else {
                ckpt.metadata.emplace(key, value.get<std::string>());
            }
        }
    }

    struct Span {
        std::size_t begin, end;
        std::string name;
    };
    std::vector<Span> spans;
    for (const auto& [name, entry] : header.items()) {
        if (name == kMetadataKey) {
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets")) {
            malformed("entry '" + name + "' needs dtype, shape and data_offsets");
        }
        if (!entry.at("dtype").is_string()) {
            malformed("entry '" + name + "': dtype must be a string");
        }
        const std::string dtype_text = entry.at("dtype").get<std::string>();
        Shape shape = parse_shape(entry.at("shape"), "entry '" + name + "'");
        const json& offsets = entry.at("data_offsets");
        if (!offsets.is_array() || offsets.size() != 2 || !offsets[0].is_number_unsigned() ||
            !offsets[1].is_number_unsigned()) {
            malformed("entry '" + name + "': data_offsets must be [begin, end]");
        }
        const auto begin = offsets[0].get<std::uint64_t>();
        const auto end = offsets[1].get<std::uint64_t>();

        DType dtype;
        if (dtype_text == "U8" && packed.contains(name)) {
            dtype = DType::i4packed;
            shape = parse_shape(packed.at(name), "i4packed shape of '" + name + "'");
        } else if (auto parsed = from_container_dtype(dtype_text)) {
            dtype = *parsed;
        } else {
            throw DataError(DataError::Kind::unknown_dtype,
                            "entry '" + name + "' has unsupported dtype " + dtype_text);
        }

        if (end < begin || end > payload_size) {
            throw DataError(DataError::Kind::offset_overflow, "entry '" + name + "' offsets [" +
                                                                  std::to_string(begin) + ", " + std::to_string(end) +
                                                                  ") fall outside the " +
                                                                  std::to_string(payload_size) + "-byte payload");
        }
        const std::size_t expected = storage_bytes(dtype, element_count(shape));
        if (end - begin != expected) {
            throw DataError(DataError::Kind::offset_overflow, "entry '" + name + "' spans " +
                                                                  std::to_string(end - begin) + " bytes but " +
                                                                  dtype_name(dtype) + shape_string(shape) + " needs " +
                                                                  std::to_string(expected));
        }
        spans.push_back({begin, end, name});
        const auto* first = bytes.data() + payload_begin + begin;
        ckpt.tensors.emplace(name, DenseTensor(dtype, std::move(shape), std::vector<std::uint8_t>(first, first + (end - begin))));
    }

    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
    for (std::size_t i = 1; i < spans.size(); ++i) {
        if (spans[i].begin < spans[i - 1].end) {
            throw DataError(DataError::Kind::offset_overlap,
                            "entries '" + spans[i - 1].name + "' and '" + spans[i].name + "' overlap");
        }
    }
    for (const auto& [name, shape] : packed.items()) {
        if (!ckpt.tensors.count(name)) {
            malformed("i4packed shape listed for missing tensor '" + name + "'");
        }
    }
    return ckpt;
}

std::size_t write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const auto bytes = encode_checkpoint(ckpt);
    write_file_atomic(path, bytes);
    return bytes.size();
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path));
}

CheckpointListing inspect(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    const Checkpoint ckpt = decode_checkpoint(bytes);
    CheckpointListing listing;
    listing.file_bytes = bytes.size();
    listing.metadata = ckpt.metadata;
    for (const auto& [name, t] : ckpt.tensors) {
        listing.tensors.push_back({name, t.dtype(), t.shape(), t.byte_size()});
        listing.payload_bytes += t.byte_size();
    }
    return listing;
}

std::string listing_text(const CheckpointListing& listing) {
    std::size_t width = 4;
    for (const auto& t : listing.tensors) {
        width = std::max(width, t.name.size());
    }
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "name" << "  " << std::setw(9) << "dtype"
       << "  " << std::setw(16) << "shape" << "  bytes\n";
    for (const auto& t : listing.tensors) {
        os << std::setw(static_cast<int>(width)) << t.name << "  " << std::setw(9) << dtype_name(t.dtype) << "  "
           << std::setw(16) << shape_string(t.shape) << "  " << t.bytes << '\n';
    }
    os << listing.tensors.size() << " tensors, " << listing.payload_bytes << " payload bytes, " << listing.file_bytes
       << " file bytes\n";
    if (!listing.metadata.empty()) {
        os << "metadata:\n";
        for (const auto& [key, value] : listing.metadata) {
            os << "  " << key << " = " << value << '\n';
        }
    }
    return os.str();
}

std::string listing_json(const CheckpointListing& listing) {
    json out;
    out["file_bytes"] = listing.file_bytes;
    out["payload_bytes"] = listing.payload_bytes;
    out["metadata"] = listing.metadata;
    out["tensors"] = json::array();
    for (const auto& t : listing.tensors) {
        out["tensors"].push_back({{"name", t.name}, {"dtype", dtype_name(t.dtype)}, {"shape", t.shape}, {"bytes", t.bytes}});
    }
    return out.dump(2) + "\n";
}

std::string mpo_core_name(const std::string& layer, std::size_t index) {
    return layer + ".mpo.core" + std::to_string(index);
}
std::string mpo_meta_key(const std::string& layer) { return layer + ".mpo"; }
std::string quant_data_name(const std::string& layer) { return layer + ".q.data"; }
std::string quant_scales_name(const std::string& layer) { return layer + ".q.scales"; }
std::string quant_meta_key(const std::string& layer) { return layer + ".q"; }

void store_mpo(Checkpoint& ckpt, const std::string& layer, const MpoLayer& mpo, double stored_rel_error) {
    mpo.validate();
    for (std::size_t i = 0; i < mpo.cores.size(); ++i) {
        ckpt.add(mpo_core_name(layer, i), mpo.cores[i]);
    }
    json meta = {
        {"row_factors", mpo.scheme.row_factors},
        {"col_factors", mpo.scheme.col_factors},
        {"bond_dims", mpo.bond_dims},
        {"max_bond", mpo.max_bond},
        {"truncation_error", mpo.truncation_error},
        {"dtype", dtype_name(mpo.dtype)},
    };
    if (stored_rel_error >= 0.0) {
        meta["stored_rel_error"] = stored_rel_error;
    }
    if (!ckpt.metadata.emplace(mpo_meta_key(layer), meta.dump()).second) {
        throw DataError(DataError::Kind::name_collision, "metadata key '" + mpo_meta_key(layer) + "' already set");
    }
}

bool has_mpo(const Checkpoint& ckpt, const std::string& layer) {
    return ckpt.metadata.count(mpo_meta_key(layer)) != 0;
}

namespace {

json layer_meta(const Checkpoint& ckpt, const std::string& key) {
    const auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) {
        throw DataError(DataError::Kind::missing_tensor, "checkpoint has no metadata entry '" + key + "'");
    }
    json meta = parse_json_text(it->second, "metadata '" + key + "'");
    if (!meta.is_object()) {
        throw DataError(DataError::Kind::schema, "metadata '" + key + "' must be a JSON object");
    }
    return meta;
}

template <typename T>
T meta_field(const json& meta, const char* field, const std::string& key) {
    try {
        return meta.at(field).get<T>();
    } catch (const json::exception& e) {
        throw DataError(DataError::Kind::schema, "metadata '" + key + "' field '" + field + "': " + e.what());
    }
}

} // namespace

MpoLayer load_mpo(const Checkpoint& ckpt, const std::string& layer) {
    const std::string key = mpo_meta_key(layer);
    const json meta = layer_meta(ckpt, key);
    MpoLayer mpo;
    mpo.scheme.row_factors = meta_field<std::vector<std::size_t>>(meta, "row_factors", key);
    mpo.scheme.col_factors = meta_field<std::vector<std::size_t>>(meta, "col_factors", key);
    mpo.bond_dims = meta_field<std::vector<std::size_t>>(meta, "bond_dims", key);
    mpo.max_bond = meta_field<std::size_t>(meta, "max_bond", key);
    mpo.truncation_error = meta_field<double>(meta, "truncation_error", key);
    const auto dtype = parse_dtype(meta_field<std::string>(meta, "dtype", key));
    if (!dtype) {
        throw DataError(DataError::Kind::unknown_dtype, "metadata '" + key + "' names an unknown dtype");
    }
    mpo.dtype = *dtype;
    try {
        mpo.scheme.validate();
    } catch (const ArgumentError& e) {
        throw DataError(DataError::Kind::schema, "metadata '" + key + "': " + e.what());
    }
    mpo.rows = mpo.scheme.rows();
    mpo.cols = mpo.scheme.cols();
    for (std::size_t i = 0; i < mpo.scheme.cores(); ++i) {
        mpo.cores.push_back(ckpt.get(mpo_core_name(layer, i)));
    }
    try {
        mpo.validate();
    } catch (const ArgumentError& e) {
        throw DataError(DataError::Kind::schema, "stored MPO '" + layer + "' is inconsistent: " + e.what());
    }
    return mpo;
}

double mpo_stored_rel_error(const Checkpoint& ckpt, const std::string& layer) {
    const json meta = layer_meta(ckpt, mpo_meta_key(layer));
    return meta.contains("stored_rel_error") ? meta.at("stored_rel_error").get<double>() : -1.0;
}

void store_quantized(Checkpoint& ckpt, const std::string& layer, const QuantizedTensor& q) {
    ckpt.add(quant_data_name(layer), q.qdata);
    ckpt.add(quant_scales_name(layer), DenseTensor::from_f32({q.scales.size()}, q.scales));
    const json meta = {
        {"bits", q.bits},
        {"granularity", granularity_name(q.granularity)},
        {"original_shape", q.original_shape},
    };
    if (!ckpt.metadata.emplace(quant_meta_key(layer), meta.dump()).second) {
        throw DataError(DataError::Kind::name_collision, "metadata key '" + quant_meta_key(layer) + "' already set");
    }
}

bool has_quantized(const Checkpoint& ckpt, const std::string& layer) {
    return ckpt.metadata.count(quant_meta_key(layer)) != 0;
}

QuantizedTensor load_quantized(const Checkpoint& ckpt, const std::string& layer) {
    const std::string key = quant_meta_key(layer);
    const json meta = layer_meta(ckpt, key);
    QuantizedTensor q;
    q.bits = meta_field<int>(meta, "bits", key);
    if (q.bits != 4 && q.bits != 8) {
        throw DataError(DataError::Kind::schema, "metadata '" + key + "': bits must be 4 or 8");
    }
    const auto gran = parse_granularity(meta_field<std::string>(meta, "granularity", key));
    if (!gran) {
        throw DataError(DataError::Kind::schema, "metadata '" + key + "': unknown granularity");
    }
    q.granularity = *gran;
    q.original_shape = meta_field<Shape>(meta, "original_shape", key);
    q.qdata = ckpt.get(quant_data_name(layer));
    const DType expected = q.bits == 8 ? DType::i8 : DType::i4packed;
    if (q.qdata.dtype() != expected || q.qdata.shape() != q.original_shape || q.original_shape.size() != 2) {
        throw DataError(DataError::Kind::schema, "quantized data for '" + layer + "' does not match its metadata");
    }
    const DenseTensor& scales = ckpt.get(quant_scales_name(layer));
    if (scales.dtype() != DType::f32 || scales.rank() != 1) {
        throw DataError(DataError::Kind::schema, "scales for '" + layer + "' must be a 1-d f32 tensor");
    }
    const std::size_t groups = q.granularity == Granularity::per_row ? q.original_shape[0] : 1;
    if (scales.size() != groups) {
        throw DataError(DataError::Kind::schema, "scales for '" + layer + "' have the wrong length");
    }
    for (std::size_t i = 0; i < scales.size(); ++i) {
        q.scales.push_back(static_cast<float>(scales.at(i)));
    }
    q.zero_points.assign(groups, 0);
    return q;
}

namespace {

std::vector<std::string> layers_with_suffix(const Checkpoint& ckpt, const std::string& suffix) {
    std::vector<std::string> out;
    for (const auto& [key, value] : ckpt.metadata) {
        if (key.size() > suffix.size() && key.compare(key.size() - suffix.size(), suffix.size(), suffix) == 0) {
            out.push_back(key.substr(0, key.size() - suffix.size()));
        }
    }
    return out;
}

} // namespace

std::vector<std::string> mpo_layers(const Checkpoint& ckpt) { return layers_with_suffix(ckpt, ".mpo"); }
std::vector<std::string> quantized_layers(const Checkpoint& ckpt) { return layers_with_suffix(ckpt, ".q"); }

DenseTensor materialize(const Checkpoint& ckpt, const std::string& layer) {
    if (ckpt.contains(layer)) {
        return ckpt.get(layer);
    }
    if (has_mpo(ckpt, layer)) {
        return reconstruct(load_mpo(ckpt, layer));
    }
    if (has_quantized(ckpt, layer)) {
        return dequantize(load_quantized(ckpt, layer));
    }
    throw DataError(DataError::Kind::missing_tensor, "checkpoint has no weight for layer '" + layer + "'");
}

} // namespace tensorize
