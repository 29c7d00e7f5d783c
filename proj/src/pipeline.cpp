// SPDX-License-Identifier: Apache-2.0
#include "tensorize/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include "tensorize/errors.hpp"
#include "tensorize/linalg.hpp"

namespace tensorize {

namespace {

struct LayerOutcome {
    LayerReport row;
    std::vector<std::pair<std::string, DenseTensor>> tensors;
    std::vector<std::pair<std::string, std::string>> metadata;
};

double relative_error(const Matrix& reference, const Matrix& approx) {
    const double ref = reference.norm();
    const double diff = (reference - approx).norm();
    return ref > 0.0 ? diff / ref : diff;
}

[[noreturn]] void rethrow_with_layer(const std::string& layer, std::exception_ptr error) {
    const std::string prefix = "layer '" + layer + "': ";
    try {
        std::rethrow_exception(error);
    } catch (const DataError& e) {
        throw DataError(e.kind(), prefix + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(prefix + e.what());
    } catch (const ArgumentError& e) {
        throw ArgumentError(prefix + e.what());
    }
}

LayerOutcome keep_layer(const DenseTensor& weight, const ManifestLayer& layer, std::string note) {
    LayerOutcome out;
    out.row = {layer.name, "keep", weight.size(), weight.size(), weight.byte_size(), weight.byte_size(), 0.0, {}, std::move(note)};
    out.tensors.emplace_back(layer.name, weight);
    return out;
}

LayerOutcome process_layer(const Checkpoint& ckpt, const ModelManifest& manifest, const CompressionPlan& plan,
                           const ManifestLayer& layer) {
    const Disposition disposition = resolve_layer(plan, manifest, layer);
    const DenseTensor& weight = ckpt.get(layer.name);
    if (weight.shape() != Shape{layer.output_dim, layer.input_dim}) {
        throw DataError(DataError::Kind::schema, "weight shape " + shape_string(weight.shape()) +
                                                     " does not match the manifest");
    }

    if (std::holds_alternative<KeepAction>(disposition.action)) {
        return keep_layer(weight, layer, disposition.reason);
    }
    if (!is_floating(weight.dtype())) {
        return keep_layer(weight, layer, disposition.reason + "; integer weights are kept as stored");
    }

    const Matrix original = weight.to_matrix();
    const std::uint64_t params_before = weight.size();

    if (const auto* q = std::get_if<QuantizeAction>(&disposition.action)) {
        const QuantizedTensor quant = quantize_affine(weight, q->bits, q->granularity);
        LayerOutcome out;
        out.row = {layer.name, "quantize", params_before, params_before, weight.byte_size(),
                   quant.storage_bytes(), relative_error(original, dequantize(quant).to_matrix()), {},
                   disposition.reason};
        Checkpoint scratch;
        store_quantized(scratch, layer.name, quant);
        for (auto& [name, t] : scratch.tensors) out.tensors.emplace_back(name, t);
        for (auto& [key, value] : scratch.metadata) out.metadata.emplace_back(key, value);
        return out;
    }

    const auto& t = std::get<ResolvedTensorize>(disposition.action);
    const MpoLayer exact = decompose(original, t.scheme, DecomposeOptions{t.chi, t.rel_tol, t.bond_caps});
    const std::uint64_t params_after = param_count(exact);
    if (params_after >= params_before) {
        return keep_layer(weight, layer,
                          disposition.reason + "; MPO would not reduce parameters (" + std::to_string(params_after) +
                              " >= " + std::to_string(params_before) + "), kept");
    }
    if (layer.block_index && *layer.block_index < plan.early_blocks.count &&
        static_cast<double>(params_after) < plan.early_blocks.min_fraction * static_cast<double>(params_before)) {
        std::ostringstream note;
        note << disposition.reason << "; early block " << *layer.block_index << " would keep "
             << std::setprecision(3) << 100.0 * static_cast<double>(params_after) / static_cast<double>(params_before)
             << "% of parameters, below the " << 100.0 * plan.early_blocks.min_fraction << "% floor, kept";
        return keep_layer(weight, layer, note.str());
    }

    const MpoLayer stored = with_dtype(exact, t.store_dtype);
    const double rel = relative_error(original, reconstruct_matrix(stored));
    std::uint64_t bytes_after = 0;
    for (const auto& core : stored.cores) bytes_after += core.byte_size();

    LayerOutcome out;
    out.row = {layer.name, "tensorize", params_before, params_after, weight.byte_size(), bytes_after, rel,
               stored.bond_dims, disposition.reason};
    Checkpoint scratch;
    store_mpo(scratch, layer.name, stored, rel);
    for (auto& [name, tensor] : scratch.tensors) out.tensors.emplace_back(name, tensor);
    for (auto& [key, value] : scratch.metadata) out.metadata.emplace_back(key, value);
    return out;
}

} // namespace

CompressionResult compress_model(const Checkpoint& ckpt, const ModelManifest& manifest, const CompressionPlan& plan,
                                 const CompressOptions& options) {
    const auto& layers = manifest.layers;
    std::vector<LayerOutcome> outcomes(layers.size());
    std::vector<std::exception_ptr> errors(layers.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < layers.size(); i = next++) {
            try {
                outcomes[i] = process_layer(ckpt, manifest, plan, layers[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(layers.size())));
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (errors[i]) {
            rethrow_with_layer(layers[i].name, errors[i]);
        }
    }

    CompressionResult result;
    result.checkpoint.metadata = ckpt.metadata;
    std::set<std::string> layer_names;
    for (const auto& l : layers) layer_names.insert(l.name);
    for (const auto& [name, t] : ckpt.tensors) {
        if (!layer_names.count(name)) {
            result.checkpoint.add(name, t);
        }
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        try {
            for (auto& [name, t] : outcomes[i].tensors) result.checkpoint.add(name, std::move(t));
            for (auto& [key, value] : outcomes[i].metadata) {
                if (!result.checkpoint.metadata.emplace(key, value).second) {
                    throw DataError(DataError::Kind::name_collision, "metadata key '" + key + "' already exists");
                }
            }
        } catch (...) {
            rethrow_with_layer(layers[i].name, std::current_exception());
        }
        result.report.layers.push_back(std::move(outcomes[i].row));
    }
    return result;
}

std::vector<VerifyRow> verify_compressed(const Checkpoint& original, const Checkpoint& compressed) {
    std::vector<VerifyRow> rows;
    std::set<std::string> covered;

    for (const auto& layer : mpo_layers(compressed)) {
        const MpoLayer mpo = load_mpo(compressed, layer);
        const Matrix ref = original.get(layer).to_matrix();
        const Matrix approx = reconstruct_matrix(mpo);
        VerifyRow row;
        row.name = layer;
        row.storage = "mpo";
        const double ref_norm = ref.norm();
        const double abs_err = (ref - approx).norm();
        row.rel_error = ref_norm > 0.0 ? abs_err / ref_norm : abs_err;
        const double recorded = mpo_stored_rel_error(compressed, layer);
        if (recorded >= 0.0) {
            row.bound = recorded + 1e-7;
        } else {
            row.bound = (mpo.truncation_error + 1e-8) / (ref_norm > 0.0 ? ref_norm : 1.0);
        }
        row.ok = row.rel_error <= row.bound;
        // f64 cores carry no storage rounding, so the sweep's own bound applies.
        if (mpo.dtype == DType::f64 && abs_err > mpo.truncation_error + 1e-8 + 1e-12 * ref_norm) {
            row.ok = false;
            row.detail = "exceeds truncation error bound";
        }
        rows.push_back(std::move(row));
        covered.insert(layer);
        for (std::size_t i = 0; i < mpo.cores.size(); ++i) covered.insert(mpo_core_name(layer, i));
    }

    for (const auto& layer : quantized_layers(compressed)) {
        const QuantizedTensor q = load_quantized(compressed, layer);
        const DenseTensor& ref_t = original.get(layer);
        const auto ref = ref_t.to_f64();
        const auto approx = dequantize(q).to_f64();
        if (ref_t.shape() != q.original_shape) {
            throw DataError(DataError::Kind::schema, "quantized layer '" + layer + "' shape differs from the original");
        }
        VerifyRow row;
        row.name = layer;
        row.storage = "quantized";
        const std::size_t group_len = q.granularity == Granularity::per_row ? q.original_shape[1] : ref.size();
        double diff2 = 0.0, ref2 = 0.0, worst = 0.0;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            const double d = std::abs(ref[i] - approx[i]);
            diff2 += d * d;
            ref2 += ref[i] * ref[i];
            const double limit = q.scales[i / group_len] / 2.0 + 1e-7;
            worst = std::max(worst, d - limit);
        }
        row.rel_error = ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
        row.bound = row.rel_error;
        row.ok = worst <= 0.0;
        if (!row.ok) row.detail = "element error exceeds half a quantization step";
        rows.push_back(std::move(row));
        covered.insert(layer);
        covered.insert(quant_data_name(layer));
        covered.insert(quant_scales_name(layer));
    }

    for (const auto& [name, t] : original.tensors) {
        if (covered.count(name)) {
            continue;
        }
        if (!compressed.contains(name)) {
            throw DataError(DataError::Kind::missing_tensor, "compressed checkpoint has no counterpart for '" + name + "'");
        }
        VerifyRow row;
        row.name = name;
        row.storage = "dense";
        const DenseTensor& other = compressed.get(name);
        row.ok = other == t;
        if (!row.ok) {
            row.detail = "kept tensor differs from the original";
            if (other.shape() == t.shape() && t.dtype() != DType::i4packed && other.dtype() != DType::i4packed) {
                const auto a = t.to_f64();
                const auto b = other.to_f64();
                double diff2 = 0.0, ref2 = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    diff2 += (a[i] - b[i]) * (a[i] - b[i]);
                    ref2 += a[i] * a[i];
                }
                row.rel_error = ref2 > 0.0 ? std::sqrt(diff2 / ref2) : std::sqrt(diff2);
            } else {
                row.rel_error = 1.0;
            }
        }
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const VerifyRow& a, const VerifyRow& b) { return a.name < b.name; });
    return rows;
}

std::string verify_table(const std::vector<VerifyRow>& rows) {
    std::size_t width = 5;
    for (const auto& r : rows) width = std::max(width, r.name.size());
    std::ostringstream os;
    os << std::left << std::setw(static_cast<int>(width)) << "layer" << "  " << std::setw(9) << "storage" << "  "
       << std::setw(13) << "rel_error" << "  " << std::setw(13) << "bound" << "  status\n";
    std::size_t failed = 0;
    for (const auto& r : rows) {
        os << std::setw(static_cast<int>(width)) << r.name << "  " << std::setw(9) << r.storage << "  "
           << std::setw(13) << std::setprecision(6) << std::scientific << r.rel_error << "  " << std::setw(13)
           << r.bound << "  " << (r.ok ? "ok" : "FAIL") << (r.detail.empty() ? "" : " (" + r.detail + ")") << '\n';
        os << std::defaultfloat;
        failed += r.ok ? 0 : 1;
    }
    os << rows.size() << " tensors checked, " << failed << " failed\n";
    return os.str();
}

} // namespace tensorize
