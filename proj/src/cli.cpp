// SPDX-License-Identifier: Apache-2.0
#include "tensorize/cli.hpp"

#include <algorithm>
#include <charconv>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tensorize/checkpoint.hpp"
#include "tensorize/errors.hpp"
#include "tensorize/file_util.hpp"
#include "tensorize/manifest.hpp"
#include "tensorize/pipeline.hpp"
#include "tensorize/plan.hpp"
#include "tensorize/profiler.hpp"
#include "tensorize/quantization.hpp"
#include "tensorize/toy_model.hpp"
#include "tensorize/training.hpp"

namespace tensorize::cli {

namespace {

// Bad flag values that CLI11 validators cannot see.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CompressArgs {
    std::string input, manifest, plan, output, report, format = "json";
    unsigned threads = 1;
};

struct InspectArgs {
    std::string input;
};

struct VerifyArgs {
    std::string original, compressed;
};

struct ProfileArgs {
    std::string input, manifest, layers = "*", grid = "1,2,4,8,full", seeds = "0", out;
    std::size_t cores = 3;
};

struct HealArgs {
    std::uint64_t seed = 42;
    std::size_t chi = 4, cores = 3, epochs = 3, baseline_epochs = 10;
    double lr = 1e-3;
    std::string scope = "mpo_cores_only", out, save_baseline;
};

struct QuantizeArgs {
    std::string input, output, granularity = "per_row";
    int bits = 8;
};

std::string fixed2(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, 2);
    return std::string(buf, res.ptr);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::uint64_t v = 0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || res.ec != std::errc{} || res.ptr != item.data() + item.size()) {
            throw UsageError("--seed entry '" + item + "' is not a non-negative integer");
        }
        seeds.push_back(v);
    }
    if (seeds.empty()) throw UsageError("--seed needs at least one value");
    return seeds;
}

int do_compress(const CompressArgs& a, std::ostream& out) {
    const Checkpoint ckpt = read_checkpoint(a.input);
    const ModelManifest manifest = read_manifest(a.manifest);
    const CompressionPlan plan = parse_plan(read_file_text(a.plan));
    check_manifest(manifest, ckpt);
    const CompressionResult result = compress_model(ckpt, manifest, plan, CompressOptions{a.threads});
    const std::string report =
        emit_report(result.report, a.format == "csv" ? ReportFormat::csv : ReportFormat::json);
    write_checkpoint(result.checkpoint, a.output);
    write_manifest(manifest, manifest_path_for(a.output));
    write_file_atomic(a.report, report);
    const ReportTotals t = result.report.totals();
    out << "compressed " << result.report.layers.size() << " layers: params " << t.params_before << " -> "
        << t.params_after << " (" << fixed2(t.parameter_reduction_pct) << "% fewer), bytes " << t.bytes_before
        << " -> " << t.bytes_after << " (" << fixed2(t.byte_reduction_pct) << "% fewer)\n";
    return kExitOk;
}

int do_inspect(const InspectArgs& a, bool json, std::ostream& out) {
    const CheckpointListing listing = inspect(a.input);
    out << (json ? listing_json(listing) : listing_text(listing));
    return kExitOk;
}

int do_verify(const VerifyArgs& a, bool json, std::ostream& out) {
    const auto rows = verify_compressed(read_checkpoint(a.original), read_checkpoint(a.compressed));
    const bool ok = std::all_of(rows.begin(), rows.end(), [](const VerifyRow& r) { return r.ok; });
    if (json) {
        nlohmann::ordered_json j;
        j["ok"] = ok;
        j["tensors"] = nlohmann::ordered_json::array();
        for (const auto& r : rows) {
            j["tensors"].push_back({{"name", r.name}, {"storage", r.storage}, {"rel_error", r.rel_error},
                                    {"bound", r.bound}, {"ok", r.ok}, {"detail", r.detail}});
        }
        out << j.dump(2) << '\n';
    } else {
        out << verify_table(rows);
    }
    return ok ? kExitOk : kExitData;
}

int do_profile(const ProfileArgs& a, std::ostream& out) {
    std::vector<ChiPoint> grid;
    try {
        grid = parse_chi_grid(a.grid);
    } catch (const ArgumentError& e) {
        throw UsageError(std::string("--chi-grid: ") + e.what());
    }
    const std::vector<std::uint64_t> seeds = parse_seeds(a.seeds);
    const Checkpoint ckpt = read_checkpoint(a.input);
    const ModelManifest manifest = read_manifest(a.manifest);
    check_manifest(manifest, ckpt);
    const auto layers = select_layers(manifest, a.layers);
    if (layers.empty()) {
        throw DataError(DataError::Kind::missing_tensor, "no manifest layer matches '" + a.layers + "'");
    }
    std::vector<SensitivityCurve> curves;
    for (auto seed : seeds) {
        auto part = profile(ckpt, manifest, layers, grid, toy_evaluator, seed, ProfileOptions{a.cores});
        curves.insert(curves.end(), part.begin(), part.end());
    }
    write_file_atomic(a.out, curves_csv(curves));
    std::size_t failed = 0;
    for (const auto& c : curves) failed += c.error.empty() ? 0 : 1;
    out << "profiled " << layers.size() << " layers x " << seeds.size() << " seeds, " << failed
        << " curves failed\n";
    return failed ? kExitData : kExitOk;
}

int do_heal(const HealArgs& a, std::ostream& out) {
    HealDemoConfig cfg;
    cfg.seed = a.seed;
    cfg.chi = a.chi;
    cfg.cores = a.cores;
    cfg.heal_epochs = a.epochs;
    cfg.baseline_epochs = a.baseline_epochs;
    cfg.heal_learning_rate = a.lr;
    cfg.heal_scope = a.scope == "all" ? TrainScope::all : TrainScope::mpo_cores_only;
    const HealDemoResult result = run_heal_demo(cfg);
    if (!a.save_baseline.empty()) {
        const auto [ckpt, manifest] = toy_to_checkpoint(result.baseline, cfg.seed);
        write_checkpoint(ckpt, a.save_baseline);
        write_manifest(manifest, manifest_path_for(a.save_baseline));
    }
    write_file_atomic(a.out, heal_metrics_csv(result));
    out << heal_summary_line(result) << '\n';
    return kExitOk;
}

int do_quantize(const QuantizeArgs& a, std::ostream& out) {
    const Checkpoint ckpt = read_checkpoint(a.input);
    const Granularity gran = *parse_granularity(a.granularity);
    Checkpoint result;
    result.metadata = ckpt.metadata;
    std::size_t count = 0, bytes_before = 0, bytes_after = 0;
    for (const auto& [name, t] : ckpt.tensors) {
        if (t.rank() == 2 && is_floating(t.dtype())) {
            const QuantizedTensor q = quantize_affine(t, a.bits, gran);
            store_quantized(result, name, q);
            bytes_before += t.byte_size();
            bytes_after += q.storage_bytes();
            ++count;
        } else {
            result.add(name, t);
        }
    }
    write_checkpoint(result, a.output);
    out << "quantized " << count << " tensors to int" << a.bits << " (" << granularity_name(gran) << "), bytes "
        << bytes_before << " -> " << bytes_after << '\n';
    return kExitOk;
}

int report_error(std::ostream& err, bool json, int code, const std::string& kind, const std::string& message) {
    if (json) {
        nlohmann::ordered_json j;
        j["error"] = {{"exit_code", code}, {"kind", kind}, {"message", message}};
        err << j.dump() << '\n';
    } else {
        err << "tensorize: error: " << message << '\n';
    }
    return code;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"MPO and quantization compression for weight checkpoints", "tensorize"};
    app.require_subcommand(1);
    app.fallthrough();
    bool json = false;
    app.add_flag("--json", json, "Machine-readable output and errors");

    CompressArgs ca;
    auto* compress = app.add_subcommand("compress", "Apply a compression plan to a checkpoint");
    compress->add_option("--input", ca.input, "Input checkpoint")->required();
    compress->add_option("--manifest", ca.manifest, "Model manifest JSON")->required();
    compress->add_option("--plan", ca.plan, "Compression plan JSON")->required();
    compress->add_option("--output", ca.output, "Output checkpoint")->required();
    compress->add_option("--report", ca.report, "Report path")->required();
    compress->add_option("--report-format", ca.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    compress->add_option("--threads", ca.threads, "Worker threads")->check(CLI::Range(1u, 256u));

    InspectArgs ia;
    auto* insp = app.add_subcommand("inspect", "List tensors and metadata");
    insp->add_option("--input", ia.input, "Checkpoint")->required();

    VerifyArgs va;
    auto* verify = app.add_subcommand("verify", "Check a compressed checkpoint against its original");
    verify->add_option("--original", va.original, "Original checkpoint")->required();
    verify->add_option("--compressed", va.compressed, "Compressed checkpoint")->required();

    ProfileArgs pa;
    auto* prof = app.add_subcommand("profile", "Per-layer bond dimension sensitivity sweep");
    prof->add_option("--input", pa.input, "Toy model checkpoint")->required();
    prof->add_option("--manifest", pa.manifest, "Model manifest JSON")->required();
    prof->add_option("--layers", pa.layers, "Layer name glob");
    prof->add_option("--chi-grid", pa.grid, "Comma list of bond caps and 'full'");
    prof->add_option("--seed", pa.seeds, "Evaluation seed or comma list of seeds");
    prof->add_option("--cores", pa.cores, "Cores per layer")->check(CLI::Range(std::size_t{1}, std::size_t{16}));
    prof->add_option("--out", pa.out, "Output CSV")->required();

    HealArgs ha;
    auto* heal = app.add_subcommand("heal-demo", "Train, compress and heal the toy classifier");
    heal->add_option("--seed", ha.seed, "Seed for data, init and shuffling");
    heal->add_option("--chi", ha.chi, "Bond cap")->check(CLI::PositiveNumber);
    heal->add_option("--cores", ha.cores, "Cores per layer")->check(CLI::Range(std::size_t{1}, std::size_t{16}));
    heal->add_option("--epochs", ha.epochs, "Healing epochs");
    heal->add_option("--baseline-epochs", ha.baseline_epochs, "Baseline training epochs")->check(CLI::PositiveNumber);
    heal->add_option("--lr", ha.lr, "Healing learning rate")->check(CLI::NonNegativeNumber);
    heal->add_option("--scope", ha.scope, "all or mpo_cores_only")->check(CLI::IsMember({"all", "mpo_cores_only"}));
    heal->add_option("--save-baseline", ha.save_baseline, "Also write the dense baseline checkpoint");
    heal->add_option("--out", ha.out, "Metrics CSV")->required();

    QuantizeArgs qa;
    auto* quant = app.add_subcommand("quantize", "Quantize every floating-point matrix");
    quant->add_option("--input", qa.input, "Input checkpoint")->required();
    quant->add_option("--bits", qa.bits, "4 or 8")->required()->check(CLI::IsMember({4, 8}));
    quant->add_option("--granularity", qa.granularity, "per_row or per_tensor")
        ->check(CLI::IsMember({"per_row", "per_tensor"}));
    quant->add_option("--output", qa.output, "Output checkpoint")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kExitOk;
        }
        return report_error(err, json, kExitUsage, "usage", e.what());
    }

    try {
        if (compress->parsed()) return do_compress(ca, out);
        if (insp->parsed()) return do_inspect(ia, json, out);
        if (verify->parsed()) return do_verify(va, json, out);
        if (prof->parsed()) return do_profile(pa, out);
        if (heal->parsed()) return do_heal(ha, out);
        if (quant->parsed()) return do_quantize(qa, out);
        return report_error(err, json, kExitUsage, "usage", "no subcommand given");
    } catch (const UsageError& e) {
        return report_error(err, json, kExitUsage, "usage", e.what());
    } catch (const DataError& e) {
        return report_error(err, json, kExitData, to_string(e.kind()), e.what());
    } catch (const NumericalError& e) {
        return report_error(err, json, kExitNumerical, "numerical", e.what());
    } catch (const ArgumentError& e) {
        return report_error(err, json, kExitData, "validation", e.what());
    } catch (const std::exception& e) {
        return report_error(err, json, kExitData, "internal", e.what());
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run(args, std::cout, std::cerr);
}

} // namespace tensorize::cli
