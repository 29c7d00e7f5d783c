// SPDX-License-Identifier: Apache-2.0
#include "tensorize/toy_model.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "tensorize/errors.hpp"
#include "tensorize/linalg.hpp"

namespace tensorize {

double DeterministicRng::uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double DeterministicRng::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double DeterministicRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
}

std::size_t DeterministicRng::below(std::size_t n) {
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % n);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finaliser over the combined value
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

Matrix toy_cluster_means(std::uint64_t dataset_seed) {
    DeterministicRng rng(mix_seed(dataset_seed, 0));
    Matrix means(kToyClasses, kToyInputDim);
    for (Eigen::Index c = 0; c < means.rows(); ++c) {
        for (Eigen::Index d = 0; d < means.cols(); ++d) means(c, d) = rng.normal();
        means.row(c) *= 4.0 / means.row(c).norm();
    }
    return means;
}

std::pair<Matrix, std::vector<int>> sample_clusters(const Matrix& means, std::uint64_t seed, std::size_t n) {
    DeterministicRng rng(seed);
    const auto classes = static_cast<std::size_t>(means.rows());
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
    rng.shuffle(labels);
    Matrix x(static_cast<Eigen::Index>(n), means.cols());
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        for (Eigen::Index d = 0; d < x.cols(); ++d) {
            x(row, d) = means(labels[i], d) + rng.normal();
        }
    }
    return {std::move(x), std::move(labels)};
}

ToyDataset generate_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test) {
    if (n_train < kToyClasses || n_test < kToyClasses) {
        throw ArgumentError("dataset splits need at least one sample per class");
    }
    ToyDataset ds;
    ds.seed = seed;
    ds.means = toy_cluster_means(seed);
    std::tie(ds.train_x, ds.train_y) = sample_clusters(ds.means, mix_seed(seed, 1), n_train);
    std::tie(ds.test_x, ds.test_y) = sample_clusters(ds.means, mix_seed(seed, 2), n_test);
    return ds;
}

std::size_t layer_in(const ToyLayer& layer) {
    return std::visit(
        [](const auto& l) -> std::size_t {
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, DenseLayer>) {
                return static_cast<std::size_t>(l.weight.cols());
            } else {
                return l.chain.cols();
            }
        },
        layer);
}

std::size_t layer_out(const ToyLayer& layer) {
    return std::visit(
        [](const auto& l) -> std::size_t {
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, DenseLayer>) {
                return static_cast<std::size_t>(l.weight.rows());
            } else {
                return l.chain.rows();
            }
        },
        layer);
}

std::size_t layer_weight_params(const ToyLayer& layer) {
    if (const auto* d = std::get_if<DenseLayer>(&layer)) {
        return static_cast<std::size_t>(d->weight.size());
    }
    return std::get<MpoDenseLayer>(layer).chain.param_count();
}

std::size_t ToyModel::input_dim() const { return layers.empty() ? 0 : layer_in(layers.front()); }
std::size_t ToyModel::output_dim() const { return layers.empty() ? 0 : layer_out(layers.back()); }

std::size_t ToyModel::param_count() const {
    std::size_t total = 0;
    for (const auto& l : layers) total += layer_weight_params(l) + layer_out(l);
    return total;
}

void ToyModel::validate() const {
    if (layers.empty()) {
        throw ArgumentError("toy model has no layers");
    }
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Eigen::Index bias_len = std::visit([](const auto& l) { return l.bias.size(); }, layers[i]);
        if (static_cast<std::size_t>(bias_len) != layer_out(layers[i])) {
            throw ArgumentError("layer " + std::to_string(i) + " bias length does not match its output");
        }
        if (i + 1 < layers.size() && layer_out(layers[i]) != layer_in(layers[i + 1])) {
            throw ArgumentError("layer " + std::to_string(i) + " output does not feed layer " + std::to_string(i + 1));
        }
    }
}

ToyModel init_model(std::uint64_t seed, const std::vector<std::size_t>& dims) {
    if (dims.size() < 2) {
        throw ArgumentError("toy model needs at least an input and an output size");
    }
    DeterministicRng rng(mix_seed(seed, 100));
    ToyModel model;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        const auto in = static_cast<Eigen::Index>(dims[i]);
        const auto out = static_cast<Eigen::Index>(dims[i + 1]);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        DenseLayer layer{Matrix(out, in), Eigen::VectorXd(out)};
        for (Eigen::Index r = 0; r < out; ++r)
            for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
        for (Eigen::Index r = 0; r < out; ++r) layer.bias(r) = rng.uniform(-bound, bound);
        model.layers.emplace_back(std::move(layer));
    }
    return model;
}

Matrix forward(const ToyModel& model, const Matrix& inputs, ForwardCache* cache) {
    model.validate();
    if (static_cast<std::size_t>(inputs.cols()) != model.input_dim()) {
        throw ArgumentError("inputs have " + std::to_string(inputs.cols()) + " features, model expects " +
                            std::to_string(model.input_dim()));
    }
    if (cache) {
        *cache = ForwardCache{};
        cache->chains.resize(model.layers.size());
    }
    Matrix act = inputs.transpose();
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        Matrix z;
        if (const auto* d = std::get_if<DenseLayer>(&model.layers[i])) {
            z.noalias() = d->weight * act;
            z.colwise() += d->bias;
        } else {
            const auto& m = std::get<MpoDenseLayer>(model.layers[i]);
            z = chain_apply(m.chain, act, cache ? &cache->chains[i] : nullptr);
            z.colwise() += m.bias;
        }
        if (cache) {
            cache->inputs.push_back(std::move(act));
            cache->preacts.push_back(z);
        }
        act = (i + 1 < model.layers.size()) ? Matrix(z.cwiseMax(0.0)) : std::move(z);
    }
    return act.transpose();
}

namespace {

// Row-wise log-sum-exp softmax; returns probabilities and the mean loss.
std::pair<Matrix, double> softmax_xent(const Matrix& logits, std::span<const int> labels) {
    const auto batch = logits.rows();
    Matrix probs(batch, logits.cols());
    double total = 0.0;
    for (Eigen::Index b = 0; b < batch; ++b) {
        const int y = labels[static_cast<std::size_t>(b)];
        if (y < 0 || y >= logits.cols()) {
            throw ArgumentError("label " + std::to_string(y) + " outside 0.." + std::to_string(logits.cols() - 1));
        }
        const double peak = logits.row(b).maxCoeff();
        const Eigen::RowVectorXd shifted = logits.row(b).array() - peak;
        const double lse = std::log(shifted.array().exp().sum());
        probs.row(b) = (shifted.array() - lse).exp();
        total += lse - shifted(y);
    }
    return {std::move(probs), total / static_cast<double>(batch)};
}

void check_batch(const Matrix& inputs, std::span<const int> labels) {
    if (inputs.rows() < 1 || static_cast<std::size_t>(inputs.rows()) != labels.size()) {
        throw ArgumentError("batch has " + std::to_string(inputs.rows()) + " inputs and " +
                            std::to_string(labels.size()) + " labels");
    }
}

} // namespace

LossAndGrads loss_and_grads(const ToyModel& model, const Matrix& inputs, std::span<const int> labels) {
    check_batch(inputs, labels);
    ForwardCache cache;
    const Matrix logits = forward(model, inputs, &cache);
    auto [probs, loss] = softmax_xent(logits, labels);
    if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite loss on a batch of " << inputs.rows() << " (max |logit| "
           << logits.cwiseAbs().maxCoeff() << ", max |input| " << inputs.cwiseAbs().maxCoeff() << ")";
        throw NumericalError(os.str());
    }

    const auto batch = static_cast<double>(inputs.rows());
    for (Eigen::Index b = 0; b < probs.rows(); ++b) probs(b, labels[static_cast<std::size_t>(b)]) -= 1.0;
    Matrix upstream = probs.transpose() / batch; // dL/dz of the last layer, (classes x B)

    LossAndGrads out;
    out.loss = loss;
    out.grads.resize(model.layers.size());
    for (std::size_t i = model.layers.size(); i-- > 0;) {
        if (i + 1 < model.layers.size()) {
            upstream = upstream.cwiseProduct((cache.preacts[i].array() > 0.0).cast<double>().matrix());
        }
        const Matrix& input = cache.inputs[i];
        if (const auto* d = std::get_if<DenseLayer>(&model.layers[i])) {
            DenseGrad g;
            g.weight.noalias() = upstream * input.transpose();
            g.bias = upstream.rowwise().sum();
            if (i > 0) upstream = d->weight.transpose() * upstream;
            out.grads[i] = std::move(g);
        } else {
            const auto& m = std::get<MpoDenseLayer>(model.layers[i]);
            MpoGrad g;
            g.bias = upstream.rowwise().sum();
            Matrix down = chain_backward(m.chain, cache.chains[i], upstream, g.cores);
            if (i > 0) upstream = std::move(down);
            out.grads[i] = std::move(g);
        }
    }
    return out;
}

double mean_loss(const ToyModel& model, const Matrix& inputs, std::span<const int> labels) {
    check_batch(inputs, labels);
    return softmax_xent(forward(model, inputs), labels).second;
}

double evaluate(const ToyModel& model, const Matrix& inputs, std::span<const int> labels) {
    check_batch(inputs, labels);
    constexpr Eigen::Index chunk = 512;
    std::size_t correct = 0;
    for (Eigen::Index start = 0; start < inputs.rows(); start += chunk) {
        const Eigen::Index len = std::min(chunk, inputs.rows() - start);
        const Matrix logits = forward(model, inputs.middleRows(start, len));
        for (Eigen::Index b = 0; b < len; ++b) {
            Eigen::Index best = 0;
            for (Eigen::Index c = 1; c < logits.cols(); ++c) {
                if (logits(b, c) > logits(b, best)) best = c;
            }
            correct += best == labels[static_cast<std::size_t>(start + b)] ? 1 : 0;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(inputs.rows());
}

ToyModel tensorize_layer(const ToyModel& model, std::size_t index, std::size_t cores, std::size_t chi) {
    if (index >= model.layers.size()) {
        throw ArgumentError("no layer " + std::to_string(index));
    }
    const auto* dense = std::get_if<DenseLayer>(&model.layers[index]);
    if (!dense) {
        throw ArgumentError("layer " + std::to_string(index) + " is already tensorized");
    }
    const auto scheme = IndexScheme::balanced(static_cast<std::size_t>(dense->weight.rows()),
                                              static_cast<std::size_t>(dense->weight.cols()), cores);
    MpoDenseLayer replacement;
    replacement.source = decompose(dense->weight, scheme, DecomposeOptions{chi, 0.0, {}});
    replacement.chain = to_chain(replacement.source);
    replacement.bias = dense->bias;
    ToyModel out = model;
    out.layers[index] = std::move(replacement);
    return out;
}

ToyModel tensorize_hidden(const ToyModel& model, std::size_t cores, std::size_t chi) {
    ToyModel out = model;
    for (std::size_t i = 1; i + 1 < model.layers.size(); ++i) {
        out = tensorize_layer(out, i, cores, chi);
    }
    return out;
}

namespace {

std::string weight_name(std::size_t i) { return "layers." + std::to_string(i) + ".weight"; }
std::string bias_name(std::size_t i) { return "layers." + std::to_string(i) + ".bias"; }

std::string bias_for(const std::string& weight) {
    const std::string suffix = ".weight";
    if (weight.size() > suffix.size() && weight.compare(weight.size() - suffix.size(), suffix.size(), suffix) == 0) {
        return weight.substr(0, weight.size() - suffix.size()) + ".bias";
    }
    return weight + ".bias";
}

} // namespace

std::pair<Checkpoint, ModelManifest> toy_to_checkpoint(const ToyModel& model, std::uint64_t dataset_seed, DType dtype) {
    model.validate();
    Checkpoint ckpt;
    ModelManifest manifest;
    manifest.model_name = "toy-mlp";
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const bool last = i + 1 == model.layers.size();
        ManifestLayer entry{weight_name(i), last ? LayerKind::head : LayerKind::dense, layer_in(model.layers[i]),
                            layer_out(model.layers[i]), std::nullopt};
        if (!last) entry.block_index = static_cast<int>(i);
        manifest.layers.push_back(entry);

        if (const auto* d = std::get_if<DenseLayer>(&model.layers[i])) {
            ckpt.add(weight_name(i), DenseTensor::from_matrix(d->weight, dtype));
            ckpt.add(bias_name(i), DenseTensor::from_values(dtype, {static_cast<std::size_t>(d->bias.size())},
                                                            std::span<const double>(d->bias.data(), static_cast<std::size_t>(d->bias.size()))));
        } else {
            const auto& m = std::get<MpoDenseLayer>(model.layers[i]);
            store_mpo(ckpt, weight_name(i), from_chain(m.chain, m.source, dtype));
            ckpt.add(bias_name(i), DenseTensor::from_values(dtype, {static_cast<std::size_t>(m.bias.size())},
                                                            std::span<const double>(m.bias.data(), static_cast<std::size_t>(m.bias.size()))));
        }
    }
    ckpt.metadata[kToyDatasetSeedKey] = std::to_string(dataset_seed);
    return {std::move(ckpt), std::move(manifest)};
}

ToyModel toy_from_checkpoint(const Checkpoint& ckpt, const ModelManifest& manifest) {
    ToyModel model;
    for (const auto& layer : manifest.layers) {
        Eigen::VectorXd bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(layer.output_dim));
        const std::string bname = bias_for(layer.name);
        if (ckpt.contains(bname)) {
            const auto values = ckpt.get(bname).to_f64();
            if (values.size() != layer.output_dim) {
                throw DataError(DataError::Kind::schema, "bias '" + bname + "' has the wrong length");
            }
            bias = Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
        }
        if (!ckpt.contains(layer.name) && has_mpo(ckpt, layer.name)) {
            MpoDenseLayer m;
            m.source = load_mpo(ckpt, layer.name);
            m.chain = to_chain(m.source);
            m.bias = std::move(bias);
            model.layers.emplace_back(std::move(m));
        } else {
            model.layers.emplace_back(DenseLayer{materialize(ckpt, layer.name).to_matrix(), std::move(bias)});
        }
    }
    try {
        model.validate();
    } catch (const ArgumentError& e) {
        throw DataError(DataError::Kind::schema, std::string("checkpoint is not a chained MLP: ") + e.what());
    }
    return model;
}

double toy_evaluator(const Checkpoint& ckpt, const ModelManifest& manifest, std::uint64_t seed) {
    const auto it = ckpt.metadata.find(kToyDatasetSeedKey);
    if (it == ckpt.metadata.end()) {
        throw DataError(DataError::Kind::schema,
                        std::string("checkpoint lacks '") + kToyDatasetSeedKey + "' metadata; not a toy model");
    }
    std::uint64_t dataset_seed = 0;
    try {
        dataset_seed = std::stoull(it->second);
    } catch (const std::exception&) {
        throw DataError(DataError::Kind::schema, std::string("metadata '") + kToyDatasetSeedKey + "' is not an integer");
    }
    const ToyModel model = toy_from_checkpoint(ckpt, manifest);
    if (model.input_dim() != kToyInputDim || model.output_dim() != kToyClasses) {
        throw DataError(DataError::Kind::schema, "toy evaluator needs a 64-input, 8-class model");
    }
    const auto [x, y] = sample_clusters(toy_cluster_means(dataset_seed), mix_seed(seed, 3), kToyEvaluatorSamples);
    return evaluate(model, x, y);
}

} // namespace tensorize
