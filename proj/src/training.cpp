// SPDX-License-Identifier: Apache-2.0
#include "tensorize/training.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "tensorize/errors.hpp"

namespace tensorize {

const char* optimizer_name(OptimizerKind kind) noexcept {
    return kind == OptimizerKind::adam ? "adam" : "sgd_momentum";
}

const char* scope_name(TrainScope scope) noexcept {
    return scope == TrainScope::all ? "all" : "mpo_cores_only";
}

void TrainConfig::validate() const {
    if (epochs == 0) throw ArgumentError("epochs must be >= 1");
    if (batch_size == 0) throw ArgumentError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ArgumentError("learning_rate must be finite and >= 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must be in [0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ArgumentError("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ArgumentError("beta2 must be in [0, 1)");
    if (!(eps > 0.0)) throw ArgumentError("eps must be > 0");
}

namespace {

// One contiguous trainable array and where its gradient lives.
struct ParamBlock {
    double* value;
    Eigen::Index size;
    std::size_t layer;
    int slot; // -2 dense weight, -1 bias, >= 0 MPO core index
};

std::vector<ParamBlock> collect_params(ToyModel& model, TrainScope scope) {
    std::vector<ParamBlock> blocks;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (auto* d = std::get_if<DenseLayer>(&model.layers[i])) {
            if (scope == TrainScope::all) {
                blocks.push_back({d->weight.data(), d->weight.size(), i, -2});
                blocks.push_back({d->bias.data(), d->bias.size(), i, -1});
            }
            continue;
        }
        auto& m = std::get<MpoDenseLayer>(model.layers[i]);
        for (std::size_t c = 0; c < m.chain.cores.size(); ++c) {
            blocks.push_back({m.chain.cores[c].data(), m.chain.cores[c].size(), i, static_cast<int>(c)});
        }
        if (scope == TrainScope::all) {
            blocks.push_back({m.bias.data(), m.bias.size(), i, -1});
        }
    }
    return blocks;
}

const double* grad_of(const LossAndGrads& g, const ParamBlock& block) {
    const LayerGrad& lg = g.grads[block.layer];
    if (const auto* d = std::get_if<DenseGrad>(&lg)) {
        return block.slot == -2 ? d->weight.data() : d->bias.data();
    }
    const auto& m = std::get<MpoGrad>(lg);
    return block.slot == -1 ? m.bias.data() : m.cores[static_cast<std::size_t>(block.slot)].data();
}

} // namespace

std::size_t trainable_params(const ToyModel& model, TrainScope scope) {
    ToyModel copy = model;
    std::size_t total = 0;
    for (const auto& b : collect_params(copy, scope)) total += static_cast<std::size_t>(b.size);
    return total;
}

TrainHistory train(ToyModel& model, const ToyDataset& data, const TrainConfig& config) {
    config.validate();
    model.validate();
    const auto n = static_cast<std::size_t>(data.train_x.rows());
    if (n == 0 || data.train_y.size() != n) {
        throw ArgumentError("training split is empty or its labels do not match");
    }

    const std::vector<ParamBlock> blocks = collect_params(model, config.scope);
    std::vector<Eigen::VectorXd> first(blocks.size()), second(blocks.size());
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        first[b] = Eigen::VectorXd::Zero(blocks[b].size);
        second[b] = Eigen::VectorXd::Zero(blocks[b].size);
    }

    DeterministicRng shuffle_rng(mix_seed(config.seed, 7));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainHistory history;
    std::uint64_t step = 0;
    Matrix batch_x;
    std::vector<int> batch_y;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            const std::size_t len = std::min(config.batch_size, n - start);
            batch_x.resize(static_cast<Eigen::Index>(len), data.train_x.cols());
            batch_y.resize(len);
            for (std::size_t j = 0; j < len; ++j) {
                batch_x.row(static_cast<Eigen::Index>(j)) = data.train_x.row(static_cast<Eigen::Index>(order[start + j]));
                batch_y[j] = data.train_y[order[start + j]];
            }
            LossAndGrads g;
            try {
                g = loss_and_grads(model, batch_x, batch_y);
            } catch (const NumericalError& e) {
                history.diverged = true;
                history.error = "epoch " + std::to_string(epoch) + ", batch at " + std::to_string(start) + ": " + e.what();
                return history;
            }
            loss_sum += g.loss * static_cast<double>(len);
            ++step;

            const double lr = config.learning_rate;
            const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                Eigen::Map<Eigen::VectorXd> value(blocks[b].value, blocks[b].size);
                const Eigen::Map<const Eigen::VectorXd> grad(grad_of(g, blocks[b]), blocks[b].size);
                if (config.optimizer == OptimizerKind::adam) {
                    first[b] = config.beta1 * first[b] + (1.0 - config.beta1) * grad;
                    second[b] = config.beta2 * second[b] + (1.0 - config.beta2) * grad.cwiseProduct(grad);
                    value.array() -= lr * (first[b].array() / c1) / ((second[b].array() / c2).sqrt() + config.eps);
                } else {
                    first[b] = config.momentum * first[b] + grad;
                    value -= lr * first[b];
                }
            }
        }
        history.epochs.push_back({epoch, loss_sum / static_cast<double>(n), evaluate(model, data.test_x, data.test_y)});
    }
    return history;
}

HealDemoResult run_heal_demo(const HealDemoConfig& config) {
    if (config.cores < 1 || config.chi < 1) {
        throw ArgumentError("cores and chi must be >= 1");
    }
    const ToyDataset data = generate_dataset(config.seed, config.n_train, config.n_test);

    HealDemoResult result;
    result.baseline = init_model(config.seed);
    TrainConfig base_cfg;
    base_cfg.epochs = config.baseline_epochs;
    base_cfg.seed = config.seed;
    result.baseline_history = train(result.baseline, data, base_cfg);
    if (result.baseline_history.diverged) {
        throw NumericalError("baseline training diverged: " + result.baseline_history.error);
    }
    result.baseline_acc = evaluate(result.baseline, data.test_x, data.test_y);

    result.healed = tensorize_hidden(result.baseline, config.cores, config.chi);
    for (std::size_t i = 0; i < result.healed.layers.size(); ++i) {
        if (std::holds_alternative<MpoDenseLayer>(result.healed.layers[i])) {
            result.dense_params += layer_weight_params(result.baseline.layers[i]);
            result.compressed_params += layer_weight_params(result.healed.layers[i]);
        }
    }
    result.param_reduction_pct =
        result.dense_params ? 100.0 * (1.0 - static_cast<double>(result.compressed_params) /
                                                 static_cast<double>(result.dense_params))
                            : 0.0;
    result.compressed_acc = evaluate(result.healed, data.test_x, data.test_y);

    if (config.heal_epochs > 0) {
        TrainConfig heal_cfg;
        heal_cfg.epochs = config.heal_epochs;
        heal_cfg.learning_rate = config.heal_learning_rate;
        heal_cfg.seed = mix_seed(config.seed, 11);
        heal_cfg.scope = config.heal_scope;
        result.heal_history = train(result.healed, data, heal_cfg);
        if (result.heal_history.diverged) {
            throw NumericalError("healing diverged: " + result.heal_history.error);
        }
    }
    result.healed_acc = evaluate(result.healed, data.test_x, data.test_y);
    return result;
}

namespace {

std::string num(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace

std::string heal_metrics_csv(const HealDemoResult& result) {
    std::ostringstream os;
    os << "phase,epoch,train_loss,test_accuracy\n";
    for (const auto& e : result.baseline_history.epochs) {
        os << "baseline," << e.epoch << ',' << num(e.train_loss) << ',' << num(e.test_accuracy) << '\n';
    }
    os << "compressed,0,," << num(result.compressed_acc) << '\n';
    for (const auto& e : result.heal_history.epochs) {
        os << "heal," << e.epoch << ',' << num(e.train_loss) << ',' << num(e.test_accuracy) << '\n';
    }
    return os.str();
}

std::string heal_summary_line(const HealDemoResult& result) {
    char pct[32];
    std::snprintf(pct, sizeof pct, "%.2f", result.param_reduction_pct);
    char accs[96];
    std::snprintf(accs, sizeof accs, "baseline_acc=%.4f compressed_acc=%.4f healed_acc=%.4f", result.baseline_acc,
                  result.compressed_acc, result.healed_acc);
    return std::string(accs) + " param_reduction_pct=" + pct;
}

} // namespace tensorize
