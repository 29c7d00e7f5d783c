// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tensorize/toy_model.hpp"

namespace tensorize {

enum class OptimizerKind { adam, sgd_momentum };
enum class TrainScope { all, mpo_cores_only };

const char* optimizer_name(OptimizerKind kind) noexcept;
const char* scope_name(TrainScope scope) noexcept;

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::adam;
    double momentum = 0.9;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    TrainScope scope = TrainScope::all;

    /// Throws ArgumentError on non-positive sizes or out-of-range coefficients.
    /// A zero learning rate is allowed.
    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double test_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochMetrics> epochs;
    bool diverged = false;
    std::string error; // set when diverged
};

/// Trains `model` in place. Each epoch reshuffles the training split with a
/// stream derived from config.seed. A non-finite loss stops training and the
/// history so far is returned with `diverged` set.
TrainHistory train(ToyModel& model, const ToyDataset& data, const TrainConfig& config);

/// Number of scalars `train` would update under `scope`.
std::size_t trainable_params(const ToyModel& model, TrainScope scope);

struct HealDemoConfig {
    std::uint64_t seed = 42;
    std::size_t cores = 3;
    std::size_t chi = 4;
    std::size_t baseline_epochs = 10;
    std::size_t heal_epochs = 3;
    double heal_learning_rate = 1e-3;
    TrainScope heal_scope = TrainScope::mpo_cores_only;
    std::size_t n_train = 8000;
    std::size_t n_test = 2000;
};

struct HealDemoResult {
    TrainHistory baseline_history;
    TrainHistory heal_history;
    double baseline_acc = 0.0;
    double compressed_acc = 0.0;
    double healed_acc = 0.0;
    std::size_t dense_params = 0;      // tensorized layers, before
    std::size_t compressed_params = 0; // tensorized layers, after
    double param_reduction_pct = 0.0;
    ToyModel baseline;
    ToyModel healed;
};

/// Trains a dense baseline, tensorizes its hidden-to-hidden layers, then
/// retrains the compressed model.
HealDemoResult run_heal_demo(const HealDemoConfig& config);

/// phase,epoch,train_loss,test_accuracy rows; phase is baseline, compressed
/// (epoch 0, no training) or heal.
std::string heal_metrics_csv(const HealDemoResult& result);

/// baseline_acc=... compressed_acc=... healed_acc=... param_reduction_pct=...
std::string heal_summary_line(const HealDemoResult& result);

} // namespace tensorize
