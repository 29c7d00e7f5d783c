// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "tensorize/checkpoint.hpp"
#include "tensorize/manifest.hpp"
#include "tensorize/mpo.hpp"

namespace tensorize {

/// mt19937_64 with portable uniform/normal transforms, so seeded runs give
/// the same numbers with any standard library.
class DeterministicRng {
public:
    explicit DeterministicRng(std::uint64_t seed) : engine_(seed) {}

    double uniform();                     // [0, 1)
    double uniform(double lo, double hi);
    double normal();                      // Box-Muller
    std::size_t below(std::size_t n);     // [0, n)
    std::uint64_t next() { return engine_(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Derives an independent stream seed from (seed, stream).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

inline constexpr std::size_t kToyClasses = 8;
inline constexpr std::size_t kToyInputDim = 64;

/// Eight unit-covariance Gaussian clusters in 64 dimensions.
struct ToyDataset {
    Matrix means;            // classes x dims, rows of norm 4
    Matrix train_x;          // n_train x dims
    std::vector<int> train_y;
    Matrix test_x;
    std::vector<int> test_y;
    std::uint64_t seed = 0;
};

ToyDataset generate_dataset(std::uint64_t seed, std::size_t n_train = 8000, std::size_t n_test = 2000);

/// Cluster means drawn from the dataset seed: seeded unit-sphere directions scaled by 4.
Matrix toy_cluster_means(std::uint64_t dataset_seed);

/// n labelled samples around `means`, class-balanced within one.
std::pair<Matrix, std::vector<int>> sample_clusters(const Matrix& means, std::uint64_t seed, std::size_t n);

struct DenseLayer {
    Matrix weight; // out x in
    Eigen::VectorXd bias;
};

struct MpoDenseLayer {
    MpoChain chain;
    MpoLayer source; // scheme and truncation info from the decomposition
    Eigen::VectorXd bias;
};

using ToyLayer = std::variant<DenseLayer, MpoDenseLayer>;

/// Stack of affine layers with rectifiers between them; the last layer's
/// output feeds softmax cross-entropy.
struct ToyModel {
    std::vector<ToyLayer> layers;

    [[nodiscard]] std::size_t input_dim() const;
    [[nodiscard]] std::size_t output_dim() const;
    [[nodiscard]] std::size_t param_count() const;
    /// Throws ArgumentError when adjacent layers do not chain.
    void validate() const;
};

std::size_t layer_in(const ToyLayer& layer);
std::size_t layer_out(const ToyLayer& layer);
std::size_t layer_weight_params(const ToyLayer& layer);

/// Dense layers initialised uniformly in +-1/sqrt(fan_in). The default
/// topology is 64 -> 216 -> 216 -> 8.
ToyModel init_model(std::uint64_t seed, const std::vector<std::size_t>& dims = {64, 216, 216, 8});

struct ForwardCache {
    std::vector<Matrix> inputs;      // activation entering layer l, (in x B)
    std::vector<Matrix> preacts;     // (out x B)
    std::vector<ChainCache> chains;  // MPO layers only
};

/// logits are (B x classes) for inputs (B x in).
Matrix forward(const ToyModel& model, const Matrix& inputs, ForwardCache* cache = nullptr);

struct DenseGrad {
    Matrix weight;
    Eigen::VectorXd bias;
};

struct MpoGrad {
    std::vector<Eigen::VectorXd> cores;
    Eigen::VectorXd bias;
};

using LayerGrad = std::variant<DenseGrad, MpoGrad>;

struct LossAndGrads {
    double loss = 0.0;
    std::vector<LayerGrad> grads; // one per layer
};

/// Mean softmax cross-entropy and its exact gradient. Rectifier derivative at
/// 0 is taken as 0. Throws NumericalError on a non-finite loss.
LossAndGrads loss_and_grads(const ToyModel& model, const Matrix& inputs, std::span<const int> labels);

double mean_loss(const ToyModel& model, const Matrix& inputs, std::span<const int> labels);

/// Argmax accuracy in [0, 1]; ties resolve to the lowest class index.
double evaluate(const ToyModel& model, const Matrix& inputs, std::span<const int> labels);

/// Replaces layer `index` with its MPO factorisation (cores start from the
/// TT-SVD factors).
ToyModel tensorize_layer(const ToyModel& model, std::size_t index, std::size_t cores, std::size_t chi);

/// Tensorizes every hidden-to-hidden layer (neither first nor last).
ToyModel tensorize_hidden(const ToyModel& model, std::size_t cores, std::size_t chi);

/// Weights are stored as layers.{i}.weight (or MPO cores under that name),
/// biases as layers.{i}.bias. `dataset_seed` is recorded so the bundled
/// evaluator can regenerate the task.
std::pair<Checkpoint, ModelManifest> toy_to_checkpoint(const ToyModel& model, std::uint64_t dataset_seed,
                                                        DType dtype = DType::f32);
ToyModel toy_from_checkpoint(const Checkpoint& ckpt, const ModelManifest& manifest);

inline constexpr const char* kToyDatasetSeedKey = "toy.dataset_seed";

/// Documented evaluation-noise tolerance of the bundled evaluator.
inline constexpr double kToyEvaluatorTolerance = 0.01;
inline constexpr std::size_t kToyEvaluatorSamples = 2000;

/// The profiler's bundled metric: test accuracy of a toy checkpoint on
/// samples drawn with `seed` from the clusters recorded in its metadata.
double toy_evaluator(const Checkpoint& ckpt, const ModelManifest& manifest, std::uint64_t seed);

} // namespace tensorize
