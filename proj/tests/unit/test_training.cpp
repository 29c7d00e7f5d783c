// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <Eigen/Cholesky>
#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "helpers.hpp"
#include "oracles.hpp"
#include "tensorize/errors.hpp"
#include "tensorize/training.hpp"

using namespace tensorize;
using testing_support::random_matrix;
using testing_support::rel_diff;

namespace {

ToyModel tiny_mpo_model(std::uint64_t seed, std::size_t mpo_layer) {
    return tensorize_layer(init_model(seed, {6, 16, 4}), mpo_layer, 2, 2);
}

std::vector<int> random_labels(DeterministicRng& rng, std::size_t n, std::size_t classes) {
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(classes));
    return y;
}

// Dense model whose weights equal the reconstruction of every MPO layer.
ToyModel densified(const ToyModel& model) {
    ToyModel out;
    for (const auto& layer : model.layers) {
        if (const auto* m = std::get_if<MpoDenseLayer>(&layer)) {
            out.layers.emplace_back(DenseLayer{reconstruct_matrix(from_chain(m->chain, m->source, DType::f64)), m->bias});
        } else {
            out.layers.push_back(layer);
        }
    }
    return out;
}

std::vector<double> flatten_params(const ToyModel& model) {
    std::vector<double> v;
    auto push = [&](const auto& x) { v.insert(v.end(), x.data(), x.data() + x.size()); };
    for (const auto& layer : model.layers) {
        if (const auto* d = std::get_if<DenseLayer>(&layer)) {
            push(d->weight);
            push(d->bias);
        } else {
            const auto& m = std::get<MpoDenseLayer>(layer);
            for (const auto& c : m.chain.cores) push(c);
            push(m.bias);
        }
    }
    return v;
}

} // namespace

TEST_CASE("dataset is deterministic and class balanced") {
    const auto a = generate_dataset(3, 800, 200);
    const auto b = generate_dataset(3, 800, 200);
    CHECK(a.train_x == b.train_x);
    CHECK(a.train_y == b.train_y);
    CHECK(a.test_x == b.test_x);
    CHECK(a.train_x.rows() == 800);
    CHECK(a.test_x.cols() == static_cast<Eigen::Index>(kToyInputDim));
    CHECK(generate_dataset(4, 800, 200).train_x != a.train_x);
    for (const auto* labels : {&a.train_y, &a.test_y}) {
        std::vector<int> counts(kToyClasses, 0);
        for (int y : *labels) counts[static_cast<std::size_t>(y)]++;
        const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
        CHECK(*hi - *lo <= 1);
    }
    for (Eigen::Index c = 0; c < a.means.rows(); ++c) CHECK(a.means.row(c).norm() == doctest::Approx(4.0));
    CHECK(toy_cluster_means(3) == a.means);
}

TEST_CASE("a least-squares linear classifier separates the clusters") {
    const auto d = generate_dataset(8, 4000, 1000);
    Matrix x(d.train_x.rows(), d.train_x.cols() + 1);
    x << d.train_x, Matrix::Ones(d.train_x.rows(), 1);
    Matrix t = Matrix::Zero(d.train_x.rows(), kToyClasses);
    for (std::size_t i = 0; i < d.train_y.size(); ++i) t(static_cast<Eigen::Index>(i), d.train_y[i]) = 1.0;
    const Matrix w = (x.transpose() * x).ldlt().solve(x.transpose() * t);
    Matrix xt(d.test_x.rows(), d.test_x.cols() + 1);
    xt << d.test_x, Matrix::Ones(d.test_x.rows(), 1);
    const Matrix scores = xt * w;
    std::size_t hits = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        Eigen::Index arg;
        scores.row(i).maxCoeff(&arg);
        hits += arg == d.test_y[static_cast<std::size_t>(i)];
    }
    CHECK(static_cast<double>(hits) / scores.rows() >= 0.6);
}

TEST_CASE("forward shapes and trivial cases") {
    ToyModel m = init_model(1, {5, 7, 3});
    for (auto& layer : m.layers) std::get<DenseLayer>(layer).bias.setZero();
    const Matrix logits = forward(m, Matrix::Zero(4, 5));
    CHECK(logits.rows() == 4);
    CHECK(logits.cols() == 3);
    CHECK(logits.cwiseAbs().maxCoeff() == 0.0);
    CHECK(m.input_dim() == 5);
    CHECK(m.output_dim() == 3);
    CHECK(m.param_count() == 5 * 7 + 7 + 7 * 3 + 3);
    CHECK_THROWS_AS(forward(m, Matrix::Zero(2, 4)), ArgumentError);
}

TEST_CASE("MPO forward equals the reconstructed dense forward") {
    DeterministicRng rng(21);
    const ToyModel base = init_model(21);
    const ToyModel mpo = tensorize_hidden(base, 3, 4);
    CHECK(std::holds_alternative<MpoDenseLayer>(mpo.layers[1]));
    CHECK(std::holds_alternative<DenseLayer>(mpo.layers[0]));
    const Matrix x = random_matrix(rng, 32, 64);
    const Matrix a = forward(mpo, x);
    CHECK(rel_diff(a, forward(densified(mpo), x)) <= 1e-6);
    // Batch-size independence: row i alone gives row i of the batch.
    for (Eigen::Index i : {0, 17, 31}) {
        CHECK(rel_diff(forward(mpo, x.row(i)), a.row(i)) <= 1e-12);
    }
}

TEST_CASE("forward equivalence holds along a training run") {
    const auto data = generate_dataset(22, 640, 100);
    ToyModel model = tensorize_hidden(init_model(22, {64, 36, 36, 8}), 2, 3);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 22;
    cfg.learning_rate = 1e-2;
    const Matrix probe = data.test_x.topRows(16);
    for (int step = 0; step < 3; ++step) {
        train(model, data, cfg);
        CHECK(rel_diff(forward(model, probe), forward(densified(model), probe)) <= 1e-6);
    }
}

TEST_CASE("analytic gradients match central differences") {
    DeterministicRng rng(23);
    for (std::size_t mpo_layer : {0u, 1u}) {
        const ToyModel m = tiny_mpo_model(23 + mpo_layer, mpo_layer);
        const Matrix x = random_matrix(rng, 5, 6);
        const auto y = random_labels(rng, 5, 4);
        const auto entries = testing_support::finite_difference_check(m, x, y);
        bool saw_core = false;
        for (const auto& e : entries) {
            saw_core |= e.where.find("core") != std::string::npos;
            CHECK_MESSAGE(testing_support::relative_gap(e, 1e-12) <= 1e-4, e.where);
        }
        CHECK(saw_core);
    }
}

TEST_CASE("loss values") {
    DeterministicRng rng(24);
    const ToyModel m = tiny_mpo_model(24, 1);
    const Matrix x = random_matrix(rng, 6, 6);
    const auto y = random_labels(rng, 6, 4);
    Matrix xx(12, 6);
    xx << x, x;
    std::vector<int> yy = y;
    yy.insert(yy.end(), y.begin(), y.end());
    CHECK(mean_loss(m, xx, yy) == doctest::Approx(mean_loss(m, x, y)).epsilon(1e-14));

    ToyModel zero = init_model(1, {64, 8});
    auto& d = std::get<DenseLayer>(zero.layers[0]);
    d.weight.setZero();
    d.bias.setZero();
    std::vector<int> labels(16);
    std::iota(labels.begin(), labels.end(), 0);
    for (auto& l : labels) l %= 8;
    CHECK(mean_loss(zero, random_matrix(rng, 16, 64), labels) == doctest::Approx(std::log(8.0)).epsilon(1e-14));
}

TEST_CASE("non-finite loss raises a numerical error") {
    ToyModel m = init_model(2, {4, 3});
    std::get<DenseLayer>(m.layers[0]).weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
    const std::vector<int> y{0, 1};
    CHECK_THROWS_AS(loss_and_grads(m, Matrix::Ones(2, 4), y), NumericalError);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
    const auto data = generate_dataset(25, 320, 64);
    ToyModel model = tensorize_hidden(init_model(25, {64, 36, 36, 8}), 2, 3);
    const auto before = flatten_params(model);
    for (auto opt : {OptimizerKind::adam, OptimizerKind::sgd_momentum}) {
        TrainConfig cfg;
        cfg.epochs = 2;
        cfg.learning_rate = 0.0;
        cfg.optimizer = opt;
        const auto h = train(model, data, cfg);
        CHECK(h.epochs.size() == 2);
        CHECK(flatten_params(model) == before);
    }
}

TEST_CASE("mpo_cores_only scope freezes everything else") {
    const auto data = generate_dataset(26, 320, 64);
    ToyModel model = tensorize_hidden(init_model(26, {64, 36, 36, 8}), 2, 3);
    const ToyModel before = model;
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.scope = TrainScope::mpo_cores_only;
    train(model, data, cfg);
    CHECK(std::get<DenseLayer>(model.layers[0]).weight == std::get<DenseLayer>(before.layers[0]).weight);
    CHECK(std::get<DenseLayer>(model.layers[2]).bias == std::get<DenseLayer>(before.layers[2]).bias);
    const auto& now = std::get<MpoDenseLayer>(model.layers[1]);
    const auto& was = std::get<MpoDenseLayer>(before.layers[1]);
    CHECK(now.bias == was.bias);
    CHECK(now.chain.cores[0] != was.chain.cores[0]);
    std::size_t cores = 0;
    for (const auto& c : now.chain.cores) cores += static_cast<std::size_t>(c.size());
    CHECK(trainable_params(model, TrainScope::mpo_cores_only) == cores);
    CHECK(trainable_params(model, TrainScope::all) == model.param_count());
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto data = generate_dataset(27, 640, 200);
    auto run = [&](std::uint64_t seed) {
        ToyModel model = init_model(27, {64, 32, 8});
        TrainConfig cfg;
        cfg.epochs = 3;
        cfg.seed = seed;
        const auto h = train(model, data, cfg);
        return std::make_pair(h, flatten_params(model));
    };
    const auto [ha, pa] = run(1);
    const auto [hb, pb] = run(1);
    REQUIRE(ha.epochs.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(ha.epochs[i].train_loss == hb.epochs[i].train_loss);
        CHECK(ha.epochs[i].test_accuracy == hb.epochs[i].test_accuracy);
    }
    CHECK(pa == pb);
    CHECK(run(2).second != pa);
    CHECK(ha.epochs.back().train_loss < ha.epochs.front().train_loss);
}

TEST_CASE("config validation") {
    TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = {};
    cfg.learning_rate = -1;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = {};
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("evaluate agrees with a confusion-matrix count") {
    DeterministicRng rng(28);
    const ToyModel m = init_model(28, {10, 12, 8});
    const Matrix x = random_matrix(rng, 300, 10);
    const auto y = random_labels(rng, 300, 8);
    const Matrix logits = forward(m, x);
    std::vector<int> predicted(y.size());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < 8; ++c) if (logits(i, c) > logits(i, best)) best = c;
        predicted[static_cast<std::size_t>(i)] = best;
    }
    CHECK(evaluate(m, x, y) == doctest::Approx(oracle::confusion_accuracy(predicted, y, 8)).epsilon(1e-15));
}

TEST_CASE("evaluate at the extremes") {
    // Inputs are one-hot class indicators and the model is the identity map.
    const std::size_t n = 64;
    Matrix x = Matrix::Zero(n, 8);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>((i * 5) % 8);
        x(static_cast<Eigen::Index>(i), y[i]) = 1.0;
    }
    ToyModel memorizer;
    memorizer.layers.emplace_back(DenseLayer{Matrix::Identity(8, 8), Eigen::VectorXd::Zero(8)});
    CHECK(evaluate(memorizer, x, y) == 1.0);

    // Uniform logits: every prediction is class 0.
    const auto data = generate_dataset(29, 8, 2000);
    ToyModel flat = init_model(29, {64, 8});
    std::get<DenseLayer>(flat.layers[0]).weight.setZero();
    const double acc = evaluate(flat, data.test_x, data.test_y);
    const double sigma = std::sqrt(0.125 * 0.875 / 2000.0);
    CHECK(std::abs(acc - 0.125) <= 3 * sigma);
}

TEST_CASE("toy model checkpoint round trip") {
    const ToyModel dense = init_model(30);
    const ToyModel mpo = tensorize_hidden(dense, 3, 4);
    DeterministicRng rng(30);
    const Matrix x = random_matrix(rng, 8, 64);
    for (const ToyModel* m : {&dense, &mpo}) {
        const auto [ckpt, manifest] = toy_to_checkpoint(*m, 30, DType::f64);
        CHECK(ckpt.metadata.at(kToyDatasetSeedKey) == "30");
        const ToyModel back = toy_from_checkpoint(ckpt, manifest);
        CHECK(back.param_count() == m->param_count());
        CHECK(rel_diff(forward(back, x), forward(*m, x)) <= 1e-12);
        const auto decoded = decode_checkpoint(encode_checkpoint(ckpt));
        CHECK(rel_diff(forward(toy_from_checkpoint(decoded, manifest), x), forward(*m, x)) <= 1e-12);
    }
    const auto [ckpt, manifest] = toy_to_checkpoint(dense, 30);
    CHECK(manifest.layers.back().kind == LayerKind::head);
    CHECK(toy_evaluator(ckpt, manifest, 4) == toy_evaluator(ckpt, manifest, 4));
}

TEST_CASE("heal demo on a reduced problem") {
    HealDemoConfig cfg;
    cfg.n_train = 1000;
    cfg.n_test = 400;
    cfg.baseline_epochs = 2;
    cfg.heal_epochs = 1;
    const auto r = run_heal_demo(cfg);
    CHECK(r.dense_params == 216 * 216);
    CHECK(r.compressed_params == 864);
    CHECK(r.param_reduction_pct == doctest::Approx(100.0 * (1.0 - 864.0 / (216.0 * 216.0))));
    CHECK(r.baseline_history.epochs.size() == 2);
    CHECK(r.heal_history.epochs.size() == 1);
    const std::string csv = heal_metrics_csv(r);
    CHECK(csv.rfind("phase,epoch,train_loss,test_accuracy\n", 0) == 0);
    CHECK(csv.find("\ncompressed,0,,") != std::string::npos);
    CHECK(heal_summary_line(r).rfind("baseline_acc=", 0) == 0);
    CHECK(heal_metrics_csv(run_heal_demo(cfg)) == csv);
}
