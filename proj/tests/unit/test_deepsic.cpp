#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <vector>

#include "siclab/deepsic.hpp"

using namespace siclab;
using namespace siclab::deepsic;

namespace {

Channel linear(const Matrix& H, double var) { return Channel(ChannelFamily::linear_awgn, H, var, Constellation::bpsk()); }

double ser(const DeepSicParams& p, const Dataset& test) {
    const auto det = infer_batch(p, test.outputs);
    std::size_t errors = 0;
    for (std::size_t i = 0; i < det.symbols.size(); ++i) errors += det.symbols[i] != test.symbols[i];
    return double(errors) / double(det.symbols.size());
}

const Architecture kSmall{{{8, nn::Activation::sigmoid}}};

TrainOptions quick(std::uint64_t seed, std::size_t epochs = 20) {
    TrainOptions o;
    o.config = {epochs, 100, {1e-2}};
    o.seed = seed;
    return o;
}

}  // namespace

TEST_CASE("dimensions and parameter count") {
    const SystemDims dims{6, 6, 2, 5};
    CHECK(dims.block_input_dim() == 11);
    const auto p = DeepSicParams::zeros(dims, Architecture::sequential_default(), "bpsk");
    const std::size_t P = 11 * 100 + 100 + 100 * 50 + 50 + 50 * 2 + 2;
    CHECK(p.block_parameter_count() == P);
    CHECK(p.parameter_count() == P * 6 * 5);
    const SystemDims none{2, 2, 2, 0};
    CHECK_THROWS_AS(DeepSicParams::zeros(none, kSmall, "bpsk"), ContractViolation);
    CHECK_THROWS_AS(p.block(5, 0), ContractViolation);
}

TEST_CASE("zero block outputs the uniform belief") {
    const SystemDims dims{3, 2, 2, 1};
    const auto p = DeepSicParams::zeros(dims, kSmall, "bpsk");
    const std::vector<Vector> others{Vector{{0.9, 0.1}}, Vector{{0.2, 0.8}}};
    const Vector b = block_infer(p.block(0, 1), Vector{{1.0, -3.0}}, others);
    CHECK(b(0) == 0.5);
    CHECK(b(1) == 0.5);
}

TEST_CASE("block inputs drop the last belief entry in ascending user order") {
    Matrix y(1, 1);
    y << 7.0;
    BatchBeliefs beliefs(3, Matrix(3, 1));
    beliefs[0] << 0.1, 0.2, 0.7;
    beliefs[1] << 0.3, 0.3, 0.4;
    beliefs[2] << 0.5, 0.1, 0.4;
    const Matrix in = block_inputs(y, beliefs, 1);
    CHECK(in.rows() == 5);
    CHECK(in(0, 0) == 7.0);
    CHECK(in(1, 0) == 0.1);
    CHECK(in(2, 0) == 0.2);
    CHECK(in(3, 0) == 0.5);
    CHECK(in(4, 0) == 0.1);
    const auto rows = expand_beliefs(in.col(0).tail(4), 3, 3);
    CHECK(rows.size() == 2);
    CHECK(rows[0](2) == doctest::Approx(0.7));
    CHECK(rows[1](2) == doctest::Approx(0.4));
}

TEST_CASE("skeleton with model-based blocks is bit-identical to iterative SIC") {
    Rng rng(13);
    const Matrix H = exp_decay_matrix(5, 4);
    const double var = snr_to_noise_variance(6.0);
    const auto ch = linear(H, var);
    const Dataset d = generate_dataset(ch, 300, rng);
    const SystemDims dims{4, 5, 2, 5};
    const auto sk = run_skeleton(d.outputs, dims, model_based_block(H, var, ch.constellation()), true);
    for (std::size_t j = 0; j < d.size(); ++j) {
        const auto ref = iterative_sic(d.outputs.col(static_cast<Eigen::Index>(j)), H, var, ch.constellation(), {5, true});
        for (std::size_t q = 0; q < 5; ++q)
            for (std::size_t k = 0; k < 4; ++k)
                for (Eigen::Index m = 0; m < 2; ++m)
                    REQUIRE(sk.trace[q][k](m, static_cast<Eigen::Index>(j)) == ref.trace[q](static_cast<Eigen::Index>(k), m));
    }
}

TEST_CASE("beliefs are valid distributions for random parameters") {
    Rng rng(4);
    const SystemDims dims{3, 3, 3, 4};
    std::vector<nn::Network> blocks;
    for (std::size_t i = 0; i < 12; ++i) blocks.push_back(nn::Network::glorot(kSmall.layers(dims), rng));
    const DeepSicParams p(dims, kSmall, "pam3", 1, blocks);
    Matrix y = Matrix::Random(3, 200) * 5;
    const auto sk = run_skeleton(y, dims, network_block(p), true);
    for (const auto& it : sk.trace)
        for (const auto& b : it) {
            CHECK(((b.colwise().sum().array() - 1.0).abs() <= 1e-12).all());
            CHECK(b.minCoeff() >= 0.0);
        }
}

TEST_CASE("single-user block approximates the scalar posterior") {
    const double var = 0.5;
    const auto ch = linear(Matrix::Ones(1, 1), var);
    Rng rng(10);
    const Dataset d = generate_dataset(ch, 5000, rng);
    const SystemDims dims{1, 1, 2, 1};
    TrainOptions o;
    o.config = {200, 250, {1e-2}};
    o.seed = 3;
    const auto p = train_sequential(d, dims, Architecture::sequential_default(), "bpsk", o);
    double err = 0.0;
    int count = 0;
    for (double y = -2.0; y <= 2.0; y += 0.05, ++count) {
        const double exact = 1.0 / (1.0 + std::exp(-2.0 * y / var));
        err += std::abs(block_infer(p.block(0, 0), Vector{{y}}, {})(1) - exact);
    }
    CHECK(err / count < 0.05);
}

TEST_CASE("sequential training is deterministic and order invariant") {
    Rng rng(20);
    const auto ch = linear(exp_decay_matrix(3, 3), snr_to_noise_variance(8.0));
    const Dataset d = generate_dataset(ch, 400, rng);
    const SystemDims dims{3, 3, 2, 2};
    const auto a = train_sequential(d, dims, kSmall, "bpsk", quick(1));
    const auto b = train_sequential(d, dims, kSmall, "bpsk", quick(1));
    CHECK(a == b);
    auto reversed = quick(1);
    reversed.user_order = {2, 0, 1};
    CHECK(train_sequential(d, dims, kSmall, "bpsk", reversed) == a);
    auto threaded = quick(1);
    threaded.threads = 3;
    CHECK(train_sequential(d, dims, kSmall, "bpsk", threaded) == a);
    CHECK(!(train_sequential(d, dims, kSmall, "bpsk", quick(2)) == a));
    auto bad = quick(1);
    bad.user_order = {0, 0, 1};
    CHECK_THROWS_AS(train_sequential(d, dims, kSmall, "bpsk", bad), ContractViolation);
}

TEST_CASE("trained DeepSIC detects far better than chance with few samples") {
    Rng rng(30);
    const auto ch = linear(exp_decay_matrix(4, 4), snr_to_noise_variance(10.0));
    const Dataset train = generate_dataset(ch, 100, rng);
    const Dataset test = generate_dataset(ch, 2000, rng);
    const SystemDims dims{4, 4, 2, 3};
    TrainOptions o;
    o.config = {200, 0, {1e-2}};
    const auto p = train_sequential(train, dims, Architecture::sequential_default(), "bpsk", o);
    CHECK(ser(p, test) < 0.1);
}

TEST_CASE("single block end-to-end loss is the classifier cross entropy") {
    Rng rng(40);
    const auto ch = linear(Matrix::Constant(2, 1, 0.8), 0.3);
    const Dataset d = generate_dataset(ch, 64, rng);
    const SystemDims dims{1, 2, 2, 1};
    const DeepSicParams p(dims, kSmall, "bpsk", 0, {nn::Network::glorot(kSmall.layers(dims), rng)});
    const auto e2e = end_to_end_gradients(p, d);
    const auto cache = nn::forward(p.block(0, 0), d.outputs);
    const auto labels = d.labels(0);
    CHECK(e2e.loss == doctest::Approx(nn::mean_cross_entropy(cache.probabilities, labels)).epsilon(1e-14));
    const auto g = nn::backward(p.block(0, 0), cache, labels);
    for (std::size_t l = 0; l < g.weight.size(); ++l)
        CHECK((g.weight[l] - e2e.gradients[0].weight[l]).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("end-to-end gradient matches finite differences through belief links") {
    Rng rng(41);
    const auto ch = linear(exp_decay_matrix(2, 2), 0.3);
    const Dataset d = generate_dataset(ch, 16, rng);
    const SystemDims dims{2, 2, 2, 3};
    const Architecture arch{{{5, nn::Activation::sigmoid}}};
    std::vector<nn::Network> blocks;
    for (std::size_t i = 0; i < 6; ++i) blocks.push_back(nn::Network::glorot(arch.layers(dims), rng));
    DeepSicParams p(dims, arch, "bpsk", 0, blocks);
    const auto analytic = end_to_end_gradients(p, d);
    double worst = 0.0;
    const double h = 1e-5;
    for (std::size_t q = 0; q < 3; ++q)
        for (std::size_t k = 0; k < 2; ++k) {
            auto& layers = p.block(q, k).layers();
            for (std::size_t l = 0; l < layers.size(); ++l)
                for (Eigen::Index i = 0; i < layers[l].weight.size(); ++i) {
                    double& w = layers[l].weight.data()[i];
                    const double saved = w;
                    w = saved + h;
                    const double up = end_to_end_gradients(p, d).loss;
                    w = saved - h;
                    const double down = end_to_end_gradients(p, d).loss;
                    w = saved;
                    const double num = (up - down) / (2 * h);
                    const double a = analytic.gradients[q * 2 + k].weight[l].data()[i];
                    worst = std::max(worst, std::abs(a - num) / std::max(std::abs(a) + std::abs(num), 1e-6));
                }
        }
    CHECK(worst < 1e-4);
}

TEST_CASE("end-to-end training lowers the loss and is deterministic") {
    Rng rng(42);
    const auto ch = linear(exp_decay_matrix(3, 3), snr_to_noise_variance(8.0));
    const Dataset d = generate_dataset(ch, 300, rng);
    const SystemDims dims{3, 3, 2, 2};
    auto o = quick(5, 30);
    const auto a = train_end_to_end(d, dims, kSmall, "bpsk", o);
    CHECK(a == train_end_to_end(d, dims, kSmall, "bpsk", o));
    std::vector<nn::Network> init;
    for (std::size_t i = 0; i < 6; ++i) init.push_back(nn::Network::zeros(kSmall.layers(dims)));
    const double before = end_to_end_gradients(DeepSicParams(dims, kSmall, "bpsk", 0, init), d).loss;
    CHECK(end_to_end_gradients(a, d).loss < 0.5 * before);
}

TEST_CASE("online retraining") {
    Rng rng(50);
    const auto ch = linear(exp_decay_matrix(4, 4), snr_to_noise_variance(8.0));
    const Dataset train = generate_dataset(ch, 2000, rng);
    const Dataset fresh = generate_dataset(ch, 2040, rng);
    const Dataset test = generate_dataset(ch, 5000, rng);
    const SystemDims dims{4, 4, 2, 3};
    TrainOptions o;
    o.config = {30, 250, {1e-2}};
    auto p = train_sequential(train, dims, Architecture::end_to_end_default(), "bpsk", o);
    const double before = ser(p, test);

    auto untouched = p;
    Dataset empty;
    empty.users = 4;
    empty.outputs.resize(4, 0);
    retrain_online(untouched, empty, o);
    CHECK(untouched == p);

    auto partial = p;
    const bool mask[] = {true, false, false, true};
    retrain_online(partial, fresh, o, mask);
    for (std::size_t q = 0; q < 3; ++q) {
        CHECK(partial.block(q, 1) == p.block(q, 1));
        CHECK(!(partial.block(q, 0) == p.block(q, 0)));
    }
    const bool short_mask[] = {true};
    CHECK_THROWS_AS(retrain_online(partial, fresh, o, short_mask), ContractViolation);

    retrain_online(p, fresh, o);
    const double after = ser(p, test);
    const double n = 4.0 * 5000;
    CHECK(after <= before + 3 * std::sqrt(before * (1 - before) / n) + 3 * std::sqrt(after * (1 - after) / n));
}

TEST_CASE("save and load roundtrip") {
    Rng rng(60);
    const auto ch = linear(exp_decay_matrix(2, 2), 0.2);
    const Dataset d = generate_dataset(ch, 100, rng);
    const SystemDims dims{2, 2, 2, 2};
    const auto p = train_sequential(d, dims, kSmall, "bpsk", quick(9, 5));
    const auto dir = std::filesystem::temp_directory_path() / "siclab_deepsic_roundtrip";
    std::filesystem::remove_all(dir);
    save(p, dir);
    CHECK(std::filesystem::exists(dir / "block_q1_k2.sicnn"));
    const auto loaded = load(dir);
    CHECK(loaded == p);
    CHECK(loaded.dims() == dims);
    CHECK(infer_batch(loaded, d.outputs).symbols == infer_batch(p, d.outputs).symbols);
    std::filesystem::remove(dir / "block_q2_k1.sicnn");
    CHECK_THROWS(load(dir));
    std::filesystem::remove_all(dir);
}
