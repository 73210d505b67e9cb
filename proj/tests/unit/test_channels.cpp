#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "siclab/channels.hpp"

using namespace siclab;

namespace {

Channel linear(const Matrix& H, double var) { return Channel(ChannelFamily::linear_awgn, H, var, Constellation::bpsk()); }

}  // namespace

TEST_CASE("constellations") {
    CHECK(Constellation::bpsk()[0] == -1.0);
    CHECK(Constellation::bpsk()[1] == 1.0);
    CHECK(Constellation::ook()[0] == 0.0);
    CHECK(Constellation::ook().nonnegative());
    CHECK(!Constellation::bpsk().nonnegative());
    CHECK(Constellation::from_name("ook").name() == "ook");
    CHECK_THROWS_AS(Constellation("dup", {1.0, 1.0}), ContractViolation);
    CHECK_THROWS_AS(Constellation("one", {1.0}), ContractViolation);
}

TEST_CASE("poisson family requires a nonnegative constellation") {
    CHECK_THROWS_AS(Channel(ChannelFamily::poisson, Matrix::Identity(2, 2), 0.1, Constellation::bpsk()),
                    ContractViolation);
    CHECK_THROWS_AS(linear(Matrix::Identity(2, 2), 0.0), ContractViolation);
}

TEST_CASE("exponentially decaying matrix") {
    const Matrix H = exp_decay_matrix(6, 6);
    CHECK(H(0, 0) == 1.0);
    CHECK(H(0, 1) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
    CHECK(H.isApprox(H.transpose(), 0.0));
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) CHECK(H(i, j) == std::exp(-std::abs(i - j)));
    const Matrix R = exp_decay_matrix(4, 3);
    CHECK(R.rows() == 4);
    CHECK(R.cols() == 3);
    CHECK(R(3, 0) == doctest::Approx(std::exp(-3.0)));
}

TEST_CASE("time-varying matrix") {
    const auto spec = TimeVaryingSpec::standard4x4();
    CHECK(time_varying_matrix(spec, 0) == exp_decay_matrix(4, 4));
    const Matrix H1 = time_varying_matrix(spec, 1);
    const Matrix H0 = exp_decay_matrix(4, 4);
    for (int i = 0; i < 4; ++i)
        CHECK((H1.row(i) - H0.row(i) * std::cos(spec.phi[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(drift(spec, 0) == 0.0);

    std::vector<double> d;
    for (std::size_t b = 0; b <= 50; ++b) d.push_back(drift(spec, b));
    int direction_changes = 0;
    for (std::size_t b = 2; b < d.size(); ++b)
        if ((d[b] - d[b - 1]) * (d[b - 1] - d[b - 2]) < 0) ++direction_changes;
    CHECK(direction_changes > 5);

    auto period = spec;
    period.mode = PhaseMode::period;
    const Matrix P = time_varying_matrix(period, 5);
    CHECK(P(0, 0) == doctest::Approx(std::cos(2 * std::numbers::pi * 5 / 51.0)));
    TimeVaryingSpec zero_period{{0.0, 2.0}, 2, PhaseMode::period};
    CHECK_THROWS_AS(time_varying_matrix(zero_period, 1), ContractViolation);
    auto positive = spec;
    positive.magnitude = true;
    for (std::size_t b = 0; b <= 50; ++b) CHECK(time_varying_matrix(positive, b).minCoeff() >= 0.0);
    CHECK(time_varying_matrix(positive, 1).cwiseAbs() == H1.cwiseAbs());
}

TEST_CASE("csi perturbation") {
    Rng rng(4);
    Matrix H = exp_decay_matrix(3, 3);
    H(2, 0) = 0.0;
    CHECK(perturb_csi(H, 0.0, rng) == H);
    for (int i = 0; i < 10; ++i) CHECK(perturb_csi(H, 0.75, rng)(2, 0) == 0.0);

    const double var = 0.1;
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double e = perturb_csi(H, var, rng)(0, 1) - H(0, 1);
        sum += e;
        sum2 += e * e;
    }
    const double mean = sum / n;
    const double sample_var = sum2 / n - mean * mean;
    CHECK(std::abs(sample_var / (var * std::exp(-1.0)) - 1.0) < 0.05);
}

TEST_CASE("quantizer") {
    CHECK(quantize(0.5) == 1.0);
    CHECK(quantize(3.0) == 3.0);
    CHECK(quantize(-2.5) == -3.0);
    CHECK(quantize(2.0) == 1.0);
    CHECK(quantize(-2.0) == -1.0);
    CHECK(quantize(0.0) == 1.0);
    CHECK(quantize(-0.1) == -1.0);
    CHECK(quantize(100.0) == 3.0);
    for (double v : {-3.0, -1.0, 1.0, 3.0}) CHECK(quantize(quantize(v)) == quantize(v));
}

TEST_CASE("noise-free linear transmission is Hs") {
    const Matrix H = exp_decay_matrix(3, 2);
    const auto ch = linear(H, 0.5);
    const std::vector<std::size_t> s{0, 1};
    Vector expect = H.col(1) - H.col(0);
    CHECK(ch.transmit_noiseless(s).isApprox(expect, 1e-15));
    CHECK(ch.mean_output(s).isApprox(expect, 1e-15));
}

TEST_CASE("poisson with all-zero OOK input has unit mean") {
    const Channel ch(ChannelFamily::poisson, exp_decay_matrix(2, 2), 0.1, Constellation::ook());
    Rng rng(6);
    const std::vector<std::size_t> s{0, 0};
    double sum = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) sum += ch.transmit(s, rng)(0);
    CHECK(std::abs(sum / n - 1.0) < 0.02);
}

TEST_CASE("likelihood examples") {
    const auto ch = linear(Matrix::Ones(1, 1), 1.0);
    Vector y(1);
    y << 1.0;
    const std::vector<std::size_t> plus{1};
    CHECK(ch.likelihood(y, plus) == doctest::Approx(1.0 / std::sqrt(2 * std::numbers::pi)).epsilon(1e-14));

    const Channel pois(ChannelFamily::poisson, Matrix::Ones(1, 1), 1.0, Constellation::ook());
    Vector zero = Vector::Zero(1);
    const std::vector<std::size_t> off{0};
    CHECK(pois.likelihood(zero, off) == doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
}

TEST_CASE("likelihoods are normalized over the output space") {
    const Matrix H = exp_decay_matrix(2, 2);
    const std::vector<std::vector<std::size_t>> inputs{{0, 0}, {0, 1}, {1, 0}, {1, 1}};

    const Channel quant(ChannelFamily::quantized_gaussian, H, 0.3, Constellation::bpsk());
    const double levels[] = {-3, -1, 1, 3};
    for (const auto& s : inputs) {
        double total = 0.0;
        for (double a : levels)
            for (double b : levels) total += quant.likelihood(Vector{{a, b}}, s);
        CHECK(std::abs(total - 1.0) < 1e-12);
    }

    const Channel pois(ChannelFamily::poisson, H, 0.05, Constellation::ook());
    for (const auto& s : inputs) {
        double total = 0.0;
        for (int a = 0; a < 80; ++a)
            for (int b = 0; b < 80; ++b) total += pois.likelihood(Vector{{double(a), double(b)}}, s);
        CHECK(total >= 1.0 - 1e-9);
        CHECK(total <= 1.0 + 1e-9);
    }

    // linear: trapezoid over a wide grid in one dimension
    const auto lin = linear(Matrix::Ones(1, 1), 0.4);
    double total = 0.0;
    const double step = 1e-3;
    for (double v = -12; v <= 12; v += step) total += lin.likelihood(Vector{{v}}, std::vector<std::size_t>{1}) * step;
    CHECK(std::abs(total - 1.0) < 1e-6);
}

TEST_CASE("empirical output frequencies match the likelihood") {
    const Matrix H = exp_decay_matrix(2, 2);
    const std::vector<std::size_t> s{1, 0};
    const int n = 100000;
    Rng rng(17);

    const Channel quant(ChannelFamily::quantized_gaussian, H, 0.5, Constellation::bpsk());
    std::map<std::pair<double, double>, int> counts;
    for (int i = 0; i < n; ++i) {
        const Vector y = quant.transmit(s, rng);
        ++counts[{y(0), y(1)}];
    }
    for (const auto& [y, c] : counts) {
        const double p = quant.likelihood(Vector{{y.first, y.second}}, s);
        CHECK(std::abs(c - n * p) < 5 * std::sqrt(n * p) + 3);
    }

    const Channel pois(ChannelFamily::poisson, H, 0.25, Constellation::ook());
    std::map<std::pair<double, double>, int> pc;
    for (int i = 0; i < n; ++i) {
        const Vector y = pois.transmit(s, rng);
        ++pc[{y(0), y(1)}];
    }
    for (const auto& [y, c] : pc) {
        const double p = pois.likelihood(Vector{{y.first, y.second}}, s);
        CHECK(std::abs(c - n * p) < 5 * std::sqrt(n * p) + 3);
    }
}

TEST_CASE("poisson sampler") {
    Rng rng(2);
    CHECK_THROWS_AS(sample_poisson(0.0, rng), ContractViolation);
    double sum = 0.0;
    for (int i = 0; i < 20000; ++i) sum += static_cast<double>(sample_poisson(25.0, rng));
    CHECK(std::abs(sum / 20000 - 25.0) < 0.25);
    CHECK_THROWS_AS(sample_poisson(-1.0, rng), ContractViolation);
}

TEST_CASE("snr conversion") {
    CHECK(snr_to_noise_variance(0.0) == 1.0);
    CHECK(snr_to_noise_variance(10.0) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(snr_to_noise_variance(14.0) == doctest::Approx(0.0398107170553497).epsilon(1e-12));
}

TEST_CASE("datasets: uniform labels and deterministic bytes") {
    const auto ch = linear(exp_decay_matrix(4, 4), 0.1);
    Rng a(99), b(99);
    const Dataset d1 = generate_dataset(ch, 5000, a);
    const Dataset d2 = generate_dataset(ch, 5000, b);
    CHECK(serialize(d1) == serialize(d2));
    CHECK(d1.size() == 5000);
    CHECK(d1.antennas() == 4);
    for (std::size_t k = 0; k < 4; ++k) {
        const auto labels = d1.labels(k);
        double ones = 0;
        for (auto l : labels) ones += static_cast<double>(l);
        const double sigma = std::sqrt(0.25 / 5000);
        CHECK(std::abs(ones / 5000 - 0.5) < 3 * sigma);
    }
}

TEST_CASE("dataset csv and binary roundtrips") {
    const Channel ch(ChannelFamily::poisson, exp_decay_matrix(3, 2), 0.1, Constellation::ook());
    Rng rng(1);
    const Dataset d = generate_dataset(ch, 50, rng);
    const Dataset bin = deserialize_dataset(serialize(d));
    CHECK(bin.symbols == d.symbols);
    CHECK(bin.outputs == d.outputs);
    const std::string csv = dataset_to_csv(d);
    CHECK(csv.rfind("user_1,user_2,y_1,y_2,y_3\n", 0) == 0);
    const Dataset txt = dataset_from_csv(csv);
    CHECK(txt.symbols == d.symbols);
    CHECK(txt.outputs.isApprox(d.outputs, 1e-15));
    CHECK_THROWS_AS(deserialize_dataset(serialize(d).substr(0, 20)), FormatError);
    CHECK_THROWS_AS(dataset_from_csv("user_1,y_1\n0,1.0\n"), FormatError);

    const std::vector<Dataset> parts{d, d};
    const Dataset both = Dataset::concat(parts);
    CHECK(both.size() == 100);
    CHECK(both.row(57)[1] == d.row(7)[1]);
}
