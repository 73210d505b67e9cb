#include <doctest.h>

#include <cmath>
#include <vector>

#include "siclab/detectors.hpp"

using namespace siclab;

namespace {

Channel linear(const Matrix& H, double var) { return Channel(ChannelFamily::linear_awgn, H, var, Constellation::bpsk()); }

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
    std::normal_distribution<double> n;
    Matrix H(r, c);
    for (Eigen::Index i = 0; i < H.size(); ++i) H.data()[i] = n(rng);
    return H;
}

}  // namespace

TEST_CASE("hard decisions and belief closing") {
    CHECK(hard_decide(Vector{{0.3, 0.7}}) == 1);
    CHECK(hard_decide(Vector{{0.5, 0.5}}) == 0);
    CHECK(hard_decide(Vector{{0.0, 0.0, 1.0}}) == 2);
    Vector row{{0.2, 0.3, 0.9}};
    close_belief(row);
    CHECK(row(2) == doctest::Approx(0.5));
    CHECK(uniform_belief(4).sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("MAP with one user picks the nearest symbol") {
    const auto ch = linear(Matrix::Ones(1, 1), 0.7);
    const auto r = map_detect(Vector{{0.3}}, ch);
    CHECK(r.symbols == std::vector<std::size_t>{1});
    const double expect = 1.0 / (1.0 + std::exp(-2 * 0.3 / 0.7));
    CHECK(r.beliefs(0, 1) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("MAP agrees with a two-loop brute-force reference") {
    Rng rng(31);
    const auto alpha = Constellation::bpsk();
    for (int trial = 0; trial < 200; ++trial) {
        const Matrix H = random_matrix(3, 2, rng);
        const double var = 0.5;
        const auto ch = linear(H, var);
        const std::vector<std::size_t> s{static_cast<std::size_t>(trial % 2), static_cast<std::size_t>(trial / 2 % 2)};
        const Vector y = ch.transmit(s, rng);
        double best = -1e300, p1[2] = {0, 0};
        std::size_t b0 = 0, b1 = 0;
        double total = 0;
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                const Vector r = y - H.col(0) * alpha[i] - H.col(1) * alpha[j];
                const double ll = -r.squaredNorm() / (2 * var);
                if (ll > best) best = ll, b0 = i, b1 = j;
                total += std::exp(ll);
                p1[i] += std::exp(ll);
            }
        const auto res = map_detect(y, ch);
        CHECK(res.symbols[0] == b0);
        CHECK(res.symbols[1] == b1);
        CHECK(std::abs(res.beliefs(0, 0) - p1[0] / total) < 1e-12);
    }
}

TEST_CASE("MAP guard") {
    const auto ch = linear(Matrix::Identity(25, 25), 1.0);
    CHECK_THROWS_AS(MapDetector{ch}, InfeasibleError);
}

TEST_CASE("soft moments") {
    const auto bpsk = Constellation::bpsk();
    Matrix b(3, 2);
    b << 0.5, 0.5, 1.0, 0.0, 0.25, 0.75;
    const auto m = soft_moments(b, bpsk);
    CHECK(m.mean(0) == 0.0);
    CHECK(m.variance(0) == 1.0);
    CHECK(m.mean(1) == -1.0);
    CHECK(m.variance(1) == 0.0);
    CHECK(m.mean(2) == doctest::Approx(0.5));
    CHECK(m.variance(2) == doctest::Approx(0.75));
}

TEST_CASE("interference cancellation") {
    Rng rng(3);
    const Matrix H = random_matrix(4, 3, rng);
    const Vector y = random_matrix(4, 1, rng);
    const auto bpsk = Constellation::bpsk();

    Matrix uniform(3, 2);
    uniform.setConstant(0.5);
    CHECK(cancel_interference(y, H, soft_moments(uniform, bpsk), 1) == y);

    Matrix beliefs(3, 2);
    beliefs << 0.1, 0.9, 0.6, 0.4, 0.3, 0.7;
    const auto m = soft_moments(beliefs, bpsk);
    const Vector direct = y - H.col(0) * m.mean(0) - H.col(2) * m.mean(2);
    CHECK((cancel_interference(y, H, m, 1) - direct).cwiseAbs().maxCoeff() < 1e-14);

    // exact prior on user 2 removes its contribution entirely
    const Matrix H2 = random_matrix(2, 2, rng);
    Matrix onehot(2, 2);
    onehot << 0.5, 0.5, 0.0, 1.0;
    const Vector w = random_matrix(2, 1, rng) * 0.1;
    const Vector y2 = H2.col(0) * -1.0 + H2.col(1) * 1.0 + w;
    CHECK((cancel_interference(y2, H2, soft_moments(onehot, bpsk), 0) - (-H2.col(0) + w)).norm() < 1e-14);
}

TEST_CASE("residual covariance") {
    Rng rng(5);
    const auto bpsk = Constellation::bpsk();
    const Matrix H = random_matrix(3, 2, rng);
    Matrix sure(2, 2);
    sure << 1.0, 0.0, 0.0, 1.0;
    CHECK(residual_covariance(H, 0.3, soft_moments(sure, bpsk), 0).isApprox(0.3 * Matrix::Identity(3, 3)));
    Matrix uniform = Matrix::Constant(2, 2, 0.5);
    const Matrix expect = 0.3 * Matrix::Identity(3, 3) + H.col(1) * H.col(1).transpose();
    CHECK(residual_covariance(H, 0.3, soft_moments(uniform, bpsk), 0).isApprox(expect, 1e-14));

    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix G = random_matrix(5, 4, rng);
        Matrix b(4, 2);
        for (int k = 0; k < 4; ++k) {
            b(k, 0) = u(rng);
            b(k, 1) = 1 - b(k, 0);
        }
        const Matrix S = residual_covariance(G, 0.2, soft_moments(b, bpsk), trial % 4);
        Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
        CHECK(eig.eigenvalues().minCoeff() >= 0.2 - 1e-12);
    }
}

TEST_CASE("gaussian soft estimate") {
    Rng rng(12);
    const auto bpsk = Constellation::bpsk();
    const Vector h{{1.0, 0.5}};
    const Vector sharp = gaussian_soft_estimate(h * -1.0, h, 1e-6 * Matrix::Identity(2, 2), bpsk);
    CHECK(sharp(0) > 1 - 1e-12);

    const Vector ortho{{0.5, -1.0}};
    const Vector even = gaussian_soft_estimate(ortho, h, Matrix::Identity(2, 2), bpsk);
    CHECK(even(0) == doctest::Approx(0.5).epsilon(1e-14));

    const Constellation four("pam4", {-3, -1, 1, 3});
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix A = random_matrix(3, 3, rng);
        const Matrix S = A * A.transpose() + 0.5 * Matrix::Identity(3, 3);
        const Vector z = random_matrix(3, 1, rng) * 2;
        const Vector g = random_matrix(3, 1, rng);
        const Matrix inv = S.inverse();
        Vector ref(4);
        for (int m = 0; m < 4; ++m) {
            const Vector d = z - g * four[static_cast<std::size_t>(m)];
            ref(m) = std::exp(-0.5 * d.dot(inv * d));
        }
        ref /= ref.sum();
        const Vector got = gaussian_soft_estimate(z, g, S, four);
        CHECK((got - ref).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("single-user SIC equals MAP for any iteration count") {
    Rng rng(8);
    const Matrix H = random_matrix(3, 1, rng);
    const auto ch = linear(H, 0.4);
    for (int trial = 0; trial < 50; ++trial) {
        const std::vector<std::size_t> s{static_cast<std::size_t>(trial % 2)};
        const Vector y = ch.transmit(s, rng);
        const auto map = map_detect(y, ch);
        for (std::size_t q : {1u, 2u, 5u}) {
            const auto sic = iterative_sic(y, H, 0.4, ch.constellation(), {q, false});
            CHECK(sic.symbols == map.symbols);
            CHECK(std::abs(sic.beliefs(0, 0) - map.beliefs(0, 0)) < 1e-12);
        }
    }
}

TEST_CASE("SIC beliefs stay normalized and converge under perfect cancellation") {
    Rng rng(9);
    const Matrix H = exp_decay_matrix(4, 4);
    const auto ch = linear(H, 1e-4);
    const std::vector<std::size_t> s{1, 0, 0, 1};
    const Vector y = ch.transmit(s, rng);
    const auto r = iterative_sic(y, H, 1e-4, ch.constellation(), {5, true});
    CHECK(r.trace.size() == 5);
    for (const auto& b : r.trace)
        for (Eigen::Index k = 0; k < b.rows(); ++k) {
            CHECK(std::abs(b.row(k).sum() - 1.0) < 1e-12);
            CHECK(b.row(k).minCoeff() >= 0.0);
        }
    CHECK(r.symbols == s);
    for (std::size_t k = 0; k < 4; ++k) CHECK(r.beliefs(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s[k])) > 1 - 1e-9);
}

TEST_CASE("SIC preconditions") {
    const Matrix H = exp_decay_matrix(2, 2);
    CHECK_THROWS_AS(iterative_sic(Vector::Zero(2), H, 0.1, Constellation::bpsk(), {0, false}), ContractViolation);
    CHECK_THROWS_AS(iterative_sic(Vector::Zero(3), H, 0.1, Constellation::bpsk()), ContractViolation);
}

TEST_CASE("more SIC iterations do not hurt on average") {
    const Matrix H = exp_decay_matrix(6, 6);
    const double var = snr_to_noise_variance(8.0);
    const auto ch = linear(H, var);
    Rng rng(77);
    std::size_t e1 = 0, e5 = 0, total = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<std::size_t> s(6);
        for (auto& v : s) v = rng() & 1U;
        const Vector y = ch.transmit(s, rng);
        const auto r1 = iterative_sic(y, H, var, ch.constellation(), {1, false});
        const auto r5 = iterative_sic(y, H, var, ch.constellation(), {5, false});
        for (std::size_t k = 0; k < 6; ++k) {
            e1 += r1.symbols[k] != s[k];
            e5 += r5.symbols[k] != s[k];
        }
        total += 6;
    }
    const double ser1 = double(e1) / double(total), ser5 = double(e5) / double(total);
    CHECK(ser5 <= ser1 + 3 * std::sqrt(ser1 * (1 - ser1) / double(total)));
}
