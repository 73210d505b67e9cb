#include "siclab/detectors.hpp"

#include <cmath>
#include <limits>

namespace siclab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> values) {
    double mx = kNegInf;
    for (double v : values) mx = std::max(mx, v);
    if (mx == kNegInf) return kNegInf;
    double s = 0.0;
    for (double v : values) s += std::exp(v - mx);
    return mx + std::log(s);
}

// Decodes hypothesis index h into base-M digits, user 0 most significant.
void hypothesis_symbols(std::size_t h, std::size_t M, std::span<std::size_t> out) {
    for (std::size_t k = out.size(); k-- > 0;) {
        out[k] = h % M;
        h /= M;
    }
}

std::size_t hypothesis_count(std::size_t M, std::size_t K) {
    std::size_t count = 1;
    for (std::size_t k = 0; k < K; ++k) {
        if (count > kMapHypothesisGuard / M)
            throw InfeasibleError("MAP needs " + std::to_string(M) + "^" + std::to_string(K) +
                                  " hypotheses, above the 2^24 guard");
        count *= M;
    }
    return count;
}

DetectionResult marginalize(std::span<const double> log_post, std::size_t M, std::size_t K) {
    DetectionResult result;
    result.beliefs = BeliefMatrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(M));
    const double norm = log_sum_exp(log_post);
    std::vector<std::size_t> s(K);
    if (norm == kNegInf) {
        // every hypothesis has zero likelihood; no information
        for (std::size_t k = 0; k < K; ++k) result.beliefs.row(static_cast<Eigen::Index>(k)) = uniform_belief(M).transpose();
    } else {
        // per-user, per-symbol log-sum-exp, done as max-shifted sums
        Matrix maxes = Matrix::Constant(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(M), kNegInf);
        for (std::size_t h = 0; h < log_post.size(); ++h) {
            hypothesis_symbols(h, M, s);
            for (std::size_t k = 0; k < K; ++k) {
                auto& m = maxes(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s[k]));
                m = std::max(m, log_post[h]);
            }
        }
        Matrix sums = Matrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(M));
        for (std::size_t h = 0; h < log_post.size(); ++h) {
            if (log_post[h] == kNegInf) continue;
            hypothesis_symbols(h, M, s);
            for (std::size_t k = 0; k < K; ++k) {
                const auto r = static_cast<Eigen::Index>(k);
                const auto c = static_cast<Eigen::Index>(s[k]);
                sums(r, c) += std::exp(log_post[h] - maxes(r, c));
            }
        }
        for (Eigen::Index k = 0; k < sums.rows(); ++k) {
            for (Eigen::Index m = 0; m < sums.cols(); ++m) {
                const double lm = maxes(k, m) == kNegInf ? kNegInf : maxes(k, m) + std::log(sums(k, m));
                result.beliefs(k, m) = std::exp(lm - norm);
            }
            const double total = result.beliefs.row(k).sum();
            result.beliefs.row(k) /= total;
            Vector row = result.beliefs.row(k).transpose();
            close_belief(row);
            result.beliefs.row(k) = row.transpose();
        }
    }
    // joint argmax, first maximum wins
    std::size_t best = 0;
    for (std::size_t h = 1; h < log_post.size(); ++h)
        if (log_post[h] > log_post[best]) best = h;
    result.symbols.resize(K);
    hypothesis_symbols(best, M, result.symbols);
    return result;
}

}  // namespace

Vector uniform_belief(std::size_t M) {
    require(M >= 2, "belief needs at least two entries");
    Vector row = Vector::Constant(static_cast<Eigen::Index>(M), 1.0 / static_cast<double>(M));
    close_belief(row);
    return row;
}

void close_belief(Eigen::Ref<Vector> row) {
    const auto last = row.size() - 1;
    double partial = 0.0;
    for (Eigen::Index m = 0; m < last; ++m) partial += row(m);
    row(last) = std::max(0.0, 1.0 - partial);
}

std::size_t hard_decide(const Eigen::Ref<const Vector>& row) {
    require(row.size() >= 1, "hard_decide: empty row");
    Eigen::Index best = 0;
    for (Eigen::Index m = 1; m < row.size(); ++m)
        if (row(m) > row(best)) best = m;
    return static_cast<std::size_t>(best);
}

MapDetector::MapDetector(const Channel& channel)
    : channel_(channel),
      count_(hypothesis_count(channel.constellation().size(), channel.users())) {
    const std::size_t K = channel.users();
    const std::size_t M = channel.constellation().size();
    means_.resize(static_cast<Eigen::Index>(channel.antennas()), static_cast<Eigen::Index>(count_));
    std::vector<std::size_t> s(K);
    for (std::size_t h = 0; h < count_; ++h) {
        hypothesis_symbols(h, M, s);
        means_.col(static_cast<Eigen::Index>(h)) = channel.mean_output(s);
    }
}

DetectionResult MapDetector::detect(const Eigen::Ref<const Vector>& y) const {
    std::vector<double> log_post(count_);
    for (std::size_t h = 0; h < count_; ++h)
        log_post[h] = channel_.log_likelihood_given_mean(y, means_.col(static_cast<Eigen::Index>(h)));
    return marginalize(log_post, channel_.constellation().size(), channel_.users());
}

DetectionResult map_detect(const Eigen::Ref<const Vector>& y, const Channel& channel) {
    return MapDetector(channel).detect(y);
}

SoftMoments soft_moments(const Eigen::Ref<const BeliefMatrix>& beliefs,
                         const Constellation& constellation) {
    require(static_cast<std::size_t>(beliefs.cols()) == constellation.size(),
            "soft_moments: belief width must equal constellation size");
    SoftMoments out{Vector::Zero(beliefs.rows()), Vector::Zero(beliefs.rows())};
    for (Eigen::Index l = 0; l < beliefs.rows(); ++l) {
        double e = 0.0;
        for (Eigen::Index m = 0; m < beliefs.cols(); ++m)
            e += constellation[static_cast<std::size_t>(m)] * beliefs(l, m);
        double v = 0.0;
        for (Eigen::Index m = 0; m < beliefs.cols(); ++m) {
            const double d = constellation[static_cast<std::size_t>(m)] - e;
            v += d * d * beliefs(l, m);
        }
        out.mean(l) = e;
        out.variance(l) = v;
    }
    return out;
}

Vector cancel_interference(const Eigen::Ref<const Vector>& y, const Matrix& H,
                           const SoftMoments& moments, std::size_t k) {
    require(k < static_cast<std::size_t>(H.cols()), "cancel_interference: user out of range");
    require(y.size() == H.rows(), "cancel_interference: output length mismatch");
    Vector z = y;
    for (Eigen::Index l = 0; l < H.cols(); ++l)
        if (static_cast<std::size_t>(l) != k) z -= H.col(l) * moments.mean(l);
    return z;
}

Matrix residual_covariance(const Matrix& H, double noise_variance, const SoftMoments& moments,
                           std::size_t k) {
    require(k < static_cast<std::size_t>(H.cols()), "residual_covariance: user out of range");
    Matrix cov = noise_variance * Matrix::Identity(H.rows(), H.rows());
    for (Eigen::Index l = 0; l < H.cols(); ++l)
        if (static_cast<std::size_t>(l) != k)
            cov.selfadjointView<Eigen::Lower>().rankUpdate(H.col(l), moments.variance(l));
    cov.triangularView<Eigen::StrictlyUpper>() = cov.transpose();
    return cov;
}

Vector gaussian_soft_estimate(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& h,
                              const Matrix& covariance, const Constellation& constellation) {
    require(z.size() == h.size() && covariance.rows() == z.size() && covariance.cols() == z.size(),
            "gaussian_soft_estimate: dimension mismatch");
    Eigen::LLT<Matrix> llt(covariance);
    if (llt.info() != Eigen::Success) {
        const double jitter = 1e-10 * covariance.trace() / static_cast<double>(covariance.rows());
        llt.compute(covariance + jitter * Matrix::Identity(covariance.rows(), covariance.cols()));
        if (llt.info() != Eigen::Success)
            throw ContractViolation("gaussian_soft_estimate: covariance is not positive definite");
    }
    // (z - h a)^T C^-1 (z - h a) = ||L^-1 z - a L^-1 h||^2
    const Vector wz = llt.matrixL().solve(z);
    const Vector wh = llt.matrixL().solve(h);
    const std::size_t M = constellation.size();
    Vector logits(static_cast<Eigen::Index>(M));
    for (std::size_t m = 0; m < M; ++m)
        logits(static_cast<Eigen::Index>(m)) = -0.5 * (wz - constellation[m] * wh).squaredNorm();
    const double mx = logits.maxCoeff();
    Vector p = (logits.array() - mx).exp().matrix();
    p /= p.sum();
    close_belief(p);
    return p;
}

DetectionResult iterative_sic(const Eigen::Ref<const Vector>& y, const Matrix& H,
                              double noise_variance, const Constellation& constellation,
                              const SicOptions& options) {
    require(options.iterations >= 1, "iterative_sic: at least one iteration required");
    require(y.size() == H.rows(), "iterative_sic: output length mismatch");
    const auto K = H.cols();
    const std::size_t M = constellation.size();
    BeliefMatrix beliefs(K, static_cast<Eigen::Index>(M));
    for (Eigen::Index k = 0; k < K; ++k) beliefs.row(k) = uniform_belief(M).transpose();

    DetectionResult result;
    for (std::size_t q = 0; q < options.iterations; ++q) {
        const SoftMoments moments = soft_moments(beliefs, constellation);
        BeliefMatrix next(K, static_cast<Eigen::Index>(M));
        for (Eigen::Index k = 0; k < K; ++k) {
            const auto user = static_cast<std::size_t>(k);
            const Vector z = cancel_interference(y, H, moments, user);
            const Matrix cov = residual_covariance(H, noise_variance, moments, user);
            next.row(k) = gaussian_soft_estimate(z, H.col(k), cov, constellation).transpose();
        }
        beliefs = std::move(next);
        if (options.keep_trace) result.trace.push_back(beliefs);
    }
    result.symbols.resize(static_cast<std::size_t>(K));
    for (Eigen::Index k = 0; k < K; ++k)
        result.symbols[static_cast<std::size_t>(k)] = hard_decide(beliefs.row(k).transpose());
    result.beliefs = std::move(beliefs);
    return result;
}

}  // namespace siclab
