#pragma once

// Model-based receivers: exhaustive MAP and iterative soft interference
// cancellation.

#include <cstddef>
#include <span>
#include <vector>

#include "siclab/channels.hpp"
#include "siclab/common.hpp"

namespace siclab {

/// K x M, row k is the belief over user k's symbol.
using BeliefMatrix = Matrix;

struct SoftMoments {
    Vector mean;      // e_l
    Vector variance;  // v_l
};

struct DetectionResult {
    std::vector<std::size_t> symbols;  // hard decisions, 0-based
    BeliefMatrix beliefs;
    std::vector<BeliefMatrix> trace;   // beliefs after each iteration, when requested
};

/// Uniform row whose last entry is the complement of the others.
Vector uniform_belief(std::size_t M);

/// Sets the last entry of a row to 1 - sum(others), clamped at 0. Every
/// belief produced by this library is closed this way, so reconstructing a
/// row from its first M-1 entries is exact.
void close_belief(Eigen::Ref<Vector> row);

/// argmax with ties resolved toward the lowest index.
std::size_t hard_decide(const Eigen::Ref<const Vector>& row);

inline constexpr std::size_t kMapHypothesisGuard = std::size_t{1} << 24;

/// Exhaustive MAP over all M^K hypotheses under a uniform prior. Beliefs are
/// the exact per-user posterior marginals.
DetectionResult map_detect(const Eigen::Ref<const Vector>& y, const Channel& channel);

/// Hypothesis table for repeated MAP calls on one channel.
class MapDetector {
public:
    explicit MapDetector(const Channel& channel);
    DetectionResult detect(const Eigen::Ref<const Vector>& y) const;

private:
    Channel channel_;
    std::size_t count_;
    Matrix means_;  // n_r x M^K
};

SoftMoments soft_moments(const Eigen::Ref<const BeliefMatrix>& beliefs,
                         const Constellation& constellation);

/// z_k = y - sum_{l != k} h_l e_l.
Vector cancel_interference(const Eigen::Ref<const Vector>& y, const Matrix& H,
                           const SoftMoments& moments, std::size_t k);

/// sigma_w^2 I + sum_{l != k} v_l h_l h_l^T.
Matrix residual_covariance(const Matrix& H, double noise_variance, const SoftMoments& moments,
                           std::size_t k);

/// Posterior over user k's symbol assuming z ~ N(h alpha_m, cov).
Vector gaussian_soft_estimate(const Eigen::Ref<const Vector>& z, const Eigen::Ref<const Vector>& h,
                              const Matrix& covariance, const Constellation& constellation);

struct SicOptions {
    std::size_t iterations = 5;
    bool keep_trace = false;
};

/// Soft interference cancellation with uniform initial beliefs. Every user is
/// updated from the previous iteration's beliefs only.
DetectionResult iterative_sic(const Eigen::Ref<const Vector>& y, const Matrix& H,
                              double noise_variance, const Constellation& constellation,
                              const SicOptions& options = {});

}  // namespace siclab
