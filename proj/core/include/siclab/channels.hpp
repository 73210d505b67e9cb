#pragma once

// Constellations, the three memoryless channel families (linear AWGN,
// 2-bit quantized Gaussian, Poisson), their exact likelihoods, CSI
// perturbation and labelled dataset generation.
//
// Symbol indices are 0-based in memory: index m selects symbols()[m] and is
// also the classifier label. Text files written by this library use 1-based
// indices.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "siclab/common.hpp"

namespace siclab {

class Constellation {
public:
    Constellation(std::string name, std::vector<double> symbols);

    static Constellation bpsk();  // {-1, +1}
    static Constellation ook();   // {0, 1}
    static Constellation from_name(std::string_view name);

    const std::string& name() const { return name_; }
    std::span<const double> symbols() const { return symbols_; }
    std::size_t size() const { return symbols_.size(); }
    double operator[](std::size_t m) const { return symbols_[m]; }
    bool nonnegative() const;

private:
    std::string name_;
    std::vector<double> symbols_;
};

enum class ChannelFamily { linear_awgn, quantized_gaussian, poisson };

std::string_view to_string(ChannelFamily f);
ChannelFamily channel_family_from_string(std::string_view name);

/// 2-bit uniform quantizer on [-4, 4]. Boundaries go to the inner cell:
/// q(+-2) = +-1, and q(0) = +1.
double quantize(double y);

class Channel {
public:
    Channel(ChannelFamily family, Matrix H, double noise_variance, Constellation constellation);

    ChannelFamily family() const { return family_; }
    const Matrix& matrix() const { return H_; }
    double noise_variance() const { return noise_variance_; }
    const Constellation& constellation() const { return constellation_; }
    std::size_t users() const { return static_cast<std::size_t>(H_.cols()); }
    std::size_t antennas() const { return static_cast<std::size_t>(H_.rows()); }

    /// Same family and constellation, different matrix.
    Channel with_matrix(Matrix H) const;

    /// H s for symbol indices s.
    Vector mean_output(std::span<const std::size_t> symbols) const;

    /// One channel use. Linear: Hs + w. Quantized: q(Hs + w). Poisson: entry j
    /// drawn from Poisson((Hs)_j / sigma_w + 1).
    Vector transmit(std::span<const std::size_t> symbols, Rng& rng) const;
    /// Noise-free variant of transmit used for tests; Poisson still samples.
    Vector transmit_noiseless(std::span<const std::size_t> symbols) const;

    double likelihood(const Eigen::Ref<const Vector>& y, std::span<const std::size_t> symbols) const;
    double log_likelihood(const Eigen::Ref<const Vector>& y,
                          std::span<const std::size_t> symbols) const;
    /// log p(y | mean output); lets callers cache H s per hypothesis.
    double log_likelihood_given_mean(const Eigen::Ref<const Vector>& y,
                                     const Eigen::Ref<const Vector>& mean) const;

private:
    void check_symbols(std::span<const std::size_t> symbols) const;

    ChannelFamily family_;
    Matrix H_;
    double noise_variance_;
    Constellation constellation_;
};

/// (H)_{i,j} = exp(-|i - j|).
Matrix exp_decay_matrix(std::size_t antennas, std::size_t users);

/// How the cosine argument of the block-fading model is read.
/// radians: cos(phi_i b). period: cos(2 pi b / phi_i), phi_i in blocks.
enum class PhaseMode { radians, period };

std::string_view to_string(PhaseMode m);
PhaseMode phase_mode_from_string(std::string_view name);

struct TimeVaryingSpec {
    std::vector<double> phi;  // one entry per receive antenna
    std::size_t users = 0;
    PhaseMode mode = PhaseMode::radians;
    /// Scale by |cos| instead of cos, so every entry stays nonnegative; the
    /// Poisson rate is only valid for a nonnegative matrix.
    bool magnitude = false;

    static TimeVaryingSpec standard4x4();  // phi = [51, 39, 33, 21], radians
};

/// (H(b))_{i,j} = exp(-|i - j|) cos(theta_i(b)), theta as selected by mode.
Matrix time_varying_matrix(const TimeVaryingSpec& spec, std::size_t block);

/// Squared Frobenius distance ||H(b) - H(0)||^2.
double drift(const TimeVaryingSpec& spec, std::size_t block);

/// Adds independent N(0, sigma_e^2 |H_ij|) noise to every entry.
Matrix perturb_csi(const Matrix& H, double error_variance, Rng& rng);

double snr_to_noise_variance(double snr_db);

/// Poisson variate by sequential inversion.
std::size_t sample_poisson(double rate, Rng& rng);

struct Dataset {
    std::vector<std::size_t> symbols;  // row-major n x K
    Matrix outputs;                    // n_r x n, one column per sample
    std::size_t users = 0;

    std::size_t size() const { return static_cast<std::size_t>(outputs.cols()); }
    std::size_t antennas() const { return static_cast<std::size_t>(outputs.rows()); }
    std::span<const std::size_t> row(std::size_t j) const {
        return std::span<const std::size_t>(symbols).subspan(j * users, users);
    }
    /// Labels of one user across the set.
    std::vector<std::size_t> labels(std::size_t user) const;

    static Dataset concat(std::span<const Dataset> parts);
};

Dataset generate_dataset(const Channel& channel, std::size_t n, Rng& rng);

/// CSV with header user_1..user_K,y_1..y_nr; indices 1-based.
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(std::string_view text);

// Binary: "SICDS1", u32 K, u32 n_r, u64 n, then per sample K u32 indices
// followed by n_r f64, all little-endian.
std::string serialize(const Dataset& data);
Dataset deserialize_dataset(std::string_view bytes);

}  // namespace siclab
