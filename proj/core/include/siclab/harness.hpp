#pragma once

// Experiment configuration, seeded Monte-Carlo drivers and result emission.
//
// Every random quantity is drawn from stream_seed(master, component, indices)
// with fixed coordinates (SNR index, shard, subset, ...), so a configuration
// with a given seed produces byte-identical CSV output for any thread count.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "siclab/channels.hpp"
#include "siclab/deepsic.hpp"
#include "siclab/tracking.hpp"

namespace siclab::harness {

enum class ExperimentKind { sweep_snr, sweep_train_size, track, gradcheck, oracle_check };

std::string_view to_string(ExperimentKind kind);
ExperimentKind experiment_kind_from_string(std::string_view name);

struct ExperimentConfig {
    std::string name = "experiment";
    ExperimentKind kind = ExperimentKind::sweep_snr;

    ChannelFamily family = ChannelFamily::linear_awgn;
    std::size_t users = 6;
    std::size_t antennas = 6;
    std::string constellation = "bpsk";
    std::vector<double> snr_db;
    std::size_t iterations = 5;

    std::size_t n_train = 5000;
    std::vector<std::size_t> n_train_grid;  // sweep-train-size only
    std::size_t n_test = 20000;             // channel uses; symbols = n_test * K
    std::size_t shard_size = 1000;
    /// Runs with K >= 32 are capped at this many test uses unless allow_large_test.
    std::size_t large_test_cap = 2000;
    bool allow_large_test = false;

    double csi_error_variance = 0.0;
    /// Perturbed channel estimates under CSI uncertainty; 1 is the single
    /// noisy-matrix reading, more gives a set of channels. DeepSIC's
    /// training set is split evenly across them; model-based detectors use
    /// estimate (shard mod csi_channels) for each test shard.
    std::size_t csi_channels = 1;

    std::vector<std::string> detectors;

    deepsic::Architecture arch_seq = deepsic::Architecture::sequential_default();
    deepsic::Architecture arch_e2e = deepsic::Architecture::end_to_end_default();
    deepsic::TrainingConfig train_seq = deepsic::TrainingConfig::sequential_default();
    deepsic::TrainingConfig train_e2e = deepsic::TrainingConfig::end_to_end_default();
    deepsic::TrainingConfig train_online = deepsic::TrainingConfig::online_default();

    // track
    std::size_t blocks = 50;
    std::vector<double> phi = {51.0, 39.0, 33.0, 21.0};  // one per receive antenna
    PhaseMode phase_mode = PhaseMode::radians;
    std::size_t joint_blocks = 10;  // joint baseline trains on H(1..joint_blocks)

    // gradcheck / oracle-check
    std::size_t trials = 1000;

    std::optional<std::uint64_t> seed;
    std::string output = "results";

    /// Throws ContractViolation on any invariant violation, including a
    /// missing seed.
    void validate() const;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::filesystem::path& path);
    /// Canonical form; every field is written, so the hash covers defaults.
    nlohmann::json to_json() const;
    /// 16 hex digits of FNV-1a over the canonical JSON dump.
    std::string hash() const;

    /// n_test after the large-system cap.
    std::size_t effective_n_test() const;
    std::uint64_t master_seed() const;
};

struct ResultRow {
    std::string detector;
    double snr_db = 0.0;
    std::size_t n_train = 0;
    std::size_t errors = 0;
    std::size_t symbols = 0;
    double ser = 0.0;
    double std_error = 0.0;  // sqrt(ser (1 - ser) / symbols)
    double wall_time_s = 0.0;
};

ResultRow make_row(std::string detector, double snr_db, std::size_t n_train, std::size_t errors,
                   std::size_t symbols, double wall_time_s);

struct CheckResult {
    std::string name;
    bool passed = false;
    double value = 0.0;
    double threshold = 0.0;
    std::string detail;
};

struct RunReport {
    ExperimentConfig config;
    std::vector<ResultRow> rows;
    std::vector<fec::TrackTrace> traces;
    std::vector<CheckResult> checks;
    std::vector<std::string> skipped;  // sub-runs that could not complete
    double wall_time_s = 0.0;

    bool complete() const { return skipped.empty(); }
    bool checks_passed() const;
};

struct RunOptions {
    std::size_t threads = 1;
};

RunReport run_sweep_snr(const ExperimentConfig& config, const RunOptions& options = {});
RunReport run_sweep_train_size(const ExperimentConfig& config, const RunOptions& options = {});
RunReport run_track(const ExperimentConfig& config, const RunOptions& options = {});
RunReport run_gradcheck(const ExperimentConfig& config, const RunOptions& options = {});
RunReport run_oracle_check(const ExperimentConfig& config, const RunOptions& options = {});

/// Dispatches on config.kind.
RunReport run(const ExperimentConfig& config, const RunOptions& options = {});

/// Deterministic CSV for the experiment kind:
///   sweeps:  config_hash,detector,snr_db,n_train,errors,symbols,ser,std_error
///   track:   config_hash,strategy,block_index,frobenius_drift,ber_user_*,decode_success_*,retrained
///   checks:  config_hash,check,passed,value,threshold,detail
std::string report_to_csv(const RunReport& report);

/// Config, hash, seed, totals, wall times and skipped sub-runs.
nlohmann::json report_summary(const RunReport& report);

/// Writes <dir>/<name>.csv and <dir>/<name>_summary.json.
void write_report(const RunReport& report, const std::filesystem::path& dir);

struct ReferenceMap {
    std::vector<std::size_t> symbols;  // joint argmax, first in enumeration order on ties
    double best_likelihood = 0.0;
    double runner_up_likelihood = 0.0;
    Matrix marginals;                  // K x M
};

/// Exhaustive MAP written independently of MapDetector: per-hypothesis
/// likelihoods (not log-domain), user 0 varying slowest, marginals by direct
/// summation.
ReferenceMap reference_map(const Eigen::Ref<const Vector>& y, const Channel& channel);

/// SNR at which a SER curve crosses `target`, interpolating log10(SER)
/// linearly in dB between the first bracketing grid points. Empty when the
/// curve never reaches the target.
std::optional<double> snr_at_ser(const std::vector<double>& snr_db, const std::vector<double>& ser,
                                 double target);

}  // namespace siclab::harness
