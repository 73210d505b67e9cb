#include <cstdio>
#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "siclab/harness.hpp"
#include "siclab/parallel.hpp"

namespace {

// 0: complete and all checks passed; 1: sub-runs skipped or checks failed;
// 2: invalid invocation or configuration.
int run_command(const std::string& config_path, const std::string& out_dir,
                std::optional<std::uint64_t> seed, std::size_t threads) {
    using namespace siclab;
    auto config = harness::ExperimentConfig::from_file(config_path);
    if (seed) config.seed = *seed;
    config.validate();
    const std::filesystem::path dir = out_dir.empty() ? std::filesystem::path(config.output) : std::filesystem::path(out_dir);

    std::cerr << "siclab: " << harness::to_string(config.kind) << " '" << config.name << "' seed "
              << *config.seed << " hash " << config.hash() << ", " << threads << " thread(s)\n";
    const auto report = harness::run(config, {threads});
    harness::write_report(report, dir);

    for (const auto& row : report.rows)
        std::fprintf(stderr, "  %-12s snr %6.2f dB  n_train %6zu  SER %.3e (+- %.1e)  %.1fs\n",
                     row.detector.c_str(), row.snr_db, row.n_train, row.ser, row.std_error, row.wall_time_s);
    for (const auto& trace : report.traces)
        std::fprintf(stderr, "  %-15s mean BER %.3e, blocks 10+: %.3e\n", trace.strategy.c_str(),
                     trace.mean_ber(0, config.blocks), trace.mean_ber(10, config.blocks));
    for (const auto& check : report.checks)
        std::fprintf(stderr, "  %-4s %s  value %.3g  threshold %.3g  (%s)\n", check.passed ? "PASS" : "FAIL",
                     check.name.c_str(), check.value, check.threshold, check.detail.c_str());
    for (const auto& s : report.skipped) std::cerr << "  skipped: " << s << '\n';
    std::fprintf(stderr, "  wrote %s (%.1fs)\n", (dir / (config.name + ".csv")).c_str(), report.wall_time_s);
    return report.complete() && report.checks_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"siclab: multiuser MIMO detection experiments (MAP, iterative SIC, DeepSIC)"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run one experiment configuration");
    std::string config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::size_t threads = siclab::default_threads();
    run->add_option("config", config_path, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory (default: the config's output field)");
    run->add_option("--seed", seed, "Override the master seed");
    run->add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);
    try {
        return run_command(config_path, out_dir, seed, threads);
    } catch (const siclab::ContractViolation& e) {
        std::cerr << "siclab: invalid configuration: " << e.what() << '\n';
    } catch (const siclab::FormatError& e) {
        std::cerr << "siclab: " << e.what() << '\n';
    } catch (const std::exception& e) {
        std::cerr << "siclab: error: " << e.what() << '\n';
    }
    return 2;
}
