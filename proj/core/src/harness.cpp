#include "siclab/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "binary_io.hpp"
#include "siclab/detectors.hpp"
#include "siclab/parallel.hpp"

namespace siclab::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string snr_tag(double snr) { return "snr=" + num(snr) + "dB"; }

nlohmann::json arch_to_json(const deepsic::Architecture& arch) {
    auto out = nlohmann::json::array();
    for (const auto& h : arch.hidden)
        out.push_back({{"width", h.width}, {"activation", std::string(nn::to_string(h.activation))}});
    return out;
}

deepsic::Architecture arch_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw FormatError("architecture must be a list of hidden layers");
    deepsic::Architecture arch;
    for (const auto& layer : j)
        arch.hidden.push_back({layer.at("width").get<std::size_t>(),
                               nn::activation_from_string(layer.at("activation").get<std::string>())});
    return arch;
}

nlohmann::json training_to_json(const deepsic::TrainingConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.adam.learning_rate},
            {"beta1", c.adam.beta1},
            {"beta2", c.adam.beta2},
            {"epsilon", c.adam.epsilon}};
}

deepsic::TrainingConfig training_from_json(const nlohmann::json& j, deepsic::TrainingConfig c) {
    static const std::set<std::string> keys{"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon"};
    for (const auto& [key, _] : j.items())
        if (!keys.contains(key)) throw FormatError("unknown training key '" + key + "'");
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.adam.learning_rate = j.value("learning_rate", c.adam.learning_rate);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.epsilon = j.value("epsilon", c.adam.epsilon);
    return c;
}

Channel make_channel(const ExperimentConfig& config, const Matrix& H, double snr_db) {
    return Channel(config.family, H, snr_to_noise_variance(snr_db),
                   Constellation::from_name(config.constellation));
}

deepsic::SystemDims system_dims(const ExperimentConfig& config) {
    return {config.users, config.antennas, Constellation::from_name(config.constellation).size(),
            config.iterations};
}

std::size_t count_errors(std::span<const std::size_t> decided, std::span<const std::size_t> truth) {
    std::size_t errors = 0;
    for (std::size_t i = 0; i < decided.size(); ++i) errors += decided[i] != truth[i];
    return errors;
}

// Contiguous shard boundaries of a test set.
struct Shards {
    std::size_t total = 0;
    std::size_t size = 0;
    std::size_t count() const { return (total + size - 1) / size; }
    std::size_t begin(std::size_t s) const { return s * size; }
    std::size_t length(std::size_t s) const { return std::min(size, total - s * size); }
};

std::vector<Dataset> generate_test_shards(const Channel& channel, const Shards& shards, std::uint64_t seed,
                                          std::size_t point, std::size_t threads) {
    std::vector<Dataset> out(shards.count());
    parallel_for(shards.count(), threads, [&](std::size_t s) {
        auto rng = make_stream(seed, "test", {point, s});
        out[s] = generate_dataset(channel, shards.length(s), rng);
    });
    return out;
}

// Channel estimates available to the receiver at one grid point.
std::vector<Matrix> channel_estimates(const ExperimentConfig& config, const Matrix& H, std::uint64_t seed,
                                      std::size_t point) {
    if (config.csi_error_variance <= 0.0) return {H};
    std::vector<Matrix> out;
    for (std::size_t c = 0; c < config.csi_channels; ++c) {
        auto rng = make_stream(seed, "csi", {point, c});
        out.push_back(perturb_csi(H, config.csi_error_variance, rng));
    }
    return out;
}

// Training set drawn evenly from the channels the receiver believes in.
Dataset training_set(const Channel& truth, const std::vector<Matrix>& estimates, std::size_t n,
                     std::uint64_t seed, std::string_view component, std::initializer_list<std::uint64_t> coords,
                     bool perturbed) {
    std::vector<Dataset> parts;
    const std::size_t C = perturbed ? estimates.size() : 1;
    const std::uint64_t base = stream_seed(seed, component, coords);
    for (std::size_t c = 0; c < C; ++c) {
        const std::size_t size = n / C + (c < n % C ? 1 : 0);
        auto rng = make_stream(base, "subset", {c});
        const Channel ch = perturbed ? truth.with_matrix(estimates[c]) : truth;
        parts.push_back(generate_dataset(ch, size, rng));
    }
    return Dataset::concat(parts);
}

std::vector<std::size_t> detect_shard(const std::string& detector, const Dataset& shard, const Channel& estimate,
                                      const MapDetector* map, const deepsic::DeepSicParams* params,
                                      std::size_t iterations) {
    if (params) return deepsic::infer_batch(*params, shard.outputs).symbols;
    std::vector<std::size_t> out;
    out.reserve(shard.size() * shard.users);
    for (std::size_t j = 0; j < shard.size(); ++j) {
        const auto y = shard.outputs.col(static_cast<Eigen::Index>(j));
        DetectionResult r;
        if (detector == "map") {
            r = map->detect(y);
        } else {
            // applied verbatim to every family, with the nominal H and noise variance
            r = iterative_sic(y, estimate.matrix(), estimate.noise_variance(),
                              estimate.constellation(), SicOptions{iterations, false});
        }
        out.insert(out.end(), r.symbols.begin(), r.symbols.end());
    }
    return out;
}

const std::set<std::string> kSweepDetectors{"map", "sic", "deepsic_seq", "deepsic_e2e"};
const std::set<std::string> kTrackStrategies{"map_instant", "map_initial", "deepsic_static", "deepsic_online",
                                             "deepsic_joint"};

deepsic::TrainOptions train_options(const deepsic::TrainingConfig& c, std::uint64_t seed, std::size_t threads) {
    deepsic::TrainOptions o;
    o.config = c;
    o.seed = seed;
    o.threads = threads;
    return o;
}

// Evaluates one detector on all test shards of a grid point.
ResultRow evaluate(const ExperimentConfig& config, const std::string& detector, double snr_db,
                   std::size_t n_train, const Channel& truth, const std::vector<Matrix>& estimates,
                   const std::vector<Dataset>& shards, const deepsic::DeepSicParams* params,
                   Clock::time_point start, std::size_t threads) {
    std::vector<Channel> est_channels;
    std::vector<std::unique_ptr<MapDetector>> maps;
    if (!params) {
        for (const auto& H : estimates) {
            est_channels.push_back(truth.with_matrix(H));
            if (detector == "map") maps.push_back(std::make_unique<MapDetector>(est_channels.back()));
        }
    }
    std::vector<std::size_t> errors(shards.size(), 0);
    parallel_for(shards.size(), threads, [&](std::size_t s) {
        const std::size_t c = params ? 0 : s % est_channels.size();
        const auto decided = detect_shard(detector, shards[s], params ? truth : est_channels[c],
                                          maps.empty() ? nullptr : maps[c].get(), params, config.iterations);
        errors[s] = count_errors(decided, shards[s].symbols);
    });
    std::size_t total_errors = 0, symbols = 0;
    for (std::size_t s = 0; s < shards.size(); ++s) {
        total_errors += errors[s];
        symbols += shards[s].symbols.size();
    }
    return make_row(detector, snr_db, n_train, total_errors, symbols, seconds_since(start));
}

std::string describe(const std::string& what, const std::exception& e) { return what + ": " + e.what(); }

}  // namespace

std::string_view to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::sweep_snr: return "sweep-snr";
        case ExperimentKind::sweep_train_size: return "sweep-train-size";
        case ExperimentKind::track: return "track";
        case ExperimentKind::gradcheck: return "gradcheck";
        case ExperimentKind::oracle_check: return "oracle-check";
    }
    return "?";
}

ExperimentKind experiment_kind_from_string(std::string_view name) {
    for (auto k : {ExperimentKind::sweep_snr, ExperimentKind::sweep_train_size, ExperimentKind::track,
                   ExperimentKind::gradcheck, ExperimentKind::oracle_check})
        if (to_string(k) == name) return k;
    throw FormatError("unknown experiment kind '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
    require(seed.has_value(), "config: seed is mandatory");
    require(!name.empty(), "config: name must not be empty");
    require(users >= 1 && antennas >= 1, "config: users and antennas must be >= 1");
    require(iterations >= 1, "config: iterations must be >= 1");
    require(n_test >= 1, "config: n_test must be >= 1");
    require(shard_size >= 1, "config: shard_size must be >= 1");
    require(trials >= 1, "config: trials must be >= 1");
    require(csi_error_variance >= 0.0, "config: csi_error_variance must be >= 0");
    require(csi_channels >= 1, "config: csi_channels must be >= 1");
    const auto constel = Constellation::from_name(constellation);
    if (family == ChannelFamily::poisson)
        require(constel.nonnegative(), "config: the Poisson channel needs a nonnegative constellation");
    switch (kind) {
        case ExperimentKind::sweep_snr:
            require(!snr_db.empty(), "config: snr grid must not be empty");
            require(!detectors.empty(), "config: detector list must not be empty");
            for (const auto& d : detectors)
                require(kSweepDetectors.contains(d), "config: unknown detector '" + d + "'");
            require(n_train >= 1, "config: n_train must be >= 1");
            break;
        case ExperimentKind::sweep_train_size:
            require(!snr_db.empty(), "config: snr grid must not be empty");
            require(!n_train_grid.empty(), "config: n_train grid must not be empty");
            for (auto n : n_train_grid) require(n >= 1, "config: n_train grid entries must be >= 1");
            require(!detectors.empty(), "config: detector list must not be empty");
            for (const auto& d : detectors)
                require(d == "deepsic_seq" || d == "deepsic_e2e",
                        "config: sweep-train-size compares deepsic_seq and deepsic_e2e only");
            break;
        case ExperimentKind::track:
            require(snr_db.size() == 1, "config: track takes exactly one snr");
            require(blocks >= 1, "config: blocks must be >= 1");
            require(constel.size() == 2, "config: track needs a binary constellation");
            require(phi.size() == antennas, "config: phi needs one entry per receive antenna");
            require(!detectors.empty(), "config: strategy list must not be empty");
            for (const auto& d : detectors)
                require(kTrackStrategies.contains(d), "config: unknown track strategy '" + d + "'");
            require(joint_blocks >= 1, "config: joint_blocks must be >= 1");
            break;
        case ExperimentKind::gradcheck:
        case ExperimentKind::oracle_check: break;
    }
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    static const std::set<std::string> keys{
        "name", "experiment", "channel", "users", "antennas", "constellation", "snr_db", "iterations",
        "n_train", "n_train_grid", "n_test", "shard_size", "large_test_cap", "allow_large_test",
        "csi_error_variance", "csi_channels", "detectors", "arch", "training", "blocks", "phi", "phase_mode",
        "joint_blocks", "trials", "seed", "output"};
    if (!j.is_object()) throw FormatError("config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!keys.contains(key)) throw FormatError("unknown config key '" + key + "'");
    ExperimentConfig c;
    try {
        c.name = j.value("name", c.name);
        c.kind = experiment_kind_from_string(j.at("experiment").get<std::string>());
        if (j.contains("channel")) c.family = channel_family_from_string(j["channel"].get<std::string>());
        c.users = j.value("users", c.users);
        c.antennas = j.value("antennas", c.antennas);
        c.constellation = j.value("constellation", c.constellation);
        c.snr_db = j.value("snr_db", c.snr_db);
        c.iterations = j.value("iterations", c.iterations);
        c.n_train = j.value("n_train", c.n_train);
        c.n_train_grid = j.value("n_train_grid", c.n_train_grid);
        c.n_test = j.value("n_test", c.n_test);
        c.shard_size = j.value("shard_size", c.shard_size);
        c.large_test_cap = j.value("large_test_cap", c.large_test_cap);
        c.allow_large_test = j.value("allow_large_test", c.allow_large_test);
        c.csi_error_variance = j.value("csi_error_variance", c.csi_error_variance);
        c.csi_channels = j.value("csi_channels", c.csi_channels);
        c.detectors = j.value("detectors", c.detectors);
        if (j.contains("arch")) {
            const auto& a = j["arch"];
            for (const auto& [key, _] : a.items())
                if (key != "seq" && key != "e2e") throw FormatError("unknown arch key '" + key + "'");
            if (a.contains("seq")) c.arch_seq = arch_from_json(a["seq"]);
            if (a.contains("e2e")) c.arch_e2e = arch_from_json(a["e2e"]);
        }
        if (j.contains("training")) {
            const auto& t = j["training"];
            for (const auto& [key, _] : t.items())
                if (key != "seq" && key != "e2e" && key != "online")
                    throw FormatError("unknown training section '" + key + "'");
            if (t.contains("seq")) c.train_seq = training_from_json(t["seq"], c.train_seq);
            if (t.contains("e2e")) c.train_e2e = training_from_json(t["e2e"], c.train_e2e);
            if (t.contains("online")) c.train_online = training_from_json(t["online"], c.train_online);
        }
        c.blocks = j.value("blocks", c.blocks);
        c.phi = j.value("phi", c.phi);
        if (j.contains("phase_mode")) c.phase_mode = phase_mode_from_string(j["phase_mode"].get<std::string>());
        c.joint_blocks = j.value("joint_blocks", c.joint_blocks);
        c.trials = j.value("trials", c.trials);
        if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
        c.output = j.value("output", c.output);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
    const std::string text = detail::read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["name"] = name;
    j["experiment"] = std::string(to_string(kind));
    j["channel"] = std::string(siclab::to_string(family));
    j["users"] = users;
    j["antennas"] = antennas;
    j["constellation"] = constellation;
    j["snr_db"] = snr_db;
    j["iterations"] = iterations;
    j["n_train"] = n_train;
    j["n_train_grid"] = n_train_grid;
    j["n_test"] = n_test;
    j["shard_size"] = shard_size;
    j["large_test_cap"] = large_test_cap;
    j["allow_large_test"] = allow_large_test;
    j["csi_error_variance"] = csi_error_variance;
    j["csi_channels"] = csi_channels;
    j["detectors"] = detectors;
    j["arch"] = {{"seq", arch_to_json(arch_seq)}, {"e2e", arch_to_json(arch_e2e)}};
    j["training"] = {{"seq", training_to_json(train_seq)},
                     {"e2e", training_to_json(train_e2e)},
                     {"online", training_to_json(train_online)}};
    j["blocks"] = blocks;
    j["phi"] = phi;
    j["phase_mode"] = std::string(siclab::to_string(phase_mode));
    j["joint_blocks"] = joint_blocks;
    j["trials"] = trials;
    if (seed) j["seed"] = *seed;
    j["output"] = output;
    return j;
}

std::string ExperimentConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(hash_string(to_json().dump())));
    return buf;
}

std::size_t ExperimentConfig::effective_n_test() const {
    if (users >= 32 && !allow_large_test) return std::min(n_test, large_test_cap);
    return n_test;
}

std::uint64_t ExperimentConfig::master_seed() const {
    require(seed.has_value(), "config: seed is mandatory");
    return *seed;
}

ResultRow make_row(std::string detector, double snr_db, std::size_t n_train, std::size_t errors,
                   std::size_t symbols, double wall_time_s) {
    require(symbols >= 1, "result row needs at least one symbol");
    require(errors <= symbols, "result row: more errors than symbols");
    ResultRow r;
    r.detector = std::move(detector);
    r.snr_db = snr_db;
    r.n_train = n_train;
    r.errors = errors;
    r.symbols = symbols;
    r.ser = static_cast<double>(errors) / static_cast<double>(symbols);
    r.std_error = std::sqrt(r.ser * (1.0 - r.ser) / static_cast<double>(symbols));
    r.wall_time_s = wall_time_s;
    return r;
}

bool RunReport::checks_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

RunReport run_sweep_snr(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    require(config.kind == ExperimentKind::sweep_snr, "run_sweep_snr: wrong experiment kind");
    const auto run_start = Clock::now();
    RunReport report;
    report.config = config;
    const std::uint64_t seed = config.master_seed();
    const auto dims = system_dims(config);
    const Matrix H = exp_decay_matrix(config.antennas, config.users);
    const Shards shards{config.effective_n_test(), config.shard_size};
    const bool perturbed = config.csi_error_variance > 0.0;

    for (std::size_t p = 0; p < config.snr_db.size(); ++p) {
        const double snr = config.snr_db[p];
        const Channel truth = make_channel(config, H, snr);
        const auto test = generate_test_shards(truth, shards, seed, p, options.threads);
        const auto estimates = channel_estimates(config, H, seed, p);
        std::optional<Dataset> train;

        for (const auto& detector : config.detectors) {
            const auto start = Clock::now();
            try {
                std::optional<deepsic::DeepSicParams> params;
                if (detector == "deepsic_seq" || detector == "deepsic_e2e") {
                    if (!train) train = training_set(truth, estimates, config.n_train, seed, "train", {p}, perturbed);
                    if (detector == "deepsic_seq")
                        params = deepsic::train_sequential(
                            *train, dims, config.arch_seq, config.constellation,
                            train_options(config.train_seq, stream_seed(seed, "train-seq", {p}), options.threads));
                    else
                        params = deepsic::train_end_to_end(
                            *train, dims, config.arch_e2e, config.constellation,
                            train_options(config.train_e2e, stream_seed(seed, "train-e2e", {p}), options.threads));
                }
                report.rows.push_back(evaluate(config, detector, snr, config.n_train, truth, estimates, test,
                                               params ? &*params : nullptr, start, options.threads));
            } catch (const InfeasibleError& e) {
                report.skipped.push_back(describe(detector + " " + snr_tag(snr), e));
            } catch (const TrainingDivergence& e) {
                report.skipped.push_back(describe(detector + " " + snr_tag(snr), e));
            }
        }
    }
    report.wall_time_s = seconds_since(run_start);
    return report;
}

RunReport run_sweep_train_size(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    require(config.kind == ExperimentKind::sweep_train_size, "run_sweep_train_size: wrong experiment kind");
    const auto run_start = Clock::now();
    RunReport report;
    report.config = config;
    const std::uint64_t seed = config.master_seed();
    const auto dims = system_dims(config);
    const Matrix H = exp_decay_matrix(config.antennas, config.users);
    const Shards shards{config.effective_n_test(), config.shard_size};
    const bool perturbed = config.csi_error_variance > 0.0;
    // both methods share the end-to-end block architecture here
    const auto& arch = config.arch_e2e;

    for (std::size_t p = 0; p < config.snr_db.size(); ++p) {
        const double snr = config.snr_db[p];
        const Channel truth = make_channel(config, H, snr);
        const auto test = generate_test_shards(truth, shards, seed, p, options.threads);
        const auto estimates = channel_estimates(config, H, seed, p);
        for (std::size_t g = 0; g < config.n_train_grid.size(); ++g) {
            const std::size_t n = config.n_train_grid[g];
            const Dataset train = training_set(truth, estimates, n, seed, "train-size", {p, g}, perturbed);
            for (const auto& detector : config.detectors) {
                const auto start = Clock::now();
                try {
                    const bool seq = detector == "deepsic_seq";
                    const auto opts = train_options(seq ? config.train_seq : config.train_e2e,
                                                    stream_seed(seed, seq ? "train-seq" : "train-e2e", {p, g}),
                                                    options.threads);
                    const auto params =
                        seq ? deepsic::train_sequential(train, dims, arch, config.constellation, opts)
                            : deepsic::train_end_to_end(train, dims, arch, config.constellation, opts);
                    report.rows.push_back(
                        evaluate(config, detector, snr, n, truth, estimates, test, &params, start, options.threads));
                } catch (const TrainingDivergence& e) {
                    report.skipped.push_back(describe(detector + " " + snr_tag(snr) + " n_train=" +
                                                          std::to_string(n),
                                                      e));
                }
            }
        }
    }
    report.wall_time_s = seconds_since(run_start);
    return report;
}

RunReport run_track(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    require(config.kind == ExperimentKind::track, "run_track: wrong experiment kind");
    const auto run_start = Clock::now();
    RunReport report;
    report.config = config;
    const std::uint64_t seed = config.master_seed();
    const auto dims = system_dims(config);
    const double snr = config.snr_db.front();

    const TimeVaryingSpec variation{config.phi, config.users, config.phase_mode,
                                    config.family == ChannelFamily::poisson};
    const Matrix H0 = time_varying_matrix(variation, 0);
    const Channel initial = make_channel(config, H0, snr);
    const fec::TrackSetup setup{initial, variation, config.blocks, stream_seed(seed, "track")};

    std::optional<deepsic::DeepSicParams> pilot_trained;
    auto pilot = [&]() -> const deepsic::DeepSicParams& {
        if (!pilot_trained) {
            auto rng = make_stream(seed, "train", {0});
            const Dataset data = generate_dataset(initial, config.n_train, rng);
            pilot_trained = deepsic::train_sequential(
                data, dims, config.arch_seq, config.constellation,
                train_options(config.train_seq, stream_seed(seed, "train-seq"), options.threads));
        }
        return *pilot_trained;
    };
    const auto map_detector = [&](const MapDetector& map, const Matrix& outputs) {
        std::vector<std::size_t> out;
        for (Eigen::Index j = 0; j < outputs.cols(); ++j) {
            const auto r = map.detect(outputs.col(j));
            out.insert(out.end(), r.symbols.begin(), r.symbols.end());
        }
        return out;
    };

    for (const auto& strategy : config.detectors) {
        try {
            if (strategy == "map_instant") {
                report.traces.push_back(fec::track_with(
                    [&](const Matrix& Hb, const Matrix& outputs) {
                        return map_detector(MapDetector(initial.with_matrix(Hb)), outputs);
                    },
                    setup, strategy));
            } else if (strategy == "map_initial") {
                const MapDetector map(initial);
                report.traces.push_back(fec::track_with(
                    [&](const Matrix&, const Matrix& outputs) { return map_detector(map, outputs); }, setup,
                    strategy));
            } else if (strategy == "deepsic_static" || strategy == "deepsic_online") {
                const bool online = strategy == "deepsic_online";
                report.traces.push_back(fec::track_online(
                    pilot(), setup, online,
                    train_options(config.train_online, stream_seed(seed, "train-online"), options.threads),
                    strategy));
            } else if (strategy == "deepsic_joint") {
                std::vector<Dataset> parts;
                for (std::size_t b = 1; b <= config.joint_blocks; ++b) {
                    const std::size_t size =
                        config.n_train / config.joint_blocks + (b - 1 < config.n_train % config.joint_blocks ? 1 : 0);
                    auto rng = make_stream(seed, "joint-train", {b});
                    parts.push_back(
                        generate_dataset(initial.with_matrix(time_varying_matrix(variation, b)), size, rng));
                }
                const auto params = deepsic::train_sequential(
                    Dataset::concat(parts), dims, config.arch_seq, config.constellation,
                    train_options(config.train_seq, stream_seed(seed, "train-joint"), options.threads));
                report.traces.push_back(fec::track_online(params, setup, false, {}, strategy));
            }
        } catch (const InfeasibleError& e) {
            report.skipped.push_back(describe(strategy, e));
        } catch (const TrainingDivergence& e) {
            report.skipped.push_back(describe(strategy, e));
        }
    }
    report.wall_time_s = seconds_since(run_start);
    return report;
}

namespace {

double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
}

// Central differences over every parameter of `net`; loss(net) is re-evaluated
// after each perturbation.
template <class Loss>
double max_gradient_error(nn::Network& net, const nn::Gradients& analytic, Loss&& loss, std::size_t& checked) {
    constexpr double h = 1e-5;
    double worst = 0.0;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        auto& layer = net.layers()[l];
        auto probe = [&](double& param, double grad) {
            const double saved = param;
            param = saved + h;
            const double up = loss();
            param = saved - h;
            const double down = loss();
            param = saved;
            worst = std::max(worst, relative_error(grad, (up - down) / (2 * h)));
            ++checked;
        };
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i)
            probe(layer.weight.data()[i], analytic.weight[l].data()[i]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) probe(layer.bias[i], analytic.bias[l][i]);
    }
    return worst;
}

constexpr double kGradTolerance = 1e-4;

}  // namespace

RunReport run_gradcheck(const ExperimentConfig& config, const RunOptions&) {
    config.validate();
    const auto run_start = Clock::now();
    RunReport report;
    report.config = config;
    const std::uint64_t seed = config.master_seed();
    const auto dims = system_dims(config);
    const std::size_t M = dims.constellation_size;
    constexpr std::size_t kBatch = 8;

    const std::pair<const char*, const deepsic::Architecture*> archs[] = {{"seq", &config.arch_seq},
                                                                          {"e2e", &config.arch_e2e}};
    for (std::size_t a = 0; a < 2; ++a) {
        const auto layers = archs[a].second->layers(dims);
        auto rng = make_stream(seed, "gradcheck", {a});
        nn::Network net = nn::Network::glorot(layers, rng);
        std::normal_distribution<double> normal;
        Matrix X(static_cast<Eigen::Index>(dims.block_input_dim()), static_cast<Eigen::Index>(kBatch));
        for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = normal(rng);
        std::vector<std::size_t> labels(kBatch);
        std::uniform_int_distribution<std::size_t> pick(0, M - 1);
        for (auto& l : labels) l = pick(rng);

        const auto analytic = nn::backward(net, nn::forward(net, X), labels);
        std::size_t checked = 0;
        const double worst = max_gradient_error(
            net, analytic, [&] { return nn::mean_cross_entropy(nn::forward(net, X).probabilities, labels); },
            checked);
        report.checks.push_back({std::string("gradcheck_block_") + archs[a].first, worst < kGradTolerance, worst,
                                 kGradTolerance, std::to_string(checked) + " parameters"});
    }

    // unrolled end-to-end objective on a reduced system
    {
        deepsic::SystemDims small{std::min<std::size_t>(dims.users, 3), std::min<std::size_t>(dims.antennas, 3), M,
                                  std::min<std::size_t>(dims.iterations, 3)};
        const auto layers = config.arch_e2e.layers(small);
        std::vector<nn::Network> blocks;
        for (std::size_t i = 0; i < small.users * small.iterations; ++i) {
            auto rng = make_stream(seed, "gradcheck-e2e", {i});
            blocks.push_back(nn::Network::glorot(layers, rng));
        }
        deepsic::DeepSicParams params(small, config.arch_e2e, config.constellation, seed, blocks);
        const auto constel = Constellation::from_name(config.constellation);
        const Channel channel(config.family, exp_decay_matrix(small.antennas, small.users),
                              snr_to_noise_variance(5.0), constel);
        auto rng = make_stream(seed, "gradcheck-e2e-data");
        const Dataset data = generate_dataset(channel, 16, rng);
        const auto analytic = deepsic::end_to_end_gradients(params, data);
        double worst = 0.0;
        std::size_t checked = 0;
        for (std::size_t q = 0; q < small.iterations; ++q)
            for (std::size_t k = 0; k < small.users; ++k)
                worst = std::max(worst, max_gradient_error(
                                            params.block(q, k), analytic.gradients[q * small.users + k],
                                            [&] { return deepsic::end_to_end_gradients(params, data).loss; },
                                            checked));
        report.checks.push_back({"gradcheck_end_to_end", worst < kGradTolerance, worst, kGradTolerance,
                                 std::to_string(checked) + " parameters"});
    }
    report.wall_time_s = seconds_since(run_start);
    return report;
}

ReferenceMap reference_map(const Eigen::Ref<const Vector>& y, const Channel& channel) {
    const std::size_t K = channel.users();
    const std::size_t M = channel.constellation().size();
    ReferenceMap out;
    out.marginals = Matrix::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(M));
    out.best_likelihood = -1.0;
    out.runner_up_likelihood = -1.0;
    std::vector<std::size_t> s(K, 0);
    double total = 0.0;
    while (true) {
        const double p = channel.likelihood(y, s);
        total += p;
        for (std::size_t k = 0; k < K; ++k)
            out.marginals(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s[k])) += p;
        if (p > out.best_likelihood) {
            out.runner_up_likelihood = out.best_likelihood;
            out.best_likelihood = p;
            out.symbols = s;
        } else if (p > out.runner_up_likelihood) {
            out.runner_up_likelihood = p;
        }
        std::size_t k = K;
        while (k-- > 0) {
            if (++s[k] < M) break;
            s[k] = 0;
        }
        if (k == static_cast<std::size_t>(-1)) break;
    }
    if (total > 0.0) out.marginals /= total;
    return out;
}

RunReport run_oracle_check(const ExperimentConfig& config, const RunOptions& options) {
    config.validate();
    const auto run_start = Clock::now();
    RunReport report;
    report.config = config;
    const std::uint64_t seed = config.master_seed();
    const double snr = config.snr_db.empty() ? 6.0 : config.snr_db.front();

    // MAP against the exhaustive reference, every channel family
    {
        const std::size_t K = std::min<std::size_t>(config.users, 3);
        const std::size_t nr = std::min<std::size_t>(config.antennas, 3);
        const ChannelFamily families[] = {ChannelFamily::linear_awgn, ChannelFamily::quantized_gaussian,
                                          ChannelFamily::poisson};
        for (std::size_t f = 0; f < 3; ++f) {
            const auto constel = families[f] == ChannelFamily::poisson ? Constellation::ook() : Constellation::bpsk();
            const Channel channel(families[f], exp_decay_matrix(nr, K), snr_to_noise_variance(snr), constel);
            const MapDetector map(channel);
            std::size_t agree = 0, ties = 0;
            double worst = 0.0;
            for (std::size_t t = 0; t < config.trials; ++t) {
                auto rng = make_stream(seed, "oracle-map", {f, t});
                std::vector<std::size_t> s(K);
                std::uniform_int_distribution<std::size_t> pick(0, constel.size() - 1);
                for (auto& v : s) v = pick(rng);
                const Vector y = channel.transmit(s, rng);
                const auto got = map.detect(y);
                const auto ref = reference_map(y, channel);
                const double diff = (got.beliefs - ref.marginals).cwiseAbs().maxCoeff();
                worst = std::max(worst, diff);
                bool same = got.symbols == ref.symbols;
                // an exact likelihood tie may be resolved differently by log-domain arithmetic
                if (!same && ref.best_likelihood - ref.runner_up_likelihood <= 1e-12 * ref.best_likelihood) {
                    ++ties;
                    same = true;
                }
                agree += same;
            }
            const double rate = static_cast<double>(agree) / static_cast<double>(config.trials);
            report.checks.push_back({"map_vs_exhaustive_" + std::string(siclab::to_string(families[f])),
                                     rate == 1.0 && worst < 1e-9, rate, 1.0,
                                     "K=" + std::to_string(K) + ", max marginal diff " + num(worst) +
                                         ", exact ties " + std::to_string(ties)});
        }
    }

    // model-based blocks in the DeepSIC skeleton against iterative SIC
    {
        const auto dims = system_dims(config);
        const auto constel = Constellation::from_name(config.constellation);
        const Channel channel(ChannelFamily::linear_awgn, exp_decay_matrix(config.antennas, config.users),
                              snr_to_noise_variance(snr), constel);
        auto rng = make_stream(seed, "oracle-skeleton");
        const Dataset data = generate_dataset(channel, config.trials, rng);
        const auto skeleton = deepsic::run_skeleton(
            data.outputs, dims, deepsic::model_based_block(channel.matrix(), channel.noise_variance(), constel), true);
        std::vector<std::size_t> mismatches(data.size(), 0);
        std::vector<double> norm_err(data.size(), 0.0);
        parallel_for(data.size(), options.threads, [&](std::size_t j) {
            const auto col = static_cast<Eigen::Index>(j);
            const auto sic = iterative_sic(data.outputs.col(col), channel.matrix(), channel.noise_variance(), constel,
                                           SicOptions{config.iterations, true});
            for (std::size_t q = 0; q < config.iterations; ++q)
                for (std::size_t k = 0; k < config.users; ++k) {
                    const auto kk = static_cast<Eigen::Index>(k);
                    const Vector a = skeleton.trace[q][k].col(col);
                    const Vector b = sic.trace[q].row(kk).transpose();
                    for (Eigen::Index m = 0; m < a.size(); ++m) mismatches[j] += a[m] != b[m];
                    norm_err[j] = std::max(norm_err[j], std::abs(b.sum() - 1.0));
                    if (b.minCoeff() < 0.0) norm_err[j] = std::max(norm_err[j], -b.minCoeff());
                }
        });
        std::size_t total = 0;
        for (auto m : mismatches) total += m;
        report.checks.push_back({"skeleton_matches_iterative_sic", total == 0, static_cast<double>(total), 0.0,
                                 std::to_string(data.size()) + " outputs x " + std::to_string(config.iterations) +
                                     " iterations, bitwise"});

        // belief rows sum to one at every iteration, for SIC and a random DeepSIC
        std::vector<nn::Network> blocks;
        const auto layers = config.arch_seq.layers(dims);
        for (std::size_t i = 0; i < dims.users * dims.iterations; ++i) {
            auto r = make_stream(seed, "oracle-net", {i});
            blocks.push_back(nn::Network::glorot(layers, r));
        }
        const deepsic::DeepSicParams params(dims, config.arch_seq, config.constellation, seed, blocks);
        const auto learned = deepsic::run_skeleton(data.outputs, dims, deepsic::network_block(params), true);
        double worst = *std::max_element(norm_err.begin(), norm_err.end());
        for (const auto& level : learned.trace)
            for (const auto& user : level) {
                worst = std::max(worst, ((user.colwise().sum().array() - 1.0).abs()).maxCoeff());
                worst = std::max(worst, -std::min(0.0, user.minCoeff()));
            }
        report.checks.push_back({"belief_normalization", worst <= 1e-12, worst, 1e-12,
                                 "iterative SIC and DeepSIC, every iteration"});
    }

    // Reed-Solomon round trip with up to t symbol errors
    {
        std::size_t failures = 0;
        for (std::size_t t = 0; t < config.trials; ++t) {
            auto rng = make_stream(seed, "oracle-rs", {t});
            std::uniform_int_distribution<int> byte(0, 255), nonzero(1, 255);
            fec::Message msg{};
            for (auto& b : msg) b = static_cast<std::uint8_t>(byte(rng));
            fec::Codeword cw = fec::rs_encode(msg);
            const std::size_t errors = t % (fec::kRsT + 1);
            std::vector<std::size_t> positions(fec::kRsN);
            std::iota(positions.begin(), positions.end(), std::size_t{0});
            std::shuffle(positions.begin(), positions.end(), rng);
            for (std::size_t e = 0; e < errors; ++e)
                cw[positions[e]] = static_cast<std::uint8_t>(cw[positions[e]] ^ nonzero(rng));
            const auto r = fec::rs_decode(cw);
            failures += !(r.success && r.message == msg && r.corrected == errors);
        }
        report.checks.push_back({"reed_solomon_roundtrip", failures == 0, static_cast<double>(failures), 0.0,
                                 std::to_string(config.trials) + " trials, 0.." + std::to_string(fec::kRsT) +
                                     " symbol errors"});
    }
    report.wall_time_s = seconds_since(run_start);
    return report;
}

RunReport run(const ExperimentConfig& config, const RunOptions& options) {
    switch (config.kind) {
        case ExperimentKind::sweep_snr: return run_sweep_snr(config, options);
        case ExperimentKind::sweep_train_size: return run_sweep_train_size(config, options);
        case ExperimentKind::track: return run_track(config, options);
        case ExperimentKind::gradcheck: return run_gradcheck(config, options);
        case ExperimentKind::oracle_check: return run_oracle_check(config, options);
    }
    throw ContractViolation("unknown experiment kind");
}

std::string report_to_csv(const RunReport& report) {
    std::ostringstream out;
    const std::string hash = report.config.hash();
    switch (report.config.kind) {
        case ExperimentKind::sweep_snr:
        case ExperimentKind::sweep_train_size:
            out << "config_hash,detector,snr_db,n_train,errors,symbols,ser,std_error\n";
            for (const auto& r : report.rows)
                out << hash << ',' << r.detector << ',' << num(r.snr_db) << ',' << r.n_train << ',' << r.errors
                    << ',' << r.symbols << ',' << num(r.ser) << ',' << num(r.std_error) << '\n';
            break;
        case ExperimentKind::track: {
            bool header = true;
            for (const auto& trace : report.traces) {
                std::istringstream lines(fec::trace_to_csv(trace));
                std::string line;
                std::getline(lines, line);
                if (header) out << "config_hash,strategy," << line << '\n';
                header = false;
                while (std::getline(lines, line)) out << hash << ',' << trace.strategy << ',' << line << '\n';
            }
            if (header) out << "config_hash,strategy,block_index\n";
            break;
        }
        case ExperimentKind::gradcheck:
        case ExperimentKind::oracle_check:
            out << "config_hash,check,passed,value,threshold,detail\n";
            for (const auto& c : report.checks)
                out << hash << ',' << c.name << ',' << (c.passed ? "true" : "false") << ',' << num(c.value) << ','
                    << num(c.threshold) << ",\"" << c.detail << "\"\n";
            break;
    }
    return std::move(out).str();
}

nlohmann::json report_summary(const RunReport& report) {
    nlohmann::json j;
    j["name"] = report.config.name;
    j["experiment"] = std::string(to_string(report.config.kind));
    j["config_hash"] = report.config.hash();
    j["seed"] = report.config.master_seed();
    j["config"] = report.config.to_json();
    j["effective_n_test"] = report.config.effective_n_test();
    j["complete"] = report.complete();
    j["skipped"] = report.skipped;
    j["wall_time_s"] = report.wall_time_s;
    auto rows = nlohmann::json::array();
    std::size_t errors = 0, symbols = 0;
    for (const auto& r : report.rows) {
        rows.push_back({{"detector", r.detector},
                        {"snr_db", r.snr_db},
                        {"n_train", r.n_train},
                        {"errors", r.errors},
                        {"symbols", r.symbols},
                        {"ser", r.ser},
                        {"std_error", r.std_error},
                        {"wall_time_s", r.wall_time_s}});
        errors += r.errors;
        symbols += r.symbols;
    }
    j["rows"] = rows;
    auto traces = nlohmann::json::array();
    for (const auto& t : report.traces) {
        const std::size_t last = t.blocks.empty() ? 0 : t.blocks.back().block;
        std::size_t failures = 0;
        for (const auto& b : t.blocks)
            for (bool ok : b.decode_success) failures += !ok;
        traces.push_back({{"strategy", t.strategy},
                          {"blocks", t.blocks.size()},
                          {"mean_ber", t.mean_ber(0, last)},
                          {"mean_ber_from_block_10", t.mean_ber(10, last)},
                          {"decode_failures", failures}});
    }
    j["traces"] = traces;
    auto checks = nlohmann::json::array();
    for (const auto& c : report.checks)
        checks.push_back({{"check", c.name},
                          {"passed", c.passed},
                          {"value", c.value},
                          {"threshold", c.threshold},
                          {"detail", c.detail}});
    j["checks"] = checks;
    j["totals"] = {{"rows", report.rows.size()},
                   {"errors", errors},
                   {"symbols", symbols},
                   {"traces", report.traces.size()},
                   {"checks", report.checks.size()},
                   {"checks_passed", report.checks_passed()}};
    return j;
}

void write_report(const RunReport& report, const std::filesystem::path& dir) {
    detail::write_file(dir / (report.config.name + ".csv"), report_to_csv(report));
    detail::write_file(dir / (report.config.name + "_summary.json"), report_summary(report).dump(2) + "\n");
}

std::optional<double> snr_at_ser(const std::vector<double>& snr_db, const std::vector<double>& ser, double target) {
    require(snr_db.size() == ser.size(), "snr_at_ser: grid and curve differ in length");
    require(target > 0.0, "snr_at_ser: target must be positive");
    constexpr double kFloor = 1e-9;
    for (std::size_t i = 0; i + 1 < ser.size(); ++i) {
        if (ser[i] >= target && ser[i + 1] <= target) {
            const double a = std::log10(std::max(ser[i], kFloor));
            const double b = std::log10(std::max(ser[i + 1], kFloor));
            const double t = std::log10(target);
            if (a == b) return snr_db[i];
            return snr_db[i] + (a - t) / (a - b) * (snr_db[i + 1] - snr_db[i]);
        }
    }
    if (!ser.empty() && ser.front() == target) return snr_db.front();
    return std::nullopt;
}

}  // namespace siclab::harness
