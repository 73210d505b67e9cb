#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "siclab/detectors.hpp"
#include "siclab/harness.hpp"

using namespace siclab;
using namespace siclab::harness;
using nlohmann::json;

namespace {

json tiny_sweep() {
    return json::parse(R"({
        "name": "tiny", "experiment": "sweep-snr", "channel": "linear_awgn",
        "users": 3, "antennas": 3, "snr_db": [4, 8], "n_train": 200, "n_test": 600,
        "shard_size": 150, "detectors": ["map", "sic", "deepsic_seq", "deepsic_e2e"],
        "arch": {"seq": [{"width": 6, "activation": "sigmoid"}], "e2e": [{"width": 6, "activation": "relu"}]},
        "training": {"seq": {"epochs": 3, "batch_size": 50}, "e2e": {"epochs": 3, "batch_size": 50}},
        "seed": 11
    })");
}

}  // namespace

TEST_CASE("experiment kind names") {
    for (auto k : {ExperimentKind::sweep_snr, ExperimentKind::sweep_train_size, ExperimentKind::track,
                   ExperimentKind::gradcheck, ExperimentKind::oracle_check})
        CHECK(experiment_kind_from_string(to_string(k)) == k);
    CHECK(to_string(ExperimentKind::sweep_snr) == "sweep-snr");
    CHECK_THROWS(experiment_kind_from_string("sweep"));
}

TEST_CASE("config parsing and validation") {
    const auto c = ExperimentConfig::from_json(tiny_sweep());
    CHECK_NOTHROW(c.validate());
    CHECK(c.users == 3);
    CHECK(c.train_seq.epochs == 3);
    CHECK(c.train_seq.adam.learning_rate == 1e-2);
    CHECK(c.arch_seq.hidden.size() == 1);
    CHECK(c.master_seed() == 11);

    auto j = tiny_sweep();
    j["colour"] = "blue";
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), FormatError);

    j = tiny_sweep();
    j.erase("seed");
    CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ContractViolation);

    j = tiny_sweep();
    j["snr_db"] = json::array();
    CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ContractViolation);

    j = tiny_sweep();
    j["n_test"] = 0;
    CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ContractViolation);

    j = tiny_sweep();
    j["detectors"] = {"map", "oracle"};
    CHECK_THROWS_AS(ExperimentConfig::from_json(j).validate(), ContractViolation);

    j = tiny_sweep();
    j["users"] = "six";
    CHECK_THROWS_AS(ExperimentConfig::from_json(j), FormatError);
}

TEST_CASE("canonical form and hash") {
    const auto c = ExperimentConfig::from_json(tiny_sweep());
    const auto again = ExperimentConfig::from_json(c.to_json());
    CHECK(again.to_json() == c.to_json());
    CHECK(again.hash() == c.hash());
    CHECK(c.hash().size() == 16);
    auto j = tiny_sweep();
    j["n_test"] = 601;
    CHECK(ExperimentConfig::from_json(j).hash() != c.hash());

    const auto path = std::filesystem::temp_directory_path() / "siclab_cfg.json";
    std::ofstream(path) << tiny_sweep().dump(2);
    CHECK(ExperimentConfig::from_file(path).hash() == c.hash());
    std::ofstream(path) << "{ not json";
    CHECK_THROWS_AS(ExperimentConfig::from_file(path), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("every shipped configuration validates") {
    int seen = 0;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(SICLAB_CONFIG_ROOT)) {
        if (entry.path().extension() != ".json") continue;
        CAPTURE(entry.path().string());
        CHECK_NOTHROW(ExperimentConfig::from_file(entry.path().string()));
        ++seen;
    }
    CHECK(seen >= 10);
}

TEST_CASE("large systems are capped unless allowed") {
    auto j = tiny_sweep();
    j["users"] = 32;
    j["antennas"] = 32;
    j["n_test"] = 20000;
    j["detectors"] = {"sic"};
    CHECK(ExperimentConfig::from_json(j).effective_n_test() == 2000);
    j["allow_large_test"] = true;
    CHECK(ExperimentConfig::from_json(j).effective_n_test() == 20000);
}

TEST_CASE("result rows carry the binomial standard error") {
    const auto r = make_row("map", 10.0, 5000, 25, 10000, 0.5);
    CHECK(r.ser == 0.0025);
    CHECK(r.std_error == doctest::Approx(std::sqrt(0.0025 * 0.9975 / 10000)));
    CHECK_THROWS_AS(make_row("map", 10.0, 5000, 2, 1, 0.0), ContractViolation);
}

TEST_CASE("snr at target ser") {
    const std::vector<double> snr{6, 8, 10, 12};
    const std::vector<double> ser{1e-1, 1e-2, 1e-3, 1e-4};
    CHECK(*snr_at_ser(snr, ser, 1e-3) == doctest::Approx(10.0));
    CHECK(*snr_at_ser(snr, ser, std::pow(10.0, -2.5)) == doctest::Approx(9.0));
    CHECK(!snr_at_ser(snr, ser, 1e-6));
    const std::vector<double> with_zero{1e-1, 1e-2, 0.0, 0.0};
    CHECK(snr_at_ser(snr, with_zero, 1e-3).has_value());
}

TEST_CASE("reference MAP agrees with the library MAP") {
    Rng rng(3);
    const Channel ch(ChannelFamily::quantized_gaussian, exp_decay_matrix(3, 3), 0.4, Constellation::bpsk());
    const MapDetector det(ch);
    for (int t = 0; t < 100; ++t) {
        const std::vector<std::size_t> s{rng() & 1U, rng() & 1U, rng() & 1U};
        const Vector y = ch.transmit(s, rng);
        const auto ref = reference_map(y, ch);
        const auto got = det.detect(y);
        if (ref.runner_up_likelihood < ref.best_likelihood) CHECK(got.symbols == ref.symbols);
        CHECK((got.beliefs - ref.marginals).cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("sweep output is identical across thread counts and repeated runs") {
    const auto c = ExperimentConfig::from_json(tiny_sweep());
    const auto one = run(c, {1});
    const auto two = run(c, {2});
    const auto again = run(c, {1});
    CHECK(one.complete());
    CHECK(one.rows.size() == 8);
    const std::string csv = report_to_csv(one);
    CHECK(csv == report_to_csv(two));
    CHECK(csv == report_to_csv(again));
    CHECK(csv.rfind("config_hash,detector,snr_db,n_train,errors,symbols,ser,std_error\n", 0) == 0);
    CHECK(csv.find(c.hash()) != std::string::npos);
    for (const auto& r : one.rows) {
        CHECK(r.symbols == 600 * 3);
        CHECK(r.ser >= 0.0);
        CHECK(r.ser <= 1.0);
    }
    const auto summary = report_summary(one);
    CHECK(summary["config_hash"] == c.hash());

    const auto dir = std::filesystem::temp_directory_path() / "siclab_report";
    std::filesystem::remove_all(dir);
    write_report(one, dir);
    CHECK(std::filesystem::exists(dir / "tiny.csv"));
    CHECK(std::filesystem::exists(dir / "tiny_summary.json"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("infeasible MAP rows are skipped, not fatal") {
    auto j = tiny_sweep();
    j["users"] = 25;
    j["antennas"] = 25;
    j["n_test"] = 20;
    j["shard_size"] = 20;
    j["snr_db"] = {10};
    j["detectors"] = {"map", "sic"};
    const auto report = run(ExperimentConfig::from_json(j));
    CHECK(!report.complete());
    CHECK(report.rows.size() == 1);
    CHECK(report.rows[0].detector == "sic");
}
