#include <benchmark/benchmark.h>

#include <vector>

#include "siclab/deepsic.hpp"
#include "siclab/detectors.hpp"
#include "siclab/reed_solomon.hpp"

using namespace siclab;

namespace {

Channel awgn(std::size_t n, double snr_db) {
    return Channel(ChannelFamily::linear_awgn, exp_decay_matrix(n, n), snr_to_noise_variance(snr_db),
                   Constellation::bpsk());
}

void BM_ForwardBackward(benchmark::State& state) {
    const auto batch = static_cast<Eigen::Index>(state.range(0));
    Rng rng(1);
    const auto layers = deepsic::Architecture::sequential_default().layers({6, 6, 2, 5});
    const auto net = nn::Network::glorot(layers, rng);
    const Matrix x = Matrix::Random(11, batch);
    std::vector<std::size_t> labels(static_cast<std::size_t>(batch));
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 2;
    for (auto _ : state) {
        const auto cache = nn::forward(net, x);
        benchmark::DoNotOptimize(nn::backward(net, cache, labels));
    }
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ForwardBackward)->Arg(250)->Arg(5000);

void BM_IterativeSic(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto ch = awgn(n, 10.0);
    Rng rng(2);
    std::vector<std::size_t> s(n, 1);
    const Vector y = ch.transmit(s, rng);
    for (auto _ : state) benchmark::DoNotOptimize(iterative_sic(y, ch.matrix(), ch.noise_variance(), ch.constellation()));
}
BENCHMARK(BM_IterativeSic)->Arg(6)->Arg(32);

void BM_Map(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto ch = awgn(n, 10.0);
    const MapDetector det(ch);
    Rng rng(3);
    std::vector<std::size_t> s(n, 0);
    const Vector y = ch.transmit(s, rng);
    for (auto _ : state) benchmark::DoNotOptimize(det.detect(y));
}
BENCHMARK(BM_Map)->Arg(4)->Arg(6)->Arg(10);

void BM_DeepSicInference(benchmark::State& state) {
    const deepsic::SystemDims dims{6, 6, 2, 5};
    Rng rng(4);
    std::vector<nn::Network> blocks;
    const auto arch = deepsic::Architecture::sequential_default();
    for (std::size_t i = 0; i < 30; ++i) blocks.push_back(nn::Network::glorot(arch.layers(dims), rng));
    const deepsic::DeepSicParams params(dims, arch, "bpsk", 0, blocks);
    const Matrix y = Matrix::Random(6, 1000);
    for (auto _ : state) benchmark::DoNotOptimize(deepsic::infer_batch(params, y));
    state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_DeepSicInference);

void BM_RsDecode(benchmark::State& state) {
    fec::Message m{};
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<std::uint8_t>(i * 7);
    auto cw = fec::rs_encode(m);
    for (std::int64_t e = 0; e < state.range(0); ++e) cw[static_cast<std::size_t>(e * 31)] ^= 0x5A;
    for (auto _ : state) benchmark::DoNotOptimize(fec::rs_decode(cw));
}
BENCHMARK(BM_RsDecode)->Arg(0)->Arg(8);

}  // namespace

BENCHMARK_MAIN();
