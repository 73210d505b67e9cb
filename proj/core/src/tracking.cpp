#include "siclab/tracking.hpp"

#include <sstream>

namespace siclab::fec {

std::vector<std::uint8_t> bytes_to_bits(std::span<const std::uint8_t> bytes) {
    std::vector<std::uint8_t> bits;
    bits.reserve(bytes.size() * 8);
    for (auto byte : bytes)
        for (int i = 7; i >= 0; --i) bits.push_back(static_cast<std::uint8_t>((byte >> i) & 1U));
    return bits;
}

std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits) {
    require(bits.size() % 8 == 0, "bit count must be a multiple of 8");
    std::vector<std::uint8_t> bytes(bits.size() / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        require(bits[i] <= 1, "bits must be 0 or 1");
        bytes[i / 8] = static_cast<std::uint8_t>(bytes[i / 8] | (bits[i] << (7 - i % 8)));
    }
    return bytes;
}

std::vector<std::size_t> modulate_bits(std::span<const std::uint8_t> bits, const Constellation& constellation) {
    require(constellation.size() == 2, "modulate_bits: one bit per symbol needs a binary constellation");
    std::vector<std::size_t> out(bits.size());
    for (std::size_t i = 0; i < bits.size(); ++i) {
        require(bits[i] <= 1, "bits must be 0 or 1");
        out[i] = bits[i];
    }
    return out;
}

std::vector<std::uint8_t> demodulate(std::span<const std::size_t> symbols) {
    std::vector<std::uint8_t> bits(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        require(symbols[i] <= 1, "demodulate: symbol index out of range");
        bits[i] = static_cast<std::uint8_t>(symbols[i]);
    }
    return bits;
}

BlockTransmission transmit_block(const Channel& channel, std::size_t block, std::uint64_t seed) {
    const std::size_t K = channel.users();
    BlockTransmission tx;
    tx.block = block;
    tx.H = channel.matrix();
    tx.data.users = K;
    tx.data.symbols.resize(kCodewordBits * K);
    for (std::size_t k = 0; k < K; ++k) {
        auto rng = make_stream(seed, "track-message", {block, k});
        std::uniform_int_distribution<int> byte(0, 255);
        Message msg{};
        for (auto& b : msg) b = static_cast<std::uint8_t>(byte(rng));
        const Codeword cw = rs_encode(msg);
        const auto symbols = modulate_bits(bytes_to_bits(cw), channel.constellation());
        for (std::size_t i = 0; i < kCodewordBits; ++i) tx.data.symbols[i * K + k] = symbols[i];
        tx.messages.push_back(msg);
        tx.codewords.push_back(cw);
    }
    auto noise = make_stream(seed, "track-noise", {block});
    tx.data.outputs.resize(static_cast<Eigen::Index>(channel.antennas()),
                           static_cast<Eigen::Index>(kCodewordBits));
    for (std::size_t i = 0; i < kCodewordBits; ++i)
        tx.data.outputs.col(static_cast<Eigen::Index>(i)) = channel.transmit(tx.data.row(i), noise);
    return tx;
}

BlockOutcome decode_block(const BlockTransmission& tx, std::span<const std::size_t> hard_symbols,
                          const Constellation& constellation) {
    const std::size_t K = tx.data.users;
    require(hard_symbols.size() == kCodewordBits * K, "decode_block: expected 2040 x K hard symbols");
    (void)constellation;
    BlockOutcome out;
    out.block = tx.block;
    std::vector<std::size_t> user_symbols(kCodewordBits);
    for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < kCodewordBits; ++i) user_symbols[i] = hard_symbols[i * K + k];
        const auto bytes = bits_to_bytes(demodulate(user_symbols));
        const auto result = rs_decode(bytes);
        const auto decoded_bits = bytes_to_bits(result.message);
        const auto true_bits = bytes_to_bits(tx.messages[k]);
        std::size_t errors = 0;
        for (std::size_t i = 0; i < kMessageBits; ++i) errors += decoded_bits[i] != true_bits[i];
        out.ber.push_back(static_cast<double>(errors) / static_cast<double>(kMessageBits));
        out.decode_success.push_back(result.success);
        out.reencoded.push_back(result.success ? rs_encode(result.message) : Codeword{});
    }
    return out;
}

Dataset self_labeled_dataset(const BlockTransmission& tx, const BlockOutcome& outcome,
                             std::span<const std::size_t> hard_symbols, const Constellation& constellation) {
    const std::size_t K = tx.data.users;
    Dataset data;
    data.users = K;
    data.outputs = tx.data.outputs;
    data.symbols.assign(hard_symbols.begin(), hard_symbols.end());
    for (std::size_t k = 0; k < K; ++k) {
        if (!outcome.decode_success[k]) continue;
        const auto symbols = modulate_bits(bytes_to_bits(outcome.reencoded[k]), constellation);
        for (std::size_t i = 0; i < kCodewordBits; ++i) data.symbols[i * K + k] = symbols[i];
    }
    return data;
}

double TrackTrace::mean_ber(std::size_t first, std::size_t last) const {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& b : blocks) {
        if (b.block < first || b.block > last) continue;
        for (double v : b.ber) {
            total += v;
            ++count;
        }
    }
    return count ? total / static_cast<double>(count) : 0.0;
}

TrackTrace track_online(deepsic::DeepSicParams params, const TrackSetup& setup, bool retrain,
                        const deepsic::TrainOptions& online, std::string strategy) {
    TrackTrace trace{std::move(strategy), {}};
    const auto& constellation = setup.channel.constellation();
    for (std::size_t b = 1; b <= setup.blocks; ++b) {
        const Channel channel = setup.channel.with_matrix(time_varying_matrix(setup.variation, b));
        const auto tx = transmit_block(channel, b, setup.seed);
        const auto detection = deepsic::infer_batch(params, tx.data.outputs);
        BlockOutcome outcome = decode_block(tx, detection.symbols, constellation);
        outcome.drift = drift(setup.variation, b);
        if (retrain) {
            std::vector<bool> mask_vec(outcome.decode_success);
            if (std::any_of(mask_vec.begin(), mask_vec.end(), [](bool v) { return v; })) {
                const Dataset fresh = self_labeled_dataset(tx, outcome, detection.symbols, constellation);
                std::unique_ptr<bool[]> mask(new bool[mask_vec.size()]);
                for (std::size_t k = 0; k < mask_vec.size(); ++k) mask[k] = mask_vec[k];
                deepsic::TrainOptions opts = online;
                opts.seed = stream_seed(online.seed, "track-retrain", {b});
                deepsic::retrain_online(params, fresh, opts, std::span<const bool>(mask.get(), mask_vec.size()));
                outcome.retrained = true;
            }
        }
        trace.blocks.push_back(std::move(outcome));
    }
    return trace;
}

TrackTrace track_with(const BlockDetector& detect, const TrackSetup& setup, std::string strategy) {
    TrackTrace trace{std::move(strategy), {}};
    for (std::size_t b = 1; b <= setup.blocks; ++b) {
        const Matrix H = time_varying_matrix(setup.variation, b);
        const Channel channel = setup.channel.with_matrix(H);
        const auto tx = transmit_block(channel, b, setup.seed);
        const auto symbols = detect(H, tx.data.outputs);
        BlockOutcome outcome = decode_block(tx, symbols, setup.channel.constellation());
        outcome.drift = drift(setup.variation, b);
        trace.blocks.push_back(std::move(outcome));
    }
    return trace;
}

std::string trace_to_csv(const TrackTrace& trace) {
    std::ostringstream out;
    out.precision(10);
    const std::size_t K = trace.blocks.empty() ? 0 : trace.blocks.front().ber.size();
    out << "block_index,frobenius_drift";
    for (std::size_t k = 0; k < K; ++k) out << ",ber_user_" << k + 1;
    for (std::size_t k = 0; k < K; ++k) out << ",decode_success_" << k + 1;
    out << ",retrained\n";
    for (const auto& b : trace.blocks) {
        out << b.block << ',' << b.drift;
        for (double v : b.ber) out << ',' << v;
        for (bool s : b.decode_success) out << ',' << (s ? 1 : 0);
        out << ',' << (b.retrained ? "true" : "false") << '\n';
    }
    return std::move(out).str();
}

}  // namespace siclab::fec
