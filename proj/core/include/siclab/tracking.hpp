#pragma once

// Coded block transmission over a block-fading channel and self-supervised
// DeepSIC retraining from successfully decoded codewords.
//
// Every user sends one RS codeword per block; all users are block aligned, so
// block b occupies 2040 channel uses with one BPSK/OOK symbol per user per use.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "siclab/channels.hpp"
#include "siclab/deepsic.hpp"
#include "siclab/reed_solomon.hpp"

namespace siclab::fec {

inline constexpr std::size_t kCodewordBits = kRsN * 8;  // 2040
inline constexpr std::size_t kMessageBits = kRsK * 8;   // 1912

/// MSB first within each byte.
std::vector<std::uint8_t> bytes_to_bits(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> bits_to_bytes(std::span<const std::uint8_t> bits);

/// Bit b maps to symbol index b (BPSK: 0 -> -1, 1 -> +1; OOK: 0 -> 0, 1 -> 1).
std::vector<std::size_t> modulate_bits(std::span<const std::uint8_t> bits, const Constellation& constellation);
std::vector<std::uint8_t> demodulate(std::span<const std::size_t> symbols);

struct BlockTransmission {
    std::size_t block = 0;
    Matrix H;
    std::vector<Message> messages;    // per user
    std::vector<Codeword> codewords;  // per user
    Dataset data;                     // 2040 uses, true symbols + outputs
};

/// Draws K random messages, encodes, modulates and sends them through
/// `channel` (whose matrix is the block's H). Deterministic in (seed, block).
BlockTransmission transmit_block(const Channel& channel, std::size_t block, std::uint64_t seed);

struct BlockOutcome {
    std::size_t block = 0;
    double drift = 0.0;
    std::vector<double> ber;            // coded BER per user over message bits
    std::vector<bool> decode_success;   // per user
    std::vector<Codeword> reencoded;    // per user, valid where decode succeeded
    bool retrained = false;
};

/// Hard symbols (row-major N x K) -> per-user RS decoding and BER.
BlockOutcome decode_block(const BlockTransmission& tx, std::span<const std::size_t> hard_symbols,
                          const Constellation& constellation);

/// Training pairs rebuilt from a decoded block: users whose decode succeeded
/// contribute their re-encoded symbols, the others their hard decisions.
Dataset self_labeled_dataset(const BlockTransmission& tx, const BlockOutcome& outcome,
                             std::span<const std::size_t> hard_symbols, const Constellation& constellation);

struct TrackTrace {
    std::string strategy;
    std::vector<BlockOutcome> blocks;

    /// Mean BER over all users of blocks with index in [first, last].
    double mean_ber(std::size_t first, std::size_t last) const;
};

struct TrackSetup {
    Channel channel;  // family, noise variance, constellation; matrix replaced per block
    TimeVaryingSpec variation;
    std::size_t blocks = 50;  // blocks 1..blocks are transmitted
    std::uint64_t seed = 0;
};

/// DeepSIC over blocks 1..N, retraining after every block when `retrain`.
TrackTrace track_online(deepsic::DeepSicParams params, const TrackSetup& setup, bool retrain,
                        const deepsic::TrainOptions& online, std::string strategy = "deepsic_online");

/// Any hard detector over the same blocks: detect(H_b, outputs) -> N x K symbols.
using BlockDetector = std::function<std::vector<std::size_t>(const Matrix& H_b, const Matrix& outputs)>;
TrackTrace track_with(const BlockDetector& detect, const TrackSetup& setup, std::string strategy);

/// block_index,frobenius_drift,ber_user_1..K,decode_success_1..K,retrained
std::string trace_to_csv(const TrackTrace& trace);

}  // namespace siclab::fec
