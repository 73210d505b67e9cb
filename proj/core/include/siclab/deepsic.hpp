#pragma once

// DeepSIC: the soft interference cancellation skeleton with every
// cancellation + soft-detection step replaced by a small classifier, one per
// (iteration, user). Blocks see [y ; compressed beliefs of the other users],
// where each M-vector drops its last entry and users are taken in ascending
// order, skipping the block's own user.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "siclab/channels.hpp"
#include "siclab/common.hpp"
#include "siclab/detectors.hpp"
#include "siclab/nn.hpp"

namespace siclab::deepsic {

struct SystemDims {
    std::size_t users = 0;
    std::size_t antennas = 0;
    std::size_t constellation_size = 2;
    std::size_t iterations = 5;

    std::size_t block_input_dim() const {
        return antennas + (users - 1) * (constellation_size - 1);
    }
    void validate() const;

    friend bool operator==(const SystemDims&, const SystemDims&) = default;
};

struct Architecture {
    std::vector<nn::HiddenLayer> hidden;

    /// in x 100 sigmoid, 100 x 50 relu, 50 x M
    static Architecture sequential_default();
    /// in x 60 relu, 60 x M
    static Architecture end_to_end_default();

    std::vector<nn::LayerSpec> layers(const SystemDims& dims) const;

    friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct TrainingConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 0;  // 0 = full batch
    nn::AdamConfig adam{};

    static TrainingConfig sequential_default();  // 300 epochs, lr 1e-2
    static TrainingConfig end_to_end_default();  // 1000 epochs, lr 5e-3
    static TrainingConfig online_default();      // 50 epochs, lr 1e-2
};

class DeepSicParams {
public:
    DeepSicParams() = default;
    DeepSicParams(SystemDims dims, Architecture arch, std::string constellation,
                  std::uint64_t seed, std::vector<nn::Network> blocks);

    /// All blocks zero-initialised.
    static DeepSicParams zeros(const SystemDims& dims, const Architecture& arch,
                               std::string constellation);

    const SystemDims& dims() const { return dims_; }
    const Architecture& architecture() const { return arch_; }
    const std::string& constellation() const { return constellation_; }
    std::uint64_t seed() const { return seed_; }

    /// q and k are 0-based.
    nn::Network& block(std::size_t q, std::size_t k);
    const nn::Network& block(std::size_t q, std::size_t k) const;

    std::size_t block_parameter_count() const;
    std::size_t parameter_count() const;

    friend bool operator==(const DeepSicParams& a, const DeepSicParams& b);

private:
    SystemDims dims_;
    Architecture arch_;
    std::string constellation_;
    std::uint64_t seed_ = 0;
    std::vector<nn::Network> blocks_;  // q-major
};

/// Beliefs of a batch: one M x N matrix per user.
using BatchBeliefs = std::vector<Matrix>;

BatchBeliefs uniform_beliefs(const SystemDims& dims, std::size_t batch);

/// Stacks [Y ; compressed beliefs of users l != k].
Matrix block_inputs(const Eigen::Ref<const Matrix>& outputs, const BatchBeliefs& beliefs,
                    std::size_t k);

/// Rebuilds the K-1 full belief rows from the compressed tail of one block
/// input, in ascending user order skipping k.
std::vector<Vector> expand_beliefs(const Eigen::Ref<const Vector>& compressed, std::size_t users,
                                   std::size_t M);

/// A block maps (q, k, inputs) to an M x N matrix of beliefs.
using BlockFn = std::function<Matrix(std::size_t q, std::size_t k, const Matrix& inputs)>;

struct SkeletonResult {
    BatchBeliefs beliefs;
    std::vector<BatchBeliefs> trace;  // per iteration, when requested
};

SkeletonResult run_skeleton(const Eigen::Ref<const Matrix>& outputs, const SystemDims& dims,
                            const BlockFn& block, bool keep_trace = false);

/// Model-based cancellation + Gaussian soft estimate computed from the same
/// compressed block inputs a network would get. Plugging it into
/// run_skeleton reproduces iterative_sic.
BlockFn model_based_block(const Matrix& H, double noise_variance, const Constellation& constellation);

BlockFn network_block(const DeepSicParams& params);

/// Belief row of one block for a single channel output.
Vector block_infer(const nn::Network& net, const Eigen::Ref<const Vector>& y,
                   std::span<const Vector> other_beliefs);

DetectionResult deepsic_infer(const DeepSicParams& params, const Eigen::Ref<const Vector>& y);

struct BatchDetection {
    std::vector<std::size_t> symbols;  // row-major N x K
    BatchBeliefs beliefs;
};

BatchDetection infer_batch(const DeepSicParams& params, const Eigen::Ref<const Matrix>& outputs);
BatchDetection decide(const BatchBeliefs& beliefs);

struct TrainOptions {
    TrainingConfig config{};
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    /// Order in which users are trained within one iteration (default 0..K-1).
    std::vector<std::size_t> user_order;
};

DeepSicParams train_sequential(const Dataset& data, const SystemDims& dims, const Architecture& arch,
                               const std::string& constellation, const TrainOptions& options);

DeepSicParams train_end_to_end(const Dataset& data, const SystemDims& dims, const Architecture& arch,
                               const std::string& constellation, const TrainOptions& options);

struct EndToEndEvaluation {
    double loss = 0.0;                    // sum over users of mean base-2 cross-entropy
    std::vector<nn::Gradients> gradients; // q-major, one per block
};

/// Loss of the final-iteration beliefs over the whole set and its exact
/// gradient with respect to every block, through the belief links.
EndToEndEvaluation end_to_end_gradients(const DeepSicParams& params, const Dataset& data);

/// Warm-started sequential pass over fresh data. When `update_users` is
/// non-empty only blocks of users flagged true are updated; all blocks still
/// produce the beliefs fed forward. An empty dataset leaves params unchanged.
void retrain_online(DeepSicParams& params, const Dataset& fresh, const TrainOptions& options,
                    std::span<const bool> update_users = {});

/// Directory with manifest.json plus block_q<q>_k<k>.sicnn (1-based).
void save(const DeepSicParams& params, const std::filesystem::path& dir);
DeepSicParams load(const std::filesystem::path& dir);

}  // namespace siclab::deepsic
