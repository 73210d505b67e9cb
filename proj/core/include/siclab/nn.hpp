#pragma once

// Small dense feed-forward classifiers with a softmax head, trained by
// base-2 cross entropy and ADAM. Samples are stored column-wise: a batch of
// B inputs is an (input_dim x B) matrix.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "siclab/common.hpp"

namespace siclab::nn {

enum class Activation : std::uint8_t { none = 0, relu = 1, sigmoid = 2 };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view name);

struct LayerSpec {
    std::size_t input_dim = 0;
    std::size_t output_dim = 0;
    Activation activation = Activation::none;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Checks dims >= 1 and that consecutive layers chain.
void validate(std::span<const LayerSpec> spec);

/// Hidden layer description used to build a stack for given in/out sizes.
struct HiddenLayer {
    std::size_t width = 0;
    Activation activation = Activation::relu;

    friend bool operator==(const HiddenLayer&, const HiddenLayer&) = default;
};

/// in -> hidden... -> out, where the last layer has no activation (it feeds
/// the softmax head).
std::vector<LayerSpec> make_stack(std::size_t input_dim, std::span<const HiddenLayer> hidden,
                                  std::size_t output_dim);

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
    Activation activation = Activation::none;
};

/// Weights and biases of one classifier.
class Network {
public:
    Network() = default;

    static Network zeros(std::span<const LayerSpec> spec);
    /// Uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
    static Network glorot(std::span<const LayerSpec> spec, Rng& rng);

    std::vector<LayerSpec> spec() const;
    std::size_t input_dim() const;
    std::size_t output_dim() const;
    std::size_t parameter_count() const;
    bool all_finite() const;

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    friend bool operator==(const Network& a, const Network& b);

private:
    std::vector<DenseLayer> layers_;
};

/// Parameter-shaped container, used for gradients and ADAM moments.
struct Gradients {
    std::vector<Matrix> weight;
    std::vector<Vector> bias;

    static Gradients zeros_like(const Network& net);
    Gradients& operator+=(const Gradients& other);
    Gradients& operator*=(double s);
    bool all_finite() const;
};

/// Activation trace of a forward pass, sufficient for backward.
struct ForwardCache {
    std::vector<Matrix> inputs;       // input to each layer
    std::vector<Matrix> preactivations;
    Matrix probabilities;             // M x B softmax output
};

ForwardCache forward(const Network& net, const Eigen::Ref<const Matrix>& inputs);

/// Softmax output for a single input vector.
Vector predict(const Network& net, std::span<const double> input);
Matrix predict(const Network& net, const Eigen::Ref<const Matrix>& inputs);

/// Max-subtracted softmax, applied column-wise.
Matrix softmax(const Eigen::Ref<const Matrix>& logits);

inline constexpr double kLogFloor = 1e-12;

/// -log2(max(p[label], 1e-12)).
double cross_entropy(std::span<const double> probabilities, std::size_t label);
/// Mean of cross_entropy over the columns of a probability matrix.
double mean_cross_entropy(const Eigen::Ref<const Matrix>& probabilities,
                          std::span<const std::size_t> labels);

/// Gradient of the mean cross entropy over the cached batch.
Gradients backward(const Network& net, const ForwardCache& cache,
                   std::span<const std::size_t> labels);

/// Backpropagates an arbitrary upstream gradient with respect to the logits
/// (M x B). Gradients are summed over the batch. When input_grad is non-null
/// it receives dL/d(inputs), (input_dim x B).
Gradients backward_logits(const Network& net, const ForwardCache& cache,
                          const Eigen::Ref<const Matrix>& logit_grad, Matrix* input_grad = nullptr);

/// Maps dL/dp to dL/dlogits through the softmax Jacobian, column-wise.
Matrix softmax_backward(const Eigen::Ref<const Matrix>& probabilities,
                        const Eigen::Ref<const Matrix>& prob_grad);

struct AdamConfig {
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::uint64_t step = 0;
    Gradients first_moment;
    Gradients second_moment;

    static AdamState for_network(const Network& net, AdamConfig config = {});
};

/// Bias-corrected ADAM update. Throws TrainingDivergence naming the first
/// layer whose gradient is not finite; parameters are left untouched then.
void adam_step(Network& net, const Gradients& grads, AdamState& state);

// Binary model format: "SICNN1", u32 layer count, then per layer
// u32 in, u32 out, u8 activation, row-major f64 weights, f64 biases.
// All integers and floats little-endian.
std::string serialize(const Network& net);
Network deserialize(std::string_view bytes);

void save(const Network& net, const std::filesystem::path& path);
Network load(const std::filesystem::path& path);

}  // namespace siclab::nn
