#include "siclab/nn.hpp"

#include <cmath>
#include <numbers>

#include "binary_io.hpp"

namespace siclab::nn {

namespace {

constexpr std::string_view kModelMagic = "SICNN1";

void apply_activation(Activation a, Matrix& m) {
    switch (a) {
    case Activation::none: break;
    case Activation::relu: m = m.cwiseMax(0.0); break;
    case Activation::sigmoid: m = (1.0 + (-m.array()).exp()).inverse().matrix(); break;
    }
}

// In-place: grad *= act'(z), given z and the activated output.
void activation_backward(Activation a, const Matrix& z, const Matrix& out, Matrix& grad) {
    switch (a) {
    case Activation::none: break;
    case Activation::relu: grad = (z.array() > 0.0).select(grad, 0.0); break;
    case Activation::sigmoid: grad.array() *= out.array() * (1.0 - out.array()); break;
    }
}

void check_cache(const Network& net, const ForwardCache& cache) {
    const auto& layers = net.layers();
    require(cache.inputs.size() == layers.size() && cache.preactivations.size() == layers.size(),
            "backward: cache layer count does not match network");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        require(cache.inputs[l].rows() == layers[l].weight.cols() &&
                    cache.preactivations[l].rows() == layers[l].weight.rows(),
                "backward: cache shapes do not match layer " + std::to_string(l));
    }
    require(cache.probabilities.rows() == layers.back().weight.rows(),
            "backward: cache output width does not match network");
}

}  // namespace

std::string_view to_string(Activation a) {
    switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    }
    return "?";
}

Activation activation_from_string(std::string_view name) {
    if (name == "none") return Activation::none;
    if (name == "relu") return Activation::relu;
    if (name == "sigmoid") return Activation::sigmoid;
    throw ContractViolation("unknown activation '" + std::string(name) + "'");
}

void validate(std::span<const LayerSpec> spec) {
    require(!spec.empty(), "network needs at least one layer");
    for (std::size_t i = 0; i < spec.size(); ++i) {
        require(spec[i].input_dim >= 1 && spec[i].output_dim >= 1,
                "layer " + std::to_string(i) + " has a zero dimension");
        if (i > 0)
            require(spec[i - 1].output_dim == spec[i].input_dim,
                    "layer " + std::to_string(i) + " does not chain with its predecessor");
    }
}

std::vector<LayerSpec> make_stack(std::size_t input_dim, std::span<const HiddenLayer> hidden,
                                  std::size_t output_dim) {
    std::vector<LayerSpec> spec;
    std::size_t in = input_dim;
    for (const auto& h : hidden) {
        spec.push_back({in, h.width, h.activation});
        in = h.width;
    }
    spec.push_back({in, output_dim, Activation::none});
    validate(spec);
    return spec;
}

Network Network::zeros(std::span<const LayerSpec> spec) {
    validate(spec);
    Network net;
    for (const auto& s : spec) {
        const auto rows = static_cast<Eigen::Index>(s.output_dim);
        const auto cols = static_cast<Eigen::Index>(s.input_dim);
        net.layers_.push_back({Matrix::Zero(rows, cols), Vector::Zero(rows), s.activation});
    }
    return net;
}

Network Network::glorot(std::span<const LayerSpec> spec, Rng& rng) {
    Network net = zeros(spec);
    for (auto& layer : net.layers_) {
        const double limit =
            std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
        std::uniform_real_distribution<double> dist(-limit, limit);
        // row-major fill so the draw order matches the file layout
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = dist(rng);
    }
    return net;
}

std::vector<LayerSpec> Network::spec() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_)
        out.push_back({static_cast<std::size_t>(l.weight.cols()),
                       static_cast<std::size_t>(l.weight.rows()), l.activation});
    return out;
}

std::size_t Network::input_dim() const {
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.cols());
}

std::size_t Network::output_dim() const {
    return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.rows());
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

bool Network::all_finite() const {
    for (const auto& l : layers_)
        if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
}

bool operator==(const Network& a, const Network& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t i = 0; i < a.layers_.size(); ++i) {
        const auto& x = a.layers_[i];
        const auto& y = b.layers_[i];
        if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
            x.weight.cols() != y.weight.cols() || x.weight != y.weight || x.bias != y.bias)
            return false;
    }
    return true;
}

Gradients Gradients::zeros_like(const Network& net) {
    Gradients g;
    for (const auto& l : net.layers()) {
        g.weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
        g.bias.push_back(Vector::Zero(l.bias.size()));
    }
    return g;
}

Gradients& Gradients::operator+=(const Gradients& other) {
    require(weight.size() == other.weight.size(), "gradient shape mismatch");
    for (std::size_t i = 0; i < weight.size(); ++i) {
        weight[i] += other.weight[i];
        bias[i] += other.bias[i];
    }
    return *this;
}

Gradients& Gradients::operator*=(double s) {
    for (auto& w : weight) w *= s;
    for (auto& b : bias) b *= s;
    return *this;
}

bool Gradients::all_finite() const {
    for (std::size_t i = 0; i < weight.size(); ++i)
        if (!weight[i].allFinite() || !bias[i].allFinite()) return false;
    return true;
}

Matrix softmax(const Eigen::Ref<const Matrix>& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const double mx = logits.col(c).maxCoeff();
        p.col(c) = (logits.col(c).array() - mx).exp().max(1e-300).matrix();
        p.col(c) /= p.col(c).sum();
    }
    return p;
}

ForwardCache forward(const Network& net, const Eigen::Ref<const Matrix>& inputs) {
    const auto& layers = net.layers();
    require(!layers.empty(), "forward: empty network");
    require(inputs.rows() == layers.front().weight.cols(),
            "forward: input length " + std::to_string(inputs.rows()) + " != network input dim " +
                std::to_string(layers.front().weight.cols()));
    ForwardCache cache;
    cache.inputs.reserve(layers.size());
    cache.preactivations.reserve(layers.size());
    Matrix a = inputs;
    for (const auto& layer : layers) {
        Matrix z = layer.weight * a;
        z.colwise() += layer.bias;
        cache.inputs.push_back(std::move(a));
        a = z;
        apply_activation(layer.activation, a);
        cache.preactivations.push_back(std::move(z));
    }
    cache.probabilities = softmax(a);
    return cache;
}

Vector predict(const Network& net, std::span<const double> input) {
    Eigen::Map<const Vector> x(input.data(), static_cast<Eigen::Index>(input.size()));
    return forward(net, x).probabilities.col(0);
}

Matrix predict(const Network& net, const Eigen::Ref<const Matrix>& inputs) {
    return forward(net, inputs).probabilities;
}

double cross_entropy(std::span<const double> probabilities, std::size_t label) {
    require(label < probabilities.size(), "cross_entropy: label out of range");
    return -std::log2(std::max(probabilities[label], kLogFloor));
}

double mean_cross_entropy(const Eigen::Ref<const Matrix>& probabilities,
                          std::span<const std::size_t> labels) {
    require(static_cast<std::size_t>(probabilities.cols()) == labels.size(),
            "mean_cross_entropy: label count mismatch");
    if (labels.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        require(labels[j] < static_cast<std::size_t>(probabilities.rows()),
                "mean_cross_entropy: label out of range");
        total -= std::log2(std::max(probabilities(static_cast<Eigen::Index>(labels[j]), c), kLogFloor));
    }
    return total / static_cast<double>(labels.size());
}

Matrix softmax_backward(const Eigen::Ref<const Matrix>& probabilities,
                        const Eigen::Ref<const Matrix>& prob_grad) {
    const Eigen::RowVectorXd dot = (probabilities.array() * prob_grad.array()).colwise().sum();
    Matrix out = prob_grad;
    out.rowwise() -= dot;
    return (out.array() * probabilities.array()).matrix();
}

Gradients backward_logits(const Network& net, const ForwardCache& cache,
                          const Eigen::Ref<const Matrix>& logit_grad, Matrix* input_grad) {
    check_cache(net, cache);
    require(logit_grad.rows() == cache.probabilities.rows() &&
                logit_grad.cols() == cache.probabilities.cols(),
            "backward: upstream gradient shape mismatch");
    const auto& layers = net.layers();
    Gradients g;
    g.weight.resize(layers.size());
    g.bias.resize(layers.size());
    Matrix delta = logit_grad;
    for (std::size_t i = layers.size(); i-- > 0;) {
        const auto& layer = layers[i];
        const Matrix& out = (i + 1 < layers.size()) ? cache.inputs[i + 1] : cache.preactivations[i];
        if (layer.activation != Activation::none) {
            // the output of the last layer is not cached separately
            if (i + 1 < layers.size()) {
                activation_backward(layer.activation, cache.preactivations[i], out, delta);
            } else {
                Matrix activated = cache.preactivations[i];
                apply_activation(layer.activation, activated);
                activation_backward(layer.activation, cache.preactivations[i], activated, delta);
            }
        }
        g.weight[i].noalias() = delta * cache.inputs[i].transpose();
        g.bias[i] = delta.rowwise().sum();
        if (i > 0 || input_grad != nullptr) {
            Matrix next = layer.weight.transpose() * delta;
            delta = std::move(next);
        }
    }
    if (input_grad != nullptr) *input_grad = std::move(delta);
    return g;
}

Gradients backward(const Network& net, const ForwardCache& cache,
                   std::span<const std::size_t> labels) {
    const auto batch = cache.probabilities.cols();
    require(static_cast<std::size_t>(batch) == labels.size(),
            "backward: label count does not match cached batch");
    // d/dz of -log2 softmax(z)[y] is (p - e_y) / ln 2. Below the log floor the
    // clamped loss is flat; the unclamped direction is kept so that
    // confidently wrong samples still pull the weights.
    Matrix grad = cache.probabilities;
    for (std::size_t j = 0; j < labels.size(); ++j) {
        require(labels[j] < static_cast<std::size_t>(grad.rows()), "backward: label out of range");
        grad(static_cast<Eigen::Index>(labels[j]), static_cast<Eigen::Index>(j)) -= 1.0;
    }
    grad /= std::numbers::ln2 * static_cast<double>(std::max<Eigen::Index>(batch, 1));
    return backward_logits(net, cache, grad, nullptr);
}

AdamState AdamState::for_network(const Network& net, AdamConfig config) {
    AdamState s;
    s.config = config;
    s.first_moment = Gradients::zeros_like(net);
    s.second_moment = Gradients::zeros_like(net);
    return s;
}

void adam_step(Network& net, const Gradients& grads, AdamState& state) {
    auto& layers = net.layers();
    require(grads.weight.size() == layers.size() && state.first_moment.weight.size() == layers.size(),
            "adam_step: shape mismatch");
    for (std::size_t i = 0; i < layers.size(); ++i) {
        require(grads.weight[i].rows() == layers[i].weight.rows() &&
                    grads.weight[i].cols() == layers[i].weight.cols() &&
                    grads.bias[i].size() == layers[i].bias.size(),
                "adam_step: gradient shape mismatch at layer " + std::to_string(i));
        if (!grads.weight[i].allFinite() || !grads.bias[i].allFinite())
            throw TrainingDivergence("non-finite gradient in layer " + std::to_string(i));
    }
    const auto& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    const double step_size = c.learning_rate / correction1;

    auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
        m = c.beta1 * m + (1.0 - c.beta1) * g;
        v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseAbs2();
        param.array() -=
            step_size * m.array() / ((v.array() / correction2).sqrt() + c.epsilon);
    };
    for (std::size_t i = 0; i < layers.size(); ++i) {
        update(layers[i].weight, grads.weight[i], state.first_moment.weight[i],
               state.second_moment.weight[i]);
        update(layers[i].bias, grads.bias[i], state.first_moment.bias[i],
               state.second_moment.bias[i]);
    }
}

std::string serialize(const Network& net) {
    detail::ByteWriter w;
    w.raw(kModelMagic);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.layers().size()));
    for (const auto& l : net.layers()) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.cols()));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(l.weight.rows()));
        w.put<std::uint8_t>(static_cast<std::uint8_t>(l.activation));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.put<double>(l.weight(r, c));
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) w.put<double>(l.bias(r));
    }
    return w.take();
}

Network deserialize(std::string_view bytes) {
    detail::ByteReader r(bytes);
    r.expect_magic(kModelMagic);
    const auto count = r.get<std::uint32_t>();
    if (count == 0) throw FormatError("model has no layers");
    std::vector<LayerSpec> spec;
    std::vector<DenseLayer> layers;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto in = r.get<std::uint32_t>();
        const auto out = r.get<std::uint32_t>();
        const auto code = r.get<std::uint8_t>();
        if (code > 2) throw FormatError("unknown activation code " + std::to_string(code));
        if (in == 0 || out == 0) throw FormatError("zero layer dimension");
        if (!spec.empty() && spec.back().output_dim != in)
            throw FormatError("layer " + std::to_string(i) + " does not chain");
        const std::size_t needed = (static_cast<std::size_t>(in) * out + out) * sizeof(double);
        if (r.remaining() < needed) throw FormatError("truncated stream");
        spec.push_back({in, out, static_cast<Activation>(code)});
        DenseLayer layer{Matrix(out, in), Vector(out), static_cast<Activation>(code)};
        for (Eigen::Index rr = 0; rr < layer.weight.rows(); ++rr)
            for (Eigen::Index cc = 0; cc < layer.weight.cols(); ++cc)
                layer.weight(rr, cc) = r.get<double>();
        for (Eigen::Index rr = 0; rr < layer.bias.size(); ++rr) layer.bias(rr) = r.get<double>();
        layers.push_back(std::move(layer));
    }
    if (r.remaining() != 0) throw FormatError("trailing bytes after model");
    Network net = Network::zeros(spec);
    net.layers() = std::move(layers);
    return net;
}

void save(const Network& net, const std::filesystem::path& path) {
    detail::write_file(path, serialize(net));
}

Network load(const std::filesystem::path& path) { return deserialize(detail::read_file(path)); }

}  // namespace siclab::nn
