#include "siclab/deepsic.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "siclab/parallel.hpp"

namespace siclab::deepsic {

namespace {

using nlohmann::json;

Matrix gather_columns(const Matrix& m, std::span<const std::size_t> cols) {
    Matrix out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
        out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(cols[j]));
    return out;
}

std::vector<std::size_t> gather(std::span<const std::size_t> v, std::span<const std::size_t> idx) {
    std::vector<std::size_t> out(idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) out[j] = v[idx[j]];
    return out;
}

// Minibatch index lists for one epoch; a single identity batch when full-batch.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (batch_size == 0 || batch_size >= n) return {order};
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch_size)));
    return out;
}

std::string block_tag(std::size_t q, std::size_t k) {
    return "block (q=" + std::to_string(q + 1) + ", k=" + std::to_string(k + 1) + ")";
}

// Minimises the mean cross entropy of one block on fixed inputs.
void fit_block(nn::Network& net, const Matrix& inputs, std::span<const std::size_t> labels,
               const TrainingConfig& config, Rng& batch_rng, std::size_t q, std::size_t k) {
    auto state = nn::AdamState::for_network(net, config.adam);
    const std::size_t n = labels.size();
    const bool full = config.batch_size == 0 || config.batch_size >= n;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& batch : epoch_batches(n, config.batch_size, batch_rng)) {
            try {
                if (full) {
                    const auto cache = nn::forward(net, inputs);
                    nn::adam_step(net, nn::backward(net, cache, labels), state);
                } else {
                    const Matrix x = gather_columns(inputs, batch);
                    const auto y = gather(labels, batch);
                    const auto cache = nn::forward(net, x);
                    nn::adam_step(net, nn::backward(net, cache, y), state);
                }
            } catch (const TrainingDivergence& e) {
                throw TrainingDivergence(block_tag(q, k) + ", epoch " + std::to_string(epoch) + ": " +
                                         e.what());
            }
        }
    }
    if (!net.all_finite()) throw TrainingDivergence(block_tag(q, k) + ": non-finite parameters");
}

void check_dataset(const Dataset& data, const SystemDims& dims) {
    require(data.users == dims.users && data.antennas() == dims.antennas,
            "dataset dimensions do not match the receiver");
    for (auto s : data.symbols) require(s < dims.constellation_size, "dataset symbol out of range");
}

std::vector<std::size_t> resolve_order(const TrainOptions& options, std::size_t K) {
    if (options.user_order.empty()) {
        std::vector<std::size_t> order(K);
        std::iota(order.begin(), order.end(), std::size_t{0});
        return order;
    }
    auto sorted = options.user_order;
    std::sort(sorted.begin(), sorted.end());
    require(sorted.size() == K && std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end() &&
                sorted.back() == K - 1,
            "user_order must be a permutation of the users");
    return options.user_order;
}

// One sequential pass. Blocks are re-initialised when `warm` is null,
// otherwise fine-tuned from `warm`.
void sequential_pass(DeepSicParams& params, const Dataset& data, const TrainOptions& options,
                     bool warm, std::span<const bool> update_users) {
    const auto& dims = params.dims();
    const auto layers = params.architecture().layers(dims);
    const auto order = resolve_order(options, dims.users);
    BatchBeliefs prev = uniform_beliefs(dims, data.size());
    for (std::size_t q = 0; q < dims.iterations; ++q) {
        BatchBeliefs next(dims.users);
        parallel_for(dims.users, options.threads, [&](std::size_t i) {
            const std::size_t k = order[i];
            const Matrix inputs = block_inputs(data.outputs, prev, k);
            nn::Network& net = params.block(q, k);
            const bool train = update_users.empty() || update_users[k];
            if (train) {
                if (!warm) {
                    auto init = make_stream(options.seed, "deepsic-init", {q, k});
                    net = nn::Network::glorot(layers, init);
                }
                auto batch_rng = make_stream(options.seed, warm ? "deepsic-online" : "deepsic-batch", {q, k});
                fit_block(net, inputs, data.labels(k), options.config, batch_rng, q, k);
            }
            next[k] = nn::predict(net, inputs);
        });
        prev = std::move(next);
    }
}

}  // namespace

void SystemDims::validate() const {
    require(users >= 1 && antennas >= 1, "DeepSIC needs at least one user and one antenna");
    require(constellation_size >= 2, "constellation must have at least two symbols");
    require(iterations >= 1, "DeepSIC needs at least one iteration");
}

Architecture Architecture::sequential_default() {
    return {{{100, nn::Activation::sigmoid}, {50, nn::Activation::relu}}};
}

Architecture Architecture::end_to_end_default() { return {{{60, nn::Activation::relu}}}; }

std::vector<nn::LayerSpec> Architecture::layers(const SystemDims& dims) const {
    return nn::make_stack(dims.block_input_dim(), hidden, dims.constellation_size);
}

TrainingConfig TrainingConfig::sequential_default() { return {300, 0, {1e-2}}; }
TrainingConfig TrainingConfig::end_to_end_default() { return {1000, 0, {5e-3}}; }
TrainingConfig TrainingConfig::online_default() { return {50, 0, {1e-2}}; }

DeepSicParams::DeepSicParams(SystemDims dims, Architecture arch, std::string constellation,
                             std::uint64_t seed, std::vector<nn::Network> blocks)
    : dims_(dims), arch_(std::move(arch)), constellation_(std::move(constellation)), seed_(seed),
      blocks_(std::move(blocks)) {
    dims_.validate();
    require(blocks_.size() == dims_.users * dims_.iterations, "DeepSIC needs K*Q blocks");
    const auto expected = arch_.layers(dims_);
    for (const auto& b : blocks_) require(b.spec() == expected, "block shape does not match architecture");
}

DeepSicParams DeepSicParams::zeros(const SystemDims& dims, const Architecture& arch,
                                   std::string constellation) {
    dims.validate();
    const auto layers = arch.layers(dims);
    std::vector<nn::Network> blocks(dims.users * dims.iterations, nn::Network::zeros(layers));
    return DeepSicParams(dims, arch, std::move(constellation), 0, std::move(blocks));
}

nn::Network& DeepSicParams::block(std::size_t q, std::size_t k) {
    require(q < dims_.iterations && k < dims_.users, "block index out of range");
    return blocks_[q * dims_.users + k];
}

const nn::Network& DeepSicParams::block(std::size_t q, std::size_t k) const {
    require(q < dims_.iterations && k < dims_.users, "block index out of range");
    return blocks_[q * dims_.users + k];
}

std::size_t DeepSicParams::block_parameter_count() const {
    return blocks_.empty() ? 0 : blocks_.front().parameter_count();
}

std::size_t DeepSicParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += b.parameter_count();
    return n;
}

bool operator==(const DeepSicParams& a, const DeepSicParams& b) {
    return a.dims_ == b.dims_ && a.arch_ == b.arch_ && a.constellation_ == b.constellation_ &&
           a.blocks_ == b.blocks_;
}

BatchBeliefs uniform_beliefs(const SystemDims& dims, std::size_t batch) {
    const Vector row = uniform_belief(dims.constellation_size);
    return BatchBeliefs(dims.users, row.replicate(1, static_cast<Eigen::Index>(batch)));
}

Matrix block_inputs(const Eigen::Ref<const Matrix>& outputs, const BatchBeliefs& beliefs,
                    std::size_t k) {
    const std::size_t K = beliefs.size();
    require(k < K, "block_inputs: user out of range");
    const auto M1 = beliefs.front().rows() - 1;
    const auto n_r = outputs.rows();
    Matrix x(n_r + static_cast<Eigen::Index>(K - 1) * M1, outputs.cols());
    x.topRows(n_r) = outputs;
    Eigen::Index row = n_r;
    for (std::size_t l = 0; l < K; ++l) {
        if (l == k) continue;
        require(beliefs[l].cols() == outputs.cols(), "block_inputs: batch size mismatch");
        x.middleRows(row, M1) = beliefs[l].topRows(M1);
        row += M1;
    }
    return x;
}

std::vector<Vector> expand_beliefs(const Eigen::Ref<const Vector>& compressed, std::size_t users,
                                   std::size_t M) {
    require(static_cast<std::size_t>(compressed.size()) == (users - 1) * (M - 1),
            "expand_beliefs: compressed length mismatch");
    std::vector<Vector> out;
    const auto M1 = static_cast<Eigen::Index>(M - 1);
    for (std::size_t i = 0; i + 1 < users; ++i) {
        Vector row(static_cast<Eigen::Index>(M));
        row.head(M1) = compressed.segment(static_cast<Eigen::Index>(i) * M1, M1);
        close_belief(row);
        out.push_back(std::move(row));
    }
    return out;
}

SkeletonResult run_skeleton(const Eigen::Ref<const Matrix>& outputs, const SystemDims& dims,
                            const BlockFn& block, bool keep_trace) {
    dims.validate();
    require(static_cast<std::size_t>(outputs.rows()) == dims.antennas,
            "run_skeleton: output rows must equal the number of antennas");
    SkeletonResult result;
    BatchBeliefs prev = uniform_beliefs(dims, static_cast<std::size_t>(outputs.cols()));
    for (std::size_t q = 0; q < dims.iterations; ++q) {
        BatchBeliefs next(dims.users);
        for (std::size_t k = 0; k < dims.users; ++k) {
            next[k] = block(q, k, block_inputs(outputs, prev, k));
            require(next[k].rows() == static_cast<Eigen::Index>(dims.constellation_size) &&
                        next[k].cols() == outputs.cols(),
                    "run_skeleton: block returned wrong shape");
        }
        prev = std::move(next);
        if (keep_trace) result.trace.push_back(prev);
    }
    result.beliefs = std::move(prev);
    return result;
}

BlockFn model_based_block(const Matrix& H, double noise_variance, const Constellation& constellation) {
    return [H, noise_variance, constellation](std::size_t, std::size_t k, const Matrix& inputs) {
        const auto K = static_cast<std::size_t>(H.cols());
        const std::size_t M = constellation.size();
        const auto n_r = H.rows();
        Matrix out(static_cast<Eigen::Index>(M), inputs.cols());
        BeliefMatrix beliefs(H.cols(), static_cast<Eigen::Index>(M));
        for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
            const auto others = expand_beliefs(inputs.col(j).tail(inputs.rows() - n_r), K, M);
            std::size_t i = 0;
            for (std::size_t l = 0; l < K; ++l) {
                beliefs.row(static_cast<Eigen::Index>(l)) =
                    (l == k ? uniform_belief(M) : others[i++]).transpose();
            }
            const Vector y = inputs.col(j).head(n_r);
            const SoftMoments moments = soft_moments(beliefs, constellation);
            const Vector z = cancel_interference(y, H, moments, k);
            const Matrix cov = residual_covariance(H, noise_variance, moments, k);
            out.col(j) = gaussian_soft_estimate(z, H.col(static_cast<Eigen::Index>(k)), cov, constellation);
        }
        return out;
    };
}

BlockFn network_block(const DeepSicParams& params) {
    return [&params](std::size_t q, std::size_t k, const Matrix& inputs) {
        return nn::predict(params.block(q, k), inputs);
    };
}

Vector block_infer(const nn::Network& net, const Eigen::Ref<const Vector>& y,
                   std::span<const Vector> other_beliefs) {
    Eigen::Index len = y.size();
    for (const auto& b : other_beliefs) len += b.size() - 1;
    require(static_cast<std::size_t>(len) == net.input_dim(), "block_infer: input size mismatch");
    Vector x(len);
    x.head(y.size()) = y;
    Eigen::Index row = y.size();
    for (const auto& b : other_beliefs) {
        x.segment(row, b.size() - 1) = b.head(b.size() - 1);
        row += b.size() - 1;
    }
    return nn::predict(net, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
}

BatchDetection decide(const BatchBeliefs& beliefs) {
    BatchDetection out;
    const std::size_t K = beliefs.size();
    const auto N = static_cast<std::size_t>(beliefs.front().cols());
    out.symbols.resize(N * K);
    for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < N; ++j)
            out.symbols[j * K + k] = hard_decide(beliefs[k].col(static_cast<Eigen::Index>(j)));
    out.beliefs = beliefs;
    return out;
}

BatchDetection infer_batch(const DeepSicParams& params, const Eigen::Ref<const Matrix>& outputs) {
    return decide(run_skeleton(outputs, params.dims(), network_block(params)).beliefs);
}

DetectionResult deepsic_infer(const DeepSicParams& params, const Eigen::Ref<const Vector>& y) {
    const auto batch = infer_batch(params, y);
    const auto& dims = params.dims();
    DetectionResult out;
    out.symbols = batch.symbols;
    out.beliefs.resize(static_cast<Eigen::Index>(dims.users),
                       static_cast<Eigen::Index>(dims.constellation_size));
    for (std::size_t k = 0; k < dims.users; ++k)
        out.beliefs.row(static_cast<Eigen::Index>(k)) = batch.beliefs[k].col(0).transpose();
    return out;
}

DeepSicParams train_sequential(const Dataset& data, const SystemDims& dims, const Architecture& arch,
                               const std::string& constellation, const TrainOptions& options) {
    check_dataset(data, dims);
    require(data.size() >= 1, "training set must not be empty");
    DeepSicParams params = DeepSicParams::zeros(dims, arch, constellation);
    sequential_pass(params, data, options, false, {});
    return DeepSicParams(dims, arch, constellation, options.seed,
                         [&] {
                             std::vector<nn::Network> b;
                             for (std::size_t q = 0; q < dims.iterations; ++q)
                                 for (std::size_t k = 0; k < dims.users; ++k) b.push_back(params.block(q, k));
                             return b;
                         }());
}

namespace {

// Forward through all K*Q blocks and backward from the summed final
// cross-entropy. labels[k][j] is user k's label of batch column j.
double end_to_end_pass(std::span<const nn::Network> blocks, const SystemDims& dims, const Matrix& y_batch,
                       const std::vector<std::vector<std::size_t>>& labels,
                       std::vector<nn::ForwardCache>& caches, std::vector<nn::Gradients>& grads) {
    const std::size_t K = dims.users;
    const std::size_t Q = dims.iterations;
    const auto M1 = static_cast<Eigen::Index>(dims.constellation_size - 1);
    const auto n_r = static_cast<Eigen::Index>(dims.antennas);
    const auto B = y_batch.cols();
    caches.resize(K * Q);
    grads.resize(K * Q);

    BatchBeliefs prev = uniform_beliefs(dims, static_cast<std::size_t>(B));
    for (std::size_t q = 0; q < Q; ++q) {
        BatchBeliefs next(K);
        for (std::size_t k = 0; k < K; ++k) {
            caches[q * K + k] = nn::forward(blocks[q * K + k], block_inputs(y_batch, prev, k));
            next[k] = caches[q * K + k].probabilities;
        }
        prev = std::move(next);
    }
    double loss = 0.0;
    for (std::size_t k = 0; k < K; ++k) loss += nn::mean_cross_entropy(prev[k], labels[k]);

    // reverse sweep; belief_grad[k] holds dL/dp_k at the current level
    BatchBeliefs belief_grad(K, Matrix::Zero(M1 + 1, B));
    const double scale = 1.0 / (std::numbers::ln2 * static_cast<double>(B));
    for (std::size_t q = Q; q-- > 0;) {
        BatchBeliefs lower(K, Matrix::Zero(M1 + 1, B));
        for (std::size_t k = 0; k < K; ++k) {
            const auto& cache = caches[q * K + k];
            Matrix logit_grad;
            if (q + 1 == Q) {
                logit_grad = cache.probabilities;
                for (Eigen::Index j = 0; j < B; ++j)
                    logit_grad(static_cast<Eigen::Index>(labels[k][static_cast<std::size_t>(j)]), j) -= 1.0;
                logit_grad *= scale;
            } else {
                logit_grad = nn::softmax_backward(cache.probabilities, belief_grad[k]);
            }
            Matrix input_grad;
            grads[q * K + k] =
                nn::backward_logits(blocks[q * K + k], cache, logit_grad, q > 0 ? &input_grad : nullptr);
            if (q > 0) {
                Eigen::Index row = n_r;
                for (std::size_t l = 0; l < K; ++l) {
                    if (l == k) continue;
                    lower[l].topRows(M1) += input_grad.middleRows(row, M1);
                    row += M1;
                }
            }
        }
        belief_grad = std::move(lower);
    }
    return loss;
}

std::vector<std::vector<std::size_t>> batch_labels(const Dataset& data, std::span<const std::size_t> batch,
                                                   std::size_t K) {
    std::vector<std::vector<std::size_t>> labels(K);
    for (std::size_t k = 0; k < K; ++k) {
        labels[k].reserve(batch.size());
        for (auto j : batch) labels[k].push_back(data.symbols[j * K + k]);
    }
    return labels;
}

}  // namespace

EndToEndEvaluation end_to_end_gradients(const DeepSicParams& params, const Dataset& data) {
    const auto& dims = params.dims();
    check_dataset(data, dims);
    require(data.size() >= 1, "end_to_end_gradients: empty dataset");
    std::vector<nn::Network> blocks;
    for (std::size_t q = 0; q < dims.iterations; ++q)
        for (std::size_t k = 0; k < dims.users; ++k) blocks.push_back(params.block(q, k));
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<nn::ForwardCache> caches;
    EndToEndEvaluation out;
    out.loss = end_to_end_pass(blocks, dims, data.outputs, batch_labels(data, all, dims.users), caches,
                               out.gradients);
    return out;
}

DeepSicParams train_end_to_end(const Dataset& data, const SystemDims& dims, const Architecture& arch,
                               const std::string& constellation, const TrainOptions& options) {
    check_dataset(data, dims);
    require(data.size() >= 1, "training set must not be empty");
    const std::size_t K = dims.users;
    const std::size_t Q = dims.iterations;
    const auto layers = arch.layers(dims);

    std::vector<nn::Network> blocks;
    std::vector<nn::AdamState> states;
    for (std::size_t q = 0; q < Q; ++q)
        for (std::size_t k = 0; k < K; ++k) {
            auto init = make_stream(options.seed, "deepsic-init", {q, k});
            blocks.push_back(nn::Network::glorot(layers, init));
            states.push_back(nn::AdamState::for_network(blocks.back(), options.config.adam));
        }

    auto batch_rng = make_stream(options.seed, "deepsic-e2e-batch");
    std::vector<nn::ForwardCache> caches;
    std::vector<nn::Gradients> grads;
    for (std::size_t epoch = 0; epoch < options.config.epochs; ++epoch) {
        for (const auto& batch : epoch_batches(data.size(), options.config.batch_size, batch_rng)) {
            const bool full = batch.size() == data.size();
            const Matrix y_batch = full ? data.outputs : gather_columns(data.outputs, batch);
            end_to_end_pass(blocks, dims, y_batch, batch_labels(data, batch, K), caches, grads);
            for (std::size_t i = 0; i < blocks.size(); ++i) {
                try {
                    nn::adam_step(blocks[i], grads[i], states[i]);
                } catch (const TrainingDivergence& e) {
                    throw TrainingDivergence(block_tag(i / K, i % K) + ", epoch " +
                                             std::to_string(epoch) + ": " + e.what());
                }
            }
        }
    }
    return DeepSicParams(dims, arch, constellation, options.seed, std::move(blocks));
}

void retrain_online(DeepSicParams& params, const Dataset& fresh, const TrainOptions& options,
                    std::span<const bool> update_users) {
    if (fresh.size() == 0) return;
    check_dataset(fresh, params.dims());
    require(update_users.empty() || update_users.size() == params.dims().users,
            "retrain_online: user mask length mismatch");
    sequential_pass(params, fresh, options, true, update_users);
}

void save(const DeepSicParams& params, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const auto& d = params.dims();
    json manifest;
    manifest["format"] = "siclab-deepsic-1";
    manifest["users"] = d.users;
    manifest["antennas"] = d.antennas;
    manifest["constellation_size"] = d.constellation_size;
    manifest["iterations"] = d.iterations;
    manifest["constellation"] = params.constellation();
    manifest["seed"] = params.seed();
    json hidden = json::array();
    for (const auto& h : params.architecture().hidden)
        hidden.push_back({{"width", h.width}, {"activation", nn::to_string(h.activation)}});
    manifest["hidden"] = hidden;
    json files = json::array();
    for (std::size_t q = 0; q < d.iterations; ++q)
        for (std::size_t k = 0; k < d.users; ++k) {
            const auto name = "block_q" + std::to_string(q + 1) + "_k" + std::to_string(k + 1) + ".sicnn";
            nn::save(params.block(q, k), dir / name);
            files.push_back(name);
        }
    manifest["blocks"] = files;
    detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

DeepSicParams load(const std::filesystem::path& dir) {
    json manifest;
    try {
        manifest = json::parse(detail::read_file(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad DeepSIC manifest: ") + e.what());
    }
    try {
        if (manifest.at("format") != "siclab-deepsic-1") throw FormatError("unsupported DeepSIC format");
        SystemDims d{manifest.at("users"), manifest.at("antennas"), manifest.at("constellation_size"),
                     manifest.at("iterations")};
        Architecture arch;
        for (const auto& h : manifest.at("hidden"))
            arch.hidden.push_back({h.at("width").get<std::size_t>(),
                                   nn::activation_from_string(h.at("activation").get<std::string>())});
        std::vector<nn::Network> blocks;
        for (const auto& f : manifest.at("blocks")) blocks.push_back(nn::load(dir / f.get<std::string>()));
        try {
            return DeepSicParams(d, arch, manifest.at("constellation"), manifest.at("seed"), std::move(blocks));
        } catch (const ContractViolation& e) {
            throw FormatError(std::string("inconsistent DeepSIC container: ") + e.what());
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad DeepSIC manifest: ") + e.what());
    }
}

}  // namespace siclab::deepsic
