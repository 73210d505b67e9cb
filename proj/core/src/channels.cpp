#include "siclab/channels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"

namespace siclab {

namespace {

constexpr std::string_view kDatasetMagic = "SICDS1";

// log(Phi(b) - Phi(a)) for a < b, stable in both tails.
double log_gaussian_interval(double a, double b) {
    constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    double p;
    if (a >= 0.0) {
        p = 0.5 * (std::erfc(a * inv_sqrt2) - std::erfc(b * inv_sqrt2));
    } else if (b <= 0.0) {
        p = 0.5 * (std::erfc(-b * inv_sqrt2) - std::erfc(-a * inv_sqrt2));
    } else {
        p = 1.0 - 0.5 * std::erfc(-a * inv_sqrt2) - 0.5 * std::erfc(b * inv_sqrt2);
    }
    return p > 0.0 ? std::log(p) : -std::numeric_limits<double>::infinity();
}

}  // namespace

Constellation::Constellation(std::string name, std::vector<double> symbols)
    : name_(std::move(name)), symbols_(std::move(symbols)) {
    require(symbols_.size() >= 2, "constellation needs at least two symbols");
    auto sorted = symbols_;
    std::sort(sorted.begin(), sorted.end());
    require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(),
            "constellation symbols must be distinct");
}

Constellation Constellation::bpsk() { return Constellation("bpsk", {-1.0, 1.0}); }
Constellation Constellation::ook() { return Constellation("ook", {0.0, 1.0}); }

Constellation Constellation::from_name(std::string_view name) {
    if (name == "bpsk") return bpsk();
    if (name == "ook") return ook();
    throw ContractViolation("unknown constellation '" + std::string(name) + "'");
}

bool Constellation::nonnegative() const {
    return std::all_of(symbols_.begin(), symbols_.end(), [](double s) { return s >= 0.0; });
}

std::string_view to_string(ChannelFamily f) {
    switch (f) {
    case ChannelFamily::linear_awgn: return "linear_awgn";
    case ChannelFamily::quantized_gaussian: return "quantized_gaussian";
    case ChannelFamily::poisson: return "poisson";
    }
    return "?";
}

ChannelFamily channel_family_from_string(std::string_view name) {
    if (name == "linear_awgn" || name == "linear") return ChannelFamily::linear_awgn;
    if (name == "quantized_gaussian" || name == "quantized") return ChannelFamily::quantized_gaussian;
    if (name == "poisson") return ChannelFamily::poisson;
    throw ContractViolation("unknown channel family '" + std::string(name) + "'");
}

double quantize(double y) {
    const double sign = y < 0.0 ? -1.0 : 1.0;
    return std::abs(y) > 2.0 ? 3.0 * sign : sign;
}

Channel::Channel(ChannelFamily family, Matrix H, double noise_variance, Constellation constellation)
    : family_(family), H_(std::move(H)), noise_variance_(noise_variance),
      constellation_(std::move(constellation)) {
    require(H_.rows() >= 1 && H_.cols() >= 1, "channel matrix must be at least 1x1");
    require(noise_variance_ > 0.0 && std::isfinite(noise_variance_),
            "noise variance must be positive");
    require(family_ != ChannelFamily::poisson || constellation_.nonnegative(),
            "poisson channel needs a nonnegative constellation");
}

Channel Channel::with_matrix(Matrix H) const {
    return Channel(family_, std::move(H), noise_variance_, constellation_);
}

void Channel::check_symbols(std::span<const std::size_t> symbols) const {
    require(symbols.size() == users(), "symbol vector length must equal the number of users");
    for (auto s : symbols) require(s < constellation_.size(), "symbol index out of range");
}

Vector Channel::mean_output(std::span<const std::size_t> symbols) const {
    check_symbols(symbols);
    Vector out = Vector::Zero(H_.rows());
    for (std::size_t k = 0; k < symbols.size(); ++k)
        out += H_.col(static_cast<Eigen::Index>(k)) * constellation_[symbols[k]];
    return out;
}

Vector Channel::transmit(std::span<const std::size_t> symbols, Rng& rng) const {
    Vector y = mean_output(symbols);
    switch (family_) {
    case ChannelFamily::linear_awgn:
    case ChannelFamily::quantized_gaussian: {
        std::normal_distribution<double> noise(0.0, std::sqrt(noise_variance_));
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) += noise(rng);
        if (family_ == ChannelFamily::quantized_gaussian)
            for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = quantize(y(i));
        break;
    }
    case ChannelFamily::poisson: {
        const double gain = 1.0 / std::sqrt(noise_variance_);
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double rate = gain * y(i) + 1.0;
            require(rate > 0.0, "poisson rate must be positive");
            y(i) = static_cast<double>(sample_poisson(rate, rng));
        }
        break;
    }
    }
    return y;
}

Vector Channel::transmit_noiseless(std::span<const std::size_t> symbols) const {
    Vector y = mean_output(symbols);
    if (family_ == ChannelFamily::quantized_gaussian)
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = quantize(y(i));
    return y;
}

double Channel::log_likelihood_given_mean(const Eigen::Ref<const Vector>& y,
                                          const Eigen::Ref<const Vector>& mean) const {
    require(y.size() == H_.rows(), "output length must equal the number of antennas");
    switch (family_) {
    case ChannelFamily::linear_awgn: {
        const double n = static_cast<double>(y.size());
        return -0.5 * (y - mean).squaredNorm() / noise_variance_ -
               0.5 * n * std::log(2.0 * std::numbers::pi * noise_variance_);
    }
    case ChannelFamily::quantized_gaussian: {
        const double sigma = std::sqrt(noise_variance_);
        double total = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            double lo, hi;
            if (y(i) == -3.0) {
                lo = -std::numeric_limits<double>::infinity();
                hi = -2.0;
            } else if (y(i) == -1.0) {
                lo = -2.0;
                hi = 0.0;
            } else if (y(i) == 1.0) {
                lo = 0.0;
                hi = 2.0;
            } else if (y(i) == 3.0) {
                lo = 2.0;
                hi = std::numeric_limits<double>::infinity();
            } else {
                throw ContractViolation("quantized output must be one of -3, -1, 1, 3");
            }
            total += log_gaussian_interval((lo - mean(i)) / sigma, (hi - mean(i)) / sigma);
        }
        return total;
    }
    case ChannelFamily::poisson: {
        const double gain = 1.0 / std::sqrt(noise_variance_);
        double total = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double rate = gain * mean(i) + 1.0;
            require(rate > 0.0, "poisson rate must be positive");
            const double k = y(i);
            require(k >= 0.0 && k == std::floor(k), "poisson output must be a nonnegative integer");
            total += k * std::log(rate) - rate - std::lgamma(k + 1.0);
        }
        return total;
    }
    }
    return 0.0;
}

double Channel::log_likelihood(const Eigen::Ref<const Vector>& y,
                               std::span<const std::size_t> symbols) const {
    return log_likelihood_given_mean(y, mean_output(symbols));
}

double Channel::likelihood(const Eigen::Ref<const Vector>& y,
                           std::span<const std::size_t> symbols) const {
    return std::exp(log_likelihood(y, symbols));
}

Matrix exp_decay_matrix(std::size_t antennas, std::size_t users) {
    require(antennas >= 1 && users >= 1, "matrix dims must be >= 1");
    Matrix H(antennas, users);
    for (std::size_t i = 0; i < antennas; ++i)
        for (std::size_t j = 0; j < users; ++j)
            H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                std::exp(-std::abs(static_cast<double>(i) - static_cast<double>(j)));
    return H;
}

std::string_view to_string(PhaseMode m) { return m == PhaseMode::radians ? "radians" : "period"; }

PhaseMode phase_mode_from_string(std::string_view name) {
    if (name == "radians") return PhaseMode::radians;
    if (name == "period") return PhaseMode::period;
    throw FormatError("unknown phase mode '" + std::string(name) + "'");
}

TimeVaryingSpec TimeVaryingSpec::standard4x4() { return {{51.0, 39.0, 33.0, 21.0}, 4, PhaseMode::radians}; }

Matrix time_varying_matrix(const TimeVaryingSpec& spec, std::size_t block) {
    Matrix H = exp_decay_matrix(spec.phi.size(), spec.users);
    const double b = static_cast<double>(block);
    for (std::size_t i = 0; i < spec.phi.size(); ++i) {
        if (spec.mode == PhaseMode::period) require(spec.phi[i] > 0.0, "period phase mode needs phi > 0");
        const double theta = spec.mode == PhaseMode::radians ? spec.phi[i] * b
                                                             : 2.0 * std::numbers::pi * b / spec.phi[i];
        const double c = std::cos(theta);
        H.row(static_cast<Eigen::Index>(i)) *= spec.magnitude ? std::abs(c) : c;
    }
    return H;
}

double drift(const TimeVaryingSpec& spec, std::size_t block) {
    return (time_varying_matrix(spec, block) - time_varying_matrix(spec, 0)).squaredNorm();
}

Matrix perturb_csi(const Matrix& H, double error_variance, Rng& rng) {
    require(error_variance >= 0.0, "CSI error variance must be nonnegative");
    Matrix out = H;
    if (error_variance == 0.0) return out;
    std::normal_distribution<double> unit(0.0, 1.0);
    for (Eigen::Index i = 0; i < H.rows(); ++i)
        for (Eigen::Index j = 0; j < H.cols(); ++j)
            out(i, j) += std::sqrt(error_variance * std::abs(H(i, j))) * unit(rng);
    return out;
}

double snr_to_noise_variance(double snr_db) { return std::pow(10.0, -snr_db / 10.0); }

std::size_t sample_poisson(double rate, Rng& rng) {
    require(rate > 0.0 && std::isfinite(rate), "poisson rate must be positive");
    if (rate > 500.0) {
        // far outside every experiment here; e^-rate would underflow below
        std::poisson_distribution<std::size_t> dist(rate);
        return dist(rng);
    }
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double p = std::exp(-rate);
    double cdf = p;
    std::size_t k = 0;
    const auto cap = static_cast<std::size_t>(rate + 40.0 * std::sqrt(rate) + 100.0);
    while (u > cdf && k < cap) {
        ++k;
        p *= rate / static_cast<double>(k);
        cdf += p;
    }
    return k;
}

std::vector<std::size_t> Dataset::labels(std::size_t user) const {
    require(user < users, "user index out of range");
    std::vector<std::size_t> out(size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = symbols[j * users + user];
    return out;
}

Dataset Dataset::concat(std::span<const Dataset> parts) {
    require(!parts.empty(), "concat needs at least one dataset");
    Dataset out;
    out.users = parts.front().users;
    Eigen::Index total = 0;
    for (const auto& p : parts) {
        require(p.users == out.users && p.antennas() == parts.front().antennas(),
                "concat: dimension mismatch");
        total += p.outputs.cols();
    }
    out.outputs.resize(parts.front().outputs.rows(), total);
    Eigen::Index col = 0;
    for (const auto& p : parts) {
        out.outputs.middleCols(col, p.outputs.cols()) = p.outputs;
        col += p.outputs.cols();
        out.symbols.insert(out.symbols.end(), p.symbols.begin(), p.symbols.end());
    }
    return out;
}

Dataset generate_dataset(const Channel& channel, std::size_t n, Rng& rng) {
    require(n >= 1, "dataset size must be >= 1");
    const std::size_t K = channel.users();
    Dataset data;
    data.users = K;
    data.symbols.resize(n * K);
    data.outputs.resize(static_cast<Eigen::Index>(channel.antennas()), static_cast<Eigen::Index>(n));
    std::uniform_int_distribution<std::size_t> pick(0, channel.constellation().size() - 1);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < K; ++k) data.symbols[j * K + k] = pick(rng);
        data.outputs.col(static_cast<Eigen::Index>(j)) = channel.transmit(data.row(j), rng);
    }
    return data;
}

std::string dataset_to_csv(const Dataset& data) {
    std::ostringstream out;
    out.precision(17);
    for (std::size_t k = 0; k < data.users; ++k) out << (k ? "," : "") << "user_" << k + 1;
    for (std::size_t i = 0; i < data.antennas(); ++i) out << ",y_" << i + 1;
    out << '\n';
    for (std::size_t j = 0; j < data.size(); ++j) {
        for (std::size_t k = 0; k < data.users; ++k)
            out << (k ? "," : "") << data.symbols[j * data.users + k] + 1;
        for (std::size_t i = 0; i < data.antennas(); ++i)
            out << ',' << data.outputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        out << '\n';
    }
    return std::move(out).str();
}

Dataset dataset_from_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty dataset CSV");
    std::size_t users = 0, antennas = 0;
    {
        std::istringstream header(line);
        std::string col;
        while (std::getline(header, col, ',')) {
            if (col.rfind("user_", 0) == 0) {
                if (antennas != 0) throw FormatError("user columns must precede output columns");
                ++users;
            } else if (col.rfind("y_", 0) == 0) {
                ++antennas;
            } else {
                throw FormatError("unexpected CSV column '" + col + "'");
            }
        }
    }
    if (users == 0 || antennas == 0) throw FormatError("dataset CSV needs user and output columns");
    Dataset data;
    data.users = users;
    std::vector<double> outputs;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::size_t c = 0;
        while (std::getline(row, cell, ',')) {
            if (c < users) {
                std::size_t idx = 0;
                auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), idx);
                if (ec != std::errc() || idx == 0) throw FormatError("bad symbol index '" + cell + "'");
                data.symbols.push_back(idx - 1);
            } else {
                try {
                    outputs.push_back(std::stod(cell));
                } catch (const std::exception&) {
                    throw FormatError("bad output value '" + cell + "'");
                }
            }
            ++c;
        }
        if (c != users + antennas) throw FormatError("CSV row has wrong column count");
    }
    const auto n = static_cast<Eigen::Index>(data.symbols.size() / users);
    data.outputs = Eigen::Map<Matrix>(outputs.data(), static_cast<Eigen::Index>(antennas), n);
    return data;
}

std::string serialize(const Dataset& data) {
    detail::ByteWriter w;
    w.raw(kDatasetMagic);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(data.users));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(data.antennas()));
    w.put<std::uint64_t>(data.size());
    for (std::size_t j = 0; j < data.size(); ++j) {
        for (auto s : data.row(j)) w.put<std::uint32_t>(static_cast<std::uint32_t>(s));
        for (Eigen::Index i = 0; i < data.outputs.rows(); ++i)
            w.put<double>(data.outputs(i, static_cast<Eigen::Index>(j)));
    }
    return w.take();
}

Dataset deserialize_dataset(std::string_view bytes) {
    detail::ByteReader r(bytes);
    r.expect_magic(kDatasetMagic);
    Dataset data;
    data.users = r.get<std::uint32_t>();
    const auto antennas = r.get<std::uint32_t>();
    const auto n = r.get<std::uint64_t>();
    if (data.users == 0 || antennas == 0) throw FormatError("zero dataset dimension");
    if (r.remaining() != n * (data.users * 4 + antennas * 8)) throw FormatError("dataset size mismatch");
    data.symbols.reserve(n * data.users);
    data.outputs.resize(antennas, static_cast<Eigen::Index>(n));
    for (std::uint64_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < data.users; ++k) data.symbols.push_back(r.get<std::uint32_t>());
        for (std::uint32_t i = 0; i < antennas; ++i)
            data.outputs(i, static_cast<Eigen::Index>(j)) = r.get<double>();
    }
    return data;
}

}  // namespace siclab
