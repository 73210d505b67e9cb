#include "siclab/reed_solomon.hpp"

#include <algorithm>

#include "siclab/common.hpp"

namespace siclab::fec {

namespace {

struct Tables {
    std::array<std::uint8_t, 512> exp{};
    std::array<int, 256> log{};

    constexpr Tables() {
        unsigned x = 1;
        for (int i = 0; i < 255; ++i) {
            exp[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(x);
            log[x] = i;
            x <<= 1;
            if (x & 0x100) x ^= gf256::kPrimitive;
        }
        for (std::size_t i = 255; i < exp.size(); ++i) exp[i] = exp[i - 255];
        log[0] = -1;
    }
};

constexpr Tables kTables{};

// Polynomials below are lowest-degree-first unless noted.
std::uint8_t eval_low_first(std::span<const std::uint8_t> poly, std::uint8_t x) {
    std::uint8_t acc = 0;
    for (std::size_t i = poly.size(); i-- > 0;) acc = gf256::add(gf256::mul(acc, x), poly[i]);
    return acc;
}

std::array<std::uint8_t, kRsParity + 1> build_generator() {
    // highest-degree first: g(x) = prod_{i=1..16} (x - alpha^i)
    std::array<std::uint8_t, kRsParity + 1> g{};
    g[0] = 1;
    std::size_t deg = 0;
    for (std::size_t i = 1; i <= kRsParity; ++i) {
        const std::uint8_t root = gf256::exp(static_cast<int>(i));
        // multiply by (x + root)
        g[deg + 1] = 0;
        for (std::size_t j = deg + 1; j > 0; --j) g[j] = gf256::add(g[j], gf256::mul(g[j - 1], root));
        ++deg;
    }
    return g;
}

const std::array<std::uint8_t, kRsParity + 1> kGenerator = build_generator();

}  // namespace

namespace gf256 {

std::uint8_t add(std::uint8_t a, std::uint8_t b) { return static_cast<std::uint8_t>(a ^ b); }

std::uint8_t mul(std::uint8_t a, std::uint8_t b) {
    if (a == 0 || b == 0) return 0;
    return kTables.exp[static_cast<std::size_t>(kTables.log[a] + kTables.log[b])];
}

std::uint8_t div(std::uint8_t a, std::uint8_t b) {
    require(b != 0, "GF(256) division by zero");
    if (a == 0) return 0;
    return kTables.exp[static_cast<std::size_t>(kTables.log[a] + 255 - kTables.log[b])];
}

std::uint8_t inverse(std::uint8_t a) { return div(1, a); }

std::uint8_t exp(int e) {
    e %= 255;
    if (e < 0) e += 255;
    return kTables.exp[static_cast<std::size_t>(e)];
}

int log(std::uint8_t a) {
    require(a != 0, "GF(256) log of zero");
    return kTables.log[a];
}

}  // namespace gf256

std::span<const std::uint8_t> generator_polynomial() { return kGenerator; }

Codeword rs_encode(std::span<const std::uint8_t> message) {
    require(message.size() == kRsK, "rs_encode: message must be 239 bytes");
    Codeword cw{};
    std::copy(message.begin(), message.end(), cw.begin());
    // LFSR division of m(x) x^16 by g(x)
    std::array<std::uint8_t, kRsParity> reg{};
    for (std::size_t i = 0; i < kRsK; ++i) {
        const std::uint8_t feedback = gf256::add(message[i], reg[0]);
        for (std::size_t j = 0; j + 1 < kRsParity; ++j)
            reg[j] = gf256::add(reg[j + 1], gf256::mul(feedback, kGenerator[j + 1]));
        reg[kRsParity - 1] = gf256::mul(feedback, kGenerator[kRsParity]);
    }
    std::copy(reg.begin(), reg.end(), cw.begin() + kRsK);
    return cw;
}

DecodeResult rs_decode(std::span<const std::uint8_t> received) {
    require(received.size() == kRsN, "rs_decode: codeword must be 255 bytes");
    DecodeResult out;
    Codeword word{};
    std::copy(received.begin(), received.end(), word.begin());

    auto syndromes = [&](const Codeword& w) {
        std::array<std::uint8_t, kRsParity> s{};
        for (std::size_t j = 0; j < kRsParity; ++j) {
            const std::uint8_t x = gf256::exp(static_cast<int>(j + 1));
            std::uint8_t acc = 0;
            for (auto byte : w) acc = gf256::add(gf256::mul(acc, x), byte);
            s[j] = acc;
        }
        return s;
    };
    const auto S = syndromes(word);
    auto finish = [&](bool ok, std::size_t corrected) {
        if (ok)
            std::copy(word.begin(), word.begin() + kRsK, out.message.begin());
        else
            std::copy(received.begin(), received.begin() + kRsK, out.message.begin());
        out.success = ok;
        out.corrected = corrected;
        return out;
    };
    if (std::all_of(S.begin(), S.end(), [](std::uint8_t s) { return s == 0; })) return finish(true, 0);

    // Berlekamp-Massey
    std::vector<std::uint8_t> C{1}, B{1};
    std::size_t L = 0, m = 1;
    std::uint8_t b = 1;
    for (std::size_t n = 0; n < kRsParity; ++n) {
        std::uint8_t d = S[n];
        for (std::size_t i = 1; i <= L && i < C.size(); ++i) d = gf256::add(d, gf256::mul(C[i], S[n - i]));
        if (d == 0) {
            ++m;
            continue;
        }
        const std::uint8_t coef = gf256::div(d, b);
        std::vector<std::uint8_t> T = C;
        if (C.size() < B.size() + m) C.resize(B.size() + m, 0);
        for (std::size_t i = 0; i < B.size(); ++i) C[i + m] = gf256::add(C[i + m], gf256::mul(coef, B[i]));
        if (2 * L <= n) {
            L = n + 1 - L;
            B = std::move(T);
            b = d;
            m = 1;
        } else {
            ++m;
        }
    }
    while (C.size() > 1 && C.back() == 0) C.pop_back();
    if (L > kRsT || C.size() - 1 != L) return finish(false, 0);

    // Chien search: position p (power of x) is in error when C(alpha^-p) == 0
    std::vector<std::size_t> positions;
    for (std::size_t p = 0; p < kRsN; ++p)
        if (eval_low_first(C, gf256::exp(-static_cast<int>(p))) == 0) positions.push_back(p);
    if (positions.size() != L) return finish(false, 0);

    // Omega = S(x) C(x) mod x^16, S(x) = sum S_{j+1} x^j
    std::array<std::uint8_t, kRsParity> omega{};
    for (std::size_t i = 0; i < kRsParity; ++i)
        for (std::size_t j = 0; j < C.size() && i + j < kRsParity; ++j)
            omega[i + j] = gf256::add(omega[i + j], gf256::mul(S[i], C[j]));
    // formal derivative keeps odd powers
    std::vector<std::uint8_t> dC(C.size(), 0);
    for (std::size_t i = 1; i < C.size(); i += 2) dC[i - 1] = C[i];

    for (auto p : positions) {
        const std::uint8_t x_inv = gf256::exp(-static_cast<int>(p));
        const std::uint8_t denom = eval_low_first(dC, x_inv);
        if (denom == 0) return finish(false, 0);
        const std::uint8_t magnitude = gf256::div(eval_low_first(omega, x_inv), denom);
        word[kRsN - 1 - p] = gf256::add(word[kRsN - 1 - p], magnitude);
    }
    const auto check = syndromes(word);
    if (!std::all_of(check.begin(), check.end(), [](std::uint8_t s) { return s == 0; }))
        return finish(false, 0);
    return finish(true, positions.size());
}

}  // namespace siclab::fec
