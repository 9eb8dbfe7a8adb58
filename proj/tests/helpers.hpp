#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "bitforge/common.hpp"
#include "bitforge/quant.hpp"
#include "bitforge/tensor.hpp"

namespace testutil {

using bitforge::Rng;
using bitforge::Tensor;

// Deterministic toy text: mostly a small word pool with learnable byte
// transitions, plus an unpredictable rare-word tail (random letter strings)
// that no tiny model can memorize. The tail keeps corpus cross-entropy above
// the model's entropy on its own samples, like the long tail of real text.
inline std::string synth_corpus(size_t target_bytes, uint64_t seed) {
    static const char* words[] = {"the",  "quick", "brown", "fox",   "jumps", "over",
                                  "lazy", "dog",   "stone", "river", "night", "light",
                                  "wind", "tree",  "bird",  "song"};
    Rng rng(seed);
    std::string text;
    text.reserve(target_bytes + 64);
    while (text.size() < target_bytes) {
        const int sentence_len = 4 + static_cast<int>(rng.below(5));
        for (int i = 0; i < sentence_len; ++i) {
            if (rng.below(8) == 0) {
                const int len = 3 + static_cast<int>(rng.below(5));
                for (int k = 0; k < len; ++k)
                    text += static_cast<char>('a' + rng.below(26));
            } else {
                text += words[rng.below(16)];
            }
            text += i + 1 == sentence_len ? ". " : " ";
        }
    }
    text.resize(target_bytes);
    return text;
}

inline Tensor random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.normal(0.0, scale);
    return t;
}

// reference triple-loop product, independent of the graph kernels
inline Tensor naive_matmul(const Tensor& a, const Tensor& b) {
    const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t q = 0; q < k; ++q) acc += a[i * k + q] * b[q * n + j];
            c[i * n + j] = acc;
        }
    return c;
}

// --- brute-force quantization oracles ---------------------------------------
// Exhaustive scans over the reproduction values with the documented tie
// rules: NF ties take the smaller-magnitude level, INT rounding is
// half-away-from-zero (ties prefer the larger magnitude code).

inline uint8_t oracle_nearest_nf(double w, double scale, const std::vector<double>& levels,
                                 size_t lo, size_t hi) {
    size_t best = lo;
    double best_err = std::abs(w - levels[lo] * scale);
    for (size_t i = lo + 1; i <= hi; ++i) {
        const double err = std::abs(w - levels[i] * scale);
        if (err < best_err || (err == best_err && std::abs(levels[i]) < std::abs(levels[best]))) {
            best = i;
            best_err = err;
        }
    }
    return static_cast<uint8_t>(best);
}

struct OracleGroup {
    std::vector<uint8_t> codes;
    double a = 1.0, b = 1.0;  // (s_pos, s_neg) or (s, z) or (s, unused)
};

inline OracleGroup oracle_nf_asym(const std::vector<double>& w,
                                  const bitforge::quant::Codebook& cb) {
    OracleGroup g;
    double max_pos = 0.0, min_nonpos = 0.0;
    for (double v : w) {
        if (v > 0.0) max_pos = std::max(max_pos, v);
        if (v <= 0.0) min_nonpos = std::min(min_nonpos, v);
    }
    g.a = max_pos > 0.0 ? max_pos : 1.0;
    g.b = min_nonpos < 0.0 ? -min_nonpos : 1.0;
    const size_t zi = static_cast<size_t>(cb.zero_index);
    for (double v : w) {
        if (v > 0.0)
            g.codes.push_back(oracle_nearest_nf(v, g.a, cb.levels, zi, cb.levels.size() - 1));
        else
            g.codes.push_back(oracle_nearest_nf(v, g.b, cb.levels, 0, zi));
    }
    return g;
}

inline OracleGroup oracle_nf_sym(const std::vector<double>& w,
                                 const bitforge::quant::Codebook& cb) {
    OracleGroup g;
    double max_abs = 0.0;
    for (double v : w) max_abs = std::max(max_abs, std::abs(v));
    g.a = max_abs > 0.0 ? max_abs : 1.0;
    for (double v : w)
        g.codes.push_back(oracle_nearest_nf(v, g.a, cb.levels, 0, cb.levels.size() - 1));
    return g;
}

inline OracleGroup oracle_int_asym(const std::vector<double>& w, int bits) {
    OracleGroup g;
    double lo = w[0], hi = w[0];
    for (double v : w) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const int64_t qmax = (int64_t{1} << bits) - 1;
    g.b = lo;                                                      // zero point
    g.a = hi > lo ? (hi - lo) / static_cast<double>(qmax) : 1.0;   // scale
    for (double v : w) {
        // exhaustive nearest reconstruction; halfway prefers the larger code
        int64_t best = 0;
        double best_err = std::abs(v - g.b);
        for (int64_t c = 1; c <= qmax; ++c) {
            const double err = std::abs(v - (static_cast<double>(c) * g.a + g.b));
            if (err < best_err || err == best_err) {
                best = c;
                best_err = err;
            }
        }
        g.codes.push_back(static_cast<uint8_t>(best));
    }
    return g;
}

inline OracleGroup oracle_int_sym(const std::vector<double>& w, int bits) {
    OracleGroup g;
    double max_abs = 0.0;
    for (double v : w) max_abs = std::max(max_abs, std::abs(v));
    const int64_t qmax = (int64_t{1} << (bits - 1)) - 1;
    g.a = max_abs > 0.0 ? max_abs / static_cast<double>(qmax) : 1.0;
    for (double v : w) {
        // signed codes; halfway prefers larger magnitude (away from zero)
        int64_t best = -qmax;
        double best_err = std::abs(v - static_cast<double>(-qmax) * g.a);
        for (int64_t c = -qmax + 1; c <= qmax; ++c) {
            const double err = std::abs(v - static_cast<double>(c) * g.a);
            const bool tie_wins = err == best_err && std::llabs(c) > std::llabs(best);
            if (err < best_err || tie_wins) {
                best = c;
                best_err = err;
            }
        }
        g.codes.push_back(static_cast<uint8_t>(best + qmax));
    }
    return g;
}

// FNV-1a over a file's bytes
inline uint64_t file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    uint64_t h = 1469598103934665603ull;
    char c;
    while (f.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        root_ = std::filesystem::temp_directory_path() /
                ("bitforge_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(root_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(root_, ec);
    }
    std::string path(const std::string& name) const { return (root_ / name).string(); }

  private:
    std::filesystem::path root_;
};

inline void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
}

}  // namespace testutil
