#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ldmole {

using Vec = std::vector<double>;

// Dense row-major matrix. All model tensors are small, so a flat
// std::vector<double> with naive loops is plenty.
struct Matrix {
    int rows = 0;
    int cols = 0;
    Vec a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * static_cast<size_t>(c), 0.0) {}

    double &operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }
};

inline Vec matvec(const Matrix &m, const Vec &x) {
    if (static_cast<int>(x.size()) != m.cols)
        throw std::invalid_argument("matvec: dimension mismatch");
    Vec y(m.rows, 0.0);
    for (int i = 0; i < m.rows; ++i) {
        double s = 0.0;
        const double *row = m.a.data() + static_cast<size_t>(i) * m.cols;
        for (int j = 0; j < m.cols; ++j) s += row[j] * x[j];
        y[i] = s;
    }
    return y;
}

// y^T m, i.e. gradient of matvec w.r.t. x.
inline Vec matTvec(const Matrix &m, const Vec &y) {
    if (static_cast<int>(y.size()) != m.rows)
        throw std::invalid_argument("matTvec: dimension mismatch");
    Vec x(m.cols, 0.0);
    for (int i = 0; i < m.rows; ++i) {
        const double yi = y[i];
        if (yi == 0.0) continue;
        const double *row = m.a.data() + static_cast<size_t>(i) * m.cols;
        for (int j = 0; j < m.cols; ++j) x[j] += yi * row[j];
    }
    return x;
}

// g += y x^T
inline void add_outer(Matrix &g, const Vec &y, const Vec &x) {
    for (int i = 0; i < g.rows; ++i) {
        const double yi = y[i];
        if (yi == 0.0) continue;
        double *row = g.a.data() + static_cast<size_t>(i) * g.cols;
        for (int j = 0; j < g.cols; ++j) row[j] += yi * x[j];
    }
}

inline double dot(const Vec &a, const Vec &b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline bool all_finite(const Vec &v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// Round through float32. Parameters are kept at float32-representable
// values so that checkpoints (stored as f32) round-trip bit-exactly.
inline double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Deterministic sub-seed derivation: identical (seed, tag) pairs yield
// identical streams across runs and router configurations.
inline uint64_t subseed(uint64_t seed, std::string_view tag) {
    return splitmix64(seed ^ fnv1a64(tag));
}

struct Rng {
    std::mt19937_64 eng;

    explicit Rng(uint64_t seed) : eng(seed) {}

    double normal(double mean = 0.0, double stddev = 1.0) {
        std::normal_distribution<double> d(mean, stddev);
        return d(eng);
    }
    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(eng);
    }
    int uniform_int(int lo, int hi) {  // inclusive
        std::uniform_int_distribution<int> d(lo, hi);
        return d(eng);
    }
};

}  // namespace ldmole
