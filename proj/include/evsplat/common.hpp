#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace evsplat {

// ---------------------------------------------------------------------------
// Error handling
// ---------------------------------------------------------------------------

enum class Errc {
    Config,     // bad configuration / arguments
    Io,         // filesystem / stream failures
    Format,     // malformed file contents
    Dimension,  // shape mismatch between operands
    Runtime,    // divergence and other runtime aborts
};

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Errc code() const { return code_; }

private:
    Errc code_;
};

// ---------------------------------------------------------------------------
// Small vector types
// ---------------------------------------------------------------------------

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2() = default;
    Vec2(double x_, double y_) : x(x_), y(y_) {}

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2& operator+=(const Vec2& o) {
        x += o.x;
        y += o.y;
        return *this;
    }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
};

inline Vec2 operator*(double s, const Vec2& v) { return {s * v.x, s * v.y}; }

struct Vec3 {
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;

    Vec3() = default;
    Vec3(double r_, double g_, double b_) : r(r_), g(g_), b(b_) {}

    Vec3 operator+(const Vec3& o) const { return {r + o.r, g + o.g, b + o.b}; }
    Vec3 operator-(const Vec3& o) const { return {r - o.r, g - o.g, b - o.b}; }
    Vec3 operator*(double s) const { return {r * s, g * s, b * s}; }
    Vec3& operator+=(const Vec3& o) {
        r += o.r;
        g += o.g;
        b += o.b;
        return *this;
    }
};

// 2x2 rotation, stored as cos/sin.
struct Rot2 {
    double c = 1.0;
    double s = 0.0;

    static Rot2 from_angle(double a) { return {std::cos(a), std::sin(a)}; }
    Vec2 apply(const Vec2& v) const { return {c * v.x - s * v.y, s * v.x + c * v.y}; }
    Vec2 apply_transposed(const Vec2& v) const { return {c * v.x + s * v.y, -s * v.x + c * v.y}; }
};

// ---------------------------------------------------------------------------
// Scalar helpers
// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Derivative of sigmoid expressed through its value.
inline double sigmoid_grad(double value) { return value * (1.0 - value); }

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline double deg_to_rad(double d) { return d * (M_PI / 180.0); }

// ---------------------------------------------------------------------------
// Deterministic RNG helpers
// ---------------------------------------------------------------------------
// std::mt19937_64 is bit-stable across platforms; the distributions are not,
// so uniform/normal draws are hand-rolled on top of the raw generator.

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    uint64_t uniform_index(uint64_t n) { return n ? next_u64() % n : 0; }

    double normal() {
        // Box-Muller, no cached spare so the state stays a pure function of draws.
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    uint64_t state_;
};

// ---------------------------------------------------------------------------
// Hashing (stable across builds, used for run-directory names)
// ---------------------------------------------------------------------------

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(uint64_t v);

// ---------------------------------------------------------------------------
// Row-parallel helper
// ---------------------------------------------------------------------------
// Static block partition: chunk boundaries depend only on (n, threads), so a
// fixed thread count gives a fixed reduction order.

int effective_threads(int requested);

// fn(chunk_index, begin, end) is invoked for `threads` contiguous chunks.
void parallel_chunks(int n, int threads, const std::function<void(int, int, int)>& fn);

}  // namespace evsplat
