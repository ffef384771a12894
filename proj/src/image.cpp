#include "evsplat/image.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

namespace evsplat::img {

void require_same_shape(const Image& a, const Image& b, const char* where) {
    if (!a.same_shape(b)) {
        throw Error(Errc::Dimension, std::string(where) + ": shape mismatch (" +
                                         std::to_string(a.width) + "x" + std::to_string(a.height) +
                                         "x" + std::to_string(a.channels) + " vs " +
                                         std::to_string(b.width) + "x" + std::to_string(b.height) +
                                         "x" + std::to_string(b.channels) + ")");
    }
}

void require_gray(const Image& a, const char* where) {
    if (!a.is_gray()) {
        throw Error(Errc::Dimension, std::string(where) + ": expected grayscale input");
    }
}

void require_rgb(const Image& a, const char* where) {
    if (!a.is_rgb()) {
        throw Error(Errc::Dimension, std::string(where) + ": expected RGB input");
    }
}

Image clamp01_image(const Image& a) {
    Image out = a;
    for (double& v : out.data) v = clamp01(v);
    return out;
}

double mean_value(const Image& a) {
    if (a.data.empty()) return 0.0;
    return std::accumulate(a.data.begin(), a.data.end(), 0.0) / double(a.data.size());
}

double min_value(const Image& a) { return *std::min_element(a.data.begin(), a.data.end()); }
double max_value(const Image& a) { return *std::max_element(a.data.begin(), a.data.end()); }

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

KernelSpec KernelSpec::gaussian(double sigma, int radius) {
    KernelSpec k;
    k.kind = Kind::Gaussian;
    k.sigma_space = sigma;
    k.radius = radius > 0 ? radius : std::max(1, int(std::ceil(3.0 * sigma)));
    return k;
}

KernelSpec KernelSpec::sobel_x() {
    KernelSpec k;
    k.kind = Kind::SobelX;
    k.radius = 1;
    return k;
}

KernelSpec KernelSpec::sobel_y() {
    KernelSpec k;
    k.kind = Kind::SobelY;
    k.radius = 1;
    return k;
}

KernelSpec KernelSpec::bilateral(double sigma_space, double sigma_range, int radius) {
    KernelSpec k;
    k.kind = Kind::Bilateral;
    k.sigma_space = sigma_space;
    k.sigma_range = sigma_range;
    k.radius = radius > 0 ? radius : std::max(1, int(std::ceil(2.0 * sigma_space)));
    return k;
}

std::vector<double> gaussian_taps(double sigma, int radius) {
    std::vector<double> taps(size_t(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double w = std::exp(-0.5 * (double(i) * i) / (sigma * sigma));
        taps[size_t(i + radius)] = w;
        sum += w;
    }
    for (double& w : taps) w /= sum;
    return taps;
}

static void validate_kernel(const KernelSpec& k, const char* where) {
    if (!std::isfinite(k.sigma_space) || !std::isfinite(k.sigma_range)) {
        throw Error(Errc::Config, std::string(where) + ": non-finite kernel parameters");
    }
    if (k.radius < 1) {
        throw Error(Errc::Config, std::string(where) + ": kernel radius must be >= 1");
    }
    if ((k.kind == KernelSpec::Kind::Gaussian || k.kind == KernelSpec::Kind::Bilateral) &&
        k.sigma_space <= 0.0) {
        throw Error(Errc::Config, std::string(where) + ": sigma_space must be > 0");
    }
    if (k.kind == KernelSpec::Kind::Bilateral && k.sigma_range <= 0.0) {
        throw Error(Errc::Config, std::string(where) + ": sigma_range must be > 0");
    }
}

static inline int clamp_coord(int v, int n) { return v < 0 ? 0 : (v >= n ? n - 1 : v); }

// Separable pass along x (horizontal=true) or y with replicate border.
static Image conv1d(const Image& im, const std::vector<double>& taps, bool horizontal) {
    const int r = int(taps.size() / 2);
    Image out(im.width, im.height, im.channels);
    for (int y = 0; y < im.height; ++y) {
        for (int x = 0; x < im.width; ++x) {
            for (int c = 0; c < im.channels; ++c) {
                double acc = 0.0;
                for (int i = -r; i <= r; ++i) {
                    const int xx = horizontal ? clamp_coord(x + i, im.width) : x;
                    const int yy = horizontal ? y : clamp_coord(y + i, im.height);
                    acc += taps[size_t(i + r)] * im.at(xx, yy, c);
                }
                out.at(x, y, c) = acc;
            }
        }
    }
    return out;
}

// Adjoint of conv1d: scatter through the same clamped index map.
static Image conv1d_adjoint(const Image& im, const std::vector<double>& taps, bool horizontal) {
    const int r = int(taps.size() / 2);
    Image out(im.width, im.height, im.channels);
    for (int y = 0; y < im.height; ++y) {
        for (int x = 0; x < im.width; ++x) {
            for (int c = 0; c < im.channels; ++c) {
                const double g = im.at(x, y, c);
                if (g == 0.0) continue;
                for (int i = -r; i <= r; ++i) {
                    const int xx = horizontal ? clamp_coord(x + i, im.width) : x;
                    const int yy = horizontal ? y : clamp_coord(y + i, im.height);
                    out.at(xx, yy, c) += taps[size_t(i + r)] * g;
                }
            }
        }
    }
    return out;
}

static Image sobel(const Image& im, bool along_x) {
    // Classic unnormalized 3x3 Sobel, replicate border.
    Image out(im.width, im.height, im.channels);
    static const double kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    for (int y = 0; y < im.height; ++y) {
        for (int x = 0; x < im.width; ++x) {
            for (int c = 0; c < im.channels; ++c) {
                double acc = 0.0;
                for (int j = -1; j <= 1; ++j) {
                    for (int i = -1; i <= 1; ++i) {
                        const double w = along_x ? kx[j + 1][i + 1] : kx[i + 1][j + 1];
                        acc += w * im.at(clamp_coord(x + i, im.width), clamp_coord(y + j, im.height), c);
                    }
                }
                out.at(x, y, c) = acc;
            }
        }
    }
    return out;
}

Image convolve(const Image& im, const KernelSpec& k) {
    validate_kernel(k, "convolve");
    switch (k.kind) {
        case KernelSpec::Kind::Gaussian: {
            const auto taps = gaussian_taps(k.sigma_space, k.radius);
            return conv1d(conv1d(im, taps, true), taps, false);
        }
        case KernelSpec::Kind::SobelX:
            return sobel(im, true);
        case KernelSpec::Kind::SobelY:
            return sobel(im, false);
        default:
            throw Error(Errc::Config, "convolve: bilateral kernels go through bilateral_denoise");
    }
}

Image convolve_adjoint(const Image& im, const KernelSpec& k) {
    if (k.kind != KernelSpec::Kind::Gaussian) {
        throw Error(Errc::Config, "convolve_adjoint: only gaussian kernels are supported");
    }
    validate_kernel(k, "convolve_adjoint");
    const auto taps = gaussian_taps(k.sigma_space, k.radius);
    return conv1d_adjoint(conv1d_adjoint(im, taps, false), taps, true);
}

Image bilateral_denoise(const Image& im, const KernelSpec& k) {
    if (k.kind != KernelSpec::Kind::Bilateral) {
        throw Error(Errc::Config, "bilateral_denoise: kernel kind must be bilateral");
    }
    validate_kernel(k, "bilateral_denoise");
    require_gray(im, "bilateral_denoise");

    const int r = k.radius;
    const double inv2ss = 0.5 / (k.sigma_space * k.sigma_space);
    const double inv2sr = 0.5 / (k.sigma_range * k.sigma_range);
    Image out(im.width, im.height, 1);
    for (int y = 0; y < im.height; ++y) {
        for (int x = 0; x < im.width; ++x) {
            const double center = im.at(x, y);
            double acc = 0.0, wsum = 0.0;
            for (int j = -r; j <= r; ++j) {
                for (int i = -r; i <= r; ++i) {
                    if (i == 0 && j == 0) continue;
                    const double v = im.at(clamp_coord(x + i, im.width), clamp_coord(y + j, im.height));
                    const double dv = v - center;
                    const double w = std::exp(-(double(i) * i + double(j) * j) * inv2ss - dv * dv * inv2sr);
                    acc += w * v;
                    wsum += w;
                }
            }
            out.at(x, y) = wsum > 0.0 ? acc / wsum : center;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

namespace {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

KernelSpec ssim_window() { return KernelSpec::gaussian(1.5, 5); }  // 11x11

struct SsimStats {
    Image mu_a, mu_b, e_aa, e_bb, e_ab;
};

SsimStats ssim_stats(const Image& a, const Image& b) {
    const KernelSpec w = ssim_window();
    Image aa(a.width, a.height, a.channels), bb(a.width, a.height, a.channels),
        ab(a.width, a.height, a.channels);
    for (size_t i = 0; i < a.data.size(); ++i) {
        aa.data[i] = a.data[i] * a.data[i];
        bb.data[i] = b.data[i] * b.data[i];
        ab.data[i] = a.data[i] * b.data[i];
    }
    return {convolve(a, w), convolve(b, w), convolve(aa, w), convolve(bb, w), convolve(ab, w)};
}

}  // namespace

Image ssim_map(const Image& a, const Image& b, bool include_luminance) {
    require_same_shape(a, b, "ssim_map");
    const SsimStats st = ssim_stats(a, b);
    Image out(a.width, a.height, a.channels);
    for (size_t i = 0; i < out.data.size(); ++i) {
        const double mu_a = st.mu_a.data[i];
        const double mu_b = st.mu_b.data[i];
        const double var_a = st.e_aa.data[i] - mu_a * mu_a;
        const double var_b = st.e_bb.data[i] - mu_b * mu_b;
        const double cov = st.e_ab.data[i] - mu_a * mu_b;
        const double cs = (2.0 * cov + kSsimC2) / (var_a + var_b + kSsimC2);
        if (include_luminance) {
            const double lum = (2.0 * mu_a * mu_b + kSsimC1) / (mu_a * mu_a + mu_b * mu_b + kSsimC1);
            out.data[i] = lum * cs;
        } else {
            out.data[i] = cs;
        }
    }
    return out;
}

void ssim_map_backward(const Image& a, const Image& b, bool include_luminance,
                       const Image& upstream, Image& grad_a) {
    require_same_shape(a, b, "ssim_map_backward");
    require_same_shape(a, upstream, "ssim_map_backward");
    require_same_shape(a, grad_a, "ssim_map_backward");
    const SsimStats st = ssim_stats(a, b);

    // Partials of the map w.r.t. the windowed statistics, weighted upstream.
    Image d_mu(a.width, a.height, a.channels);
    Image d_eaa(a.width, a.height, a.channels);
    Image d_eab(a.width, a.height, a.channels);
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double u = upstream.data[i];
        if (u == 0.0) continue;
        const double mu_a = st.mu_a.data[i];
        const double mu_b = st.mu_b.data[i];
        const double var_a = st.e_aa.data[i] - mu_a * mu_a;
        const double var_b = st.e_bb.data[i] - mu_b * mu_b;
        const double cov = st.e_ab.data[i] - mu_a * mu_b;
        const double num = 2.0 * cov + kSsimC2;
        const double den = var_a + var_b + kSsimC2;
        const double cs = num / den;

        // cs depends on mu_a (through cov and var_a), e_aa, e_ab.
        double dcs_dmu = (-2.0 * mu_b) / den + (2.0 * mu_a) * num / (den * den);
        double dcs_deaa = -num / (den * den);
        double dcs_deab = 2.0 / den;

        if (include_luminance) {
            const double lnum = 2.0 * mu_a * mu_b + kSsimC1;
            const double lden = mu_a * mu_a + mu_b * mu_b + kSsimC1;
            const double lum = lnum / lden;
            const double dlum_dmu = 2.0 * mu_b / lden - lnum * 2.0 * mu_a / (lden * lden);
            d_mu.data[i] = u * (dlum_dmu * cs + lum * dcs_dmu);
            d_eaa.data[i] = u * lum * dcs_deaa;
            d_eab.data[i] = u * lum * dcs_deab;
        } else {
            d_mu.data[i] = u * dcs_dmu;
            d_eaa.data[i] = u * dcs_deaa;
            d_eab.data[i] = u * dcs_deab;
        }
    }

    const KernelSpec w = ssim_window();
    const Image g_mu = convolve_adjoint(d_mu, w);
    const Image g_eaa = convolve_adjoint(d_eaa, w);
    const Image g_eab = convolve_adjoint(d_eab, w);
    for (size_t i = 0; i < a.data.size(); ++i) {
        grad_a.data[i] += g_mu.data[i] + 2.0 * a.data[i] * g_eaa.data[i] + b.data[i] * g_eab.data[i];
    }
}

// ---------------------------------------------------------------------------
// Color space
// ---------------------------------------------------------------------------

namespace {
constexpr double kYR = 0.299, kYG = 0.587, kYB = 0.114;  // BT.601
constexpr double kUScale = 0.492, kVScale = 0.877;
}  // namespace

std::pair<Image, Image> rgb_to_yuv(const Image& im) {
    require_rgb(im, "rgb_to_yuv");
    Image y(im.width, im.height, 1);
    Image yuv(im.width, im.height, 3);
    for (size_t p = 0; p < im.pixel_count(); ++p) {
        const double r = im.data[p * 3 + 0];
        const double g = im.data[p * 3 + 1];
        const double b = im.data[p * 3 + 2];
        const double lum = kYR * r + kYG * g + kYB * b;
        y.data[p] = lum;
        yuv.data[p * 3 + 0] = lum;
        yuv.data[p * 3 + 1] = kUScale * (b - lum) + 0.5;
        yuv.data[p * 3 + 2] = kVScale * (r - lum) + 0.5;
    }
    return {std::move(y), std::move(yuv)};
}

Image luminance(const Image& im) {
    if (im.is_gray()) return im;
    require_rgb(im, "luminance");
    Image y(im.width, im.height, 1);
    for (size_t p = 0; p < im.pixel_count(); ++p) {
        y.data[p] = kYR * im.data[p * 3 + 0] + kYG * im.data[p * 3 + 1] + kYB * im.data[p * 3 + 2];
    }
    return y;
}

void luminance_backward(const Image& grad_y, Image& grad_rgb) {
    if (grad_rgb.is_gray()) {
        for (size_t p = 0; p < grad_y.data.size(); ++p) grad_rgb.data[p] += grad_y.data[p];
        return;
    }
    for (size_t p = 0; p < grad_y.pixel_count(); ++p) {
        const double g = grad_y.data[p];
        grad_rgb.data[p * 3 + 0] += kYR * g;
        grad_rgb.data[p * 3 + 1] += kYG * g;
        grad_rgb.data[p * 3 + 2] += kYB * g;
    }
}

// ---------------------------------------------------------------------------
// Order statistics and normalization
// ---------------------------------------------------------------------------

double percentile(const Image& im, double q) {
    if (im.data.empty()) {
        throw Error(Errc::Dimension, "percentile: empty image");
    }
    if (q < 0.0 || q > 1.0) {
        throw Error(Errc::Config, "percentile: q must be in [0,1]");
    }
    std::vector<double> v = im.data;
    std::sort(v.begin(), v.end());
    const double rank = q * double(v.size() - 1);
    const size_t lo = size_t(std::floor(rank));
    const size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = rank - double(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

Image robust_normalize(const Image& im, double clip_lo, double clip_hi) {
    if (clip_lo >= clip_hi) {
        throw Error(Errc::Config, "robust_normalize: clip_lo must be < clip_hi");
    }
    const double lo = percentile(im, clip_lo / 100.0);
    const double hi = percentile(im, clip_hi / 100.0);
    Image out(im.width, im.height, im.channels);
    const double range = hi - lo;
    if (range < 1e-12) {
        return out;  // constant map carries no structure
    }
    for (size_t i = 0; i < im.data.size(); ++i) {
        const double v = std::clamp(im.data[i], lo, hi);
        out.data[i] = (v - lo) / range;
    }
    return out;
}

// ---------------------------------------------------------------------------
// PNM I/O (16-bit big-endian, maxval 65535)
// ---------------------------------------------------------------------------

namespace {

constexpr int kPnmMax = 65535;

int read_pnm_token(std::istream& in) {
    // Skips whitespace and '#' comments.
    while (true) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    int value = 0;
    if (!(in >> value)) {
        throw Error(Errc::Format, "pnm: malformed header");
    }
    return value;
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::Io, "pnm: cannot open " + path.string());
    }
    char magic[2] = {0, 0};
    in.read(magic, 2);
    int channels = 0;
    if (magic[0] == 'P' && magic[1] == '5') {
        channels = 1;
    } else if (magic[0] == 'P' && magic[1] == '6') {
        channels = 3;
    } else {
        throw Error(Errc::Format, "pnm: bad magic in " + path.string());
    }
    const int w = read_pnm_token(in);
    const int h = read_pnm_token(in);
    const int maxval = read_pnm_token(in);
    if (w <= 0 || h <= 0) {
        throw Error(Errc::Format, "pnm: bad dimensions in " + path.string());
    }
    if (maxval != kPnmMax) {
        throw Error(Errc::Format, "pnm: expected maxval 65535 in " + path.string());
    }
    in.get();  // single whitespace after maxval

    const size_t n = size_t(w) * h * channels;
    std::vector<unsigned char> raw(n * 2);
    in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
    if (size_t(in.gcount()) != raw.size()) {
        throw Error(Errc::Format, "pnm: truncated payload in " + path.string());
    }
    Image out(w, h, channels);
    for (size_t i = 0; i < n; ++i) {
        const unsigned v = (unsigned(raw[i * 2]) << 8) | unsigned(raw[i * 2 + 1]);
        out.data[i] = double(v) / double(kPnmMax);
    }
    return out;
}

void write_pnm(const std::filesystem::path& path, const Image& im) {
    if (!im.is_gray() && !im.is_rgb()) {
        throw Error(Errc::Dimension, "pnm: channels must be 1 or 3");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(Errc::Io, "pnm: cannot write " + path.string());
    }
    out << (im.is_gray() ? "P5" : "P6") << "\n"
        << im.width << " " << im.height << "\n"
        << kPnmMax << "\n";
    std::vector<unsigned char> raw(im.data.size() * 2);
    for (size_t i = 0; i < im.data.size(); ++i) {
        const double v = clamp01(im.data[i]);
        const unsigned q = unsigned(std::lround(v * kPnmMax));
        raw[i * 2] = (unsigned char)(q >> 8);
        raw[i * 2 + 1] = (unsigned char)(q & 0xff);
    }
    out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
    if (!out) {
        throw Error(Errc::Io, "pnm: write failed for " + path.string());
    }
}

Image quantize16(const Image& im) {
    Image out = im;
    for (double& v : out.data) {
        v = double(std::lround(clamp01(v) * kPnmMax)) / double(kPnmMax);
    }
    return out;
}

}  // namespace evsplat::img
