#pragma once

/**
 * @file image.hpp
 * @brief Dense float rasters and the pixel-level primitives built on them:
 *        separable filtering, bilateral denoising, SSIM maps, color-space
 *        conversion, robust normalization, and 16-bit PNM I/O.
 */

#include <filesystem>
#include <utility>
#include <vector>

#include "evsplat/common.hpp"

namespace evsplat::img {

// Row-major float raster, linear intensity, interleaved channels.
// Capture output stays in [0,1]; intermediate loss buffers may exceed it.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<double> data;

    Image() = default;
    Image(int w, int h, int c) : width(w), height(h), channels(c), data(size_t(w) * h * c, 0.0) {}

    static Image constant(int w, int h, int c, double v) {
        Image out(w, h, c);
        std::fill(out.data.begin(), out.data.end(), v);
        return out;
    }

    double& at(int x, int y, int c = 0) { return data[(size_t(y) * width + x) * channels + c]; }
    double at(int x, int y, int c = 0) const { return data[(size_t(y) * width + x) * channels + c]; }

    size_t pixel_count() const { return size_t(width) * height; }
    size_t sample_count() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }
    bool is_gray() const { return channels == 1; }
    bool is_rgb() const { return channels == 3; }
};

void require_same_shape(const Image& a, const Image& b, const char* where);
void require_gray(const Image& a, const char* where);
void require_rgb(const Image& a, const char* where);

// Elementwise helpers used across the loss modules.
Image clamp01_image(const Image& a);
double mean_value(const Image& a);
double min_value(const Image& a);
double max_value(const Image& a);

struct KernelSpec {
    enum class Kind { Gaussian, SobelX, SobelY, Bilateral };

    Kind kind = Kind::Gaussian;
    double sigma_space = 1.0;   // pixels
    double sigma_range = 0.1;   // intensity units, bilateral only
    int radius = 1;             // pixels

    static KernelSpec gaussian(double sigma, int radius = 0);
    static KernelSpec sobel_x();
    static KernelSpec sobel_y();
    static KernelSpec bilateral(double sigma_space, double sigma_range, int radius = 0);
};

// Normalized 1D Gaussian taps for a given spec (sum == 1 within 1e-6).
std::vector<double> gaussian_taps(double sigma, int radius);

// Border handling is edge replication everywhere, so constants are fixed
// points of smoothing.
Image convolve(const Image& im, const KernelSpec& k);

// Adjoint of the Gaussian `convolve` as a linear operator (replicate border
// makes the operator non-symmetric, so backward passes need the true
// transpose).
Image convolve_adjoint(const Image& im, const KernelSpec& k);

// Edge-preserving smoothing of grayscale inputs. The center pixel is excluded
// from its own weighted average, which makes isolated speckle collapse to the
// neighborhood consensus instead of surviving on self-similarity.
Image bilateral_denoise(const Image& im, const KernelSpec& k);

// Per-pixel SSIM over an 11x11 Gaussian window (sigma 1.5), unit dynamic
// range constants. include_luminance=false drops the luminance term and
// returns the contrast-structure product only.
Image ssim_map(const Image& a, const Image& b, bool include_luminance);

// Gradient of sum_p upstream(p) * ssim_map(a,b)(p) with respect to `a`;
// accumulated into grad_a.
void ssim_map_backward(const Image& a, const Image& b, bool include_luminance,
                       const Image& upstream, Image& grad_a);

// BT.601 luminance; U/V centered at 0.5. Returns the Y plane and the full
// YUV raster (U and V are channels 1 and 2 of the second image).
std::pair<Image, Image> rgb_to_yuv(const Image& im);

// Y plane of an RGB image (pass-through for grayscale).
Image luminance(const Image& im);
// Chain rule for `luminance`: scatter a Y-plane gradient back to RGB.
void luminance_backward(const Image& grad_y, Image& grad_rgb);

// Order statistic with linear interpolation between closest ranks; q in [0,1].
double percentile(const Image& im, double q);

// Clip to the [clip_lo, clip_hi] percentile range (percent units), then
// min-max map to [0,1]. A constant input maps to all zeros.
Image robust_normalize(const Image& im, double clip_lo, double clip_hi);

// --------------------------------------------------------------------------
// PNM I/O: binary PGM (P5) / PPM (P6), 16-bit big-endian, maxval 65535.
// --------------------------------------------------------------------------

Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& im);

// Snap samples to the 16-bit grid so that write/read round trips are exact.
Image quantize16(const Image& im);

}  // namespace evsplat::img
