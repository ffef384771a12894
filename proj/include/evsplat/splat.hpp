#pragma once

/**
 * @file splat.hpp
 * @brief The latent scene and its differentiable forward model: 2D Gaussian
 *        mixture rendering under similarity warps, exposure blur synthesis,
 *        and the residual deformation MLP.
 *
 * Conventions fixed here and relied on everywhere else:
 *  - pixel (x, y) samples at center (x + 0.5, y + 0.5);
 *  - warps act about the canvas center: w(p) = s R (p - c) + t + c, and map
 *    scene content to its image position (a Gaussian with mean m renders at
 *    w(m));
 *  - depth keys sort ascending, smaller = closer to the viewer.
 */

#include <optional>
#include <vector>

#include "evsplat/image.hpp"

namespace evsplat::splat {

using img::Image;

// ---------------------------------------------------------------------------
// Camera warp: 2D similarity standing in for a camera pose
// ---------------------------------------------------------------------------

struct CameraWarp {
    double rotation = 0.0;    // radians
    double log_zoom = 0.0;
    Vec2 translation{};

    double zoom() const { return std::exp(log_zoom); }

    Vec2 apply(const Vec2& p, const Vec2& center) const {
        const Rot2 r = Rot2::from_angle(rotation);
        return zoom() * r.apply(p - center) + translation + center;
    }

    CameraWarp inverse() const;
    // compose(a, b)(p) == a(b(p)); independent of the shared center.
    static CameraWarp compose(const CameraWarp& a, const CameraWarp& b);
};

// Chain rule through compose: given d(loss)/d(composed params), accumulate
// into the factors.
void compose_backward(const CameraWarp& a, const CameraWarp& b, const CameraWarp& grad_composed,
                      CameraWarp& grad_a, CameraWarp& grad_b);

// ---------------------------------------------------------------------------
// Gaussian mixture
// ---------------------------------------------------------------------------

struct GaussianMix2D {
    std::vector<Vec2> means;           // canvas pixels
    std::vector<Vec2> log_scales;      // anisotropic, scales = exp(log_scale)
    std::vector<double> rotations;     // radians
    std::vector<double> opacity_logits;
    std::vector<Vec3> color_logits;    // color = sigmoid(logit) per channel
    std::vector<double> depth_keys;    // fixed compositing order
    double background = 0.5;

    size_t size() const { return means.size(); }
    void resize(size_t n);
    void set_zero();             // zero all learnable fields (gradient buffers)
    GaussianMix2D zeros_like() const;
};

// Mixture with a warp folded in (means moved, rotations shifted, log-scales
// shifted by log_zoom); used by the warp-equivariance property.
GaussianMix2D prewarp(const GaussianMix2D& mix, const CameraWarp& w, const Vec2& center);

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

// Front-to-back alpha compositing over fixed mid-gray background. Gaussians
// are evaluated inside a 6-sigma Mahalanobis support with the tail value
// subtracted, so the footprint cutoff stays continuous.
Image render(const GaussianMix2D& mix, const CameraWarp& warp, int width, int height,
             int threads = 1);

// Exact adjoint of `render`: accumulates d(sum_p upstream(p) . render(p)) into
// grad_mix / grad_warp (both must be pre-sized; values are added).
void render_gradients(const GaussianMix2D& mix, const CameraWarp& warp, int width, int height,
                      const Image& upstream, GaussianMix2D& grad_mix, CameraWarp& grad_warp,
                      int threads = 1);

// ---------------------------------------------------------------------------
// Deformation MLP
// ---------------------------------------------------------------------------
// Input per Gaussian: positional encoding of the normalized mean (L_pos),
// encoding of a 2D per-view code (L_dir), raw log_scale (2) and rotation (1).
// Three hidden ReLU layers of `hidden` units, then three zero-initialized
// heads emitting per-sub-frame deltas for mean, log_scale, rotation.

struct DeformMLP {
    int n_sub = 5;
    int l_pos = 3;
    int l_dir = 10;
    int hidden = 64;

    std::vector<double> w1, b1, w2, b2, w3, b3;
    std::vector<double> wp, bp;  // mean head: 2 * n_sub outputs
    std::vector<double> ws, bs;  // log-scale head: 2 * n_sub outputs
    std::vector<double> wr, br;  // rotation head: n_sub outputs

    int input_dim() const { return 4 * l_pos + 4 * l_dir + 3; }

    static DeformMLP create(int n_sub, uint64_t seed, int hidden = 64, int l_pos = 3,
                            int l_dir = 10);
    void set_zero();
    DeformMLP zeros_like() const;
    size_t param_count() const;
};

// Per-Gaussian, per-sub-frame deltas, laid out [gaussian][sub].
struct MlpDeltas {
    int n_gauss = 0;
    int n_sub = 0;
    std::vector<Vec2> d_mean;
    std::vector<Vec2> d_log_scale;
    std::vector<double> d_rotation;

    void resize(int n_gauss_, int n_sub_);
    size_t idx(int g, int s) const { return size_t(g) * n_sub + s; }
};

// pos_norm_scale: means are mapped to roughly [-1,1] before encoding.
MlpDeltas mlp_forward(const DeformMLP& mlp, const GaussianMix2D& mix, const Vec2& view_code,
                      const Vec2& center, double pos_norm_scale);

// Accumulates gradients into grad_mlp and (through the encoded inputs) into
// grad_mix.
void mlp_backward(const DeformMLP& mlp, const GaussianMix2D& mix, const Vec2& view_code,
                  const Vec2& center, double pos_norm_scale, const MlpDeltas& upstream,
                  DeformMLP& grad_mlp, GaussianMix2D& grad_mix);

// Diagnostics: the encoded input vector for one Gaussian, and the hidden
// pre-activations (used by the gradient checks to verify ReLU margins).
std::vector<double> mlp_input_vector(const DeformMLP& mlp, const GaussianMix2D& mix, size_t g,
                                     const Vec2& view_code, const Vec2& center,
                                     double pos_norm_scale);
void mlp_preactivations(const DeformMLP& mlp, const std::vector<double>& input,
                        std::vector<double>& z1, std::vector<double>& z2, std::vector<double>& z3);

// ---------------------------------------------------------------------------
// Blur synthesis
// ---------------------------------------------------------------------------

// Learnable per-view sub-frame warp offsets, composed image-side with the
// view's base warp: warp_i = offset_i o base.
struct BlurModel {
    int n_sub = 5;
    bool use_mlp = true;
    std::vector<CameraWarp> sub_offsets;  // size n_sub

    static BlurModel identity(int n_sub, bool use_mlp);
    // Small seeded spread; symmetric initializations never separate the
    // sub-frames, so training needs this asymmetry.
    static BlurModel seeded(int n_sub, bool use_mlp, uint64_t seed, double trans_sigma_px = 0.3,
                            double rot_sigma_rad = 3e-3, double log_zoom_sigma = 1e-3);
};

struct SynthBlurResult {
    Image avg;
    std::vector<Image> subframes;
    std::vector<MlpDeltas> deltas;  // one entry when the MLP is active, else empty
};

SynthBlurResult synth_blur(const GaussianMix2D& mix, const CameraWarp& base, const BlurModel& blur,
                           const DeformMLP* mlp, const Vec2& view_code, int width, int height,
                           int threads = 1);

// Backward through synth_blur given per-sub-frame upstreams. Accumulates into
// every learnable factor. grad_mlp may be null when blur.use_mlp is false.
void synth_blur_backward(const GaussianMix2D& mix, const CameraWarp& base, const BlurModel& blur,
                         const DeformMLP* mlp, const Vec2& view_code, int width, int height,
                         const std::vector<Image>& upstream_per_subframe,
                         GaussianMix2D& grad_mix, CameraWarp& grad_base, BlurModel& grad_blur,
                         DeformMLP* grad_mlp, int threads = 1);

}  // namespace evsplat::splat
