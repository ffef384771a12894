#pragma once

/**
 * @file structure.hpp
 * @brief Local-contrast-normalization structure extractor and the multi-scale
 *        event-confidence weight mask that feed the event structure loss.
 */

#include <optional>

#include "evsplat/image.hpp"

namespace evsplat::structure {

using img::Image;

struct StructureConfig {
    double local_sigma = 2.0;      // Gaussian scale for the local mu/sigma statistics
    double stability_const = 1e-3; // small constant guarding low-variance regions
};

struct MaskConfig {
    double sigma_small = 1.0;
    double sigma_large = 3.0;
    double persistence_gamma = 1.0;
    double gate_sharpness = 25.0;
    double gate_percentile = 0.85;
    double eps = 1e-12;
    int dilate_kernel = 3;          // odd, or 0 to disable
    double clip_lo = 1.0;           // robust-normalization clip percentiles
    double clip_hi = 99.0;
    bool dilate_after_normalize = true;

    void validate() const;
};

struct StructureResult {
    Image structure;               // S_norm in [0,1]
    std::optional<Image> chroma;   // YUV raster when the input was RGB
};

// S(x) = (Y - mu) / (sigma + c), min-max normalized to [0,1]. RGB inputs go
// through the BT.601 luminance plane; the YUV raster rides along as the color
// component.
StructureResult extract_structure(const Image& im, const StructureConfig& cfg);

// Gradient of sum_p upstream(p) * S_norm(im)(p) w.r.t. im, accumulated into
// grad_im (same shape as im; RGB chains through the luminance weights).
void extract_structure_backward(const Image& im, const StructureConfig& cfg,
                                const Image& upstream, Image& grad_im);

// Soft gate sigmoid(s * (M'_l - tau)); exposed for the monotonicity property
// tests.
Image gate_map(const Image& coarse_norm, const MaskConfig& cfg, double tau);

// Per-pixel max over a k x k neighborhood, stride 1, replicate border.
Image dilate_max(const Image& im, int k);

// Cross-scale persistence confidence mask for event-reconstructed frames.
Image weight_mask(const Image& evs_img, const MaskConfig& cfg);

}  // namespace evsplat::structure
