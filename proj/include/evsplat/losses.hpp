#pragma once

/**
 * @file losses.hpp
 * @brief The five-term objective: event photometric loss, confidence-weighted
 *        event structure loss, blur synthesis loss, and the two consistency
 *        regularizers. Every evaluation returns the scalar and accumulates
 *        image-space gradients scaled by the caller's weight.
 */

#include "evsplat/eventsim.hpp"
#include "evsplat/image.hpp"
#include "evsplat/structure.hpp"

namespace evsplat::losses {

using img::Image;

struct LossWeights {
    double lambda_blur = 1.0;
    double lambda_struct = 0.2;
    double lambda_evs = 0.002;
    double lambda_reg_r = 0.2;
    double lambda_reg_e = 1.0;
    double alpha_blur = 0.2;

    void validate() const;
};

struct LossReport {
    int64_t iter = 0;
    int stage = 1;
    double total = 0.0;
    double blur = 0.0;
    double struct_ = 0.0;
    double evs = 0.0;
    double reg_r = 0.0;
    double reg_e = 0.0;

    std::string to_json_line() const;
};

// mean_p (log Y(render_e) - log Y(render_s) - theta * acc)^2 over clamped
// luminance; gradients flow to both renders.
double loss_evs(const Image& render_s, const Image& render_e, const Image& acc, double theta,
                double floor, double grad_scale, Image* grad_s, Image* grad_e);

// 1 - mean_p [ W(p) * SSIM_cs(S(render), target_structure)(p) ]. The target
// structure and the confidence mask are constants.
double loss_struct(const Image& render_rgb, const Image& target_structure, const Image& weight,
                   const structure::StructureConfig& cfg, double grad_scale, Image* grad_render);

// Convenience wrapper that extracts the target structure on the fly.
double loss_struct_from_target(const Image& render_rgb, const Image& evs_target,
                               const Image& weight, const structure::StructureConfig& cfg,
                               double grad_scale, Image* grad_render);

// (1 - alpha) * L1 + alpha * (1 - SSIM), standard SSIM per channel.
double loss_blur(const Image& avg, const Image& observed, double alpha, double grad_scale,
                 Image* grad_avg);

// (1/N) sum_i ||g(I_i) - g(I)||^2 + ||g(I) - I'||^2, pixel-mean norms.
double loss_reg_r(const std::vector<Image>& subframes, const Image& base_render,
                  const Image& observed, const img::KernelSpec& blur_kernel, double grad_scale,
                  std::vector<Image>* grad_subframes, Image* grad_base);

// Mean squared error against the frozen Stage-1 reference render.
double loss_reg_e(const Image& render, const Image& reference, double grad_scale,
                  Image* grad_render);

}  // namespace evsplat::losses
