#include "evsplat/losses.hpp"

#include <cmath>
#include <sstream>

namespace evsplat::losses {

void LossWeights::validate() const {
    for (double v : {lambda_blur, lambda_struct, lambda_evs, lambda_reg_r, lambda_reg_e,
                     alpha_blur}) {
        if (!(v >= 0.0) || !std::isfinite(v)) {
            throw Error(Errc::Config, "loss weights must be finite and >= 0");
        }
    }
}

std::string LossReport::to_json_line() const {
    std::ostringstream os;
    os.precision(10);
    os << "{\"iter\":" << iter << ",\"stage\":" << stage << ",\"total\":" << total
       << ",\"blur\":" << blur << ",\"struct\":" << struct_ << ",\"evs\":" << evs
       << ",\"reg_r\":" << reg_r << ",\"reg_e\":" << reg_e << "}";
    return os.str();
}

double loss_evs(const Image& render_s, const Image& render_e, const Image& acc, double theta,
                double floor, double grad_scale, Image* grad_s, Image* grad_e) {
    img::require_same_shape(render_s, render_e, "loss_evs");
    const Image ys = img::luminance(render_s);
    const Image ye = img::luminance(render_e);
    img::require_same_shape(ys, acc, "loss_evs");

    const double inv_n = 1.0 / double(ys.pixel_count());
    double total = 0.0;
    Image gys(ys.width, ys.height, 1), gye(ys.width, ys.height, 1);
    for (size_t i = 0; i < ys.data.size(); ++i) {
        const double cs = std::max(ys.data[i], floor);
        const double ce = std::max(ye.data[i], floor);
        const double r = std::log(ce) - std::log(cs) - theta * acc.data[i];
        total += r * r * inv_n;
        const double g = 2.0 * r * inv_n * grad_scale;
        if (ye.data[i] > floor) gye.data[i] = g / ce;
        if (ys.data[i] > floor) gys.data[i] = -g / cs;
    }
    if (grad_s) img::luminance_backward(gys, *grad_s);
    if (grad_e) img::luminance_backward(gye, *grad_e);
    return total;
}

double loss_struct(const Image& render_rgb, const Image& target_structure, const Image& weight,
                   const structure::StructureConfig& cfg, double grad_scale, Image* grad_render) {
    const structure::StructureResult s_render = structure::extract_structure(render_rgb, cfg);
    img::require_same_shape(s_render.structure, target_structure, "loss_struct");
    img::require_same_shape(s_render.structure, weight, "loss_struct");

    const Image map = img::ssim_map(s_render.structure, target_structure, false);
    const double inv_n = 1.0 / double(map.pixel_count());
    double reward = 0.0;
    for (size_t i = 0; i < map.data.size(); ++i) reward += weight.data[i] * map.data[i] * inv_n;
    const double value = 1.0 - reward;

    if (grad_render) {
        Image upstream(map.width, map.height, 1);
        for (size_t i = 0; i < map.data.size(); ++i) {
            upstream.data[i] = -weight.data[i] * inv_n * grad_scale;
        }
        Image grad_structure(map.width, map.height, 1);
        img::ssim_map_backward(s_render.structure, target_structure, false, upstream,
                               grad_structure);
        structure::extract_structure_backward(render_rgb, cfg, grad_structure, *grad_render);
    }
    return value;
}

double loss_struct_from_target(const Image& render_rgb, const Image& evs_target,
                               const Image& weight, const structure::StructureConfig& cfg,
                               double grad_scale, Image* grad_render) {
    const structure::StructureResult target = structure::extract_structure(evs_target, cfg);
    return loss_struct(render_rgb, target.structure, weight, cfg, grad_scale, grad_render);
}

double loss_blur(const Image& avg, const Image& observed, double alpha, double grad_scale,
                 Image* grad_avg) {
    img::require_same_shape(avg, observed, "loss_blur");
    const double inv_n = 1.0 / double(avg.sample_count());

    double l1 = 0.0;
    for (size_t i = 0; i < avg.data.size(); ++i) l1 += std::abs(avg.data[i] - observed.data[i]);
    l1 *= inv_n;

    const Image map = img::ssim_map(avg, observed, true);
    double mean_ssim = 0.0;
    for (double v : map.data) mean_ssim += v;
    mean_ssim *= inv_n;

    const double value = (1.0 - alpha) * l1 + alpha * (1.0 - mean_ssim);

    if (grad_avg) {
        for (size_t i = 0; i < avg.data.size(); ++i) {
            const double d = avg.data[i] - observed.data[i];
            const double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            grad_avg->data[i] += grad_scale * (1.0 - alpha) * sg * inv_n;
        }
        Image upstream = img::Image::constant(avg.width, avg.height, avg.channels,
                                              -grad_scale * alpha * inv_n);
        img::ssim_map_backward(avg, observed, true, upstream, *grad_avg);
    }
    return value;
}

double loss_reg_r(const std::vector<Image>& subframes, const Image& base_render,
                  const Image& observed, const img::KernelSpec& blur_kernel, double grad_scale,
                  std::vector<Image>* grad_subframes, Image* grad_base) {
    if (subframes.empty()) {
        throw Error(Errc::Dimension, "loss_reg_r: at least one sub-frame required");
    }
    img::require_same_shape(base_render, observed, "loss_reg_r");
    const Image g_base = img::convolve(base_render, blur_kernel);
    const double inv_n = 1.0 / double(base_render.sample_count());
    const double inv_sub = 1.0 / double(subframes.size());

    double value = 0.0;
    Image d_gbase(base_render.width, base_render.height, base_render.channels);

    for (size_t s = 0; s < subframes.size(); ++s) {
        img::require_same_shape(subframes[s], base_render, "loss_reg_r");
        const Image g_sub = img::convolve(subframes[s], blur_kernel);
        Image diff(g_sub.width, g_sub.height, g_sub.channels);
        double term = 0.0;
        for (size_t i = 0; i < g_sub.data.size(); ++i) {
            const double d = g_sub.data[i] - g_base.data[i];
            diff.data[i] = d;
            term += d * d;
        }
        value += term * inv_n * inv_sub;
        if (grad_subframes) {
            Image up(diff.width, diff.height, diff.channels);
            for (size_t i = 0; i < diff.data.size(); ++i) {
                up.data[i] = 2.0 * diff.data[i] * inv_n * inv_sub * grad_scale;
                d_gbase.data[i] -= up.data[i];
            }
            const Image g = img::convolve_adjoint(up, blur_kernel);
            for (size_t i = 0; i < g.data.size(); ++i) (*grad_subframes)[s].data[i] += g.data[i];
        } else {
            for (size_t i = 0; i < diff.data.size(); ++i) {
                d_gbase.data[i] -= 2.0 * diff.data[i] * inv_n * inv_sub * grad_scale;
            }
        }
    }

    double term2 = 0.0;
    for (size_t i = 0; i < g_base.data.size(); ++i) {
        const double d = g_base.data[i] - observed.data[i];
        term2 += d * d;
        d_gbase.data[i] += 2.0 * d * inv_n * grad_scale;
    }
    value += term2 * inv_n;

    if (grad_base) {
        const Image g = img::convolve_adjoint(d_gbase, blur_kernel);
        for (size_t i = 0; i < g.data.size(); ++i) grad_base->data[i] += g.data[i];
    }
    return value;
}

double loss_reg_e(const Image& render, const Image& reference, double grad_scale,
                  Image* grad_render) {
    img::require_same_shape(render, reference, "loss_reg_e");
    const double inv_n = 1.0 / double(render.sample_count());
    double value = 0.0;
    for (size_t i = 0; i < render.data.size(); ++i) {
        const double d = render.data[i] - reference.data[i];
        value += d * d * inv_n;
        if (grad_render) grad_render->data[i] += 2.0 * d * inv_n * grad_scale;
    }
    return value;
}

}  // namespace evsplat::losses
