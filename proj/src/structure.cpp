#include "evsplat/structure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace evsplat::structure {

using img::KernelSpec;

void MaskConfig::validate() const {
    if (!(sigma_small > 0.0) || !(sigma_large > 0.0) || sigma_small >= sigma_large) {
        throw Error(Errc::Config, "mask: require 0 < sigma_small < sigma_large");
    }
    if (!(gate_sharpness > 0.0)) {
        throw Error(Errc::Config, "mask: gate_sharpness must be > 0");
    }
    if (!(gate_percentile > 0.0) || !(gate_percentile < 1.0)) {
        throw Error(Errc::Config, "mask: gate_percentile must be in (0,1)");
    }
    if (!(eps > 0.0)) {
        throw Error(Errc::Config, "mask: eps must be > 0");
    }
    if (dilate_kernel != 0 && (dilate_kernel < 1 || dilate_kernel % 2 == 0)) {
        throw Error(Errc::Config, "mask: dilate_kernel must be odd or 0");
    }
    if (clip_lo >= clip_hi) {
        throw Error(Errc::Config, "mask: clip_lo must be < clip_hi");
    }
    if (!(persistence_gamma > 0.0)) {
        throw Error(Errc::Config, "mask: persistence_gamma must be > 0");
    }
}

// ---------------------------------------------------------------------------
// Structure extractor
// ---------------------------------------------------------------------------

namespace {

struct LocalStats {
    Image mu;
    Image sigma;   // sqrt(max(E[Y^2] - mu^2, 0))
    Image var;     // pre-sqrt value, kept for the backward pass
};

LocalStats local_stats(const Image& y, double sigma) {
    const KernelSpec g = KernelSpec::gaussian(sigma);
    Image y2(y.width, y.height, 1);
    for (size_t i = 0; i < y.data.size(); ++i) y2.data[i] = y.data[i] * y.data[i];
    LocalStats st{img::convolve(y, g), Image(y.width, y.height, 1), Image(y.width, y.height, 1)};
    const Image ey2 = img::convolve(y2, g);
    for (size_t i = 0; i < y.data.size(); ++i) {
        const double var = std::max(ey2.data[i] - st.mu.data[i] * st.mu.data[i], 0.0);
        st.var.data[i] = var;
        st.sigma.data[i] = std::sqrt(var);
    }
    return st;
}

Image raw_structure(const Image& y, const StructureConfig& cfg, LocalStats* stats_out) {
    LocalStats st = local_stats(y, cfg.local_sigma);
    Image s(y.width, y.height, 1);
    for (size_t i = 0; i < y.data.size(); ++i) {
        s.data[i] = (y.data[i] - st.mu.data[i]) / (st.sigma.data[i] + cfg.stability_const);
    }
    if (stats_out) *stats_out = std::move(st);
    return s;
}

struct MinMax {
    double lo = 0.0, hi = 0.0;
    size_t lo_idx = 0, hi_idx = 0;
    bool degenerate = true;
};

MinMax min_max(const Image& s) {
    MinMax mm;
    mm.lo = mm.hi = s.data[0];
    for (size_t i = 1; i < s.data.size(); ++i) {
        if (s.data[i] < mm.lo) {
            mm.lo = s.data[i];
            mm.lo_idx = i;
        }
        if (s.data[i] > mm.hi) {
            mm.hi = s.data[i];
            mm.hi_idx = i;
        }
    }
    mm.degenerate = (mm.hi - mm.lo) < 1e-12;
    return mm;
}

}  // namespace

StructureResult extract_structure(const Image& im, const StructureConfig& cfg) {
    if (!(cfg.local_sigma > 0.0) || !(cfg.stability_const > 0.0)) {
        throw Error(Errc::Config, "extract_structure: sigmas and stability constant must be > 0");
    }
    StructureResult out;
    Image y;
    if (im.is_rgb()) {
        auto [yp, yuv] = img::rgb_to_yuv(im);
        y = std::move(yp);
        out.chroma = std::move(yuv);
    } else {
        img::require_gray(im, "extract_structure");
        y = im;
    }
    Image s = raw_structure(y, cfg, nullptr);
    const MinMax mm = min_max(s);
    Image norm(s.width, s.height, 1);
    if (!mm.degenerate) {
        const double range = mm.hi - mm.lo;
        for (size_t i = 0; i < s.data.size(); ++i) norm.data[i] = (s.data[i] - mm.lo) / range;
    }
    out.structure = std::move(norm);
    return out;
}

void extract_structure_backward(const Image& im, const StructureConfig& cfg,
                                const Image& upstream, Image& grad_im) {
    const Image y = img::luminance(im);
    img::require_same_shape(y, upstream, "extract_structure_backward");

    LocalStats st;
    const Image s = raw_structure(y, cfg, &st);
    const MinMax mm = min_max(s);
    if (mm.degenerate) return;  // S_norm is identically zero with zero gradient
    const double range = mm.hi - mm.lo;

    // Min-max normalization backward. The extremes are order statistics at
    // fixed pixels; their contribution lands on those pixels.
    Image g_s(s.width, s.height, 1);
    double sum_u = 0.0, sum_u_norm = 0.0;
    for (size_t i = 0; i < s.data.size(); ++i) {
        const double u = upstream.data[i];
        g_s.data[i] = u / range;
        sum_u += u;
        sum_u_norm += u * (s.data[i] - mm.lo) / range;
    }
    g_s.data[mm.hi_idx] += -sum_u_norm / range;
    g_s.data[mm.lo_idx] += (sum_u_norm - sum_u) / range;

    // S = (Y - mu) / (sigma + c).
    Image g_y(s.width, s.height, 1);
    Image g_mu(s.width, s.height, 1);
    Image g_var(s.width, s.height, 1);
    for (size_t i = 0; i < s.data.size(); ++i) {
        const double g = g_s.data[i];
        if (g == 0.0) continue;
        const double den = st.sigma.data[i] + cfg.stability_const;
        g_y.data[i] += g / den;
        g_mu.data[i] += -g / den;
        const double g_sigma = -g * (y.data[i] - st.mu.data[i]) / (den * den);
        if (st.var.data[i] > 1e-30) {
            g_var.data[i] = g_sigma * 0.5 / st.sigma.data[i];
        }
    }

    // var = E[Y^2] - mu^2 with mu = G*Y and E[Y^2] = G*(Y^2).
    const KernelSpec g = KernelSpec::gaussian(cfg.local_sigma);
    for (size_t i = 0; i < s.data.size(); ++i) {
        g_mu.data[i] += -2.0 * st.mu.data[i] * g_var.data[i];
    }
    const Image g_from_mu = img::convolve_adjoint(g_mu, g);
    const Image g_from_ey2 = img::convolve_adjoint(g_var, g);
    for (size_t i = 0; i < s.data.size(); ++i) {
        g_y.data[i] += g_from_mu.data[i] + 2.0 * y.data[i] * g_from_ey2.data[i];
    }

    img::luminance_backward(g_y, grad_im);
}

// ---------------------------------------------------------------------------
// Weight mask
// ---------------------------------------------------------------------------

Image gate_map(const Image& coarse_norm, const MaskConfig& cfg, double tau) {
    Image out(coarse_norm.width, coarse_norm.height, 1);
    for (size_t i = 0; i < coarse_norm.data.size(); ++i) {
        out.data[i] = sigmoid(cfg.gate_sharpness * (coarse_norm.data[i] - tau));
    }
    return out;
}

Image dilate_max(const Image& im, int k) {
    if (k <= 1) return im;
    const int r = k / 2;
    Image out(im.width, im.height, im.channels);
    for (int y = 0; y < im.height; ++y) {
        for (int x = 0; x < im.width; ++x) {
            for (int c = 0; c < im.channels; ++c) {
                double m = -std::numeric_limits<double>::infinity();
                for (int j = -r; j <= r; ++j) {
                    for (int i = -r; i <= r; ++i) {
                        const int xx = std::clamp(x + i, 0, im.width - 1);
                        const int yy = std::clamp(y + j, 0, im.height - 1);
                        m = std::max(m, im.at(xx, yy, c));
                    }
                }
                out.at(x, y, c) = m;
            }
        }
    }
    return out;
}

Image weight_mask(const Image& evs_img, const MaskConfig& cfg) {
    cfg.validate();
    img::require_gray(evs_img, "weight_mask");

    const Image fine = img::convolve(evs_img, KernelSpec::gaussian(cfg.sigma_small));
    const Image coarse = img::convolve(evs_img, KernelSpec::gaussian(cfg.sigma_large));

    auto grad_mag = [&](const Image& im) {
        const Image gx = img::convolve(im, KernelSpec::sobel_x());
        const Image gy = img::convolve(im, KernelSpec::sobel_y());
        Image m(im.width, im.height, 1);
        for (size_t i = 0; i < m.data.size(); ++i) {
            m.data[i] = std::sqrt(gx.data[i] * gx.data[i] + gy.data[i] * gy.data[i] + cfg.eps);
        }
        return m;
    };

    const Image m_fine = img::robust_normalize(grad_mag(fine), cfg.clip_lo, cfg.clip_hi);
    const Image m_coarse = img::robust_normalize(grad_mag(coarse), cfg.clip_lo, cfg.clip_hi);

    const double tau = img::percentile(m_coarse, cfg.gate_percentile);
    const Image gate = gate_map(m_coarse, cfg, tau);

    Image w_hat(evs_img.width, evs_img.height, 1);
    for (size_t i = 0; i < w_hat.data.size(); ++i) {
        const double persistence =
            std::pow(std::min(m_coarse.data[i] / (m_fine.data[i] + cfg.eps), 1.0),
                     cfg.persistence_gamma);
        w_hat.data[i] = m_coarse.data[i] * persistence * gate.data[i];
    }

    if (cfg.dilate_kernel > 1 && !cfg.dilate_after_normalize) {
        w_hat = dilate_max(w_hat, cfg.dilate_kernel);
    }
    Image w = img::robust_normalize(w_hat, cfg.clip_lo, cfg.clip_hi);
    if (cfg.dilate_kernel > 1 && cfg.dilate_after_normalize) {
        w = dilate_max(w, cfg.dilate_kernel);
    }
    return w;
}

}  // namespace evsplat::structure
