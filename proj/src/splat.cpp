#include "evsplat/splat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace evsplat::splat {

namespace {

// Support cutoff in Mahalanobis units. The tail value is subtracted from the
// kernel so the cutoff is continuous; at 6 sigma the subtracted constant is
// exp(-18) ~ 1.5e-8, far below the gradient-check tolerances.
constexpr double kCutoff = 6.0;
constexpr double kCutoffQ = kCutoff * kCutoff;
const double kTail = std::exp(-0.5 * kCutoffQ);

inline Vec2 perp_neg(const Vec2& v) { return {-v.y, v.x}; }  // (-J) v

}  // namespace

// ---------------------------------------------------------------------------
// CameraWarp
// ---------------------------------------------------------------------------

CameraWarp CameraWarp::inverse() const {
    CameraWarp inv;
    inv.rotation = -rotation;
    inv.log_zoom = -log_zoom;
    const Rot2 rinv = Rot2::from_angle(-rotation);
    inv.translation = (-1.0 / zoom()) * rinv.apply(translation);
    return inv;
}

CameraWarp CameraWarp::compose(const CameraWarp& a, const CameraWarp& b) {
    CameraWarp out;
    out.rotation = a.rotation + b.rotation;
    out.log_zoom = a.log_zoom + b.log_zoom;
    const Rot2 ra = Rot2::from_angle(a.rotation);
    out.translation = a.zoom() * ra.apply(b.translation) + a.translation;
    return out;
}

void compose_backward(const CameraWarp& a, const CameraWarp& b, const CameraWarp& grad_composed,
                      CameraWarp& grad_a, CameraWarp& grad_b) {
    const Rot2 ra = Rot2::from_angle(a.rotation);
    const double sa = a.zoom();
    const Vec2 rotated = ra.apply(b.translation);

    grad_a.rotation += grad_composed.rotation + grad_composed.translation.dot(sa * perp_neg(rotated));
    grad_a.log_zoom += grad_composed.log_zoom + grad_composed.translation.dot(sa * rotated);
    grad_a.translation += grad_composed.translation;

    grad_b.rotation += grad_composed.rotation;
    grad_b.log_zoom += grad_composed.log_zoom;
    grad_b.translation += sa * ra.apply_transposed(grad_composed.translation);
}

// ---------------------------------------------------------------------------
// GaussianMix2D
// ---------------------------------------------------------------------------

void GaussianMix2D::resize(size_t n) {
    means.resize(n);
    log_scales.resize(n);
    rotations.resize(n, 0.0);
    opacity_logits.resize(n, 0.0);
    color_logits.resize(n);
    depth_keys.resize(n, 0.0);
}

void GaussianMix2D::set_zero() {
    std::fill(means.begin(), means.end(), Vec2{});
    std::fill(log_scales.begin(), log_scales.end(), Vec2{});
    std::fill(rotations.begin(), rotations.end(), 0.0);
    std::fill(opacity_logits.begin(), opacity_logits.end(), 0.0);
    std::fill(color_logits.begin(), color_logits.end(), Vec3{});
}

GaussianMix2D GaussianMix2D::zeros_like() const {
    GaussianMix2D z;
    z.resize(size());
    z.depth_keys = depth_keys;
    z.background = background;
    return z;
}

GaussianMix2D prewarp(const GaussianMix2D& mix, const CameraWarp& w, const Vec2& center) {
    GaussianMix2D out = mix;
    for (size_t i = 0; i < mix.size(); ++i) {
        out.means[i] = w.apply(mix.means[i], center);
        out.rotations[i] += w.rotation;
        out.log_scales[i].x += w.log_zoom;
        out.log_scales[i].y += w.log_zoom;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Render
// ---------------------------------------------------------------------------

namespace {

struct Prepared {
    Vec2 mean;       // warped mean, canvas coordinates
    double cos_r = 1.0, sin_r = 0.0;
    double sx = 1.0, sy = 1.0;  // warped scales
    double opacity = 0.0;
    Vec3 color;
    double x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bbox
    int src = 0;                              // index into the mixture
};

struct RenderPlan {
    std::vector<Prepared> gaussians;          // depth-sorted
    std::vector<std::vector<int>> row_lists;  // per row, indices into `gaussians`
};

RenderPlan prepare(const GaussianMix2D& mix, const CameraWarp& warp, int width, int height) {
    RenderPlan plan;
    const Vec2 center(width * 0.5, height * 0.5);
    const size_t n = mix.size();

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (mix.depth_keys[size_t(a)] != mix.depth_keys[size_t(b)])
            return mix.depth_keys[size_t(a)] < mix.depth_keys[size_t(b)];
        return a < b;
    });

    plan.gaussians.reserve(n);
    plan.row_lists.assign(size_t(height), {});
    for (int oi : order) {
        const size_t i = size_t(oi);
        Prepared p;
        p.src = oi;
        p.mean = warp.apply(mix.means[i], center);
        const double phi = mix.rotations[i] + warp.rotation;
        p.cos_r = std::cos(phi);
        p.sin_r = std::sin(phi);
        p.sx = std::exp(mix.log_scales[i].x + warp.log_zoom);
        p.sy = std::exp(mix.log_scales[i].y + warp.log_zoom);
        p.opacity = sigmoid(mix.opacity_logits[i]);
        p.color = Vec3(sigmoid(mix.color_logits[i].r), sigmoid(mix.color_logits[i].g),
                       sigmoid(mix.color_logits[i].b));

        // Axis-aligned bbox of the cutoff ellipse from the image-frame
        // covariance diagonal.
        const double sxx = p.cos_r * p.cos_r * p.sx * p.sx + p.sin_r * p.sin_r * p.sy * p.sy;
        const double syy = p.sin_r * p.sin_r * p.sx * p.sx + p.cos_r * p.cos_r * p.sy * p.sy;
        const double half_w = kCutoff * std::sqrt(sxx);
        const double half_h = kCutoff * std::sqrt(syy);
        p.x0 = p.mean.x - half_w;
        p.x1 = p.mean.x + half_w;
        p.y0 = p.mean.y - half_h;
        p.y1 = p.mean.y + half_h;

        const int ry0 = std::max(0, int(std::floor(p.y0 - 0.5)));
        const int ry1 = std::min(height - 1, int(std::ceil(p.y1 - 0.5)));
        const int idx = int(plan.gaussians.size());
        plan.gaussians.push_back(p);
        for (int y = ry0; y <= ry1; ++y) plan.row_lists[size_t(y)].push_back(idx);
    }
    return plan;
}

struct Hit {
    int plan_idx;
    double alpha;
    double expq;   // exp(-q/2)
    double ux, uy;
    double transmittance;  // T before this hit
};

// Collects the ordered contributions for one pixel.
inline void gather_hits(const RenderPlan& plan, const std::vector<int>& row, double px, double py,
                        std::vector<Hit>& hits) {
    hits.clear();
    double t = 1.0;
    for (int idx : row) {
        const Prepared& g = plan.gaussians[size_t(idx)];
        if (px < g.x0 || px > g.x1) continue;
        const double dx = px - g.mean.x;
        const double dy = py - g.mean.y;
        const double ux = g.cos_r * dx + g.sin_r * dy;
        const double uy = -g.sin_r * dx + g.cos_r * dy;
        const double q = (ux * ux) / (g.sx * g.sx) + (uy * uy) / (g.sy * g.sy);
        if (q >= kCutoffQ) continue;
        const double expq = std::exp(-0.5 * q);
        const double alpha = g.opacity * (expq - kTail);
        hits.push_back(Hit{idx, alpha, expq, ux, uy, t});
        t *= 1.0 - alpha;
    }
}

// Per-Gaussian gradients in the warped frame, folded back into mixture/warp
// coordinates once per render.
struct WarpedGrad {
    Vec2 mean;
    double phi = 0.0;
    Vec2 log_scale;
    double opacity_logit = 0.0;
    Vec3 color_logit;
};

}  // namespace

Image render(const GaussianMix2D& mix, const CameraWarp& warp, int width, int height,
             int threads) {
    const RenderPlan plan = prepare(mix, warp, width, height);
    Image out(width, height, 3);
    const double bg = mix.background;

    parallel_chunks(height, effective_threads(threads), [&](int, int y0, int y1) {
        std::vector<Hit> hits;
        hits.reserve(64);
        for (int y = y0; y < y1; ++y) {
            const auto& row = plan.row_lists[size_t(y)];
            const double py = y + 0.5;
            for (int x = 0; x < width; ++x) {
                gather_hits(plan, row, x + 0.5, py, hits);
                double r = 0.0, g = 0.0, b = 0.0, t = 1.0;
                for (const Hit& hit : hits) {
                    const Vec3& c = plan.gaussians[size_t(hit.plan_idx)].color;
                    r += hit.alpha * c.r * t;
                    g += hit.alpha * c.g * t;
                    b += hit.alpha * c.b * t;
                    t *= 1.0 - hit.alpha;
                }
                out.at(x, y, 0) = r + bg * t;
                out.at(x, y, 1) = g + bg * t;
                out.at(x, y, 2) = b + bg * t;
            }
        }
    });
    return out;
}

void render_gradients(const GaussianMix2D& mix, const CameraWarp& warp, int width, int height,
                      const Image& upstream, GaussianMix2D& grad_mix, CameraWarp& grad_warp,
                      int threads) {
    if (upstream.width != width || upstream.height != height || upstream.channels != 3) {
        throw Error(Errc::Dimension, "render_gradients: upstream must be W x H x 3");
    }
    const RenderPlan plan = prepare(mix, warp, width, height);
    const size_t n = mix.size();
    const double bg = mix.background;

    const int nthreads = effective_threads(threads);
    std::vector<std::vector<WarpedGrad>> partials(static_cast<size_t>(nthreads));

    parallel_chunks(height, nthreads, [&](int chunk, int y0, int y1) {
        auto& acc = partials[size_t(chunk)];
        acc.assign(n, WarpedGrad{});
        std::vector<Hit> hits;
        hits.reserve(64);
        for (int y = y0; y < y1; ++y) {
            const auto& row = plan.row_lists[size_t(y)];
            const double py = y + 0.5;
            for (int x = 0; x < width; ++x) {
                gather_hits(plan, row, x + 0.5, py, hits);
                const Vec3 u(upstream.at(x, y, 0), upstream.at(x, y, 1), upstream.at(x, y, 2));

                // Back-to-front pass: `rest` carries the composited value of
                // everything behind the current hit.
                Vec3 rest(bg, bg, bg);
                for (size_t hi = hits.size(); hi-- > 0;) {
                    const Hit& hit = hits[hi];
                    const Prepared& g = plan.gaussians[size_t(hit.plan_idx)];
                    WarpedGrad& wg = acc[size_t(g.src)];

                    const Vec3& c = g.color;
                    const double d_alpha = hit.transmittance *
                                           (u.r * (c.r - rest.r) + u.g * (c.g - rest.g) +
                                            u.b * (c.b - rest.b));
                    const double w_color = hit.transmittance * hit.alpha;
                    wg.color_logit.r += u.r * w_color * sigmoid_grad(c.r);
                    wg.color_logit.g += u.g * w_color * sigmoid_grad(c.g);
                    wg.color_logit.b += u.b * w_color * sigmoid_grad(c.b);

                    wg.opacity_logit += d_alpha * (hit.expq - kTail) * sigmoid_grad(g.opacity);

                    const double d_q = d_alpha * g.opacity * (-0.5 * hit.expq);
                    const double dq_dux = 2.0 * hit.ux / (g.sx * g.sx);
                    const double dq_duy = 2.0 * hit.uy / (g.sy * g.sy);

                    // q partials in the warped frame.
                    wg.log_scale.x += d_q * (-dq_dux * hit.ux);
                    wg.log_scale.y += d_q * (-dq_duy * hit.uy);
                    wg.phi += d_q * (dq_dux * hit.uy - dq_duy * hit.ux);
                    // d = p - mean', u = R^T d  =>  dq/dd = R (dq/du).
                    const double gdx = g.cos_r * dq_dux - g.sin_r * dq_duy;
                    const double gdy = g.sin_r * dq_dux + g.cos_r * dq_duy;
                    wg.mean.x += d_q * (-gdx);
                    wg.mean.y += d_q * (-gdy);

                    rest = c * hit.alpha + rest * (1.0 - hit.alpha);
                }
            }
        }
    });

    // Merge thread partials in chunk order, then fold the warped-frame
    // gradients back to mixture and warp parameters.
    std::vector<WarpedGrad> total(n);
    for (const auto& part : partials) {
        if (part.empty()) continue;
        for (size_t i = 0; i < n; ++i) {
            total[i].mean += part[i].mean;
            total[i].phi += part[i].phi;
            total[i].log_scale += part[i].log_scale;
            total[i].opacity_logit += part[i].opacity_logit;
            total[i].color_logit += part[i].color_logit;
        }
    }

    const Vec2 center(width * 0.5, height * 0.5);
    const Rot2 rw = Rot2::from_angle(warp.rotation);
    const double s = warp.zoom();
    for (size_t i = 0; i < n; ++i) {
        const WarpedGrad& wg = total[i];
        grad_mix.means[i] += s * rw.apply_transposed(wg.mean);
        grad_mix.rotations[i] += wg.phi;
        grad_mix.log_scales[i] += wg.log_scale;
        grad_mix.opacity_logits[i] += wg.opacity_logit;
        grad_mix.color_logits[i] += wg.color_logit;

        const Vec2 rel = mix.means[i] - center;
        const Vec2 srot = s * rw.apply(rel);
        grad_warp.translation += wg.mean;
        grad_warp.rotation += wg.phi + wg.mean.dot(perp_neg(srot));
        grad_warp.log_zoom += wg.log_scale.x + wg.log_scale.y + wg.mean.dot(srot);
    }
}

// ---------------------------------------------------------------------------
// Deformation MLP
// ---------------------------------------------------------------------------

namespace {

void encode_coord(double a, int levels, std::vector<double>& out) {
    double freq = M_PI;
    for (int l = 0; l < levels; ++l) {
        out.push_back(std::sin(freq * a));
        out.push_back(std::cos(freq * a));
        freq *= 2.0;
    }
}

// d(encoding)/da appended in the same order as encode_coord.
void encode_coord_grad(double a, int levels, std::vector<double>& out) {
    double freq = M_PI;
    for (int l = 0; l < levels; ++l) {
        out.push_back(freq * std::cos(freq * a));
        out.push_back(-freq * std::sin(freq * a));
        freq *= 2.0;
    }
}

struct MlpActivations {
    std::vector<double> x, z1, h1, z2, h2, z3, h3;
};

void mlp_layer(const std::vector<double>& w, const std::vector<double>& b,
               const std::vector<double>& in, std::vector<double>& z, std::vector<double>& h) {
    const size_t rows = b.size();
    const size_t cols = in.size();
    z.assign(rows, 0.0);
    h.assign(rows, 0.0);
    for (size_t j = 0; j < rows; ++j) {
        double acc = b[j];
        const double* wr = &w[j * cols];
        for (size_t i = 0; i < cols; ++i) acc += wr[i] * in[i];
        z[j] = acc;
        h[j] = acc > 0.0 ? acc : 0.0;
    }
}

void head_forward(const std::vector<double>& w, const std::vector<double>& b,
                  const std::vector<double>& in, std::vector<double>& out) {
    const size_t rows = b.size();
    const size_t cols = in.size();
    out.assign(rows, 0.0);
    for (size_t j = 0; j < rows; ++j) {
        double acc = b[j];
        const double* wr = &w[j * cols];
        for (size_t i = 0; i < cols; ++i) acc += wr[i] * in[i];
        out[j] = acc;
    }
}

void build_input(const DeformMLP& mlp, const GaussianMix2D& mix, size_t g, const Vec2& view_code,
                 const Vec2& center, double pos_norm_scale, std::vector<double>& x) {
    x.clear();
    const Vec2 mn = (mix.means[g] - center) * (1.0 / pos_norm_scale);
    encode_coord(mn.x, mlp.l_pos, x);
    encode_coord(mn.y, mlp.l_pos, x);
    encode_coord(view_code.x, mlp.l_dir, x);
    encode_coord(view_code.y, mlp.l_dir, x);
    x.push_back(mix.log_scales[g].x);
    x.push_back(mix.log_scales[g].y);
    x.push_back(mix.rotations[g]);
}

void mlp_forward_one(const DeformMLP& mlp, const std::vector<double>& x, MlpActivations& act,
                     std::vector<double>& out_p, std::vector<double>& out_s,
                     std::vector<double>& out_r) {
    act.x = x;
    mlp_layer(mlp.w1, mlp.b1, act.x, act.z1, act.h1);
    mlp_layer(mlp.w2, mlp.b2, act.h1, act.z2, act.h2);
    mlp_layer(mlp.w3, mlp.b3, act.h2, act.z3, act.h3);
    head_forward(mlp.wp, mlp.bp, act.h3, out_p);
    head_forward(mlp.ws, mlp.bs, act.h3, out_s);
    head_forward(mlp.wr, mlp.br, act.h3, out_r);
}

}  // namespace

DeformMLP DeformMLP::create(int n_sub, uint64_t seed, int hidden, int l_pos, int l_dir) {
    if (n_sub < 2) {
        throw Error(Errc::Config, "DeformMLP: n_sub must be >= 2");
    }
    DeformMLP mlp;
    mlp.n_sub = n_sub;
    mlp.hidden = hidden;
    mlp.l_pos = l_pos;
    mlp.l_dir = l_dir;
    const int in = mlp.input_dim();

    Rng rng(seed ^ 0x51a7e11eull);
    auto init_layer = [&rng](std::vector<double>& w, std::vector<double>& b, int rows, int cols) {
        w.resize(size_t(rows) * cols);
        b.resize(size_t(rows));
        const double scale = std::sqrt(2.0 / double(cols));
        for (double& v : w) v = scale * rng.normal();
        for (double& v : b) v = 0.01 * rng.normal();
    };
    init_layer(mlp.w1, mlp.b1, hidden, in);
    init_layer(mlp.w2, mlp.b2, hidden, hidden);
    init_layer(mlp.w3, mlp.b3, hidden, hidden);

    // Heads start at zero so training begins from the undeformed model.
    mlp.wp.assign(size_t(2 * n_sub) * hidden, 0.0);
    mlp.bp.assign(size_t(2 * n_sub), 0.0);
    mlp.ws.assign(size_t(2 * n_sub) * hidden, 0.0);
    mlp.bs.assign(size_t(2 * n_sub), 0.0);
    mlp.wr.assign(size_t(n_sub) * hidden, 0.0);
    mlp.br.assign(size_t(n_sub), 0.0);
    return mlp;
}

void DeformMLP::set_zero() {
    for (auto* v : {&w1, &b1, &w2, &b2, &w3, &b3, &wp, &bp, &ws, &bs, &wr, &br}) {
        std::fill(v->begin(), v->end(), 0.0);
    }
}

DeformMLP DeformMLP::zeros_like() const {
    DeformMLP z = *this;
    z.set_zero();
    return z;
}

size_t DeformMLP::param_count() const {
    return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size() + wp.size() +
           bp.size() + ws.size() + bs.size() + wr.size() + br.size();
}

void MlpDeltas::resize(int n_gauss_, int n_sub_) {
    n_gauss = n_gauss_;
    n_sub = n_sub_;
    const size_t n = size_t(n_gauss) * n_sub;
    d_mean.assign(n, Vec2{});
    d_log_scale.assign(n, Vec2{});
    d_rotation.assign(n, 0.0);
}

MlpDeltas mlp_forward(const DeformMLP& mlp, const GaussianMix2D& mix, const Vec2& view_code,
                      const Vec2& center, double pos_norm_scale) {
    MlpDeltas deltas;
    deltas.resize(int(mix.size()), mlp.n_sub);
    std::vector<double> x, out_p, out_s, out_r;
    MlpActivations act;
    for (size_t g = 0; g < mix.size(); ++g) {
        build_input(mlp, mix, g, view_code, center, pos_norm_scale, x);
        mlp_forward_one(mlp, x, act, out_p, out_s, out_r);
        for (int s = 0; s < mlp.n_sub; ++s) {
            const size_t k = deltas.idx(int(g), s);
            deltas.d_mean[k] = Vec2(out_p[size_t(2 * s)], out_p[size_t(2 * s + 1)]);
            deltas.d_log_scale[k] = Vec2(out_s[size_t(2 * s)], out_s[size_t(2 * s + 1)]);
            deltas.d_rotation[k] = out_r[size_t(s)];
        }
    }
    return deltas;
}

void mlp_backward(const DeformMLP& mlp, const GaussianMix2D& mix, const Vec2& view_code,
                  const Vec2& center, double pos_norm_scale, const MlpDeltas& upstream,
                  DeformMLP& grad_mlp, GaussianMix2D& grad_mix) {
    const int in_dim = mlp.input_dim();
    std::vector<double> x, out_p, out_s, out_r;
    std::vector<double> gp(static_cast<size_t>(2 * mlp.n_sub), 0.0);
    std::vector<double> gs(static_cast<size_t>(2 * mlp.n_sub), 0.0);
    std::vector<double> gr(static_cast<size_t>(mlp.n_sub), 0.0);
    std::vector<double> gh3(static_cast<size_t>(mlp.hidden), 0.0);
    std::vector<double> gh2(static_cast<size_t>(mlp.hidden), 0.0);
    std::vector<double> gh1(static_cast<size_t>(mlp.hidden), 0.0);
    std::vector<double> gx(static_cast<size_t>(in_dim), 0.0);
    MlpActivations act;

    auto head_backward = [&](const std::vector<double>& w, std::vector<double>& grad_w,
                             std::vector<double>& grad_b, const std::vector<double>& gout,
                             const std::vector<double>& h, std::vector<double>& gh) {
        const size_t rows = grad_b.size();
        const size_t cols = h.size();
        for (size_t j = 0; j < rows; ++j) {
            const double g = gout[j];
            if (g == 0.0) continue;
            grad_b[j] += g;
            double* gwr = &grad_w[j * cols];
            const double* wr = &w[j * cols];
            for (size_t i = 0; i < cols; ++i) {
                gwr[i] += g * h[i];
                gh[i] += g * wr[i];
            }
        }
    };

    for (size_t g = 0; g < mix.size(); ++g) {
        build_input(mlp, mix, g, view_code, center, pos_norm_scale, x);
        mlp_forward_one(mlp, x, act, out_p, out_s, out_r);

        for (int s = 0; s < mlp.n_sub; ++s) {
            const size_t k = upstream.idx(int(g), s);
            gp[size_t(2 * s)] = upstream.d_mean[k].x;
            gp[size_t(2 * s + 1)] = upstream.d_mean[k].y;
            gs[size_t(2 * s)] = upstream.d_log_scale[k].x;
            gs[size_t(2 * s + 1)] = upstream.d_log_scale[k].y;
            gr[size_t(s)] = upstream.d_rotation[k];
        }

        std::fill(gh3.begin(), gh3.end(), 0.0);
        head_backward(mlp.wp, grad_mlp.wp, grad_mlp.bp, gp, act.h3, gh3);
        head_backward(mlp.ws, grad_mlp.ws, grad_mlp.bs, gs, act.h3, gh3);
        head_backward(mlp.wr, grad_mlp.wr, grad_mlp.br, gr, act.h3, gh3);

        auto relu_layer_backward = [&](const std::vector<double>& w, std::vector<double>& grad_w,
                                       std::vector<double>& grad_b, const std::vector<double>& z,
                                       const std::vector<double>& in, std::vector<double>& gout,
                                       std::vector<double>& gin) {
            const size_t rows = grad_b.size();
            const size_t cols = in.size();
            std::fill(gin.begin(), gin.end(), 0.0);
            for (size_t j = 0; j < rows; ++j) {
                if (z[j] <= 0.0) continue;
                const double gz = gout[j];
                if (gz == 0.0) continue;
                grad_b[j] += gz;
                double* gwr = &grad_w[j * cols];
                const double* wr = &w[j * cols];
                for (size_t i = 0; i < cols; ++i) {
                    gwr[i] += gz * in[i];
                    gin[i] += gz * wr[i];
                }
            }
        };

        relu_layer_backward(mlp.w3, grad_mlp.w3, grad_mlp.b3, act.z3, act.h2, gh3, gh2);
        relu_layer_backward(mlp.w2, grad_mlp.w2, grad_mlp.b2, act.z2, act.h1, gh2, gh1);
        relu_layer_backward(mlp.w1, grad_mlp.w1, grad_mlp.b1, act.z1, act.x, gh1, gx);

        // Route input gradients: encoded mean, raw log-scale, raw rotation.
        // The view code is a per-view constant.
        std::vector<double> denc;
        const Vec2 mn = (mix.means[g] - center) * (1.0 / pos_norm_scale);
        denc.clear();
        encode_coord_grad(mn.x, mlp.l_pos, denc);
        double gmx = 0.0;
        for (int i = 0; i < 2 * mlp.l_pos; ++i) gmx += gx[size_t(i)] * denc[size_t(i)];
        denc.clear();
        encode_coord_grad(mn.y, mlp.l_pos, denc);
        double gmy = 0.0;
        for (int i = 0; i < 2 * mlp.l_pos; ++i) gmy += gx[size_t(2 * mlp.l_pos + i)] * denc[size_t(i)];
        grad_mix.means[g] += Vec2(gmx, gmy) * (1.0 / pos_norm_scale);

        const size_t raw_off = size_t(4 * mlp.l_pos + 4 * mlp.l_dir);
        grad_mix.log_scales[g].x += gx[raw_off + 0];
        grad_mix.log_scales[g].y += gx[raw_off + 1];
        grad_mix.rotations[g] += gx[raw_off + 2];
    }
}

std::vector<double> mlp_input_vector(const DeformMLP& mlp, const GaussianMix2D& mix, size_t g,
                                     const Vec2& view_code, const Vec2& center,
                                     double pos_norm_scale) {
    std::vector<double> x;
    build_input(mlp, mix, g, view_code, center, pos_norm_scale, x);
    return x;
}

void mlp_preactivations(const DeformMLP& mlp, const std::vector<double>& input,
                        std::vector<double>& z1, std::vector<double>& z2,
                        std::vector<double>& z3) {
    std::vector<double> h1, h2, h3;
    mlp_layer(mlp.w1, mlp.b1, input, z1, h1);
    mlp_layer(mlp.w2, mlp.b2, h1, z2, h2);
    mlp_layer(mlp.w3, mlp.b3, h2, z3, h3);
}

// ---------------------------------------------------------------------------
// Blur synthesis
// ---------------------------------------------------------------------------

BlurModel BlurModel::identity(int n_sub, bool use_mlp) {
    if (n_sub < 2) {
        throw Error(Errc::Config, "BlurModel: n_sub must be >= 2");
    }
    BlurModel b;
    b.n_sub = n_sub;
    b.use_mlp = use_mlp;
    b.sub_offsets.assign(size_t(n_sub), CameraWarp{});
    return b;
}

BlurModel BlurModel::seeded(int n_sub, bool use_mlp, uint64_t seed, double trans_sigma_px,
                            double rot_sigma_rad, double log_zoom_sigma) {
    BlurModel b = identity(n_sub, use_mlp);
    Rng rng(seed ^ 0xb10bull);
    for (CameraWarp& w : b.sub_offsets) {
        w.translation = Vec2(trans_sigma_px * rng.normal(), trans_sigma_px * rng.normal());
        w.rotation = rot_sigma_rad * rng.normal();
        w.log_zoom = log_zoom_sigma * rng.normal();
    }
    return b;
}

namespace {

GaussianMix2D apply_deltas(const GaussianMix2D& mix, const MlpDeltas& deltas, int sub) {
    GaussianMix2D out = mix;
    for (size_t g = 0; g < mix.size(); ++g) {
        const size_t k = deltas.idx(int(g), sub);
        out.means[g] += deltas.d_mean[k];
        out.log_scales[g] += deltas.d_log_scale[k];
        out.rotations[g] += deltas.d_rotation[k];
    }
    return out;
}

}  // namespace

SynthBlurResult synth_blur(const GaussianMix2D& mix, const CameraWarp& base, const BlurModel& blur,
                           const DeformMLP* mlp, const Vec2& view_code, int width, int height,
                           int threads) {
    if (blur.n_sub < 2 || int(blur.sub_offsets.size()) != blur.n_sub) {
        throw Error(Errc::Config, "synth_blur: invalid blur model");
    }
    SynthBlurResult result;
    const bool with_mlp = blur.use_mlp && mlp != nullptr;
    const Vec2 center(width * 0.5, height * 0.5);
    const double pos_scale = 0.5 * std::max(width, height);

    MlpDeltas deltas;
    if (with_mlp) {
        deltas = mlp_forward(*mlp, mix, view_code, center, pos_scale);
        if (deltas.n_sub != blur.n_sub) {
            throw Error(Errc::Config, "synth_blur: MLP n_sub does not match the blur model");
        }
    }

    result.subframes.reserve(size_t(blur.n_sub));
    for (int s = 0; s < blur.n_sub; ++s) {
        const CameraWarp warp_s = CameraWarp::compose(blur.sub_offsets[size_t(s)], base);
        if (with_mlp) {
            result.subframes.push_back(render(apply_deltas(mix, deltas, s), warp_s, width, height,
                                              threads));
        } else {
            result.subframes.push_back(render(mix, warp_s, width, height, threads));
        }
    }
    if (with_mlp) result.deltas.push_back(std::move(deltas));

    result.avg = Image(width, height, 3);
    const double inv_n = 1.0 / double(blur.n_sub);
    for (const Image& sub : result.subframes) {
        for (size_t i = 0; i < result.avg.data.size(); ++i) result.avg.data[i] += sub.data[i] * inv_n;
    }
    return result;
}

void synth_blur_backward(const GaussianMix2D& mix, const CameraWarp& base, const BlurModel& blur,
                         const DeformMLP* mlp, const Vec2& view_code, int width, int height,
                         const std::vector<Image>& upstream_per_subframe,
                         GaussianMix2D& grad_mix, CameraWarp& grad_base, BlurModel& grad_blur,
                         DeformMLP* grad_mlp, int threads) {
    if (int(upstream_per_subframe.size()) != blur.n_sub) {
        throw Error(Errc::Dimension, "synth_blur_backward: one upstream per sub-frame required");
    }
    const bool with_mlp = blur.use_mlp && mlp != nullptr;
    const Vec2 center(width * 0.5, height * 0.5);
    const double pos_scale = 0.5 * std::max(width, height);

    MlpDeltas deltas;
    MlpDeltas delta_grads;
    if (with_mlp) {
        deltas = mlp_forward(*mlp, mix, view_code, center, pos_scale);
        delta_grads.resize(int(mix.size()), blur.n_sub);
    }

    for (int s = 0; s < blur.n_sub; ++s) {
        const CameraWarp warp_s = CameraWarp::compose(blur.sub_offsets[size_t(s)], base);
        GaussianMix2D eff = with_mlp ? apply_deltas(mix, deltas, s) : mix;
        GaussianMix2D eff_grad = mix.zeros_like();
        CameraWarp warp_grad;
        render_gradients(eff, warp_s, width, height, upstream_per_subframe[size_t(s)], eff_grad,
                         warp_grad, threads);

        // Effective params are mix + delta, so the gradient lands on both.
        for (size_t g = 0; g < mix.size(); ++g) {
            grad_mix.means[g] += eff_grad.means[g];
            grad_mix.log_scales[g] += eff_grad.log_scales[g];
            grad_mix.rotations[g] += eff_grad.rotations[g];
            grad_mix.opacity_logits[g] += eff_grad.opacity_logits[g];
            grad_mix.color_logits[g] += eff_grad.color_logits[g];
            if (with_mlp) {
                const size_t k = delta_grads.idx(int(g), s);
                delta_grads.d_mean[k] += eff_grad.means[g];
                delta_grads.d_log_scale[k] += eff_grad.log_scales[g];
                delta_grads.d_rotation[k] += eff_grad.rotations[g];
            }
        }
        compose_backward(blur.sub_offsets[size_t(s)], base, warp_grad,
                         grad_blur.sub_offsets[size_t(s)], grad_base);
    }

    if (with_mlp && grad_mlp) {
        mlp_backward(*mlp, mix, view_code, center, pos_scale, delta_grads, *grad_mlp, grad_mix);
    }
}

}  // namespace evsplat::splat
