#include <algorithm>
#include <cmath>
#include <functional>

#include "evsplat/optim.hpp"

// Finite-difference verification of every differentiable component. Each
// check builds a seeded random instance, computes the analytic gradient, and
// compares sampled coordinates against central differences.

namespace evsplat::optim {

namespace {

double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

Image smooth_random_image(int w, int h, int c, Rng& rng, double lo, double hi) {
    Image noise(w, h, c);
    for (double& v : noise.data) v = rng.uniform();
    Image sm = img::convolve(noise, img::KernelSpec::gaussian(1.2));
    const double mn = img::min_value(sm), mx = img::max_value(sm);
    for (double& v : sm.data) v = lo + (hi - lo) * (v - mn) / std::max(mx - mn, 1e-12);
    return sm;
}

GaussianMix2D random_mix(int n, int w, int h, Rng& rng) {
    GaussianMix2D mix;
    mix.resize(size_t(n));
    for (int i = 0; i < n; ++i) {
        mix.means[size_t(i)] = Vec2(rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h);
        mix.log_scales[size_t(i)] = Vec2(std::log(rng.uniform(1.3, 3.0)),
                                         std::log(rng.uniform(1.3, 3.0)));
        mix.rotations[size_t(i)] = rng.uniform(0.0, M_PI);
        mix.opacity_logits[size_t(i)] = rng.uniform(-1.5, 1.5);
        mix.color_logits[size_t(i)] = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                           rng.uniform(-1.0, 1.0));
        mix.depth_keys[size_t(i)] = rng.uniform();
    }
    return mix;
}

CameraWarp random_warp(Rng& rng) {
    CameraWarp w;
    w.rotation = rng.uniform(-0.12, 0.12);
    w.log_zoom = rng.uniform(-0.04, 0.04);
    w.translation = Vec2(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
    return w;
}

// Max rel-err over sampled coordinates of one scalar list.
double fd_check_scalars(std::vector<double*> params, const std::vector<double>& analytic,
                        const std::function<double()>& scalar_fn, Rng& rng, double h,
                        int samples) {
    double worst = 0.0;
    const size_t n = params.size();
    for (int s = 0; s < samples && s < int(n); ++s) {
        const size_t i = n <= size_t(samples) ? size_t(s) : rng.uniform_index(n);
        const double saved = *params[i];
        *params[i] = saved + h;
        const double fp = scalar_fn();
        *params[i] = saved - h;
        const double fm = scalar_fn();
        *params[i] = saved;
        worst = std::max(worst, rel_err(analytic[i], (fp - fm) / (2.0 * h)));
    }
    return worst;
}

// Shift hidden biases until every ReLU pre-activation clears the margin, so
// central differences never straddle a kink.
void repair_relu_margins(DeformMLP& mlp, const GaussianMix2D& mix, const Vec2& code,
                         const Vec2& center, double pos_scale, double margin) {
    for (int pass = 0; pass < 60; ++pass) {
        bool dirty = false;
        std::vector<double> z1, z2, z3;
        std::vector<double> shift1(mlp.b1.size(), 0.0), shift2(mlp.b2.size(), 0.0),
            shift3(mlp.b3.size(), 0.0);
        for (size_t g = 0; g < mix.size(); ++g) {
            const auto x = splat::mlp_input_vector(mlp, mix, g, code, center, pos_scale);
            splat::mlp_preactivations(mlp, x, z1, z2, z3);
            auto mark = [&](const std::vector<double>& z, std::vector<double>& shift) {
                for (size_t j = 0; j < z.size(); ++j) {
                    if (std::abs(z[j]) < margin && shift[j] == 0.0) {
                        shift[j] = (z[j] >= 0.0 ? 1.0 : -1.0) * 2.0 * margin;
                        dirty = true;
                    }
                }
            };
            mark(z1, shift1);
            mark(z2, shift2);
            mark(z3, shift3);
        }
        if (!dirty) return;
        for (size_t j = 0; j < shift1.size(); ++j) mlp.b1[j] += shift1[j];
        for (size_t j = 0; j < shift2.size(); ++j) mlp.b2[j] += shift2[j];
        for (size_t j = 0; j < shift3.size(); ++j) mlp.b3[j] += shift3[j];
    }
}

// ---- individual component checks, each returning the max rel err ----

double check_render_mix(uint64_t seed, double h, int samples) {
    Rng rng(seed);
    const int w = 24, h_img = 24;
    GaussianMix2D mix = random_mix(7, w, h_img, rng);
    const CameraWarp warp = random_warp(rng);
    Image upstream(w, h_img, 3);
    for (double& v : upstream.data) v = rng.uniform(-1.0, 1.0);

    GaussianMix2D grad = mix.zeros_like();
    CameraWarp grad_warp;
    splat::render_gradients(mix, warp, w, h_img, upstream, grad, grad_warp);

    auto scalar = [&]() {
        const Image r = splat::render(mix, warp, w, h_img);
        double acc = 0.0;
        for (size_t i = 0; i < r.data.size(); ++i) acc += upstream.data[i] * r.data[i];
        return acc;
    };

    SceneModel holder;  // reuse group traversal over a bare mixture
    holder.mix = mix;
    double worst = 0.0;
    for (ParamGroup g : {ParamGroup::Means, ParamGroup::LogScales, ParamGroup::Rotations,
                         ParamGroup::Opacities, ParamGroup::Colors}) {
        auto params = collect_group(holder, g);
        SceneModel grad_holder;
        grad_holder.mix = grad;
        const auto gptr = collect_group(const_cast<const SceneModel&>(grad_holder), g);
        std::vector<double> analytic(gptr.size());
        for (size_t i = 0; i < gptr.size(); ++i) analytic[i] = *gptr[i];
        // scalar_fn must see the perturbed values: render from holder.mix.
        auto fn = [&]() {
            const Image r = splat::render(holder.mix, warp, w, h_img);
            double acc = 0.0;
            for (size_t i = 0; i < r.data.size(); ++i) acc += upstream.data[i] * r.data[i];
            return acc;
        };
        worst = std::max(worst, fd_check_scalars(params, analytic, fn, rng, h, samples));
    }
    (void)scalar;
    return worst;
}

double check_render_warp(uint64_t seed, double h, int) {
    Rng rng(seed);
    const int w = 24, h_img = 24;
    const GaussianMix2D mix = random_mix(7, w, h_img, rng);
    CameraWarp warp = random_warp(rng);
    Image upstream(w, h_img, 3);
    for (double& v : upstream.data) v = rng.uniform(-1.0, 1.0);

    GaussianMix2D grad = mix.zeros_like();
    CameraWarp grad_warp;
    splat::render_gradients(mix, warp, w, h_img, upstream, grad, grad_warp);

    auto fn = [&]() {
        const Image r = splat::render(mix, warp, w, h_img);
        double acc = 0.0;
        for (size_t i = 0; i < r.data.size(); ++i) acc += upstream.data[i] * r.data[i];
        return acc;
    };
    double* params[4] = {&warp.rotation, &warp.log_zoom, &warp.translation.x,
                         &warp.translation.y};
    const double analytic[4] = {grad_warp.rotation, grad_warp.log_zoom, grad_warp.translation.x,
                                grad_warp.translation.y};
    double worst = 0.0;
    for (int i = 0; i < 4; ++i) {
        const double saved = *params[i];
        *params[i] = saved + h;
        const double fp = fn();
        *params[i] = saved - h;
        const double fm = fn();
        *params[i] = saved;
        worst = std::max(worst, rel_err(analytic[i], (fp - fm) / (2.0 * h)));
    }
    return worst;
}

double check_mlp(uint64_t seed, double h, int samples) {
    Rng rng(seed);
    const int w = 16, h_img = 16;
    GaussianMix2D mix = random_mix(5, w, h_img, rng);
    DeformMLP mlp = DeformMLP::create(3, seed, 24);
    // Heads start zero by contract; randomize them so hidden-layer gradients
    // are exercised too.
    for (auto* vec : {&mlp.wp, &mlp.ws, &mlp.wr}) {
        for (double& v : *vec) v = 0.1 * rng.normal();
    }
    for (auto* vec : {&mlp.bp, &mlp.bs, &mlp.br}) {
        for (double& v : *vec) v = 0.01 * rng.normal();
    }
    const Vec2 code(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    const Vec2 center(w * 0.5, h_img * 0.5);
    const double pos_scale = 0.5 * std::max(w, h_img);
    repair_relu_margins(mlp, mix, code, center, pos_scale, 5e-3);

    // Random linear functional over all deltas.
    splat::MlpDeltas coef;
    coef.resize(int(mix.size()), mlp.n_sub);
    for (auto& v : coef.d_mean) v = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (auto& v : coef.d_log_scale) v = Vec2(rng.uniform(-1, 1), rng.uniform(-1, 1));
    for (auto& v : coef.d_rotation) v = rng.uniform(-1, 1);

    auto fn = [&]() {
        const splat::MlpDeltas d = splat::mlp_forward(mlp, mix, code, center, pos_scale);
        double acc = 0.0;
        for (size_t i = 0; i < d.d_mean.size(); ++i) {
            acc += coef.d_mean[i].dot(d.d_mean[i]) + coef.d_log_scale[i].dot(d.d_log_scale[i]) +
                   coef.d_rotation[i] * d.d_rotation[i];
        }
        return acc;
    };

    DeformMLP grad_mlp = mlp.zeros_like();
    GaussianMix2D grad_mix = mix.zeros_like();
    splat::mlp_backward(mlp, mix, code, center, pos_scale, coef, grad_mlp, grad_mix);

    SceneModel holder;
    holder.mix = mix;
    holder.mlp = mlp;
    SceneModel grad_holder;
    grad_holder.mix = grad_mix;
    grad_holder.mlp = grad_mlp;

    double worst = 0.0;
    for (ParamGroup g : {ParamGroup::Mlp, ParamGroup::Means, ParamGroup::LogScales,
                         ParamGroup::Rotations}) {
        // fn closes over mlp/mix, so perturb those through the holder copies.
        auto params = collect_group(holder, g);
        const auto gptr = collect_group(const_cast<const SceneModel&>(grad_holder), g);
        std::vector<double> analytic(gptr.size());
        for (size_t i = 0; i < gptr.size(); ++i) analytic[i] = *gptr[i];
        auto fn2 = [&]() {
            const splat::MlpDeltas d =
                splat::mlp_forward(holder.mlp, holder.mix, code, center, pos_scale);
            double acc = 0.0;
            for (size_t i = 0; i < d.d_mean.size(); ++i) {
                acc += coef.d_mean[i].dot(d.d_mean[i]) +
                       coef.d_log_scale[i].dot(d.d_log_scale[i]) +
                       coef.d_rotation[i] * d.d_rotation[i];
            }
            return acc;
        };
        worst = std::max(worst, fd_check_scalars(params, analytic, fn2, rng, h, samples));
    }
    (void)fn;
    return worst;
}

// FD over sampled pixels of the gradient images returned by a loss.
double fd_check_image(Image& input, const Image& analytic,
                      const std::function<double()>& scalar_fn, Rng& rng, double h, int samples) {
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
        const size_t i = rng.uniform_index(input.data.size());
        const double saved = input.data[i];
        input.data[i] = saved + h;
        const double fp = scalar_fn();
        input.data[i] = saved - h;
        const double fm = scalar_fn();
        input.data[i] = saved;
        worst = std::max(worst, rel_err(analytic.data[i], (fp - fm) / (2.0 * h)));
    }
    return worst;
}

double check_loss_evs(uint64_t seed, double h, int samples) {
    Rng rng(seed);
    const int n = 20;
    Image rs = smooth_random_image(n, n, 3, rng, 0.25, 0.85);
    Image re = smooth_random_image(n, n, 3, rng, 0.25, 0.85);
    Image acc(n, n, 1);
    for (double& v : acc.data) v = double(int(rng.uniform_index(5)) - 2);

    Image grad_s(n, n, 3), grad_e(n, n, 3);
    losses::loss_evs(rs, re, acc, 0.2, eventsim::kIntensityFloor, 1.0, &grad_s, &grad_e);
    auto fn = [&]() {
        return losses::loss_evs(rs, re, acc, 0.2, eventsim::kIntensityFloor, 1.0, nullptr, nullptr);
    };
    double worst = fd_check_image(rs, grad_s, fn, rng, h, samples);
    worst = std::max(worst, fd_check_image(re, grad_e, fn, rng, h, samples));
    return worst;
}

double check_loss_struct(uint64_t seed, double h, int samples) {
    Rng rng(seed);
    const int n = 24;
    Image render = smooth_random_image(n, n, 3, rng, 0.2, 0.9);
    const Image target = smooth_random_image(n, n, 1, rng, 0.1, 0.95);
    Image weight = smooth_random_image(n, n, 1, rng, 0.0, 1.0);
    const structure::StructureConfig cfg;

    Image grad(n, n, 3);
    losses::loss_struct_from_target(render, target, weight, cfg, 1.0, &grad);
    auto fn = [&]() {
        return losses::loss_struct_from_target(render, target, weight, cfg, 1.0, nullptr);
    };
    return fd_check_image(render, grad, fn, rng, h, samples);
}

double check_loss_blur(uint64_t seed, double h, int samples) {
    Rng rng(seed);
    const int n = 24;
    Image avg = smooth_random_image(n, n, 3, rng, 0.2, 0.8);
    Image obs = avg;
    // Keep |avg - obs| well away from the L1 kink at every pixel.
    for (double& v : obs.data) v += (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.02, 0.08);

    Image grad(n, n, 3);
    losses::loss_blur(avg, obs, 0.2, 1.0, &grad);
    auto fn = [&]() { return losses::loss_blur(avg, obs, 0.2, 1.0, nullptr); };
    return fd_check_image(avg, grad, fn, rng, h, samples);
}

double check_loss_reg_r(uint64_t seed, double h, int samples) {
    Rng rng(seed);
    const int n = 20;
    Image base = smooth_random_image(n, n, 3, rng, 0.2, 0.8);
    std::vector<Image> subs;
    for (int s = 0; s < 3; ++s) {
        Image sub = base;
        for (double& v : sub.data) v += rng.uniform(-0.05, 0.05);
        subs.push_back(std::move(sub));
    }
    const Image obs = smooth_random_image(n, n, 3, rng, 0.2, 0.8);
    const img::KernelSpec kernel = img::KernelSpec::gaussian(1.5);

    std::vector<Image> grad_subs(3, Image(n, n, 3));
    Image grad_base(n, n, 3);
    losses::loss_reg_r(subs, base, obs, kernel, 1.0, &grad_subs, &grad_base);
    auto fn = [&]() { return losses::loss_reg_r(subs, base, obs, kernel, 1.0, nullptr, nullptr); };
    double worst = fd_check_image(base, grad_base, fn, rng, h, samples);
    worst = std::max(worst, fd_check_image(subs[1], grad_subs[1], fn, rng, h, samples));
    return worst;
}

double check_loss_reg_e(uint64_t seed, double h, int samples) {
    Rng rng(seed);
    const int n = 20;
    Image render = smooth_random_image(n, n, 3, rng, 0.2, 0.8);
    const Image ref = smooth_random_image(n, n, 3, rng, 0.2, 0.8);
    Image grad(n, n, 3);
    losses::loss_reg_e(render, ref, 1.0, &grad);
    auto fn = [&]() { return losses::loss_reg_e(render, ref, 1.0, nullptr); };
    return fd_check_image(render, grad, fn, rng, h, samples);
}

struct ComposedFixture {
    CaptureSession session;
    TrainSchedule schedule;
    losses::LossWeights weights;
    structure::StructureConfig scfg;
    structure::MaskConfig mcfg;
};

ComposedFixture make_composed_fixture(uint64_t seed) {
    ComposedFixture fx;
    capture::SceneSpec scene;
    scene.kind = capture::SceneSpec::Kind::GaussianField;
    scene.width = 32;
    scene.height = 32;
    scene.blob_count = 6;
    scene.rng_seed = seed;

    capture::TrajectoryParams tp;
    tp.span_us = 200000;
    tp.rgb_frames = 2;
    tp.event_views = 4;
    tp.test_views = 1;
    tp.duty_cycle = 0.7;
    tp.amp_trans_px = 1.2;
    tp.amp_rot_deg = 0.5;
    tp.amp_log_zoom = 0.004;
    tp.cycles = 1.0;
    tp.event_rate_hz = 8000;
    tp.seed = seed + 1;

    capture::SessionBuildConfig sb;
    sb.theta = 0.2;
    sb.pose_noise.rot_sigma_rad = deg_to_rad(0.3);
    sb.pose_noise.log_zoom_sigma = 0.004;
    sb.pose_noise.trans_sigma_px = 0.3;
    sb.pose_noise.seed = seed + 2;
    fx.session = capture::build_session(scene, capture::make_trajectory(tp), sb);

    fx.schedule.gaussian_count = 12;
    fx.schedule.init_scale_px = 2.5;
    fx.schedule.n_sub = 3;
    fx.schedule.use_mlp = true;
    fx.schedule.mlp_hidden = 24;
    fx.schedule.threads = 1;
    fx.schedule.rng_seed = seed + 3;
    return fx;
}

double check_stage2_objective(uint64_t seed, double h, int samples) {
    ComposedFixture fx = make_composed_fixture(seed);
    Trainer trainer(fx.session, fx.schedule, fx.weights, fx.scfg, fx.mcfg);

    Rng rng(seed + 7);
    SceneModel model = trainer.initial_model();
    // Jitter away from symmetric initialization and give the heads signal.
    for (auto& v : model.mix.means) v += Vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    for (auto& v : model.mix.opacity_logits) v += rng.uniform(-0.3, 0.3);
    for (auto* vec : {&model.mlp.wp, &model.mlp.ws, &model.mlp.wr}) {
        for (double& v : *vec) v = 0.05 * rng.normal();
    }
    const Vec2 center(model.width * 0.5, model.height * 0.5);
    const double pos_scale = 0.5 * std::max(model.width, model.height);
    for (size_t v = 0; v < model.rgb_view_codes.size(); ++v) {
        repair_relu_margins(model.mlp, model.mix, model.rgb_view_codes[v], center, pos_scale,
                            5e-3);
    }

    // A frozen reference that differs from the live model, so reg_e is
    // non-degenerate.
    GaussianMix2D frozen = trainer.initial_model().mix;
    for (auto& v : frozen.means) v += Vec2(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    for (auto& v : frozen.color_logits) {
        v += Vec3(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4));
    }

    const int rgb_view = 0;
    const int ev_pair = 1;
    ObjectiveEval eval = trainer.evaluate(model, &frozen, 2, rgb_view, ev_pair, true);

    auto fn = [&]() {
        return trainer.evaluate(model, &frozen, 2, rgb_view, ev_pair, false).report.total;
    };

    double worst = 0.0;
    for (int gi = 0; gi < kNumParamGroups; ++gi) {
        auto params = collect_group(model, ParamGroup(gi));
        if (params.empty()) continue;
        const auto gptr = collect_group(const_cast<const SceneModel&>(eval.grads), ParamGroup(gi));
        std::vector<double> analytic(gptr.size());
        for (size_t i = 0; i < gptr.size(); ++i) analytic[i] = *gptr[i];
        worst = std::max(worst, fd_check_scalars(params, analytic, fn, rng, h, samples));
    }
    return worst;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt) {
    struct Entry {
        const char* name;
        double (*fn)(uint64_t, double, int);
        bool composed;
    };
    const Entry entries[] = {
        {"renderer", check_render_mix, false},
        {"warp", check_render_warp, false},
        {"mlp", check_mlp, false},
        {"loss_evs", check_loss_evs, false},
        {"loss_struct", check_loss_struct, false},
        {"loss_blur", check_loss_blur, false},
        {"loss_reg_r", check_loss_reg_r, false},
        {"loss_reg_e", check_loss_reg_e, false},
        {"stage2_objective", check_stage2_objective, true},
    };

    std::vector<GradCheckResult> results;
    for (const Entry& e : entries) {
        GradCheckResult r;
        r.component = e.name;
        r.tolerance = e.composed ? opt.tol_composed : opt.tol;
        r.trials = opt.trials;
        for (int t = 0; t < opt.trials; ++t) {
            r.max_rel_err =
                std::max(r.max_rel_err, e.fn(opt.seed + uint64_t(t) * 1013ull, opt.h,
                                             opt.samples_per_group));
        }
        r.pass = r.max_rel_err < r.tolerance;
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace evsplat::optim
