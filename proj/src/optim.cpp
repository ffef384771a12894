#include "evsplat/optim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace evsplat::optim {

using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// SceneModel plumbing
// ---------------------------------------------------------------------------

SceneModel SceneModel::zeros_like() const {
    SceneModel z = *this;
    z.set_zero();
    return z;
}

void SceneModel::set_zero() {
    mix.set_zero();
    mlp.set_zero();
    for (auto& b : blur) {
        std::fill(b.sub_offsets.begin(), b.sub_offsets.end(), CameraWarp{});
    }
    std::fill(rgb_warps.begin(), rgb_warps.end(), CameraWarp{});
    std::fill(ev_warps.begin(), ev_warps.end(), CameraWarp{});
}

const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::Means: return "means";
        case ParamGroup::LogScales: return "log_scales";
        case ParamGroup::Rotations: return "rotations";
        case ParamGroup::Opacities: return "opacity_logits";
        case ParamGroup::Colors: return "color_logits";
        case ParamGroup::Warps: return "warps";
        case ParamGroup::SubWarps: return "sub_warps";
        case ParamGroup::Mlp: return "mlp";
    }
    return "?";
}

namespace {

template <class Model, class Ptr>
std::vector<Ptr> collect_impl(Model& m, ParamGroup g) {
    std::vector<Ptr> out;
    auto push_warp = [&out](auto& w) {
        out.push_back(&w.rotation);
        out.push_back(&w.log_zoom);
        out.push_back(&w.translation.x);
        out.push_back(&w.translation.y);
    };
    switch (g) {
        case ParamGroup::Means:
            for (auto& v : m.mix.means) {
                out.push_back(&v.x);
                out.push_back(&v.y);
            }
            break;
        case ParamGroup::LogScales:
            for (auto& v : m.mix.log_scales) {
                out.push_back(&v.x);
                out.push_back(&v.y);
            }
            break;
        case ParamGroup::Rotations:
            for (auto& v : m.mix.rotations) out.push_back(&v);
            break;
        case ParamGroup::Opacities:
            for (auto& v : m.mix.opacity_logits) out.push_back(&v);
            break;
        case ParamGroup::Colors:
            for (auto& v : m.mix.color_logits) {
                out.push_back(&v.r);
                out.push_back(&v.g);
                out.push_back(&v.b);
            }
            break;
        case ParamGroup::Warps:
            for (auto& w : m.rgb_warps) push_warp(w);
            for (auto& w : m.ev_warps) push_warp(w);
            break;
        case ParamGroup::SubWarps:
            for (auto& b : m.blur) {
                for (auto& w : b.sub_offsets) push_warp(w);
            }
            break;
        case ParamGroup::Mlp:
            for (auto* vec : {&m.mlp.w1, &m.mlp.b1, &m.mlp.w2, &m.mlp.b2, &m.mlp.w3, &m.mlp.b3,
                              &m.mlp.wp, &m.mlp.bp, &m.mlp.ws, &m.mlp.bs, &m.mlp.wr, &m.mlp.br}) {
                for (auto& v : *vec) out.push_back(&v);
            }
            break;
    }
    return out;
}

}  // namespace

std::vector<double*> collect_group(SceneModel& m, ParamGroup g) {
    return collect_impl<SceneModel, double*>(m, g);
}
std::vector<const double*> collect_group(const SceneModel& m, ParamGroup g) {
    return collect_impl<const SceneModel, const double*>(m, g);
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

void adam_update(std::vector<double*>& params, const std::vector<const double*>& grads,
                 AdamGroupState& state, double lr, const AdamParams& ap, const char* group_name) {
    if (params.size() != grads.size()) {
        throw Error(Errc::Dimension, "adam: parameter/gradient count mismatch");
    }
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(*grads[i])) {
            throw Error(Errc::Runtime, std::string("adam: non-finite gradient in parameter group '") +
                                           group_name + "'");
        }
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
        state.step = 0;
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(ap.beta1, double(state.step));
    const double bc2 = 1.0 - std::pow(ap.beta2, double(state.step));
    for (size_t i = 0; i < params.size(); ++i) {
        const double g = *grads[i];
        state.m[i] = ap.beta1 * state.m[i] + (1.0 - ap.beta1) * g;
        state.v[i] = ap.beta2 * state.v[i] + (1.0 - ap.beta2) * g * g;
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        *params[i] -= lr * mhat / (std::sqrt(vhat) + ap.eps);
    }
}

void TrainSchedule::validate() const {
    if (stage1_iters < 0 || stage2_iters < 0) {
        throw Error(Errc::Config, "schedule: iteration counts must be >= 0");
    }
    if (gaussian_count < 1) {
        throw Error(Errc::Config, "schedule: gaussian_count must be >= 1");
    }
    if (n_sub < 2) {
        throw Error(Errc::Config, "schedule: n_sub must be >= 2");
    }
    if (log_interval < 1) {
        throw Error(Errc::Config, "schedule: log_interval must be >= 1");
    }
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

Trainer::Trainer(const CaptureSession& session, const TrainSchedule& schedule,
                 const losses::LossWeights& weights, const structure::StructureConfig& structure_cfg,
                 const structure::MaskConfig& mask_cfg, const Ablation& ablation)
    : session_(session),
      schedule_(schedule),
      weights_(weights),
      structure_cfg_(structure_cfg),
      mask_cfg_(mask_cfg),
      ablation_(ablation) {
    schedule_.validate();
    weights_.validate();

    // Event-view constants: structure targets, confidence masks, and the
    // accumulated event counts between adjacent views.
    for (const auto& view : session_.event_views) {
        target_structure_.push_back(structure::extract_structure(view.target, structure_cfg_).structure);
        weight_.push_back(structure::weight_mask(view.target, mask_cfg_));
    }
    for (size_t i = 0; i + 1 < session_.event_views.size(); ++i) {
        acc_.push_back(eventsim::accumulate(session_.events, session_.event_views[i].t_us,
                                            session_.event_views[i + 1].t_us));
    }
}

namespace {

double bilinear_at(const Image& im, const Vec2& p, int channel) {
    const double u = p.x - 0.5, v = p.y - 0.5;
    const int x0 = int(std::floor(u)), y0 = int(std::floor(v));
    const double fx = u - x0, fy = v - y0;
    const int xa = std::clamp(x0, 0, im.width - 1);
    const int xb = std::clamp(x0 + 1, 0, im.width - 1);
    const int ya = std::clamp(y0, 0, im.height - 1);
    const int yb = std::clamp(y0 + 1, 0, im.height - 1);
    const double top = im.at(xa, ya, channel) * (1 - fx) + im.at(xb, ya, channel) * fx;
    const double bot = im.at(xa, yb, channel) * (1 - fx) + im.at(xb, yb, channel) * fx;
    return top * (1 - fy) + bot * fy;
}

}  // namespace

SceneModel Trainer::initial_model() const {
    SceneModel m;
    m.width = session_.width;
    m.height = session_.height;
    m.use_mlp = schedule_.use_mlp;

    const int count = schedule_.gaussian_count;
    const int side = int(std::ceil(std::sqrt(double(count))));
    const Vec2 center(m.width * 0.5, m.height * 0.5);
    Rng rng(schedule_.rng_seed);

    m.mix.resize(size_t(count));
    m.mix.background = 0.5;
    for (int i = 0; i < count; ++i) {
        const double jx = rng.uniform(-0.35, 0.35);
        const double jy = rng.uniform(-0.35, 0.35);
        const Vec2 mean(((i % side) + 0.5 + jx) / side * m.width,
                        ((i / side) + 0.5 + jy) / side * m.height);
        m.mix.means[size_t(i)] = mean;

        // Color from the blurred observations, inverse-warped onto the point.
        Vec3 c(0.5, 0.5, 0.5);
        if (!session_.rgb_views.empty()) {
            c = Vec3(0, 0, 0);
            for (const auto& view : session_.rgb_views) {
                const Vec2 pos = view.warp_init.apply(mean, center);
                c += Vec3(bilinear_at(view.image, pos, 0), bilinear_at(view.image, pos, 1),
                          bilinear_at(view.image, pos, 2));
            }
            c = c * (1.0 / double(session_.rgb_views.size()));
        }
        m.mix.color_logits[size_t(i)] =
            Vec3(logit(std::clamp(c.r, 0.03, 0.97)), logit(std::clamp(c.g, 0.03, 0.97)),
                 logit(std::clamp(c.b, 0.03, 0.97)));
        m.mix.log_scales[size_t(i)] =
            Vec2(std::log(schedule_.init_scale_px) + rng.uniform(-0.2, 0.2),
                 std::log(schedule_.init_scale_px) + rng.uniform(-0.2, 0.2));
        m.mix.rotations[size_t(i)] = rng.uniform(0.0, M_PI);
        m.mix.opacity_logits[size_t(i)] = logit(schedule_.init_opacity);
        m.mix.depth_keys[size_t(i)] = rng.uniform();
    }

    m.mlp = DeformMLP::create(schedule_.n_sub, schedule_.rng_seed ^ 0xdeefull, schedule_.mlp_hidden,
                              schedule_.mlp_l_pos, schedule_.mlp_l_dir);

    for (size_t v = 0; v < session_.rgb_views.size(); ++v) {
        m.blur.push_back(BlurModel::seeded(schedule_.n_sub, schedule_.use_mlp,
                                           schedule_.rng_seed + 0x9e3779b9ull * (v + 1),
                                           schedule_.suboffset_trans_sigma));
        m.rgb_warps.push_back(session_.rgb_views[v].warp_init);
        m.rgb_view_codes.push_back(Vec2(session_.rgb_views[v].warp_init.translation.x / m.width,
                                        session_.rgb_views[v].warp_init.translation.y / m.height));
    }
    for (const auto& view : session_.event_views) {
        m.ev_warps.push_back(view.warp_init);
    }
    return m;
}

namespace {

struct EffectiveWeights {
    double blur = 0, struct_ = 0, evs = 0, reg_r = 0, reg_e = 0;
};

EffectiveWeights resolve_weights(const losses::LossWeights& w, const Ablation& a, int stage,
                                 bool have_reference) {
    EffectiveWeights e;
    e.blur = w.lambda_blur;
    if (stage == 1) return e;  // Stage 1 minimizes the blur loss only
    e.struct_ = a.disable_struct ? 0.0 : w.lambda_struct;
    e.evs = a.disable_evs ? 0.0 : w.lambda_evs;
    e.reg_r = a.disable_reg_r ? 0.0 : w.lambda_reg_r;
    e.reg_e = (a.disable_reg_e || !have_reference) ? 0.0 : w.lambda_reg_e;
    if (a.rgb_only) {
        e.struct_ = e.evs = e.reg_e = 0.0;
    }
    if (a.events_only) {
        e.blur = e.reg_r = e.reg_e = 0.0;
    }
    return e;
}

}  // namespace

ObjectiveEval Trainer::evaluate(const SceneModel& model, const GaussianMix2D* frozen_reference,
                                int stage, int rgb_view, int ev_pair, bool with_grads) const {
    const EffectiveWeights ew =
        resolve_weights(weights_, ablation_, stage, frozen_reference != nullptr);
    const int threads = schedule_.threads;
    const int w = model.width, h = model.height;

    ObjectiveEval out;
    out.report.stage = stage;
    if (with_grads) out.grads = model.zeros_like();

    // ---- RGB branch: blur synthesis + RGB consistency regularizer ----
    if (rgb_view >= 0 && (ew.blur > 0.0 || ew.reg_r > 0.0)) {
        const auto& view = session_.rgb_views[size_t(rgb_view)];
        const CameraWarp& base = model.rgb_warps[size_t(rgb_view)];
        const DeformMLP* mlp = model.use_mlp ? &model.mlp : nullptr;
        const Vec2 code = model.rgb_view_codes[size_t(rgb_view)];
        const BlurModel& blur = model.blur[size_t(rgb_view)];

        const splat::SynthBlurResult synth =
            splat::synth_blur(model.mix, base, blur, mlp, code, w, h, threads);

        Image grad_avg(w, h, 3);
        if (ew.blur > 0.0) {
            out.report.blur = losses::loss_blur(synth.avg, view.image, weights_.alpha_blur, ew.blur,
                                                with_grads ? &grad_avg : nullptr);
        }

        Image base_render;
        Image grad_base_img;
        std::vector<Image> grad_subs;
        if (ew.reg_r > 0.0) {
            base_render = splat::render(model.mix, base, w, h, threads);
            if (with_grads) {
                grad_base_img = Image(w, h, 3);
                grad_subs.assign(synth.subframes.size(), Image(w, h, 3));
            }
            out.report.reg_r = losses::loss_reg_r(
                synth.subframes, base_render, view.image,
                img::KernelSpec::gaussian(schedule_.reg_blur_sigma), ew.reg_r,
                with_grads ? &grad_subs : nullptr, with_grads ? &grad_base_img : nullptr);
        }

        if (with_grads) {
            const double inv_n = 1.0 / double(blur.n_sub);
            std::vector<Image> upstream(size_t(blur.n_sub), Image(w, h, 3));
            for (int s = 0; s < blur.n_sub; ++s) {
                auto& up = upstream[size_t(s)];
                for (size_t i = 0; i < up.data.size(); ++i) {
                    up.data[i] = grad_avg.data[i] * inv_n;
                    if (!grad_subs.empty()) up.data[i] += grad_subs[size_t(s)].data[i];
                }
            }
            splat::synth_blur_backward(model.mix, base, blur, mlp, code, w, h, upstream,
                                       out.grads.mix, out.grads.rgb_warps[size_t(rgb_view)],
                                       out.grads.blur[size_t(rgb_view)],
                                       model.use_mlp ? &out.grads.mlp : nullptr, threads);
            if (ew.reg_r > 0.0) {
                splat::render_gradients(model.mix, base, w, h, grad_base_img, out.grads.mix,
                                        out.grads.rgb_warps[size_t(rgb_view)], threads);
            }
        }
    }

    // ---- Event branch: photometric + structure + color reference ----
    if (ev_pair >= 0 && (ew.evs > 0.0 || ew.struct_ > 0.0 || ew.reg_e > 0.0)) {
        const int ia = ev_pair, ib = ev_pair + 1;
        const CameraWarp& wa = model.ev_warps[size_t(ia)];
        const CameraWarp& wb = model.ev_warps[size_t(ib)];
        const Image ra = splat::render(model.mix, wa, w, h, threads);
        const Image rb = splat::render(model.mix, wb, w, h, threads);
        Image grad_ra(w, h, 3), grad_rb(w, h, 3);

        if (ew.evs > 0.0) {
            out.report.evs = losses::loss_evs(ra, rb, acc_[size_t(ev_pair)], session_.theta,
                                              eventsim::kIntensityFloor, ew.evs,
                                              with_grads ? &grad_ra : nullptr,
                                              with_grads ? &grad_rb : nullptr);
        }
        if (ew.struct_ > 0.0) {
            const double va =
                losses::loss_struct(ra, target_structure_[size_t(ia)], weight_[size_t(ia)],
                                    structure_cfg_, 0.5 * ew.struct_,
                                    with_grads ? &grad_ra : nullptr);
            const double vb =
                losses::loss_struct(rb, target_structure_[size_t(ib)], weight_[size_t(ib)],
                                    structure_cfg_, 0.5 * ew.struct_,
                                    with_grads ? &grad_rb : nullptr);
            out.report.struct_ = 0.5 * (va + vb);
        }
        if (ew.reg_e > 0.0) {
            const Image ref_a = splat::render(*frozen_reference, wa, w, h, threads);
            const Image ref_b = splat::render(*frozen_reference, wb, w, h, threads);
            const double va =
                losses::loss_reg_e(ra, ref_a, 0.5 * ew.reg_e, with_grads ? &grad_ra : nullptr);
            const double vb =
                losses::loss_reg_e(rb, ref_b, 0.5 * ew.reg_e, with_grads ? &grad_rb : nullptr);
            out.report.reg_e = 0.5 * (va + vb);
            if (with_grads) {
                // The reference render also moves with the pose being
                // refined; its mixture stays frozen.
                GaussianMix2D scratch = frozen_reference->zeros_like();
                const double inv_n = 1.0 / double(ra.sample_count());
                Image up_ref(w, h, 3);
                for (size_t i = 0; i < up_ref.data.size(); ++i) {
                    up_ref.data[i] = -2.0 * (ra.data[i] - ref_a.data[i]) * inv_n * 0.5 * ew.reg_e;
                }
                splat::render_gradients(*frozen_reference, wa, w, h, up_ref, scratch,
                                        out.grads.ev_warps[size_t(ia)], threads);
                for (size_t i = 0; i < up_ref.data.size(); ++i) {
                    up_ref.data[i] = -2.0 * (rb.data[i] - ref_b.data[i]) * inv_n * 0.5 * ew.reg_e;
                }
                splat::render_gradients(*frozen_reference, wb, w, h, up_ref, scratch,
                                        out.grads.ev_warps[size_t(ib)], threads);
            }
        }

        if (with_grads) {
            splat::render_gradients(model.mix, wa, w, h, grad_ra, out.grads.mix,
                                    out.grads.ev_warps[size_t(ia)], threads);
            splat::render_gradients(model.mix, wb, w, h, grad_rb, out.grads.mix,
                                    out.grads.ev_warps[size_t(ib)], threads);
        }
    }

    out.report.total = ew.blur * out.report.blur + ew.struct_ * out.report.struct_ +
                       ew.evs * out.report.evs + ew.reg_r * out.report.reg_r +
                       ew.reg_e * out.report.reg_e;
    return out;
}

TrainResult Trainer::run_stage(int stage, const SceneModel* stage1) const {
    SceneModel model = initial_model();
    if (stage == 2 && stage1) {
        // Stage-1 pose refinement carries over; the mixture restarts fresh.
        model.rgb_warps = stage1->rgb_warps;
    }
    const GaussianMix2D* frozen = (stage == 2 && stage1) ? &stage1->mix : nullptr;

    const int iters = stage == 1 ? schedule_.stage1_iters : schedule_.stage2_iters;
    const int n_rgb = int(session_.rgb_views.size());
    const int n_pairs = event_pair_count();

    TrainResult result;
    result.adam.params = AdamParams{};

    Rng rng(schedule_.rng_seed ^ (0x51a6eull + uint64_t(stage) * 0x1000193ull));
    double initial_total = -1.0;

    for (int it = 0; it < iters; ++it) {
        const int rgb_view = n_rgb > 0 ? int(rng.uniform_index(uint64_t(n_rgb))) : -1;
        const int ev_pair =
            (stage == 2 && n_pairs > 0) ? int(rng.uniform_index(uint64_t(n_pairs))) : -1;

        ObjectiveEval eval = evaluate(model, frozen, stage, rgb_view, ev_pair, true);
        eval.report.iter = it;

        if (!std::isfinite(eval.report.total)) {
            throw Error(Errc::Runtime, "training diverged (non-finite loss) at iteration " +
                                           std::to_string(it) + " of stage " +
                                           std::to_string(stage));
        }
        if (it == 0) {
            initial_total = std::max(eval.report.total, 1e-12);
        } else if (eval.report.total > 10.0 * initial_total) {
            throw Error(Errc::Runtime, "training diverged (loss exceeded 10x its initial value) "
                                       "at iteration " +
                                           std::to_string(it) + " of stage " +
                                           std::to_string(stage));
        }

        const double decay =
            std::pow(schedule_.lr.means_final_factor, double(it) / double(std::max(1, iters - 1)));
        for (int gi = 0; gi < kNumParamGroups; ++gi) {
            const ParamGroup group = ParamGroup(gi);
            if (group == ParamGroup::Warps && !schedule_.pose_refine) continue;
            if (group == ParamGroup::Mlp && !model.use_mlp) continue;
            double lr = 0.0;
            switch (group) {
                case ParamGroup::Means: lr = schedule_.lr.means * decay; break;
                case ParamGroup::LogScales: lr = schedule_.lr.log_scales; break;
                case ParamGroup::Rotations: lr = schedule_.lr.rotations; break;
                case ParamGroup::Opacities: lr = schedule_.lr.opacities; break;
                case ParamGroup::Colors: lr = schedule_.lr.colors; break;
                case ParamGroup::Warps: lr = schedule_.lr.warps; break;
                case ParamGroup::SubWarps: lr = schedule_.lr.sub_warps; break;
                case ParamGroup::Mlp: lr = schedule_.lr.mlp; break;
            }
            auto params = collect_group(model, group);
            const auto grads = collect_group(eval.grads, group);
            adam_update(params, grads, result.adam.groups[size_t(gi)], lr, result.adam.params,
                        param_group_name(group));
        }

        if (it % schedule_.log_interval == 0 || it == iters - 1) {
            result.trace.push_back(eval.report);
        }
    }

    result.model = std::move(model);
    return result;
}

TrainResult Trainer::train_stage1() const { return run_stage(1, nullptr); }

TrainResult Trainer::train_stage2(const SceneModel* stage1) const {
    return run_stage(2, stage1);
}

double warp_set_error(const std::vector<CameraWarp>& a, const std::vector<CameraWarp>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw Error(Errc::Dimension, "warp_set_error: size mismatch");
    }
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        acc += std::abs(a[i].rotation - b[i].rotation) + std::abs(a[i].log_zoom - b[i].log_zoom) +
               std::abs(a[i].translation.x - b[i].translation.x) +
               std::abs(a[i].translation.y - b[i].translation.y);
    }
    return acc / double(a.size());
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

ordered_json vec2_list(const std::vector<Vec2>& v) {
    ordered_json j = ordered_json::array();
    for (const auto& e : v) j.push_back(ordered_json::array({e.x, e.y}));
    return j;
}

ordered_json vec3_list(const std::vector<Vec3>& v) {
    ordered_json j = ordered_json::array();
    for (const auto& e : v) j.push_back(ordered_json::array({e.r, e.g, e.b}));
    return j;
}

ordered_json warp_json(const CameraWarp& w) {
    return ordered_json{{"rotation", w.rotation},
                        {"log_zoom", w.log_zoom},
                        {"tx", w.translation.x},
                        {"ty", w.translation.y}};
}

CameraWarp warp_from(const ordered_json& j) {
    CameraWarp w;
    w.rotation = j.at("rotation").get<double>();
    w.log_zoom = j.at("log_zoom").get<double>();
    w.translation = Vec2(j.at("tx").get<double>(), j.at("ty").get<double>());
    return w;
}

std::vector<Vec2> vec2_from(const ordered_json& j) {
    std::vector<Vec2> v;
    for (const auto& e : j) v.push_back(Vec2(e.at(0).get<double>(), e.at(1).get<double>()));
    return v;
}

std::vector<Vec3> vec3_from(const ordered_json& j) {
    std::vector<Vec3> v;
    for (const auto& e : j) {
        v.push_back(Vec3(e.at(0).get<double>(), e.at(1).get<double>(), e.at(2).get<double>()));
    }
    return v;
}

}  // namespace

std::string model_to_json(const SceneModel& model, uint64_t rng_seed) {
    ordered_json j;
    j["format_version"] = 1;
    j["rng_seed"] = rng_seed;
    j["width"] = model.width;
    j["height"] = model.height;
    j["use_mlp"] = model.use_mlp;

    ordered_json mix;
    mix["background"] = model.mix.background;
    mix["means"] = vec2_list(model.mix.means);
    mix["log_scales"] = vec2_list(model.mix.log_scales);
    mix["rotations"] = model.mix.rotations;
    mix["opacity_logits"] = model.mix.opacity_logits;
    mix["color_logits"] = vec3_list(model.mix.color_logits);
    mix["depth_keys"] = model.mix.depth_keys;
    j["mix"] = std::move(mix);

    ordered_json mlp;
    mlp["n_sub"] = model.mlp.n_sub;
    mlp["l_pos"] = model.mlp.l_pos;
    mlp["l_dir"] = model.mlp.l_dir;
    mlp["hidden"] = model.mlp.hidden;
    mlp["w1"] = model.mlp.w1;
    mlp["b1"] = model.mlp.b1;
    mlp["w2"] = model.mlp.w2;
    mlp["b2"] = model.mlp.b2;
    mlp["w3"] = model.mlp.w3;
    mlp["b3"] = model.mlp.b3;
    mlp["wp"] = model.mlp.wp;
    mlp["bp"] = model.mlp.bp;
    mlp["ws"] = model.mlp.ws;
    mlp["bs"] = model.mlp.bs;
    mlp["wr"] = model.mlp.wr;
    mlp["br"] = model.mlp.br;
    j["mlp"] = std::move(mlp);

    ordered_json blur = ordered_json::array();
    for (const auto& b : model.blur) {
        ordered_json offsets = ordered_json::array();
        for (const auto& w : b.sub_offsets) offsets.push_back(warp_json(w));
        blur.push_back(ordered_json{
            {"n_sub", b.n_sub}, {"use_mlp", b.use_mlp}, {"sub_offsets", std::move(offsets)}});
    }
    j["blur"] = std::move(blur);

    ordered_json rgbw = ordered_json::array();
    for (const auto& w : model.rgb_warps) rgbw.push_back(warp_json(w));
    j["rgb_warps"] = std::move(rgbw);
    ordered_json evw = ordered_json::array();
    for (const auto& w : model.ev_warps) evw.push_back(warp_json(w));
    j["ev_warps"] = std::move(evw);
    j["rgb_view_codes"] = vec2_list(model.rgb_view_codes);

    return j.dump(2) + "\n";
}

SceneModel model_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw Error(Errc::Format, std::string("checkpoint: bad json: ") + e.what());
    }
    SceneModel m;
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.use_mlp = j.at("use_mlp").get<bool>();

    const auto& mix = j.at("mix");
    m.mix.background = mix.at("background").get<double>();
    m.mix.means = vec2_from(mix.at("means"));
    m.mix.log_scales = vec2_from(mix.at("log_scales"));
    m.mix.rotations = mix.at("rotations").get<std::vector<double>>();
    m.mix.opacity_logits = mix.at("opacity_logits").get<std::vector<double>>();
    m.mix.color_logits = vec3_from(mix.at("color_logits"));
    m.mix.depth_keys = mix.at("depth_keys").get<std::vector<double>>();

    const auto& mlp = j.at("mlp");
    m.mlp.n_sub = mlp.at("n_sub").get<int>();
    m.mlp.l_pos = mlp.at("l_pos").get<int>();
    m.mlp.l_dir = mlp.at("l_dir").get<int>();
    m.mlp.hidden = mlp.at("hidden").get<int>();
    m.mlp.w1 = mlp.at("w1").get<std::vector<double>>();
    m.mlp.b1 = mlp.at("b1").get<std::vector<double>>();
    m.mlp.w2 = mlp.at("w2").get<std::vector<double>>();
    m.mlp.b2 = mlp.at("b2").get<std::vector<double>>();
    m.mlp.w3 = mlp.at("w3").get<std::vector<double>>();
    m.mlp.b3 = mlp.at("b3").get<std::vector<double>>();
    m.mlp.wp = mlp.at("wp").get<std::vector<double>>();
    m.mlp.bp = mlp.at("bp").get<std::vector<double>>();
    m.mlp.ws = mlp.at("ws").get<std::vector<double>>();
    m.mlp.bs = mlp.at("bs").get<std::vector<double>>();
    m.mlp.wr = mlp.at("wr").get<std::vector<double>>();
    m.mlp.br = mlp.at("br").get<std::vector<double>>();

    for (const auto& b : j.at("blur")) {
        BlurModel bm;
        bm.n_sub = b.at("n_sub").get<int>();
        bm.use_mlp = b.at("use_mlp").get<bool>();
        for (const auto& w : b.at("sub_offsets")) bm.sub_offsets.push_back(warp_from(w));
        m.blur.push_back(std::move(bm));
    }
    for (const auto& w : j.at("rgb_warps")) m.rgb_warps.push_back(warp_from(w));
    for (const auto& w : j.at("ev_warps")) m.ev_warps.push_back(warp_from(w));
    m.rgb_view_codes = vec2_from(j.at("rgb_view_codes"));
    return m;
}

std::string adam_to_json(const AdamState& state) {
    ordered_json j;
    j["beta1"] = state.params.beta1;
    j["beta2"] = state.params.beta2;
    j["eps"] = state.params.eps;
    ordered_json groups = ordered_json::array();
    for (int gi = 0; gi < kNumParamGroups; ++gi) {
        const auto& g = state.groups[size_t(gi)];
        groups.push_back(ordered_json{{"name", param_group_name(ParamGroup(gi))},
                                      {"step", g.step},
                                      {"m", g.m},
                                      {"v", g.v}});
    }
    j["groups"] = std::move(groups);
    return j.dump(2) + "\n";
}

AdamState adam_from_json(const std::string& text) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw Error(Errc::Format, std::string("adam state: bad json: ") + e.what());
    }
    AdamState state;
    state.params.beta1 = j.at("beta1").get<double>();
    state.params.beta2 = j.at("beta2").get<double>();
    state.params.eps = j.at("eps").get<double>();
    const auto& groups = j.at("groups");
    for (int gi = 0; gi < kNumParamGroups && gi < int(groups.size()); ++gi) {
        auto& g = state.groups[size_t(gi)];
        g.step = groups[size_t(gi)].at("step").get<int64_t>();
        g.m = groups[size_t(gi)].at("m").get<std::vector<double>>();
        g.v = groups[size_t(gi)].at("v").get<std::vector<double>>();
    }
    return state;
}

}  // namespace evsplat::optim
