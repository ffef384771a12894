#include "evsplat/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace evsplat::pipeline {

using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

uint64_t derived_seed(uint64_t master, uint64_t salt) {
    Rng rng(master ^ (salt * 0x9e3779b97f4a7c15ull));
    return rng.next_u64() | 1ull;
}

void check_keys(const ordered_json& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (const char* a : allowed) {
            if (key == a) {
                ok = true;
                break;
            }
        }
        if (!ok) {
            throw Error(Errc::Config, "config: unknown key '" + where + key + "'");
        }
    }
}

template <class T>
void get_if(const ordered_json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void RunConfig::apply_seed(uint64_t master) {
    seed = master;
    scene.rng_seed = derived_seed(master, 1);
    trajectory.seed = derived_seed(master, 2);
    pose_noise.seed = derived_seed(master, 3);
    event_noise.seed = derived_seed(master, 4);
    schedule.rng_seed = derived_seed(master, 5);
}

RunConfig RunConfig::from_json_text(const std::string& text,
                                    const std::vector<std::string>& required) {
    ordered_json j;
    try {
        j = ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(Errc::Config, std::string("config: parse error: ") + e.what());
    }
    check_keys(j, "", {"seed", "threads", "theta", "scene", "trajectory", "pose_noise",
                       "event_noise", "structure", "mask", "loss_weights", "schedule",
                       "ablation"});
    for (const std::string& req : required) {
        if (!j.contains(req)) {
            throw Error(Errc::Config, "config: missing required field '" + req + "'");
        }
    }

    RunConfig cfg;
    uint64_t master = 1;
    get_if(j, "seed", master);
    cfg.apply_seed(master);
    get_if(j, "threads", cfg.threads);
    get_if(j, "theta", cfg.theta);

    if (j.contains("scene")) {
        const auto& s = j.at("scene");
        check_keys(s, "scene.", {"kind", "width", "height", "seed", "blob_count", "scale_min",
                                 "scale_max", "text", "text_scale", "checker_cells"});
        std::string kind = "checker_plus_blobs";
        get_if(s, "kind", kind);
        if (kind == "gaussian_field") {
            cfg.scene.kind = capture::SceneSpec::Kind::GaussianField;
        } else if (kind == "text_card") {
            cfg.scene.kind = capture::SceneSpec::Kind::TextCard;
        } else if (kind == "checker_plus_blobs") {
            cfg.scene.kind = capture::SceneSpec::Kind::CheckerBlobs;
        } else {
            throw Error(Errc::Config, "config: unknown scene.kind '" + kind + "'");
        }
        get_if(s, "width", cfg.scene.width);
        get_if(s, "height", cfg.scene.height);
        get_if(s, "seed", cfg.scene.rng_seed);
        get_if(s, "blob_count", cfg.scene.blob_count);
        get_if(s, "scale_min", cfg.scene.scale_min);
        get_if(s, "scale_max", cfg.scene.scale_max);
        get_if(s, "text", cfg.scene.text);
        get_if(s, "text_scale", cfg.scene.text_scale);
        get_if(s, "checker_cells", cfg.scene.checker_cells);
    }
    if (j.contains("trajectory")) {
        const auto& t = j.at("trajectory");
        check_keys(t, "trajectory.",
                   {"span_us", "rgb_frames", "event_views", "test_views", "duty_cycle",
                    "amp_trans_px", "amp_rot_deg", "amp_log_zoom", "cycles", "event_rate_hz",
                    "seed"});
        get_if(t, "span_us", cfg.trajectory.span_us);
        get_if(t, "rgb_frames", cfg.trajectory.rgb_frames);
        get_if(t, "event_views", cfg.trajectory.event_views);
        get_if(t, "test_views", cfg.trajectory.test_views);
        get_if(t, "duty_cycle", cfg.trajectory.duty_cycle);
        get_if(t, "amp_trans_px", cfg.trajectory.amp_trans_px);
        get_if(t, "amp_rot_deg", cfg.trajectory.amp_rot_deg);
        get_if(t, "amp_log_zoom", cfg.trajectory.amp_log_zoom);
        get_if(t, "cycles", cfg.trajectory.cycles);
        get_if(t, "event_rate_hz", cfg.trajectory.event_rate_hz);
        get_if(t, "seed", cfg.trajectory.seed);
    }
    if (j.contains("pose_noise")) {
        const auto& p = j.at("pose_noise");
        check_keys(p, "pose_noise.", {"rot_sigma_deg", "log_zoom_sigma", "trans_sigma_px", "seed"});
        double rot_deg = cfg.pose_noise.rot_sigma_rad / deg_to_rad(1.0);
        get_if(p, "rot_sigma_deg", rot_deg);
        cfg.pose_noise.rot_sigma_rad = deg_to_rad(rot_deg);
        get_if(p, "log_zoom_sigma", cfg.pose_noise.log_zoom_sigma);
        get_if(p, "trans_sigma_px", cfg.pose_noise.trans_sigma_px);
        get_if(p, "seed", cfg.pose_noise.seed);
    }
    if (j.contains("event_noise")) {
        const auto& e = j.at("event_noise");
        check_keys(e, "event_noise.", {"drop_prob", "threshold_jitter_sigma", "seed"});
        get_if(e, "drop_prob", cfg.event_noise.drop_prob);
        get_if(e, "threshold_jitter_sigma", cfg.event_noise.threshold_jitter_sigma);
        get_if(e, "seed", cfg.event_noise.seed);
    }
    if (j.contains("structure")) {
        const auto& s = j.at("structure");
        check_keys(s, "structure.", {"local_sigma", "stability_const"});
        get_if(s, "local_sigma", cfg.structure_cfg.local_sigma);
        get_if(s, "stability_const", cfg.structure_cfg.stability_const);
    }
    if (j.contains("mask")) {
        const auto& m = j.at("mask");
        check_keys(m, "mask.",
                   {"sigma_small", "sigma_large", "persistence_gamma", "gate_sharpness",
                    "gate_percentile", "eps", "dilate_kernel", "clip_lo", "clip_hi",
                    "dilate_after_normalize"});
        get_if(m, "sigma_small", cfg.mask_cfg.sigma_small);
        get_if(m, "sigma_large", cfg.mask_cfg.sigma_large);
        get_if(m, "persistence_gamma", cfg.mask_cfg.persistence_gamma);
        get_if(m, "gate_sharpness", cfg.mask_cfg.gate_sharpness);
        get_if(m, "gate_percentile", cfg.mask_cfg.gate_percentile);
        get_if(m, "eps", cfg.mask_cfg.eps);
        get_if(m, "dilate_kernel", cfg.mask_cfg.dilate_kernel);
        get_if(m, "clip_lo", cfg.mask_cfg.clip_lo);
        get_if(m, "clip_hi", cfg.mask_cfg.clip_hi);
        get_if(m, "dilate_after_normalize", cfg.mask_cfg.dilate_after_normalize);
    }
    if (j.contains("loss_weights")) {
        const auto& w = j.at("loss_weights");
        check_keys(w, "loss_weights.",
                   {"lambda_blur", "lambda_struct", "lambda_evs", "lambda_reg_r", "lambda_reg_e",
                    "alpha_blur"});
        get_if(w, "lambda_blur", cfg.weights.lambda_blur);
        get_if(w, "lambda_struct", cfg.weights.lambda_struct);
        get_if(w, "lambda_evs", cfg.weights.lambda_evs);
        get_if(w, "lambda_reg_r", cfg.weights.lambda_reg_r);
        get_if(w, "lambda_reg_e", cfg.weights.lambda_reg_e);
        get_if(w, "alpha_blur", cfg.weights.alpha_blur);
    }
    if (j.contains("schedule")) {
        const auto& s = j.at("schedule");
        check_keys(s, "schedule.",
                   {"stage1_iters", "stage2_iters", "pose_refine", "log_interval", "seed",
                    "gaussian_count", "init_scale_px", "init_opacity", "n_sub", "use_mlp",
                    "mlp_hidden", "mlp_l_pos", "mlp_l_dir", "suboffset_trans_sigma",
                    "reg_blur_sigma", "lr_means", "lr_means_final_factor", "lr_log_scales",
                    "lr_rotations", "lr_opacities", "lr_colors", "lr_warps", "lr_sub_warps",
                    "lr_mlp"});
        get_if(s, "stage1_iters", cfg.schedule.stage1_iters);
        get_if(s, "stage2_iters", cfg.schedule.stage2_iters);
        get_if(s, "pose_refine", cfg.schedule.pose_refine);
        get_if(s, "log_interval", cfg.schedule.log_interval);
        get_if(s, "seed", cfg.schedule.rng_seed);
        get_if(s, "gaussian_count", cfg.schedule.gaussian_count);
        get_if(s, "init_scale_px", cfg.schedule.init_scale_px);
        get_if(s, "init_opacity", cfg.schedule.init_opacity);
        get_if(s, "n_sub", cfg.schedule.n_sub);
        get_if(s, "use_mlp", cfg.schedule.use_mlp);
        get_if(s, "mlp_hidden", cfg.schedule.mlp_hidden);
        get_if(s, "mlp_l_pos", cfg.schedule.mlp_l_pos);
        get_if(s, "mlp_l_dir", cfg.schedule.mlp_l_dir);
        get_if(s, "suboffset_trans_sigma", cfg.schedule.suboffset_trans_sigma);
        get_if(s, "reg_blur_sigma", cfg.schedule.reg_blur_sigma);
        get_if(s, "lr_means", cfg.schedule.lr.means);
        get_if(s, "lr_means_final_factor", cfg.schedule.lr.means_final_factor);
        get_if(s, "lr_log_scales", cfg.schedule.lr.log_scales);
        get_if(s, "lr_rotations", cfg.schedule.lr.rotations);
        get_if(s, "lr_opacities", cfg.schedule.lr.opacities);
        get_if(s, "lr_colors", cfg.schedule.lr.colors);
        get_if(s, "lr_warps", cfg.schedule.lr.warps);
        get_if(s, "lr_sub_warps", cfg.schedule.lr.sub_warps);
        get_if(s, "lr_mlp", cfg.schedule.lr.mlp);
    }
    if (j.contains("ablation")) {
        const auto& a = j.at("ablation");
        check_keys(a, "ablation.",
                   {"disable_struct", "disable_reg_r", "disable_reg_e", "disable_evs", "rgb_only",
                    "events_only"});
        get_if(a, "disable_struct", cfg.ablation.disable_struct);
        get_if(a, "disable_reg_r", cfg.ablation.disable_reg_r);
        get_if(a, "disable_reg_e", cfg.ablation.disable_reg_e);
        get_if(a, "disable_evs", cfg.ablation.disable_evs);
        get_if(a, "rgb_only", cfg.ablation.rgb_only);
        get_if(a, "events_only", cfg.ablation.events_only);
    }
    cfg.schedule.threads = cfg.threads;
    return cfg;
}

RunConfig RunConfig::from_json_file(const std::filesystem::path& path,
                                    const std::vector<std::string>& required) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::Io, "config: cannot open " + path.string());
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_json_text(text, required);
}

std::string RunConfig::canonical_json() const {
    ordered_json j;
    j["seed"] = seed;
    j["threads"] = threads;
    j["theta"] = theta;
    const char* kind = scene.kind == capture::SceneSpec::Kind::GaussianField ? "gaussian_field"
                       : scene.kind == capture::SceneSpec::Kind::TextCard   ? "text_card"
                                                                            : "checker_plus_blobs";
    j["scene"] = ordered_json{{"kind", kind},
                              {"width", scene.width},
                              {"height", scene.height},
                              {"seed", scene.rng_seed},
                              {"blob_count", scene.blob_count},
                              {"scale_min", scene.scale_min},
                              {"scale_max", scene.scale_max},
                              {"text", scene.text},
                              {"text_scale", scene.text_scale},
                              {"checker_cells", scene.checker_cells}};
    j["trajectory"] = ordered_json{{"span_us", trajectory.span_us},
                                   {"rgb_frames", trajectory.rgb_frames},
                                   {"event_views", trajectory.event_views},
                                   {"test_views", trajectory.test_views},
                                   {"duty_cycle", trajectory.duty_cycle},
                                   {"amp_trans_px", trajectory.amp_trans_px},
                                   {"amp_rot_deg", trajectory.amp_rot_deg},
                                   {"amp_log_zoom", trajectory.amp_log_zoom},
                                   {"cycles", trajectory.cycles},
                                   {"event_rate_hz", trajectory.event_rate_hz},
                                   {"seed", trajectory.seed}};
    j["pose_noise"] = ordered_json{{"rot_sigma_deg", pose_noise.rot_sigma_rad / deg_to_rad(1.0)},
                                   {"log_zoom_sigma", pose_noise.log_zoom_sigma},
                                   {"trans_sigma_px", pose_noise.trans_sigma_px},
                                   {"seed", pose_noise.seed}};
    j["event_noise"] = ordered_json{{"drop_prob", event_noise.drop_prob},
                                    {"threshold_jitter_sigma", event_noise.threshold_jitter_sigma},
                                    {"seed", event_noise.seed}};
    j["structure"] = ordered_json{{"local_sigma", structure_cfg.local_sigma},
                                  {"stability_const", structure_cfg.stability_const}};
    j["mask"] = ordered_json{{"sigma_small", mask_cfg.sigma_small},
                             {"sigma_large", mask_cfg.sigma_large},
                             {"persistence_gamma", mask_cfg.persistence_gamma},
                             {"gate_sharpness", mask_cfg.gate_sharpness},
                             {"gate_percentile", mask_cfg.gate_percentile},
                             {"eps", mask_cfg.eps},
                             {"dilate_kernel", mask_cfg.dilate_kernel},
                             {"clip_lo", mask_cfg.clip_lo},
                             {"clip_hi", mask_cfg.clip_hi},
                             {"dilate_after_normalize", mask_cfg.dilate_after_normalize}};
    j["loss_weights"] = ordered_json{{"lambda_blur", weights.lambda_blur},
                                     {"lambda_struct", weights.lambda_struct},
                                     {"lambda_evs", weights.lambda_evs},
                                     {"lambda_reg_r", weights.lambda_reg_r},
                                     {"lambda_reg_e", weights.lambda_reg_e},
                                     {"alpha_blur", weights.alpha_blur}};
    j["schedule"] = ordered_json{{"stage1_iters", schedule.stage1_iters},
                                 {"stage2_iters", schedule.stage2_iters},
                                 {"pose_refine", schedule.pose_refine},
                                 {"log_interval", schedule.log_interval},
                                 {"seed", schedule.rng_seed},
                                 {"gaussian_count", schedule.gaussian_count},
                                 {"init_scale_px", schedule.init_scale_px},
                                 {"init_opacity", schedule.init_opacity},
                                 {"n_sub", schedule.n_sub},
                                 {"use_mlp", schedule.use_mlp},
                                 {"mlp_hidden", schedule.mlp_hidden},
                                 {"mlp_l_pos", schedule.mlp_l_pos},
                                 {"mlp_l_dir", schedule.mlp_l_dir},
                                 {"suboffset_trans_sigma", schedule.suboffset_trans_sigma},
                                 {"reg_blur_sigma", schedule.reg_blur_sigma},
                                 {"lr_means", schedule.lr.means},
                                 {"lr_means_final_factor", schedule.lr.means_final_factor},
                                 {"lr_log_scales", schedule.lr.log_scales},
                                 {"lr_rotations", schedule.lr.rotations},
                                 {"lr_opacities", schedule.lr.opacities},
                                 {"lr_colors", schedule.lr.colors},
                                 {"lr_warps", schedule.lr.warps},
                                 {"lr_sub_warps", schedule.lr.sub_warps},
                                 {"lr_mlp", schedule.lr.mlp}};
    j["ablation"] = ordered_json{{"disable_struct", ablation.disable_struct},
                                 {"disable_reg_r", ablation.disable_reg_r},
                                 {"disable_reg_e", ablation.disable_reg_e},
                                 {"disable_evs", ablation.disable_evs},
                                 {"rgb_only", ablation.rgb_only},
                                 {"events_only", ablation.events_only}};
    return j.dump(2) + "\n";
}

std::string RunConfig::hash() const { return hex64(fnv1a64(canonical_json())); }

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double psnr(const Image& a, const Image& b, double cap) {
    img::require_same_shape(a, b, "psnr");
    double mse = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = a.data[i] - b.data[i];
        mse += d * d;
    }
    mse /= double(a.data.size());
    if (mse <= 0.0) return cap;
    return std::min(cap, 10.0 * std::log10(1.0 / mse));
}

double ssim_mean_luma(const Image& a, const Image& b) {
    const Image map = img::ssim_map(img::luminance(a), img::luminance(b), true);
    return img::mean_value(map);
}

std::string MetricReport::to_json() const {
    ordered_json j;
    j["run"] = run_id;
    j["stage"] = stage;
    j["config_hash"] = config_hash;
    ordered_json views = ordered_json::array();
    for (const auto& v : per_view) {
        views.push_back(ordered_json{{"view", v.view}, {"psnr", v.psnr}, {"ssim", v.ssim}});
    }
    j["per_view"] = std::move(views);
    j["mean_psnr"] = mean_psnr;
    j["mean_ssim"] = mean_ssim;
    return j.dump(2) + "\n";
}

std::string MetricReport::to_table() const {
    std::ostringstream os;
    os << "stage " << stage << "  (" << run_id << ")\n";
    os << "  view     PSNR[dB]    SSIM\n";
    char buf[80];
    for (const auto& v : per_view) {
        std::snprintf(buf, sizeof buf, "  %4d    %8.3f   %6.4f\n", v.view, v.psnr, v.ssim);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "  mean    %8.3f   %6.4f\n", mean_psnr, mean_ssim);
    os << buf;
    return os.str();
}

MetricReport evaluate_renders(const std::vector<Image>& renders,
                              const capture::CaptureSession& session, int stage,
                              const std::string& run_id, const std::string& config_hash) {
    if (renders.size() != session.test_views.size()) {
        throw Error(Errc::Dimension, "eval: render/test view count mismatch");
    }
    MetricReport report;
    report.run_id = run_id;
    report.stage = stage;
    report.config_hash = config_hash;
    for (size_t i = 0; i < renders.size(); ++i) {
        ViewMetric m;
        m.view = int(i);
        m.psnr = psnr(renders[i], session.test_views[i].image);
        m.ssim = ssim_mean_luma(renders[i], session.test_views[i].image);
        report.per_view.push_back(m);
        report.mean_psnr += m.psnr;
        report.mean_ssim += m.ssim;
    }
    if (!renders.empty()) {
        report.mean_psnr /= double(renders.size());
        report.mean_ssim /= double(renders.size());
    }
    return report;
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

capture::CaptureSession run_capture(const RunConfig& cfg) {
    capture::SessionBuildConfig sb;
    sb.theta = cfg.theta;
    sb.pose_noise = cfg.pose_noise;
    sb.event_noise = cfg.event_noise;
    sb.config_echo = cfg.canonical_json();
    return capture::build_session(cfg.scene, capture::make_trajectory(cfg.trajectory), sb);
}

namespace {

std::vector<Image> render_test_views(const optim::SceneModel& model,
                                     const capture::CaptureSession& session, int threads) {
    std::vector<Image> out;
    for (const auto& view : session.test_views) {
        out.push_back(splat::render(model.mix, view.warp, session.width, session.height, threads));
    }
    return out;
}

}  // namespace

ReconstructOutcome run_reconstruct(const capture::CaptureSession& session, const RunConfig& cfg) {
    optim::Trainer trainer(session, cfg.schedule, cfg.weights, cfg.structure_cfg, cfg.mask_cfg,
                           cfg.ablation);
    ReconstructOutcome out;
    if (cfg.ablation.events_only) {
        // No RGB supervision: Stage 1 is skipped and Stage 2 runs without a
        // color reference.
        out.stage1.model = trainer.initial_model();
        out.stage2 = trainer.train_stage2(nullptr);
    } else {
        out.stage1 = trainer.train_stage1();
        out.stage2 = trainer.train_stage2(&out.stage1.model);
    }
    out.stage1_test_renders = render_test_views(out.stage1.model, session, cfg.threads);
    out.stage2_test_renders = render_test_views(out.stage2.model, session, cfg.threads);
    return out;
}

// ---------------------------------------------------------------------------
// CLI-facing wrappers
// ---------------------------------------------------------------------------

int exit_code_for(const Error& e) {
    switch (e.code()) {
        case Errc::Config:
        case Errc::Dimension: return 2;
        case Errc::Runtime: return 3;
        case Errc::Io:
        case Errc::Format: return 4;
    }
    return 1;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(Errc::Io, "cannot write " + path.string());
    }
    out << text;
}

int guarded(const std::function<void()>& fn) {
    try {
        fn();
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int cmd_synth(const std::filesystem::path& config, const std::filesystem::path& out) {
    return guarded([&]() {
        const RunConfig cfg = RunConfig::from_json_file(config, {"scene"});
        std::filesystem::create_directories(out);
        img::write_pnm(out / "gt.ppm", img::quantize16(capture::synth_scene(cfg.scene)));
        write_text(out / "config.json", cfg.canonical_json());
        std::cout << "scene written to " << (out / "gt.ppm").string() << "\n";
    });
}

int cmd_capture(const std::filesystem::path& config, const std::filesystem::path& out,
                const std::filesystem::path& prebuilt_scene) {
    return guarded([&]() {
        const RunConfig cfg = RunConfig::from_json_file(config, {"scene", "trajectory"});
        capture::SessionBuildConfig sb;
        sb.theta = cfg.theta;
        sb.pose_noise = cfg.pose_noise;
        sb.event_noise = cfg.event_noise;
        sb.config_echo = cfg.canonical_json();

        const auto traj = capture::make_trajectory(cfg.trajectory);
        capture::CaptureSession session =
            prebuilt_scene.empty()
                ? capture::build_session(cfg.scene, traj, sb)
                : capture::build_session_from_image(img::read_pnm(prebuilt_scene), traj, sb);
        capture::write_session(out, session);
        std::cout << "session written to " << out.string() << " (" << session.rgb_views.size()
                  << " rgb views, " << session.events.events.size() << " events, "
                  << session.event_views.size() << " event views)\n";
    });
}

int cmd_reconstruct(const std::filesystem::path& session_dir, const std::filesystem::path& config,
                    const std::filesystem::path& out_root, const optim::Ablation* override_ablation,
                    const uint64_t* override_seed, const int* override_threads,
                    std::string* run_dir_out) {
    return guarded([&]() {
        RunConfig cfg = config.empty() ? RunConfig{} : RunConfig::from_json_file(config);
        if (override_seed) cfg.apply_seed(*override_seed);
        if (override_ablation) cfg.ablation = *override_ablation;
        if (override_threads) {
            cfg.threads = *override_threads;
            cfg.schedule.threads = *override_threads;
        }

        const capture::CaptureSession session = capture::read_session(session_dir);
        const std::filesystem::path run_dir =
            out_root / (cfg.hash() + "_" + std::to_string(cfg.seed));
        std::filesystem::create_directories(run_dir / "renders" / "stage1");
        std::filesystem::create_directories(run_dir / "renders" / "stage2");
        write_text(run_dir / "config.json", cfg.canonical_json());

        const ReconstructOutcome outcome = run_reconstruct(session, cfg);

        std::string trace;
        for (const auto& r : outcome.stage1.trace) trace += r.to_json_line() + "\n";
        for (const auto& r : outcome.stage2.trace) trace += r.to_json_line() + "\n";
        write_text(run_dir / "loss_trace.jsonl", trace);

        write_text(run_dir / "checkpoint_stage1.json",
                   optim::model_to_json(outcome.stage1.model, cfg.schedule.rng_seed));
        write_text(run_dir / "adam_stage1.json", optim::adam_to_json(outcome.stage1.adam));
        write_text(run_dir / "checkpoint_stage2.json",
                   optim::model_to_json(outcome.stage2.model, cfg.schedule.rng_seed));
        write_text(run_dir / "adam_stage2.json", optim::adam_to_json(outcome.stage2.adam));

        char name[32];
        for (size_t i = 0; i < outcome.stage1_test_renders.size(); ++i) {
            std::snprintf(name, sizeof name, "test_%04zu.ppm", i);
            img::write_pnm(run_dir / "renders" / "stage1" / name, outcome.stage1_test_renders[i]);
        }
        for (size_t i = 0; i < outcome.stage2_test_renders.size(); ++i) {
            std::snprintf(name, sizeof name, "test_%04zu.ppm", i);
            img::write_pnm(run_dir / "renders" / "stage2" / name, outcome.stage2_test_renders[i]);
        }
        if (run_dir_out) *run_dir_out = run_dir.string();
        std::cout << "run written to " << run_dir.string() << "\n";
    });
}

int cmd_eval(const std::filesystem::path& run_dir, const std::filesystem::path& session_dir,
             const std::filesystem::path& report_out) {
    return guarded([&]() {
        const capture::CaptureSession session = capture::read_session(session_dir);

        std::string config_hash = "unknown";
        {
            std::ifstream in(run_dir / "config.json", std::ios::binary);
            if (in) {
                std::string text((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
                config_hash = hex64(fnv1a64(text));
            }
        }

        ordered_json all = ordered_json::array();
        std::string tables;
        for (int stage : {1, 2}) {
            const std::filesystem::path dir =
                run_dir / "renders" / ("stage" + std::to_string(stage));
            if (!std::filesystem::exists(dir)) continue;
            std::vector<Image> renders;
            char name[32];
            for (size_t i = 0; i < session.test_views.size(); ++i) {
                std::snprintf(name, sizeof name, "test_%04zu.ppm", i);
                if (!std::filesystem::exists(dir / name)) {
                    throw Error(Errc::Io, "eval: missing render " + (dir / name).string());
                }
                renders.push_back(img::read_pnm(dir / name));
            }
            const MetricReport report = evaluate_renders(renders, session, stage,
                                                         run_dir.filename().string(), config_hash);
            all.push_back(ordered_json::parse(report.to_json()));
            tables += report.to_table();

            // Comparison strips: nearest blurred input | render | GT.
            std::filesystem::create_directories(run_dir / "strips" /
                                                ("stage" + std::to_string(stage)));
            for (size_t i = 0; i < renders.size(); ++i) {
                const auto& test = session.test_views[i];
                size_t nearest = 0;
                uint64_t best = UINT64_MAX;
                for (size_t v = 0; v < session.rgb_views.size(); ++v) {
                    const uint64_t mid = session.rgb_views[v].t_mid();
                    const uint64_t d = mid > test.t_us ? mid - test.t_us : test.t_us - mid;
                    if (d < best) {
                        best = d;
                        nearest = v;
                    }
                }
                const Image& blurred = session.rgb_views[nearest].image;
                Image strip(session.width * 3, session.height, 3);
                for (int y = 0; y < session.height; ++y) {
                    for (int x = 0; x < session.width; ++x) {
                        for (int c = 0; c < 3; ++c) {
                            strip.at(x, y, c) = blurred.at(x, y, c);
                            strip.at(x + session.width, y, c) = renders[i].at(x, y, c);
                            strip.at(x + 2 * session.width, y, c) = test.image.at(x, y, c);
                        }
                    }
                }
                std::snprintf(name, sizeof name, "strip_%04zu.ppm", i);
                img::write_pnm(run_dir / "strips" / ("stage" + std::to_string(stage)) / name,
                               strip);
            }
        }
        if (all.empty()) {
            throw Error(Errc::Io, "eval: no renders found under " + run_dir.string());
        }
        const std::string report_json = all.dump(2) + "\n";
        write_text(report_out.empty() ? run_dir / "report.json" : report_out, report_json);
        std::cout << tables;
    });
}

int cmd_gradcheck(int trials, uint64_t seed, const std::filesystem::path& report_out) {
    return guarded([&]() {
        optim::GradCheckOptions opt;
        opt.trials = trials;
        opt.seed = seed;
        const auto results = optim::run_gradcheck(opt);
        ordered_json j = ordered_json::array();
        bool all_pass = true;
        for (const auto& r : results) {
            std::printf("%-18s  max_rel_err %.3e  tol %.1e  trials %d  %s\n", r.component.c_str(),
                        r.max_rel_err, r.tolerance, r.trials, r.pass ? "PASS" : "FAIL");
            j.push_back(ordered_json{{"component", r.component},
                                     {"max_rel_err", r.max_rel_err},
                                     {"tolerance", r.tolerance},
                                     {"trials", r.trials},
                                     {"pass", r.pass}});
            all_pass = all_pass && r.pass;
        }
        if (!report_out.empty()) write_text(report_out, j.dump(2) + "\n");
        if (!all_pass) {
            throw Error(Errc::Runtime, "gradcheck: at least one component failed");
        }
    });
}

int cmd_mask(const std::filesystem::path& image, const std::filesystem::path& config,
             const std::filesystem::path& out_dir) {
    return guarded([&]() {
        const RunConfig cfg = config.empty() ? RunConfig{} : RunConfig::from_json_file(config);
        Image input = img::read_pnm(image);
        std::filesystem::create_directories(out_dir);
        const auto result = structure::extract_structure(input, cfg.structure_cfg);
        img::write_pnm(out_dir / "structure.pgm", result.structure);
        const Image gray = img::luminance(input);
        img::write_pnm(out_dir / "weight.pgm", structure::weight_mask(gray, cfg.mask_cfg));
        std::cout << "wrote " << (out_dir / "structure.pgm").string() << " and "
                  << (out_dir / "weight.pgm").string() << "\n";
    });
}

}  // namespace evsplat::pipeline
