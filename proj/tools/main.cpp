// evsplat command-line interface: synth, capture, reconstruct, eval,
// gradcheck, mask.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "evsplat/pipeline.hpp"

using namespace evsplat;

int main(int argc, char** argv) {
    CLI::App app{"event-assisted 2D Gaussian splatting deblurring sandbox"};
    app.require_subcommand(1);

    std::string config, out, session, run, scene_file, image, report;
    uint64_t seed = 0;
    int threads = 0;
    int trials = 3;
    uint64_t gc_seed = 99;

    optim::Ablation ablation;
    bool no_pose_refine = false;

    auto* synth = app.add_subcommand("synth", "synthesize a ground-truth scene");
    synth->add_option("--config", config, "run config JSON")->required();
    synth->add_option("--out", out, "output directory")->required();

    auto* cap = app.add_subcommand("capture", "simulate an RGB+event capture session");
    cap->add_option("--config", config, "run config JSON")->required();
    cap->add_option("--out", out, "session directory")->required();
    cap->add_option("--scene", scene_file, "prebuilt scene PPM (skips synthesis)");

    auto* rec = app.add_subcommand("reconstruct", "two-stage training on a session");
    rec->add_option("--session", session, "session directory")->required();
    rec->add_option("--config", config, "run config JSON");
    rec->add_option("--out", out, "output root for run directories")->required();
    rec->add_option("--seed", seed, "master seed override");
    rec->add_option("--threads", threads, "worker threads override");
    rec->add_flag("--disable-struct", ablation.disable_struct, "drop the event structure loss");
    rec->add_flag("--disable-reg-r", ablation.disable_reg_r, "drop the RGB consistency regularizer");
    rec->add_flag("--disable-reg-e", ablation.disable_reg_e, "drop the event color regularizer");
    rec->add_flag("--disable-evs", ablation.disable_evs, "drop the event photometric loss");
    rec->add_flag("--rgb-only", ablation.rgb_only, "train from RGB data only");
    rec->add_flag("--events-only", ablation.events_only, "train from event data only");
    rec->add_flag("--no-pose-refine", no_pose_refine, "freeze poses at their initial values");

    auto* ev = app.add_subcommand("eval", "PSNR/SSIM report for a run");
    ev->add_option("--run", run, "run directory")->required();
    ev->add_option("--session", session, "session directory")->required();
    ev->add_option("--out", report, "report JSON path (default: <run>/report.json)");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gc->add_option("--trials", trials, "random trials per component");
    gc->add_option("--seed", gc_seed, "base seed");
    gc->add_option("--out", report, "report JSON path");

    auto* mk = app.add_subcommand("mask", "dump structure map and weight mask for an image");
    mk->add_option("--image", image, "input PGM/PPM")->required();
    mk->add_option("--config", config, "run config JSON");
    mk->add_option("--out", out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            return pipeline::cmd_synth(config, out);
        }
        if (cap->parsed()) {
            return pipeline::cmd_capture(config, out, scene_file);
        }
        if (rec->parsed()) {
            const bool any_ablation = ablation.disable_struct || ablation.disable_reg_r ||
                                      ablation.disable_reg_e || ablation.disable_evs ||
                                      ablation.rgb_only || ablation.events_only;
            const bool seed_set = rec->count("--seed") > 0;
            if (any_ablation || no_pose_refine || seed_set || threads > 0) {
                // Fold CLI overrides into the config, then share one path.
                pipeline::RunConfig cfg = config.empty()
                                              ? pipeline::RunConfig{}
                                              : pipeline::RunConfig::from_json_file(config);
                if (seed_set) cfg.apply_seed(seed);
                if (any_ablation) cfg.ablation = ablation;
                if (no_pose_refine) cfg.schedule.pose_refine = false;
                if (threads > 0) {
                    cfg.threads = threads;
                    cfg.schedule.threads = threads;
                }
                std::filesystem::create_directories(out);
                const auto tmp = std::filesystem::path(out) / ".cli_config.json";
                {
                    std::ofstream f(tmp, std::ios::binary);
                    f << cfg.canonical_json();
                }
                const int rc =
                    pipeline::cmd_reconstruct(session, tmp, out, nullptr, nullptr, nullptr);
                std::filesystem::remove(tmp);
                return rc;
            }
            return pipeline::cmd_reconstruct(session, config, out, nullptr, nullptr, nullptr);
        }
        if (ev->parsed()) {
            return pipeline::cmd_eval(run, session, report);
        }
        if (gc->parsed()) {
            return pipeline::cmd_gradcheck(trials, gc_seed, report);
        }
        if (mk->parsed()) {
            return pipeline::cmd_mask(image, config, out);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return pipeline::exit_code_for(e);
    }
    return 1;
}
