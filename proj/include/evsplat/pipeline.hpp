#pragma once

/**
 * @file pipeline.hpp
 * @brief Configuration handling, PSNR/SSIM metrics, and the end-to-end
 *        orchestration behind the CLI subcommands: capture -> train -> eval.
 */

#include <filesystem>

#include "evsplat/capture.hpp"
#include "evsplat/optim.hpp"

namespace evsplat::pipeline {

using img::Image;

// ---------------------------------------------------------------------------
// Run configuration: one strict JSON document
// ---------------------------------------------------------------------------

struct RunConfig {
    uint64_t seed = 1;
    int threads = 4;
    double theta = 0.2;
    capture::SceneSpec scene;
    capture::TrajectoryParams trajectory;
    capture::PoseNoiseSpec pose_noise;
    eventsim::EventNoiseSpec event_noise;
    structure::StructureConfig structure_cfg;
    structure::MaskConfig mask_cfg;
    losses::LossWeights weights;
    optim::TrainSchedule schedule;
    optim::Ablation ablation;

    // Unknown keys are rejected; `required` names top-level sections that
    // must be present (command-dependent). Component seeds default to values
    // derived from the master seed unless given explicitly.
    static RunConfig from_json_text(const std::string& text,
                                    const std::vector<std::string>& required = {});
    static RunConfig from_json_file(const std::filesystem::path& path,
                                    const std::vector<std::string>& required = {});

    // Full resolved echo with deterministic field order.
    std::string canonical_json() const;
    std::string hash() const;  // fnv1a-64 of the canonical echo, hex

    void apply_seed(uint64_t master);  // rederives component seeds
};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

constexpr double kPsnrCap = 99.0;  // reported for zero MSE

double psnr(const Image& a, const Image& b, double cap = kPsnrCap);
// Standard SSIM (luminance term kept) averaged over the luminance plane.
double ssim_mean_luma(const Image& a, const Image& b);

struct ViewMetric {
    int view = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct MetricReport {
    std::string run_id;
    int stage = 0;
    std::string config_hash;
    std::vector<ViewMetric> per_view;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;

    std::string to_json() const;
    std::string to_table() const;
};

MetricReport evaluate_renders(const std::vector<Image>& renders,
                              const capture::CaptureSession& session, int stage,
                              const std::string& run_id, const std::string& config_hash);

// ---------------------------------------------------------------------------
// Orchestration used by the CLI (and by the acceptance suite directly)
// ---------------------------------------------------------------------------

struct ReconstructOutcome {
    optim::TrainResult stage1;
    optim::TrainResult stage2;
    std::vector<Image> stage1_test_renders;
    std::vector<Image> stage2_test_renders;
};

// Capture a session per config (in memory).
capture::CaptureSession run_capture(const RunConfig& cfg);

// Stage 1 + Stage 2 per config; ablation switches honored.
ReconstructOutcome run_reconstruct(const capture::CaptureSession& session, const RunConfig& cfg);

// Filesystem-facing wrappers: each returns a process exit code.
// 0 success, 2 config error, 3 runtime divergence, 4 I/O error.
int cmd_synth(const std::filesystem::path& config, const std::filesystem::path& out);
int cmd_capture(const std::filesystem::path& config, const std::filesystem::path& out,
                const std::filesystem::path& prebuilt_scene = {});
int cmd_reconstruct(const std::filesystem::path& session_dir, const std::filesystem::path& config,
                    const std::filesystem::path& out_root, const optim::Ablation* override_ablation,
                    const uint64_t* override_seed, const int* override_threads,
                    std::string* run_dir_out = nullptr);
int cmd_eval(const std::filesystem::path& run_dir, const std::filesystem::path& session_dir,
             const std::filesystem::path& report_out = {});
int cmd_gradcheck(int trials, uint64_t seed, const std::filesystem::path& report_out = {});
int cmd_mask(const std::filesystem::path& image, const std::filesystem::path& config,
             const std::filesystem::path& out_dir);

int exit_code_for(const Error& e);

}  // namespace evsplat::pipeline
