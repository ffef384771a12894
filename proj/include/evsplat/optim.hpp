#pragma once

/**
 * @file optim.hpp
 * @brief Adam optimization over named parameter groups, the two-stage
 *        training protocol with a frozen Stage-1 color reference, joint pose
 *        refinement, and the finite-difference gradient-check harness.
 */

#include <array>
#include <functional>
#include <optional>

#include "evsplat/capture.hpp"
#include "evsplat/losses.hpp"
#include "evsplat/splat.hpp"
#include "evsplat/structure.hpp"

namespace evsplat::optim {

using capture::CaptureSession;
using img::Image;
using splat::BlurModel;
using splat::CameraWarp;
using splat::DeformMLP;
using splat::GaussianMix2D;

// ---------------------------------------------------------------------------
// Trainable state
// ---------------------------------------------------------------------------

// Everything the optimizer touches. The same struct doubles as the gradient
// container (shapes always match).
struct SceneModel {
    GaussianMix2D mix;
    DeformMLP mlp;
    bool use_mlp = true;
    std::vector<BlurModel> blur;          // one per RGB view
    std::vector<CameraWarp> rgb_warps;
    std::vector<CameraWarp> ev_warps;
    std::vector<Vec2> rgb_view_codes;     // constants derived from initial warps
    int width = 0, height = 0;

    SceneModel zeros_like() const;
    void set_zero();
};

enum class ParamGroup : int {
    Means = 0,
    LogScales,
    Rotations,
    Opacities,
    Colors,
    Warps,
    SubWarps,
    Mlp,
};
constexpr int kNumParamGroups = 8;
const char* param_group_name(ParamGroup g);

// Deterministic scalar traversal of one group; the backbone of Adam and the
// finite-difference checks.
std::vector<double*> collect_group(SceneModel& m, ParamGroup g);
std::vector<const double*> collect_group(const SceneModel& m, ParamGroup g);

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamGroupState {
    std::vector<double> m, v;
    int64_t step = 0;
};

struct AdamState {
    std::array<AdamGroupState, kNumParamGroups> groups;
    AdamParams params;
};

// Standard bias-corrected update; throws on non-finite gradients, naming the
// parameter group.
void adam_update(std::vector<double*>& params, const std::vector<const double*>& grads,
                 AdamGroupState& state, double lr, const AdamParams& ap, const char* group_name);

struct LearningRates {
    double means = 2e-3;
    double means_final_factor = 0.1;  // exponential decay over the stage
    double log_scales = 5e-3;
    double rotations = 1e-3;
    double opacities = 2.5e-2;
    double colors = 2.5e-2;
    double warps = 1e-3;
    double sub_warps = 1e-3;
    double mlp = 1e-3;
};

// ---------------------------------------------------------------------------
// Schedule and ablation switches
// ---------------------------------------------------------------------------

struct TrainSchedule {
    int stage1_iters = 2000;   // paper runs 10k/30k at full scale
    int stage2_iters = 5000;
    bool pose_refine = true;
    int log_interval = 50;
    uint64_t rng_seed = 1;
    int threads = 4;

    int gaussian_count = 256;
    double init_scale_px = 3.0;
    double init_opacity = 0.1;
    int n_sub = 5;
    bool use_mlp = true;
    int mlp_hidden = 64;
    int mlp_l_pos = 3;
    int mlp_l_dir = 10;
    double suboffset_trans_sigma = 0.3;
    double reg_blur_sigma = 2.0;  // g(.) of the RGB consistency regularizer

    LearningRates lr;

    void validate() const;
};

struct Ablation {
    bool disable_struct = false;
    bool disable_reg_r = false;
    bool disable_reg_e = false;
    bool disable_evs = false;
    bool rgb_only = false;     // Stage 2 omits every event term
    bool events_only = false;  // Stage 2 omits every RGB term (and reg_e)
};

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainResult {
    SceneModel model;
    AdamState adam;
    std::vector<losses::LossReport> trace;
};

struct ObjectiveEval {
    losses::LossReport report;
    SceneModel grads;
};

class Trainer {
public:
    Trainer(const CaptureSession& session, const TrainSchedule& schedule,
            const losses::LossWeights& weights, const structure::StructureConfig& structure_cfg,
            const structure::MaskConfig& mask_cfg, const Ablation& ablation = {});

    // Deterministic initialization from the session (jittered grid, colors
    // sampled from the inverse-warped blurred views).
    SceneModel initial_model() const;

    TrainResult train_stage1() const;
    // stage1 == nullptr runs the event-only configuration without a color
    // reference.
    TrainResult train_stage2(const SceneModel* stage1) const;

    // One full objective evaluation at fixed view/pair choices; stage 1 uses
    // only the blur term. Exposed for the gradient-check harness.
    ObjectiveEval evaluate(const SceneModel& model, const GaussianMix2D* frozen_reference,
                           int stage, int rgb_view, int ev_pair, bool with_grads) const;

    const CaptureSession& session() const { return session_; }
    const TrainSchedule& schedule() const { return schedule_; }
    int event_pair_count() const { return int(acc_.size()); }

private:
    TrainResult run_stage(int stage, const SceneModel* stage1) const;

    const CaptureSession& session_;
    TrainSchedule schedule_;
    losses::LossWeights weights_;
    structure::StructureConfig structure_cfg_;
    structure::MaskConfig mask_cfg_;
    Ablation ablation_;

    // Per-event-view constants, prepared once.
    std::vector<Image> target_structure_;
    std::vector<Image> weight_;
    std::vector<Image> acc_;  // accumulated events between adjacent views
};

// Mean absolute parameter distance between warp sets (rotation and log-zoom
// in native units, translation in pixels).
double warp_set_error(const std::vector<CameraWarp>& a, const std::vector<CameraWarp>& b);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

std::string model_to_json(const SceneModel& model, uint64_t rng_seed);
SceneModel model_from_json(const std::string& text);
std::string adam_to_json(const AdamState& state);
AdamState adam_from_json(const std::string& text);

// ---------------------------------------------------------------------------
// Gradient checks
// ---------------------------------------------------------------------------

struct GradCheckResult {
    std::string component;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    int trials = 0;
    bool pass = false;
};

struct GradCheckOptions {
    int trials = 3;
    double h = 1e-4;
    double tol = 1e-4;
    double tol_composed = 1e-3;
    uint64_t seed = 99;
    int samples_per_group = 12;  // sampled scalars per parameter class
};

// Components: renderer, warp, mlp, loss_evs, loss_struct, loss_blur,
// loss_reg_r, loss_reg_e, stage2_objective.
std::vector<GradCheckResult> run_gradcheck(const GradCheckOptions& opt = {});

}  // namespace evsplat::optim
