#pragma once

/**
 * @file capture.hpp
 * @brief Ground-truth scene synthesis and the asynchronous RGB+event capture
 *        simulator. Produces CaptureSession datasets: motion-blurred RGB
 *        frames with exposure intervals, an event stream, preprocessed
 *        event-view targets, and sharp held-out test views.
 */

#include <filesystem>
#include <optional>

#include "evsplat/eventsim.hpp"
#include "evsplat/splat.hpp"

namespace evsplat::capture {

using eventsim::EventStream;
using img::Image;
using splat::CameraWarp;

// ---------------------------------------------------------------------------
// Scene synthesis
// ---------------------------------------------------------------------------

struct SceneSpec {
    enum class Kind { GaussianField, TextCard, CheckerBlobs };

    Kind kind = Kind::CheckerBlobs;
    int width = 128;
    int height = 128;
    uint64_t rng_seed = 7;

    // gaussian_field / checker_plus_blobs
    int blob_count = 40;
    double scale_min = 2.0;
    double scale_max = 9.0;

    // text_card
    std::string text = "EV";
    int text_scale = 3;  // pixels per font cell

    // checker_plus_blobs
    int checker_cells = 8;
};

Image synth_scene(const SceneSpec& spec);

// 5x7 bitmap glyphs (A-Z, 0-9) rasterized at `scale` px per cell, value 1 on
// ink. Used by the text_card generator and exposed for the paste test.
Image make_text_raster(const std::string& text, int scale);
// Top-left corner where synth_scene pastes the text raster (centered card).
std::pair<int, int> text_paste_origin(const SceneSpec& spec);

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

struct TrajectoryKnot {
    uint64_t t_us = 0;
    CameraWarp warp;
};

struct TrajectorySpec {
    std::vector<TrajectoryKnot> knots;  // time-sorted
    std::vector<std::pair<uint64_t, uint64_t>> exposure_windows;
    double event_rate_hz = 6000.0;
    std::vector<uint64_t> event_view_times;
    std::vector<uint64_t> test_view_times;

    uint64_t span_begin() const { return knots.front().t_us; }
    uint64_t span_end() const { return knots.back().t_us; }
    void validate() const;
};

// Catmull-Rom interpolation in warp parameters, clamped at the ends.
CameraWarp eval_trajectory(const TrajectorySpec& traj, uint64_t t_us);

// Smooth sinusoidal sweep with randomized per-axis phases; RGB exposures at
// the given duty cycle, event-view and test timestamps interleaved off the
// RGB boundaries.
struct TrajectoryParams {
    uint64_t span_us = 1200000;
    int rgb_frames = 12;
    int event_views = 24;
    int test_views = 6;
    double duty_cycle = 0.8;
    double amp_trans_px = 7.0;
    double amp_rot_deg = 2.0;
    double amp_log_zoom = 0.02;
    double cycles = 1.7;
    double event_rate_hz = 6000.0;
    uint64_t seed = 11;
};

TrajectorySpec make_trajectory(const TrajectoryParams& p);

// ---------------------------------------------------------------------------
// Capture
// ---------------------------------------------------------------------------

// Bilinear resampling of the scene under a warp: out(p) = src(w^-1(p)),
// replicate border, warp acting about the canvas center.
Image resample(const Image& src, const CameraWarp& warp, int out_w, int out_h);

struct PoseNoiseSpec {
    double rot_sigma_rad = deg_to_rad(1.0);
    double log_zoom_sigma = 0.01;
    double trans_sigma_px = 1.0;
    uint64_t seed = 13;
};

struct RgbView {
    Image image;
    uint64_t t_open = 0, t_close = 0;
    CameraWarp warp_true, warp_init;
    uint64_t t_mid() const { return (t_open + t_close) / 2; }
};

struct EventView {
    Image target;  // preprocessed grayscale
    uint64_t t_us = 0;
    CameraWarp warp_true, warp_init;
};

struct TestView {
    Image image;
    uint64_t t_us = 0;
    CameraWarp warp;
};

struct CaptureSession {
    int width = 0, height = 0;
    double theta = 0.2;
    Image gt;
    std::vector<RgbView> rgb_views;
    EventStream events;
    std::vector<EventView> event_views;
    std::vector<TestView> test_views;
    std::string config_echo;  // canonical JSON of the originating config
};

// Exposure integration with K samples (odd K includes mid-exposure).
constexpr int kBlurSamples = 257;

// Per-frame temporal integration of warped resamplings over the exposure
// window; reference warp is the mid-exposure pose.
std::vector<RgbView> capture_blurred(const Image& gt, const TrajectorySpec& traj,
                                     int samples = kBlurSamples);

// Grayscale log-intensity signal sampled along the trajectory, fed to the
// event trigger simulation. Throws when the sampling rate leaves fewer than
// 8 samples between adjacent events at some pixel.
EventStream capture_events(const Image& gt, const TrajectorySpec& traj, double theta,
                           const eventsim::EventNoiseSpec& noise = {}, int min_gap_samples = 8);

struct SessionBuildConfig {
    double theta = 0.2;
    PoseNoiseSpec pose_noise;
    eventsim::EventNoiseSpec event_noise;
    img::KernelSpec denoise = img::KernelSpec::bilateral(1.5, 0.1, 3);
    int blur_samples = kBlurSamples;
    std::string config_echo;
};

CaptureSession build_session(const SceneSpec& scene, const TrajectorySpec& traj,
                             const SessionBuildConfig& cfg);
// Same assembly for a prebuilt ground-truth image (synthesis skipped).
CaptureSession build_session_from_image(const Image& gt, const TrajectorySpec& traj,
                                        const SessionBuildConfig& cfg);

// Directory layout: gt.ppm, blurred/####.ppm, events.aevt, evviews/####.pgm,
// test/####.ppm, session.json.
void write_session(const std::filesystem::path& dir, const CaptureSession& session);
CaptureSession read_session(const std::filesystem::path& dir);

}  // namespace evsplat::capture
