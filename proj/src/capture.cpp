#include "evsplat/capture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace evsplat::capture {

using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Scene synthesis
// ---------------------------------------------------------------------------

namespace {

// Classic 5x7 font, column-major, LSB = top row. A-Z then 0-9.
constexpr unsigned char kFont5x7[36][5] = {
    {0x7E, 0x11, 0x11, 0x11, 0x7E}, {0x7F, 0x49, 0x49, 0x49, 0x36},
    {0x3E, 0x41, 0x41, 0x41, 0x22}, {0x7F, 0x41, 0x41, 0x22, 0x1C},
    {0x7F, 0x49, 0x49, 0x49, 0x41}, {0x7F, 0x09, 0x09, 0x09, 0x01},
    {0x3E, 0x41, 0x49, 0x49, 0x7A}, {0x7F, 0x08, 0x08, 0x08, 0x7F},
    {0x00, 0x41, 0x7F, 0x41, 0x00}, {0x20, 0x40, 0x41, 0x3F, 0x01},
    {0x7F, 0x08, 0x14, 0x22, 0x41}, {0x7F, 0x40, 0x40, 0x40, 0x40},
    {0x7F, 0x02, 0x0C, 0x02, 0x7F}, {0x7F, 0x04, 0x08, 0x10, 0x7F},
    {0x3E, 0x41, 0x41, 0x41, 0x3E}, {0x7F, 0x09, 0x09, 0x09, 0x06},
    {0x3E, 0x41, 0x51, 0x21, 0x5E}, {0x7F, 0x09, 0x19, 0x29, 0x46},
    {0x46, 0x49, 0x49, 0x49, 0x31}, {0x01, 0x01, 0x7F, 0x01, 0x01},
    {0x3F, 0x40, 0x40, 0x40, 0x3F}, {0x1F, 0x20, 0x40, 0x20, 0x1F},
    {0x3F, 0x40, 0x38, 0x40, 0x3F}, {0x63, 0x14, 0x08, 0x14, 0x63},
    {0x07, 0x08, 0x70, 0x08, 0x07}, {0x61, 0x51, 0x49, 0x45, 0x43},
    {0x3E, 0x51, 0x49, 0x45, 0x3E}, {0x00, 0x42, 0x7F, 0x40, 0x00},
    {0x42, 0x61, 0x51, 0x49, 0x46}, {0x21, 0x41, 0x45, 0x4B, 0x31},
    {0x18, 0x14, 0x12, 0x7F, 0x10}, {0x27, 0x45, 0x45, 0x45, 0x39},
    {0x3C, 0x4A, 0x49, 0x49, 0x30}, {0x01, 0x71, 0x09, 0x05, 0x03},
    {0x36, 0x49, 0x49, 0x49, 0x36}, {0x06, 0x49, 0x49, 0x29, 0x1E},
};

const unsigned char* glyph_for(char c) {
    if (c >= 'A' && c <= 'Z') return kFont5x7[c - 'A'];
    if (c >= 'a' && c <= 'z') return kFont5x7[c - 'a'];
    if (c >= '0' && c <= '9') return kFont5x7[26 + (c - '0')];
    return nullptr;
}

Vec3 palette_color(Rng& rng) {
    // Saturated-ish colors away from the intensity floor.
    static const Vec3 palette[] = {
        {0.85, 0.25, 0.20}, {0.20, 0.65, 0.30}, {0.20, 0.35, 0.85}, {0.90, 0.75, 0.20},
        {0.70, 0.25, 0.75}, {0.20, 0.70, 0.75}, {0.90, 0.50, 0.25}, {0.35, 0.30, 0.60},
    };
    return palette[rng.uniform_index(8)];
}

Image gaussian_field(const SceneSpec& spec) {
    Rng rng(spec.rng_seed);
    splat::GaussianMix2D mix;
    mix.resize(size_t(std::max(0, spec.blob_count)));
    mix.background = 0.5;
    for (size_t i = 0; i < mix.size(); ++i) {
        mix.means[i] = Vec2(rng.uniform(0.08, 0.92) * spec.width, rng.uniform(0.08, 0.92) * spec.height);
        const double sx = std::exp(rng.uniform(std::log(spec.scale_min), std::log(spec.scale_max)));
        const double sy = std::exp(rng.uniform(std::log(spec.scale_min), std::log(spec.scale_max)));
        mix.log_scales[i] = Vec2(std::log(sx), std::log(sy));
        mix.rotations[i] = rng.uniform(0.0, M_PI);
        mix.opacity_logits[i] = logit(rng.uniform(0.55, 0.95));
        const Vec3 c = palette_color(rng);
        mix.color_logits[i] = Vec3(logit(c.r), logit(c.g), logit(c.b));
        mix.depth_keys[i] = rng.uniform();
    }
    return splat::render(mix, CameraWarp{}, spec.width, spec.height, 1);
}

void splat_blob(Image& im, const Vec2& mean, double sigma, double opacity, const Vec3& color) {
    const int r = int(std::ceil(4.0 * sigma));
    const int x0 = std::max(0, int(mean.x) - r), x1 = std::min(im.width - 1, int(mean.x) + r);
    const int y0 = std::max(0, int(mean.y) - r), y1 = std::min(im.height - 1, int(mean.y) + r);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x + 0.5 - mean.x;
            const double dy = y + 0.5 - mean.y;
            const double a = opacity * std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
            im.at(x, y, 0) = a * color.r + (1.0 - a) * im.at(x, y, 0);
            im.at(x, y, 1) = a * color.g + (1.0 - a) * im.at(x, y, 1);
            im.at(x, y, 2) = a * color.b + (1.0 - a) * im.at(x, y, 2);
        }
    }
}

Image checker_blobs(const SceneSpec& spec) {
    Rng rng(spec.rng_seed);
    Image im(spec.width, spec.height, 3);
    const int cell = std::max(2, spec.width / std::max(1, spec.checker_cells));
    const Vec3 dark(0.22, 0.24, 0.30), light(0.72, 0.70, 0.62);
    for (int y = 0; y < spec.height; ++y) {
        for (int x = 0; x < spec.width; ++x) {
            const bool odd = ((x / cell) + (y / cell)) % 2 != 0;
            const Vec3& c = odd ? dark : light;
            im.at(x, y, 0) = c.r;
            im.at(x, y, 1) = c.g;
            im.at(x, y, 2) = c.b;
        }
    }
    for (int i = 0; i < spec.blob_count; ++i) {
        const Vec2 mean(rng.uniform(0.1, 0.9) * spec.width, rng.uniform(0.1, 0.9) * spec.height);
        const double sigma = rng.uniform(spec.scale_min, spec.scale_max);
        splat_blob(im, mean, sigma, rng.uniform(0.55, 0.9), palette_color(rng));
    }
    return im;
}

Image text_card(const SceneSpec& spec) {
    Image im(spec.width, spec.height, 3);
    const Vec3 card(0.84, 0.81, 0.74), ink(0.14, 0.18, 0.52);
    for (size_t p = 0; p < im.pixel_count(); ++p) {
        im.data[p * 3 + 0] = card.r;
        im.data[p * 3 + 1] = card.g;
        im.data[p * 3 + 2] = card.b;
    }
    // A few flat color patches for chroma away from the text band.
    const Vec3 patches[3] = {{0.80, 0.30, 0.25}, {0.25, 0.60, 0.35}, {0.85, 0.70, 0.25}};
    const int pw = spec.width / 5;
    for (int k = 0; k < 3; ++k) {
        const int px = (k + 1) * spec.width / 5;
        const int py = spec.height / 6;
        for (int y = py; y < py + pw && y < spec.height; ++y) {
            for (int x = px; x < px + pw && x < spec.width; ++x) {
                im.at(x, y, 0) = patches[k].r;
                im.at(x, y, 1) = patches[k].g;
                im.at(x, y, 2) = patches[k].b;
            }
        }
    }
    const Image raster = make_text_raster(spec.text, spec.text_scale);
    const auto [ox, oy] = text_paste_origin(spec);
    for (int y = 0; y < raster.height; ++y) {
        for (int x = 0; x < raster.width; ++x) {
            const int tx = ox + x, ty = oy + y;
            if (tx < 0 || ty < 0 || tx >= spec.width || ty >= spec.height) continue;
            if (raster.at(x, y) > 0.5) {
                im.at(tx, ty, 0) = ink.r;
                im.at(tx, ty, 1) = ink.g;
                im.at(tx, ty, 2) = ink.b;
            }
        }
    }
    return im;
}

}  // namespace

Image make_text_raster(const std::string& text, int scale) {
    const int n = int(text.size());
    const int cols = n > 0 ? n * 6 - 1 : 1;
    Image raster(cols * scale, 7 * scale, 1);
    for (int k = 0; k < n; ++k) {
        const unsigned char* glyph = glyph_for(text[size_t(k)]);
        if (!glyph) continue;
        for (int cx = 0; cx < 5; ++cx) {
            for (int ry = 0; ry < 7; ++ry) {
                if (!((glyph[cx] >> ry) & 1)) continue;
                for (int sy = 0; sy < scale; ++sy) {
                    for (int sx = 0; sx < scale; ++sx) {
                        raster.at((k * 6 + cx) * scale + sx, ry * scale + sy) = 1.0;
                    }
                }
            }
        }
    }
    return raster;
}

std::pair<int, int> text_paste_origin(const SceneSpec& spec) {
    const Image raster = make_text_raster(spec.text, spec.text_scale);
    return {(spec.width - raster.width) / 2, (spec.height - raster.height) / 2};
}

Image synth_scene(const SceneSpec& spec) {
    if (spec.width <= 0 || spec.height <= 0) {
        throw Error(Errc::Config, "synth_scene: canvas must be positive");
    }
    switch (spec.kind) {
        case SceneSpec::Kind::GaussianField:
            return gaussian_field(spec);
        case SceneSpec::Kind::TextCard:
            return text_card(spec);
        case SceneSpec::Kind::CheckerBlobs:
            return checker_blobs(spec);
    }
    throw Error(Errc::Config, "synth_scene: unknown generator");
}

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

void TrajectorySpec::validate() const {
    if (knots.size() < 2) {
        throw Error(Errc::Config, "trajectory: need at least two knots");
    }
    for (size_t i = 1; i < knots.size(); ++i) {
        if (knots[i].t_us <= knots[i - 1].t_us) {
            throw Error(Errc::Config, "trajectory: knots must be time-sorted");
        }
    }
    for (const auto& [open, close] : exposure_windows) {
        if (open >= close || open < span_begin() || close > span_end()) {
            throw Error(Errc::Config, "trajectory: exposure window outside span");
        }
    }
}

namespace {

double hermite(double p0, double m0, double p1, double m1, double u, double dt) {
    const double u2 = u * u, u3 = u2 * u;
    return (2 * u3 - 3 * u2 + 1) * p0 + (u3 - 2 * u2 + u) * dt * m0 + (-2 * u3 + 3 * u2) * p1 +
           (u3 - u2) * dt * m1;
}

}  // namespace

CameraWarp eval_trajectory(const TrajectorySpec& traj, uint64_t t_us) {
    const auto& k = traj.knots;
    if (t_us <= k.front().t_us) return k.front().warp;
    if (t_us >= k.back().t_us) return k.back().warp;

    size_t i = 0;
    while (i + 2 < k.size() && k[i + 1].t_us <= t_us) ++i;

    auto param = [](const CameraWarp& w, int axis) {
        switch (axis) {
            case 0: return w.rotation;
            case 1: return w.log_zoom;
            case 2: return w.translation.x;
            default: return w.translation.y;
        }
    };
    const double t0 = double(k[i].t_us), t1 = double(k[i + 1].t_us);
    const double dt = t1 - t0;
    const double u = (double(t_us) - t0) / dt;

    CameraWarp out;
    double vals[4];
    for (int axis = 0; axis < 4; ++axis) {
        const double p0 = param(k[i].warp, axis);
        const double p1 = param(k[i + 1].warp, axis);
        // Finite-difference tangents, clamped at the ends.
        const double m0 = i > 0 ? (p1 - param(k[i - 1].warp, axis)) / (t1 - double(k[i - 1].t_us))
                                : (p1 - p0) / dt;
        const double m1 = i + 2 < k.size()
                              ? (param(k[i + 2].warp, axis) - p0) / (double(k[i + 2].t_us) - t0)
                              : (p1 - p0) / dt;
        vals[axis] = hermite(p0, m0, p1, m1, u, dt);
    }
    out.rotation = vals[0];
    out.log_zoom = vals[1];
    out.translation = Vec2(vals[2], vals[3]);
    return out;
}

TrajectorySpec make_trajectory(const TrajectoryParams& p) {
    if (p.rgb_frames < 1 || p.event_views < 2 || p.test_views < 1) {
        throw Error(Errc::Config, "trajectory: need at least 1 RGB frame, 2 event views, 1 test view");
    }
    Rng rng(p.seed);
    const double phases[4] = {rng.uniform(0.0, 2 * M_PI), rng.uniform(0.0, 2 * M_PI),
                              rng.uniform(0.0, 2 * M_PI), rng.uniform(0.0, 2 * M_PI)};
    const double amps[4] = {deg_to_rad(p.amp_rot_deg), p.amp_log_zoom, p.amp_trans_px,
                            p.amp_trans_px};

    TrajectorySpec traj;
    traj.event_rate_hz = p.event_rate_hz;
    const int n_knots = 33;
    for (int i = 0; i < n_knots; ++i) {
        const double tau = double(i) / double(n_knots - 1);
        TrajectoryKnot knot;
        knot.t_us = uint64_t(std::llround(tau * double(p.span_us)));
        const double arg = 2.0 * M_PI * p.cycles * tau;
        knot.warp.rotation = amps[0] * std::sin(arg + phases[0]);
        knot.warp.log_zoom = amps[1] * std::sin(arg + phases[1]);
        knot.warp.translation = Vec2(amps[2] * std::sin(arg + phases[2]),
                                     amps[3] * std::sin(arg + phases[3]));
        traj.knots.push_back(knot);
    }

    const double period = double(p.span_us) / double(p.rgb_frames);
    const double exposure = p.duty_cycle * period;
    for (int i = 0; i < p.rgb_frames; ++i) {
        const double center = (i + 0.5) * period;
        traj.exposure_windows.emplace_back(uint64_t(std::llround(center - exposure / 2)),
                                           uint64_t(std::llround(center + exposure / 2)));
    }
    // Deliberately offset from RGB frame boundaries: the two modalities share
    // a clock but never a trigger.
    for (int i = 0; i < p.event_views; ++i) {
        const double frac = (i + 0.37) / double(p.event_views);
        traj.event_view_times.push_back(uint64_t(std::llround(frac * double(p.span_us))));
    }
    for (int i = 0; i < p.test_views; ++i) {
        const double frac = (i + 0.61) / double(p.test_views);
        traj.test_view_times.push_back(uint64_t(std::llround(frac * double(p.span_us))));
    }
    traj.validate();
    return traj;
}

// ---------------------------------------------------------------------------
// Resampling and capture
// ---------------------------------------------------------------------------

Image resample(const Image& src, const CameraWarp& warp, int out_w, int out_h) {
    const Vec2 center(out_w * 0.5, out_h * 0.5);
    const CameraWarp inv = warp.inverse();
    Image out(out_w, out_h, src.channels);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            const Vec2 q = inv.apply(Vec2(x + 0.5, y + 0.5), center);
            // Bilinear over pixel centers, replicate border.
            const double u = q.x - 0.5, v = q.y - 0.5;
            const int x0 = int(std::floor(u)), y0 = int(std::floor(v));
            const double fx = u - x0, fy = v - y0;
            const int xa = std::clamp(x0, 0, src.width - 1);
            const int xb = std::clamp(x0 + 1, 0, src.width - 1);
            const int ya = std::clamp(y0, 0, src.height - 1);
            const int yb = std::clamp(y0 + 1, 0, src.height - 1);
            for (int c = 0; c < src.channels; ++c) {
                const double top = src.at(xa, ya, c) * (1 - fx) + src.at(xb, ya, c) * fx;
                const double bot = src.at(xa, yb, c) * (1 - fx) + src.at(xb, yb, c) * fx;
                out.at(x, y, c) = top * (1 - fy) + bot * fy;
            }
        }
    }
    return out;
}

std::vector<RgbView> capture_blurred(const Image& gt, const TrajectorySpec& traj, int samples) {
    traj.validate();
    if (samples < 2) {
        throw Error(Errc::Config, "capture_blurred: need at least 2 integration samples");
    }
    std::vector<RgbView> views;
    views.reserve(traj.exposure_windows.size());
    for (const auto& [t_open, t_close] : traj.exposure_windows) {
        RgbView view;
        view.t_open = t_open;
        view.t_close = t_close;
        Image acc(gt.width, gt.height, gt.channels);
        for (int k = 0; k < samples; ++k) {
            const double t = double(t_open) + (double(t_close) - double(t_open)) * k / (samples - 1);
            const Image frame = resample(gt, eval_trajectory(traj, uint64_t(std::llround(t))),
                                         gt.width, gt.height);
            for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += frame.data[i];
        }
        for (double& v : acc.data) v /= double(samples);
        view.image = std::move(acc);
        view.warp_true = eval_trajectory(traj, view.t_mid());
        view.warp_init = view.warp_true;
        views.push_back(std::move(view));
    }
    return views;
}

EventStream capture_events(const Image& gt, const TrajectorySpec& traj, double theta,
                           const eventsim::EventNoiseSpec& noise, int min_gap_samples) {
    traj.validate();
    if (!(traj.event_rate_hz > 0.0)) {
        throw Error(Errc::Config, "capture_events: event_rate_hz must be > 0");
    }
    const uint64_t dt_us = std::max<uint64_t>(1, uint64_t(std::llround(1e6 / traj.event_rate_hz)));
    const Image gray = img::luminance(gt);

    std::vector<eventsim::LogFrame> frames;
    for (uint64_t t = traj.span_begin();; t += dt_us) {
        const bool last = t >= traj.span_end();
        const uint64_t tt = last ? traj.span_end() : t;
        frames.push_back(eventsim::make_log_frame(
            resample(gray, eval_trajectory(traj, tt), gt.width, gt.height), tt));
        if (last) break;
    }

    EventStream stream = eventsim::simulate_events(frames, theta, noise);

    // Resolution guard: the piecewise-linear proxy needs several samples
    // between adjacent events at every pixel.
    std::vector<uint64_t> last_t(size_t(gt.width) * gt.height, UINT64_MAX);
    uint64_t min_gap = UINT64_MAX;
    for (const auto& e : stream.events) {
        const size_t p = size_t(e.y) * gt.width + e.x;
        if (last_t[p] != UINT64_MAX) min_gap = std::min(min_gap, e.t_us - last_t[p]);
        last_t[p] = e.t_us;
    }
    if (min_gap != UINT64_MAX && min_gap < uint64_t(min_gap_samples) * dt_us) {
        throw Error(Errc::Config,
                    "capture_events: event sampling rate too low for the configured motion "
                    "(min inter-event gap " +
                        std::to_string(min_gap) + " us < " +
                        std::to_string(uint64_t(min_gap_samples) * dt_us) + " us)");
    }
    return stream;
}

// ---------------------------------------------------------------------------
// Session assembly
// ---------------------------------------------------------------------------

namespace {

CameraWarp perturb(const CameraWarp& w, const PoseNoiseSpec& noise, Rng& rng) {
    CameraWarp out = w;
    out.rotation += noise.rot_sigma_rad * rng.normal();
    out.log_zoom += noise.log_zoom_sigma * rng.normal();
    out.translation += Vec2(noise.trans_sigma_px * rng.normal(),
                            noise.trans_sigma_px * rng.normal());
    return out;
}

}  // namespace

CaptureSession build_session(const SceneSpec& scene, const TrajectorySpec& traj,
                             const SessionBuildConfig& cfg) {
    return build_session_from_image(img::quantize16(synth_scene(scene)), traj, cfg);
}

CaptureSession build_session_from_image(const Image& gt, const TrajectorySpec& traj,
                                        const SessionBuildConfig& cfg) {
    if (!(cfg.theta > 0.0)) {
        throw Error(Errc::Config, "build_session: theta must be > 0");
    }
    img::require_rgb(gt, "build_session");
    traj.validate();

    CaptureSession session;
    session.width = gt.width;
    session.height = gt.height;
    session.theta = cfg.theta;
    session.config_echo = cfg.config_echo;
    session.gt = img::quantize16(gt);

    session.rgb_views = capture_blurred(session.gt, traj, cfg.blur_samples);
    for (auto& view : session.rgb_views) view.image = img::quantize16(view.image);

    session.events = capture_events(session.gt, traj, cfg.theta, cfg.event_noise);

    // Event-view targets: double-integral reconstruction from the stream
    // anchor, then bilateral denoising, then sequence brightness balancing.
    const Image gray0 = resample(img::luminance(session.gt),
                                 eval_trajectory(traj, traj.span_begin()), session.width,
                                 session.height);
    const eventsim::LogFrame anchor = eventsim::make_log_frame(gray0, traj.span_begin());
    std::vector<Image> targets;
    targets.reserve(traj.event_view_times.size());
    for (uint64_t t : traj.event_view_times) {
        const Image recon = eventsim::reconstruct_intensity(session.events, anchor, t);
        targets.push_back(img::bilateral_denoise(recon, cfg.denoise));
    }
    targets = eventsim::brightness_balance(targets);

    Rng rng(cfg.pose_noise.seed);
    for (auto& view : session.rgb_views) view.warp_init = perturb(view.warp_true, cfg.pose_noise, rng);
    for (size_t i = 0; i < traj.event_view_times.size(); ++i) {
        EventView ev;
        ev.t_us = traj.event_view_times[i];
        ev.target = img::quantize16(targets[i]);
        ev.warp_true = eval_trajectory(traj, ev.t_us);
        ev.warp_init = perturb(ev.warp_true, cfg.pose_noise, rng);
        session.event_views.push_back(std::move(ev));
    }
    for (uint64_t t : traj.test_view_times) {
        TestView tv;
        tv.t_us = t;
        tv.warp = eval_trajectory(traj, t);
        tv.image = img::quantize16(resample(session.gt, tv.warp, session.width, session.height));
        session.test_views.push_back(std::move(tv));
    }
    return session;
}

// ---------------------------------------------------------------------------
// Session I/O
// ---------------------------------------------------------------------------

namespace {

ordered_json warp_to_json(const CameraWarp& w) {
    return ordered_json{{"rotation", w.rotation},
                        {"log_zoom", w.log_zoom},
                        {"tx", w.translation.x},
                        {"ty", w.translation.y}};
}

CameraWarp warp_from_json(const ordered_json& j) {
    CameraWarp w;
    w.rotation = j.at("rotation").get<double>();
    w.log_zoom = j.at("log_zoom").get<double>();
    w.translation = Vec2(j.at("tx").get<double>(), j.at("ty").get<double>());
    return w;
}

std::string index_name(size_t i, const char* ext) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu%s", i, ext);
    return buf;
}

}  // namespace

void write_session(const std::filesystem::path& dir, const CaptureSession& session) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "blurred");
    fs::create_directories(dir / "evviews");
    fs::create_directories(dir / "test");

    img::write_pnm(dir / "gt.ppm", session.gt);
    eventsim::write_events(dir / "events.aevt", session.events);

    ordered_json j;
    j["format_version"] = 1;
    j["width"] = session.width;
    j["height"] = session.height;
    j["theta"] = session.theta;
    j["gt"] = "gt.ppm";
    j["events"] = "events.aevt";

    ordered_json rgb = ordered_json::array();
    for (size_t i = 0; i < session.rgb_views.size(); ++i) {
        const auto& view = session.rgb_views[i];
        const std::string name = index_name(i, ".ppm");
        img::write_pnm(dir / "blurred" / name, view.image);
        rgb.push_back(ordered_json{{"file", "blurred/" + name},
                                   {"t_open", view.t_open},
                                   {"t_close", view.t_close},
                                   {"warp_true", warp_to_json(view.warp_true)},
                                   {"warp_init", warp_to_json(view.warp_init)}});
    }
    j["rgb_views"] = std::move(rgb);

    ordered_json evs = ordered_json::array();
    for (size_t i = 0; i < session.event_views.size(); ++i) {
        const auto& view = session.event_views[i];
        const std::string name = index_name(i, ".pgm");
        img::write_pnm(dir / "evviews" / name, view.target);
        evs.push_back(ordered_json{{"file", "evviews/" + name},
                                   {"t_us", view.t_us},
                                   {"warp_true", warp_to_json(view.warp_true)},
                                   {"warp_init", warp_to_json(view.warp_init)}});
    }
    j["event_views"] = std::move(evs);

    ordered_json tests = ordered_json::array();
    for (size_t i = 0; i < session.test_views.size(); ++i) {
        const auto& view = session.test_views[i];
        const std::string name = index_name(i, ".ppm");
        img::write_pnm(dir / "test" / name, view.image);
        tests.push_back(ordered_json{{"file", "test/" + name},
                                     {"t_us", view.t_us},
                                     {"warp", warp_to_json(view.warp)}});
    }
    j["test_views"] = std::move(tests);

    if (!session.config_echo.empty()) {
        j["config"] = ordered_json::parse(session.config_echo);
    }

    std::ofstream out(dir / "session.json", std::ios::binary);
    if (!out) {
        throw Error(Errc::Io, "session: cannot write " + (dir / "session.json").string());
    }
    out << j.dump(2) << "\n";
}

CaptureSession read_session(const std::filesystem::path& dir) {
    std::ifstream in(dir / "session.json", std::ios::binary);
    if (!in) {
        throw Error(Errc::Io, "session: cannot open " + (dir / "session.json").string());
    }
    ordered_json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw Error(Errc::Format, std::string("session: bad json: ") + e.what());
    }

    CaptureSession session;
    session.width = j.at("width").get<int>();
    session.height = j.at("height").get<int>();
    session.theta = j.at("theta").get<double>();
    session.gt = img::read_pnm(dir / j.at("gt").get<std::string>());
    session.events = eventsim::read_events(dir / j.at("events").get<std::string>());

    for (const auto& e : j.at("rgb_views")) {
        RgbView view;
        view.image = img::read_pnm(dir / e.at("file").get<std::string>());
        view.t_open = e.at("t_open").get<uint64_t>();
        view.t_close = e.at("t_close").get<uint64_t>();
        view.warp_true = warp_from_json(e.at("warp_true"));
        view.warp_init = warp_from_json(e.at("warp_init"));
        session.rgb_views.push_back(std::move(view));
    }
    for (const auto& e : j.at("event_views")) {
        EventView view;
        view.target = img::read_pnm(dir / e.at("file").get<std::string>());
        view.t_us = e.at("t_us").get<uint64_t>();
        view.warp_true = warp_from_json(e.at("warp_true"));
        view.warp_init = warp_from_json(e.at("warp_init"));
        session.event_views.push_back(std::move(view));
    }
    for (const auto& e : j.at("test_views")) {
        TestView view;
        view.image = img::read_pnm(dir / e.at("file").get<std::string>());
        view.t_us = e.at("t_us").get<uint64_t>();
        view.warp = warp_from_json(e.at("warp"));
        session.test_views.push_back(std::move(view));
    }
    if (j.contains("config")) {
        session.config_echo = j.at("config").dump();
    }
    return session;
}

}  // namespace evsplat::capture
