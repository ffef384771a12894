#pragma once

/**
 * @file eventsim.hpp
 * @brief Event-camera model: contrast-threshold trigger simulation from a
 *        log-intensity signal, windowed accumulation, double-integral
 *        intensity reconstruction, sequence brightness balancing, and the
 *        AEVT binary container.
 */

#include <cstdint>
#include <filesystem>
#include <vector>

#include "evsplat/image.hpp"

namespace evsplat::eventsim {

using img::Image;

struct Event {
    uint64_t t_us = 0;
    uint16_t x = 0;
    uint16_t y = 0;
    int8_t polarity = 0;  // +1 or -1
};

struct EventStream {
    int width = 0;
    int height = 0;
    double contrast_threshold = 0.2;  // Theta, log-intensity units
    std::vector<Event> events;        // sorted by (t_us, y, x)
};

constexpr double kIntensityFloor = 1e-3;  // lower clamp before log

struct LogFrame {
    Image log_intensity;  // per-pixel log(max(I, floor))
    double floor = kIntensityFloor;
    uint64_t t_us = 0;
};

Image log_with_floor(const Image& intensity, double floor = kIntensityFloor);
LogFrame make_log_frame(const Image& intensity, uint64_t t_us, double floor = kIntensityFloor);

// Optional sensor imperfections, off by default.
struct EventNoiseSpec {
    double drop_prob = 0.0;             // per-event Bernoulli drop
    double threshold_jitter_sigma = 0;  // per-pixel jitter on Theta
    uint64_t seed = 0;
};

// Linear interpolation of the log signal between frames; one event per
// crossing of reference +/- Theta, reference stepped by +/- Theta per event.
// Timestamps are crossing times rounded down to microseconds.
EventStream simulate_events(const std::vector<LogFrame>& frames, double theta,
                            const EventNoiseSpec& noise = {});

// Per-pixel signed count of events with t_s < t <= t_e.
Image accumulate(const EventStream& stream, uint64_t t_s, uint64_t t_e);

// exp(anchor_log + Theta * accumulated count), clamped to [0,1].
Image reconstruct_intensity(const EventStream& stream, const LogFrame& anchor, uint64_t t_us);

// Affine per-frame remap so every frame's mean/std match the sequence-median
// statistics; zero-variance frames get an offset-only correction. Clamped to
// [0,1].
std::vector<Image> brightness_balance(const std::vector<Image>& seq);

// --------------------------------------------------------------------------
// AEVT container. Little-endian: magic "AEVT", version u16=1, width u16,
// height u16, contrast_threshold f32, reserved u32=0, count u64, then
// 16-byte records {t_us u64, x u16, y u16, polarity i8, pad u8[3]} sorted by
// (t_us, y, x).
// --------------------------------------------------------------------------

enum class AevtError {
    BadMagic,
    BadVersion,
    Truncated,
    Unsorted,
    OutOfBounds,
    BadPolarity,
};

class AevtFormatError : public Error {
public:
    AevtFormatError(AevtError which, const std::string& what)
        : Error(Errc::Format, what), which_(which) {}
    AevtError which() const { return which_; }

private:
    AevtError which_;
};

void write_events(const std::filesystem::path& path, const EventStream& stream);
EventStream read_events(const std::filesystem::path& path);

}  // namespace evsplat::eventsim
