#include "evsplat/eventsim.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace evsplat::eventsim {

Image log_with_floor(const Image& intensity, double floor) {
    if (!(floor > 0.0)) {
        throw Error(Errc::Config, "log_with_floor: floor must be > 0");
    }
    Image out(intensity.width, intensity.height, intensity.channels);
    for (size_t i = 0; i < intensity.data.size(); ++i) {
        out.data[i] = std::log(std::max(intensity.data[i], floor));
    }
    return out;
}

LogFrame make_log_frame(const Image& intensity, uint64_t t_us, double floor) {
    img::require_gray(intensity, "make_log_frame");
    return LogFrame{log_with_floor(intensity, floor), floor, t_us};
}

// ---------------------------------------------------------------------------
// Trigger simulation
// ---------------------------------------------------------------------------

EventStream simulate_events(const std::vector<LogFrame>& frames, double theta,
                            const EventNoiseSpec& noise) {
    if (frames.size() < 2) {
        throw Error(Errc::Config, "simulate_events: need at least two frames");
    }
    if (!(theta > 0.0)) {
        throw Error(Errc::Config, "simulate_events: contrast threshold must be > 0");
    }
    const Image& first = frames.front().log_intensity;
    img::require_gray(first, "simulate_events");
    for (size_t i = 1; i < frames.size(); ++i) {
        img::require_same_shape(first, frames[i].log_intensity, "simulate_events");
        if (frames[i].t_us <= frames[i - 1].t_us) {
            throw Error(Errc::Config, "simulate_events: timestamps must be strictly increasing");
        }
    }

    const int w = first.width;
    const int h = first.height;

    // Per-pixel reference memory and (optionally jittered) threshold.
    std::vector<double> ref(first.data);
    std::vector<double> thresh(size_t(w) * h, theta);
    Rng rng(noise.seed ? noise.seed : 0x5eedull);
    if (noise.threshold_jitter_sigma > 0.0) {
        for (double& t : thresh) {
            t = std::max(theta + noise.threshold_jitter_sigma * rng.normal(), 0.05 * theta);
        }
    }

    EventStream stream;
    stream.width = w;
    stream.height = h;
    stream.contrast_threshold = theta;

    for (size_t f = 1; f < frames.size(); ++f) {
        const Image& la = frames[f - 1].log_intensity;
        const Image& lb = frames[f].log_intensity;
        const double ta = double(frames[f - 1].t_us);
        const double tb = double(frames[f].t_us);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const size_t p = size_t(y) * w + x;
                const double va = la.data[p];
                const double vb = lb.data[p];
                const double th = thresh[p];
                if (vb == va) continue;
                const double slope = (vb - va) / (tb - ta);
                // Monotone segment: all crossings share one polarity.
                while (true) {
                    double level;
                    int8_t pol;
                    if (vb - ref[p] > th) {
                        level = ref[p] + th;
                        pol = +1;
                    } else if (vb - ref[p] < -th) {
                        level = ref[p] - th;
                        pol = -1;
                    } else {
                        break;
                    }
                    const double t_cross = ta + (level - va) / slope;
                    const uint64_t t_us = uint64_t(std::max(0.0, std::floor(
                        std::clamp(t_cross, ta, tb))));
                    ref[p] = level;
                    if (noise.drop_prob > 0.0 && rng.uniform() < noise.drop_prob) continue;
                    stream.events.push_back(Event{t_us, uint16_t(x), uint16_t(y), pol});
                }
            }
        }
    }

    std::stable_sort(stream.events.begin(), stream.events.end(),
                     [](const Event& a, const Event& b) {
                         if (a.t_us != b.t_us) return a.t_us < b.t_us;
                         if (a.y != b.y) return a.y < b.y;
                         return a.x < b.x;
                     });
    return stream;
}

Image accumulate(const EventStream& stream, uint64_t t_s, uint64_t t_e) {
    if (t_s > t_e) {
        throw Error(Errc::Config, "accumulate: t_s must be <= t_e");
    }
    Image out(stream.width, stream.height, 1);
    for (const Event& e : stream.events) {
        if (e.t_us > t_s && e.t_us <= t_e) {
            out.at(e.x, e.y) += double(e.polarity);
        }
    }
    return out;
}

Image reconstruct_intensity(const EventStream& stream, const LogFrame& anchor, uint64_t t_us) {
    if (t_us < anchor.t_us) {
        throw Error(Errc::Config, "reconstruct_intensity: t precedes the anchor");
    }
    const Image counts = accumulate(stream, anchor.t_us, t_us);
    Image out(stream.width, stream.height, 1);
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = clamp01(std::exp(anchor.log_intensity.data[i] +
                                       stream.contrast_threshold * counts.data[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Brightness balancing
// ---------------------------------------------------------------------------

namespace {

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<Image> brightness_balance(const std::vector<Image>& seq) {
    if (seq.empty()) return {};
    for (const Image& im : seq) {
        img::require_gray(im, "brightness_balance");
        img::require_same_shape(seq.front(), im, "brightness_balance");
    }
    std::vector<double> means, stds;
    means.reserve(seq.size());
    stds.reserve(seq.size());
    for (const Image& im : seq) {
        const double m = img::mean_value(im);
        double acc = 0.0;
        for (double v : im.data) acc += (v - m) * (v - m);
        means.push_back(m);
        stds.push_back(std::sqrt(acc / double(im.data.size())));
    }
    const double target_mean = median_of(means);
    const double target_std = median_of(stds);

    std::vector<Image> out;
    out.reserve(seq.size());
    for (size_t f = 0; f < seq.size(); ++f) {
        const double gain = stds[f] > 1e-12 ? target_std / stds[f] : 1.0;
        Image balanced(seq[f].width, seq[f].height, 1);
        for (size_t i = 0; i < balanced.data.size(); ++i) {
            balanced.data[i] = clamp01((seq[f].data[i] - means[f]) * gain + target_mean);
        }
        out.push_back(std::move(balanced));
    }
    return out;
}

// ---------------------------------------------------------------------------
// AEVT codec
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'A', 'E', 'V', 'T'};
constexpr uint16_t kVersion = 1;
constexpr size_t kHeaderSize = 4 + 2 + 2 + 2 + 4 + 4 + 8;
constexpr size_t kRecordSize = 16;

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(char(v & 0xff));
    buf.push_back(char((v >> 8) & 0xff));
}
void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& buf, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

uint16_t get_u16(const unsigned char* p) { return uint16_t(p[0] | (p[1] << 8)); }
uint32_t get_u32(const unsigned char* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}
uint64_t get_u64(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
    return v;
}
float get_f32(const unsigned char* p) {
    const uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void write_events(const std::filesystem::path& path, const EventStream& stream) {
    std::string buf;
    buf.reserve(kHeaderSize + stream.events.size() * kRecordSize);
    buf.append(kMagic, 4);
    put_u16(buf, kVersion);
    put_u16(buf, uint16_t(stream.width));
    put_u16(buf, uint16_t(stream.height));
    put_f32(buf, float(stream.contrast_threshold));
    put_u32(buf, 0);  // reserved
    put_u64(buf, uint64_t(stream.events.size()));
    for (const Event& e : stream.events) {
        put_u64(buf, e.t_us);
        put_u16(buf, e.x);
        put_u16(buf, e.y);
        buf.push_back(char(e.polarity));
        buf.append(3, '\0');
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(Errc::Io, "aevt: cannot write " + path.string());
    }
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) {
        throw Error(Errc::Io, "aevt: write failed for " + path.string());
    }
}

EventStream read_events(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::Io, "aevt: cannot open " + path.string());
    }
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
    if (raw.size() < kHeaderSize) {
        throw AevtFormatError(AevtError::Truncated, "aevt: truncated header in " + path.string());
    }
    if (std::memcmp(p, kMagic, 4) != 0) {
        throw AevtFormatError(AevtError::BadMagic, "aevt: bad magic in " + path.string());
    }
    if (get_u16(p + 4) != kVersion) {
        throw AevtFormatError(AevtError::BadVersion, "aevt: unsupported version in " + path.string());
    }
    EventStream stream;
    stream.width = get_u16(p + 6);
    stream.height = get_u16(p + 8);
    stream.contrast_threshold = double(get_f32(p + 10));
    const uint64_t count = get_u64(p + 18);
    if (raw.size() != kHeaderSize + count * kRecordSize) {
        throw AevtFormatError(AevtError::Truncated, "aevt: truncated payload in " + path.string());
    }
    stream.events.reserve(count);
    const Event* prev = nullptr;
    for (uint64_t i = 0; i < count; ++i) {
        const unsigned char* r = p + kHeaderSize + i * kRecordSize;
        Event e;
        e.t_us = get_u64(r);
        e.x = get_u16(r + 8);
        e.y = get_u16(r + 10);
        e.polarity = int8_t(r[12]);
        if (e.x >= stream.width || e.y >= stream.height) {
            throw AevtFormatError(AevtError::OutOfBounds,
                                  "aevt: event coordinates out of bounds in " + path.string());
        }
        if (e.polarity != 1 && e.polarity != -1) {
            throw AevtFormatError(AevtError::BadPolarity, "aevt: bad polarity in " + path.string());
        }
        if (prev) {
            const bool ordered = prev->t_us < e.t_us ||
                                 (prev->t_us == e.t_us &&
                                  (prev->y < e.y || (prev->y == e.y && prev->x <= e.x)));
            if (!ordered) {
                throw AevtFormatError(AevtError::Unsorted,
                                      "aevt: records not sorted by (t, y, x) in " + path.string());
            }
        }
        stream.events.push_back(e);
        prev = &stream.events.back();
    }
    return stream;
}

}  // namespace evsplat::eventsim
