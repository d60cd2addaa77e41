#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sgnalign {

// Round-half-up conversion used for every seconds -> frames mapping.
inline std::int64_t seconds_to_frame(double seconds, double fps) {
    return static_cast<std::int64_t>(std::floor(seconds * fps + 0.5));
}

inline double frame_to_seconds(std::int64_t frame, double fps) {
    return static_cast<double>(frame) / fps;
}

/// Frame-inclusive interval [start, end]. end < start encodes the empty span.
struct FrameSpan {
    std::int64_t start = 0;
    std::int64_t end = -1;

    static FrameSpan none() { return {}; }
    bool empty() const { return end < start; }
    std::int64_t length() const { return empty() ? 0 : end - start + 1; }
    bool contains(std::int64_t f) const { return f >= start && f <= end; }

    friend bool operator==(const FrameSpan& a, const FrameSpan& b) {
        if (a.empty() && b.empty()) return true;
        return a.start == b.start && a.end == b.end;
    }
};

inline std::int64_t intersection_length(FrameSpan a, FrameSpan b) {
    if (a.empty() || b.empty()) return 0;
    std::int64_t lo = std::max(a.start, b.start);
    std::int64_t hi = std::min(a.end, b.end);
    return hi < lo ? 0 : hi - lo + 1;
}

inline double iou(FrameSpan a, FrameSpan b) {
    std::int64_t inter = intersection_length(a, b);
    std::int64_t uni = a.length() + b.length() - inter;
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// A predicted span in episode frames plus the peak probability behind it.
struct AlignmentSpan {
    FrameSpan span;
    double peak_confidence = 0.0;
};

/// Model output for one query/window: one probability per stride-grid frame.
/// Grid index i corresponds to episode frame window_start_frame + i * stride.
struct FrameProbs {
    std::vector<float> values;
    std::int64_t window_start_frame = 0;
    int stride = 1;

    std::int64_t grid_to_frame(std::size_t i) const {
        return window_start_frame + static_cast<std::int64_t>(i) * stride;
    }
};

/// Binary prior raster over the same grid as FrameProbs.
struct PriorVector {
    std::vector<float> bits;
    std::int64_t window_start_frame = 0;
    int stride = 1;
};

/// Seconds interval used for subtitle timings and prior spans.
struct TimeSpan {
    double start = 0.0;
    double end = 0.0;

    double center() const { return 0.5 * (start + end); }
    double duration() const { return end - start; }
};

inline FrameSpan to_frames(TimeSpan s, double fps) {
    return {seconds_to_frame(s.start, fps), seconds_to_frame(s.end, fps)};
}

struct LabeledSpan {
    std::string id;
    FrameSpan span;
};

} // namespace sgnalign
