#pragma once

// Global monotone alignment of an episode's subtitles.
//
// Frames are assigned to the state chain B0, S1, B1, S2, ..., SK, BK in order
// (states may be skipped). A background frame costs theta, a frame of S_k
// costs 1 - p_k(t) (1 outside subtitle k's window). Costs are quantized to
// 2^-30 units so that path totals compare exactly.
//
// Ties: lower cost, then fewer subtitle frames, then the lexicographically
// smallest state sequence (later claims).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "error.hpp"
#include "types.hpp"

namespace sgnalign {

inline constexpr double kCostScale = 1073741824.0;  // 2^30

inline std::int64_t quantize_cost(double c) { return std::llround(std::clamp(c, 0.0, 1.0) * kCostScale); }

/// Native-frame probabilities of one subtitle over [start, start + p.size()).
struct FrameRow {
    std::int64_t start = 0;
    std::vector<double> p;

    double at(std::int64_t t) const {
        const std::int64_t i = t - start;
        return (i >= 0 && i < static_cast<std::int64_t>(p.size())) ? p[i] : 0.0;
    }
};

/// Linear interpolation of window-grid probabilities onto native frames,
/// from the first to the last grid frame, clipped to [0, total_frames).
inline FrameRow interpolate(const FrameProbs& fp, std::int64_t total_frames) {
    FrameRow row;
    if (fp.values.empty()) return row;
    const std::int64_t first = fp.grid_to_frame(0);
    const std::int64_t last = fp.grid_to_frame(fp.values.size() - 1);
    const std::int64_t lo = std::max<std::int64_t>(first, 0);
    const std::int64_t hi = std::min<std::int64_t>(last, total_frames - 1);
    row.start = lo;
    for (std::int64_t t = lo; t <= hi; ++t) {
        const std::int64_t rel = t - first;
        const std::size_t i = static_cast<std::size_t>(rel / fp.stride);
        const double frac = static_cast<double>(rel % fp.stride) / fp.stride;
        const double a = fp.values[i];
        const double b = i + 1 < fp.values.size() ? fp.values[i + 1] : a;
        row.p.push_back(a + (b - a) * frac);
    }
    return row;
}

namespace detail {

struct PathCost {
    std::int64_t cost = 0;
    std::int64_t sub_frames = 0;

    friend bool operator<(const PathCost& a, const PathCost& b) {
        return a.cost != b.cost ? a.cost < b.cost : a.sub_frames < b.sub_frames;
    }
    friend bool operator==(const PathCost&, const PathCost&) = default;
};

} // namespace detail

/// Core dynamic program over quantized costs. cost[k][t] is the cost of frame
/// t under subtitle k. Returns one frame span per subtitle (possibly empty).
inline std::vector<FrameSpan> global_align_quantized(const std::vector<std::vector<std::int64_t>>& cost,
                                                     std::int64_t theta_q, std::size_t T) {
    const std::size_t K = cost.size();
    if (K == 0) return {};
    const std::size_t S = 2 * K + 1;
    auto frame_cost = [&](std::size_t s, std::size_t t) -> detail::PathCost {
        if (s % 2 == 0) return {theta_q, 0};
        return {cost[s / 2][t], 1};
    };
    if (T == 0) return std::vector<FrameSpan>(K);

    // best[t][s]: optimum over frames t..T-1 with frame t in state s.
    // suffix[t][s]: min over s' >= s of best[t][s'].
    std::vector<detail::PathCost> best(T * S), suffix(T * S);
    for (std::size_t t = T; t-- > 0;) {
        for (std::size_t s = S; s-- > 0;) {
            detail::PathCost c = frame_cost(s, t);
            if (t + 1 < T) {
                const auto& nxt = suffix[(t + 1) * S + s];
                c.cost += nxt.cost;
                c.sub_frames += nxt.sub_frames;
            }
            best[t * S + s] = c;
            suffix[t * S + s] = (s + 1 < S && suffix[t * S + s + 1] < c) ? suffix[t * S + s + 1] : c;
        }
    }

    std::vector<FrameSpan> spans(K);
    std::size_t state = 0;
    for (std::size_t t = 0; t < T; ++t) {
        const detail::PathCost target = suffix[t * S + state];
        while (!(best[t * S + state] == target)) ++state;
        if (state % 2 == 1) {
            FrameSpan& sp = spans[state / 2];
            if (sp.empty()) sp = {static_cast<std::int64_t>(t), static_cast<std::int64_t>(t)};
            else sp.end = static_cast<std::int64_t>(t);
        }
    }
    return spans;
}

/// Aligns all subtitles of an episode. rows[k] holds subtitle k's native-frame
/// probabilities (subtitles ordered by prior time).
inline std::vector<AlignmentSpan> global_align(const std::vector<FrameRow>& rows, std::int64_t total_frames,
                                               double theta) {
    if (!(theta > 0.0 && theta < 1.0)) throw ValidationError("dtw theta must lie in (0,1)");
    if (rows.empty()) return {};
    const std::size_t T = static_cast<std::size_t>(std::max<std::int64_t>(total_frames, 0));
    std::vector<std::vector<std::int64_t>> cost(rows.size(), std::vector<std::int64_t>(T, quantize_cost(1.0)));
    for (std::size_t k = 0; k < rows.size(); ++k)
        for (std::size_t i = 0; i < rows[k].p.size(); ++i) {
            const std::int64_t t = rows[k].start + static_cast<std::int64_t>(i);
            if (t >= 0 && t < static_cast<std::int64_t>(T)) cost[k][t] = quantize_cost(1.0 - rows[k].p[i]);
        }
    const auto spans = global_align_quantized(cost, quantize_cost(theta), T);
    std::vector<AlignmentSpan> out(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        out[k].span = spans[k];
        for (std::int64_t t = spans[k].start; !spans[k].empty() && t <= spans[k].end; ++t)
            out[k].peak_confidence = std::max(out[k].peak_confidence, rows[k].at(t));
    }
    return out;
}

inline std::vector<AlignmentSpan> global_align(const std::vector<FrameProbs>& probs, std::int64_t total_frames,
                                               double theta) {
    std::vector<FrameRow> rows;
    rows.reserve(probs.size());
    for (const auto& p : probs) rows.push_back(interpolate(p, total_frames));
    return global_align(rows, total_frames, theta);
}

/// Removes every frame covered by more than one span from all spans covering
/// it. A span split into several pieces keeps its earliest piece.
inline std::vector<FrameSpan> strip_overlaps(const std::vector<FrameSpan>& spans) {
    std::vector<FrameSpan> out(spans.size());
    for (std::size_t i = 0; i < spans.size(); ++i) {
        const FrameSpan s = spans[i];
        if (s.empty()) continue;
        std::vector<std::pair<std::int64_t, std::int64_t>> cuts;
        for (std::size_t j = 0; j < spans.size(); ++j) {
            if (j == i || spans[j].empty()) continue;
            const std::int64_t lo = std::max(s.start, spans[j].start), hi = std::min(s.end, spans[j].end);
            if (lo <= hi) cuts.emplace_back(lo, hi);
        }
        std::sort(cuts.begin(), cuts.end());
        std::int64_t cur = s.start;
        bool found = false;
        for (const auto& [lo, hi] : cuts) {
            if (lo > cur) {
                out[i] = {cur, lo - 1};
                found = true;
                break;
            }
            cur = std::max(cur, hi + 1);
        }
        if (!found && cur <= s.end) out[i] = {cur, s.end};
    }
    return out;
}

inline std::vector<AlignmentSpan> strip_overlaps(const std::vector<AlignmentSpan>& spans) {
    std::vector<FrameSpan> raw;
    for (const auto& s : spans) raw.push_back(s.span);
    const auto stripped = strip_overlaps(raw);
    std::vector<AlignmentSpan> out = spans;
    for (std::size_t i = 0; i < out.size(); ++i) out[i].span = stripped[i];
    return out;
}

} // namespace sgnalign
