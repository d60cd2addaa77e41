#pragma once

// Alignment metrics (frame accuracy, F1@IoU), prior baselines, and spotting
// metrics (AP / mAP, Acc@1).

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "corpus_io.hpp"
#include "dtw_align.hpp"
#include "error.hpp"
#include "model.hpp"
#include "types.hpp"

namespace sgnalign {

inline constexpr std::array<double, 3> kIouThresholds{0.10, 0.25, 0.50};

namespace detail {

inline void require_disjoint(const std::vector<LabeledSpan>& spans, const char* which) {
    std::vector<FrameSpan> s;
    for (const auto& l : spans)
        if (!l.span.empty()) s.push_back(l.span);
    std::sort(s.begin(), s.end(), [](const FrameSpan& a, const FrameSpan& b) { return a.start < b.start; });
    for (std::size_t i = 1; i < s.size(); ++i)
        if (s[i].start <= s[i - 1].end)
            throw ValidationError(std::string(which) + " spans overlap; strip overlaps before scoring");
}

} // namespace detail

struct FrameCounts {
    std::int64_t correct = 0;
    std::int64_t total = 0;

    double percent() const { return total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Per-frame label agreement (subtitle id or background) over [0, frames).
inline FrameCounts frame_agreement(const std::vector<LabeledSpan>& pred, const std::vector<LabeledSpan>& gt,
                                   std::int64_t frames) {
    detail::require_disjoint(pred, "predicted");
    detail::require_disjoint(gt, "ground-truth");
    std::map<std::string, int> ids;
    auto label_of = [&](const std::string& id) {
        auto [it, inserted] = ids.emplace(id, static_cast<int>(ids.size()));
        return it->second;
    };
    std::vector<int> p(static_cast<std::size_t>(frames), -1), g(static_cast<std::size_t>(frames), -1);
    auto paint = [&](std::vector<int>& lab, const std::vector<LabeledSpan>& spans) {
        for (const auto& s : spans) {
            if (s.span.empty()) continue;
            const int id = label_of(s.id);
            for (std::int64_t t = std::max<std::int64_t>(s.span.start, 0); t <= std::min(s.span.end, frames - 1); ++t)
                lab[t] = id;
        }
    };
    paint(g, gt);
    paint(p, pred);
    FrameCounts c;
    c.total = frames;
    for (std::int64_t t = 0; t < frames; ++t) c.correct += p[t] == g[t];
    return c;
}

inline double frame_accuracy(const std::vector<LabeledSpan>& pred, const std::vector<LabeledSpan>& gt,
                             std::int64_t frames) {
    return frame_agreement(pred, gt, frames).percent();
}

struct HitCounts {
    std::int64_t hits = 0;
    std::int64_t total = 0;

    double ratio() const { return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0; }
};

/// Ground-truth subtitles whose same-id prediction reaches the IoU threshold.
inline HitCounts iou_hits(const std::vector<LabeledSpan>& pred, const std::vector<LabeledSpan>& gt, double threshold) {
    std::map<std::string, FrameSpan> by_id;
    for (const auto& p : pred) by_id[p.id] = p.span;
    HitCounts h;
    for (const auto& g : gt) {
        ++h.total;
        auto it = by_id.find(g.id);
        if (it != by_id.end() && !it->second.empty() && iou(it->second, g.span) >= threshold) ++h.hits;
    }
    return h;
}

inline double f1_at_iou(const std::vector<LabeledSpan>& pred, const std::vector<LabeledSpan>& gt, double threshold) {
    return iou_hits(pred, gt, threshold).ratio();
}

// ----------------------------------------------------------------- reports

/// Pooled over every frame and subtitle that was added.
struct EvalReport {
    FrameCounts frames;
    std::array<HitCounts, 3> hits{};

    void add(const std::vector<LabeledSpan>& pred, const std::vector<LabeledSpan>& gt, std::int64_t total_frames) {
        const auto f = frame_agreement(pred, gt, total_frames);
        frames.correct += f.correct;
        frames.total += f.total;
        for (std::size_t i = 0; i < kIouThresholds.size(); ++i) {
            const auto h = iou_hits(pred, gt, kIouThresholds[i]);
            hits[i].hits += h.hits;
            hits[i].total += h.total;
        }
    }

    double frame_acc() const { return frames.percent(); }
    double f1(std::size_t i) const { return hits[i].ratio(); }
};

inline nlohmann::json to_json(const EvalReport& r) {
    return {{"frame_acc", r.frame_acc()},
            {"f1_10", 100.0 * r.f1(0)},
            {"f1_25", 100.0 * r.f1(1)},
            {"f1_50", 100.0 * r.f1(2)},
            {"frames", r.frames.total},
            {"subtitles", r.hits[0].total}};
}

// --------------------------------------------------------------- baselines

enum class BaselineMode { audio, audio_shifted };

/// Raw audio spans or the shifted/padded prior spans, in episode frames,
/// with overlaps stripped.
inline std::vector<LabeledSpan> baseline_spans(const std::vector<SubtitleRecord>& subs, BaselineMode mode,
                                               const RunConfig& cfg, double fps) {
    std::vector<FrameSpan> raw;
    for (const auto& s : subs) {
        const TimeSpan t = mode == BaselineMode::audio ? s.audio() : shifted_prior_span(s.audio(), cfg);
        raw.push_back(to_frames(t, fps));
    }
    const auto stripped = strip_overlaps(raw);
    std::vector<LabeledSpan> out;
    for (std::size_t i = 0; i < subs.size(); ++i) out.push_back({subs[i].id, stripped[i]});
    return out;
}

inline std::vector<LabeledSpan> gt_spans(const std::vector<SubtitleRecord>& subs, double fps) {
    std::vector<LabeledSpan> out;
    for (const auto& s : subs) {
        if (!s.has_gt()) throw ValidationError("subtitle " + s.id + " has no ground-truth span");
        out.push_back({s.id, to_frames(s.gt(), fps)});
    }
    return out;
}

// Negative times mark a subtitle that received no frames.
inline std::vector<LabeledSpan> prediction_spans(const std::vector<PredictionRecord>& preds, double fps) {
    std::vector<LabeledSpan> out;
    for (const auto& p : preds)
        out.push_back({p.subtitle_id, p.pred_start < 0 ? FrameSpan::none() : to_frames({p.pred_start, p.pred_end}, fps)});
    return out;
}

// ---------------------------------------------------------------- spotting

struct SpottingQuery {
    std::string word;
    std::vector<float> probs;
    FrameSpan gt;  // indices into probs
};

struct SpottingResult {
    double map = 0.0;
    double acc_at_1 = 0.0;
};

/// Frames ranked by descending probability, ties by ascending index; AP is the
/// mean of precision at each positive's rank.
inline double average_precision(const std::vector<float>& scores, FrameSpan positives) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::int64_t seen = 0, n_pos = 0;
    double sum = 0.0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (positives.contains(static_cast<std::int64_t>(order[r]))) {
            ++seen;
            sum += static_cast<double>(seen) / static_cast<double>(r + 1);
        }
    }
    for (std::size_t i = 0; i < scores.size(); ++i) n_pos += positives.contains(static_cast<std::int64_t>(i));
    if (n_pos == 0) throw ValidationError("spotting query without positive frames");
    return sum / static_cast<double>(n_pos);
}

inline std::size_t earliest_argmax(const std::vector<float>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline SpottingResult spotting_metrics(const std::vector<SpottingQuery>& queries) {
    SpottingResult r;
    if (queries.empty()) return r;
    for (const auto& q : queries) {
        r.map += average_precision(q.probs, q.gt);
        r.acc_at_1 += q.gt.contains(static_cast<std::int64_t>(earliest_argmax(q.probs))) ? 1.0 : 0.0;
    }
    r.map /= static_cast<double>(queries.size());
    r.acc_at_1 /= static_cast<double>(queries.size());
    return r;
}

} // namespace sgnalign
