#pragma once

// Episode-level inference: one window per subtitle centred on its shifted
// prior, then either global DTW alignment or independent thresholding.

#include <random>
#include <vector>

#include "config.hpp"
#include "corpus_io.hpp"
#include "dtw_align.hpp"
#include "evaluate.hpp"
#include "model.hpp"
#include "preprocess.hpp"

namespace sgnalign {

struct SubtitleInference {
    Window window;
    FrameProbs probs;
};

inline SubtitleInference infer_subtitle(const AlignerParams<float>& params, const SubtitleRecord& sub, const Episode& ep,
                                        const RunConfig& cfg, const Lexicon& lex = Lexicon::builtin()) {
    const TimeSpan prior_span = shifted_prior_span(sub.audio(), cfg);
    SubtitleInference out;
    out.window = centered_window(prior_span, ep.features.frame_count, ep.fps, cfg);
    const PriorVector prior = rasterize(prior_span, out.window, ep.fps);
    const auto ids = encode_tokens(to_pseudo_gloss(sub, lex).tokens, cfg.vocab_buckets);
    out.probs = predict(params, ids, ep.features, out.window, prior);
    return out;
}

inline std::vector<SubtitleInference> infer_episode(const AlignerParams<float>& params, const Episode& ep,
                                                    const RunConfig& cfg, const Lexicon& lex = Lexicon::builtin()) {
    std::vector<SubtitleInference> out;
    out.reserve(ep.subtitles.size());
    for (const auto& s : ep.subtitles) out.push_back(infer_subtitle(params, s, ep, cfg, lex));
    return out;
}

enum class DecodeMode { global, local };

/// Spans for every subtitle of the episode, in episode frames. Local decoding
/// thresholds each window at tau and strips overlaps between subtitles.
inline std::vector<AlignmentSpan> decode_episode(const std::vector<SubtitleInference>& inf, const Episode& ep,
                                                 const RunConfig& cfg, DecodeMode mode) {
    if (mode == DecodeMode::global) {
        std::vector<FrameProbs> probs;
        for (const auto& i : inf) probs.push_back(i.probs);
        return global_align(probs, ep.features.frame_count, cfg.dtw_theta);
    }
    std::vector<AlignmentSpan> spans;
    for (const auto& i : inf) {
        auto s = decode_span(i.probs, cfg.tau);
        spans.push_back(s ? *s : AlignmentSpan{FrameSpan::none(), 0.0});
    }
    return strip_overlaps(spans);
}

/// A subtitle left without frames is written with pred_start = pred_end = -1.
inline std::vector<PredictionRecord> to_predictions(const std::vector<SubtitleRecord>& subs,
                                                    const std::vector<AlignmentSpan>& spans,
                                                    const std::vector<SubtitleInference>* inf, double fps) {
    std::vector<PredictionRecord> out;
    for (std::size_t k = 0; k < subs.size(); ++k) {
        PredictionRecord r;
        r.subtitle_id = subs[k].id;
        if (spans[k].span.empty()) {
            r.pred_start = r.pred_end = -1.0;
        } else {
            r.pred_start = frame_to_seconds(spans[k].span.start, fps);
            r.pred_end = frame_to_seconds(spans[k].span.end, fps);
        }
        r.peak_confidence = std::clamp(spans[k].peak_confidence, 0.0, 1.0);
        if (inf) r.probs = (*inf)[k].probs;
        out.push_back(std::move(r));
    }
    return out;
}

inline std::vector<PredictionRecord> align_episode(const AlignerParams<float>& params, const Episode& ep,
                                                   const RunConfig& cfg, DecodeMode mode, bool keep_probs = false,
                                                   const Lexicon& lex = Lexicon::builtin()) {
    const auto inf = infer_episode(params, ep, cfg, lex);
    return to_predictions(ep.subtitles, decode_episode(inf, ep, cfg, mode), keep_probs ? &inf : nullptr, ep.fps);
}

// ------------------------------------------------------------------ spotting

/// One word query: a window placed at random around the word's sign, a
/// random prior inside it, and the sign's grid frames within the window.
struct SpotCase {
    std::size_t episode = 0;
    std::string word;
    Window window;
    PriorVector prior;
    FrameSpan gt;
};

/// Every `every`-th word of each episode. Words whose sign misses the window
/// grid are skipped.
inline std::vector<SpotCase> spot_cases(const std::vector<Episode>& eps,
                                        const std::vector<std::vector<SubtitleRecord>>& words, const RunConfig& cfg,
                                        std::uint64_t seed, std::size_t every = 1) {
    if (eps.size() != words.size()) throw ValidationError("need one word list per episode");
    if (every == 0) throw ConfigError("query stride must be positive");
    std::mt19937_64 rng(seed);
    std::vector<SpotCase> out;
    for (std::size_t e = 0; e < eps.size(); ++e) {
        const Episode& ep = eps[e];
        for (std::size_t k = 0; k < words[e].size(); k += every) {
            const SubtitleRecord& w = words[e][k];
            SpotCase c;
            c.episode = e;
            c.word = w.text;
            c.window = sample_window(w, ep, cfg, rng);
            c.prior = rasterize(random_prior_span(c.window, ep.fps, rng), c.window, ep.fps);
            const auto g = rasterize(w.has_gt() ? w.gt() : w.audio(), c.window, ep.fps).bits;
            c.gt = FrameSpan::none();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (g[i] <= 0) continue;
                if (c.gt.empty()) c.gt.start = static_cast<std::int64_t>(i);
                c.gt.end = static_cast<std::int64_t>(i);
            }
            if (!c.gt.empty()) out.push_back(std::move(c));
        }
    }
    return out;
}

inline std::vector<SpottingQuery> model_spot_queries(const AlignerParams<float>& params, const std::vector<Episode>& eps,
                                                     const std::vector<SpotCase>& cases, const RunConfig& cfg) {
    std::vector<SpottingQuery> q;
    for (const auto& c : cases)
        q.push_back({c.word, predict(params, encode_tokens({c.word}, cfg.vocab_buckets), eps[c.episode].features,
                                     c.window, c.prior).values,
                     c.gt});
    return q;
}

/// The baseline scores each frame by the random prior alone.
inline std::vector<SpottingQuery> prior_spot_queries(const std::vector<SpotCase>& cases) {
    std::vector<SpottingQuery> q;
    for (const auto& c : cases) q.push_back({c.word, c.prior.bits, c.gt});
    return q;
}

} // namespace sgnalign
