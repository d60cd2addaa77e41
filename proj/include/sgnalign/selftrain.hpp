#pragma once

// Self-training: label the audio-aligned set with a trained model, keep labels
// whose peak confidence clears tau_c, retrain on them and fine-tune again.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "corpus_io.hpp"
#include "inference.hpp"
#include "model.hpp"
#include "trainer.hpp"

namespace sgnalign {

struct PseudoLabel {
    std::size_t episode = 0;
    SubtitleRecord record;  // gt fields hold the pseudo span
    double peak = 0.0;
    Window window;
};

struct Exclusion {
    std::string id;
    std::string reason;
};

struct PseudoLabelSet {
    std::vector<PseudoLabel> kept;
    std::vector<Exclusion> excluded;
};

/// One forward pass per subtitle over a window centred on its shifted prior;
/// the thresholded span becomes the label.
inline PseudoLabelSet generate_pseudo_labels(const AlignerParams<float>& params, const std::vector<Episode>& episodes,
                                             const RunConfig& cfg, const Lexicon& lex = Lexicon::builtin()) {
    PseudoLabelSet out;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        const Episode& ep = episodes[e];
        for (const auto& sub : ep.subtitles) {
            const auto inf = infer_subtitle(params, sub, ep, cfg, lex);
            const auto span = decode_span(inf.probs, cfg.tau);
            if (!span) {
                out.excluded.push_back({sub.id, "no-span"});
                continue;
            }
            PseudoLabel p;
            p.episode = e;
            p.record = sub;
            p.record.gt_start = frame_to_seconds(span->span.start, ep.fps);
            p.record.gt_end = frame_to_seconds(span->span.end, ep.fps);
            // A single grid frame gives a zero-length span; widen it by one frame.
            if (!(*p.record.gt_start < *p.record.gt_end)) p.record.gt_end = frame_to_seconds(span->span.start + 1, ep.fps);
            p.peak = span->peak_confidence;
            p.window = inf.window;
            out.kept.push_back(std::move(p));
        }
    }
    return out;
}

struct FilterResult {
    std::vector<PseudoLabel> kept;
    double kept_ratio = 0.0;
};

inline FilterResult filter_by_confidence(const std::vector<PseudoLabel>& records, double tau_c) {
    if (!(tau_c >= 0.0 && tau_c <= 1.0)) throw ConfigError("tau_c must lie in [0,1]");
    FilterResult r;
    for (const auto& p : records)
        if (p.peak >= tau_c) r.kept.push_back(p);
    r.kept_ratio = records.empty() ? 0.0 : static_cast<double>(r.kept.size()) / static_cast<double>(records.size());
    return r;
}

/// Training set whose labels are the pseudo spans.
inline TrainDataset pseudo_dataset(const std::vector<Episode>& episodes, const std::vector<PseudoLabel>& labels,
                                   const RunConfig& cfg, const Lexicon& lex = Lexicon::builtin()) {
    TrainDataset ds;
    ds.episodes = episodes;
    for (const auto& p : labels) {
        TrainExample ex;
        ex.episode = p.episode;
        ex.id = p.record.id;
        ex.ids = encode_tokens(to_pseudo_gloss(p.record, lex).tokens, cfg.vocab_buckets);
        ex.label = p.record.gt();
        ex.audio = p.record.audio();
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

/// Same examples with the shifted audio prior span as label (the control).
inline TrainDataset shifted_audio_dataset(const std::vector<Episode>& episodes, const std::vector<PseudoLabel>& labels,
                                          const RunConfig& cfg, const Lexicon& lex = Lexicon::builtin()) {
    TrainDataset ds = pseudo_dataset(episodes, labels, cfg, lex);
    for (auto& ex : ds.examples) {
        const TimeSpan s = shifted_prior_span(ex.audio, cfg);
        ex.label = {std::max(0.0, s.start), s.end};
    }
    return ds;
}

struct SelfTrainOptions {
    bool use_shifted_audio = false;  // control: heuristic spans instead of pseudo spans
    std::optional<std::filesystem::path> out_dir;
    TrainOptions train;
};

/// Retrains on the filtered labels with a subtitle-style stage, then runs the
/// standard fine-tuning stage on the manual set.
inline AlignerParams<float> self_train_round(AlignerParams<float> params, const std::vector<Episode>& episodes,
                                             const std::vector<PseudoLabel>& filtered, const TrainDataset& manual,
                                             const RunConfig& cfg, const SelfTrainOptions& opts = {}) {
    if (filtered.empty()) throw ConfigError("self-training needs at least one pseudo label after filtering");
    const TrainDataset data = opts.use_shifted_audio ? shifted_audio_dataset(episodes, filtered, cfg)
                                                     : pseudo_dataset(episodes, filtered, cfg);
    TrainStage retrain = stage_from_config(StageName::subtitle_train, cfg);
    retrain.tag = opts.use_shifted_audio ? "selftrain_control" : "selftrain";
    std::mt19937_64 rng(stage_seed(cfg.seed, StageName::subtitle_train) ^ 0xA5A5A5A5ull);
    train_stage(params, data, retrain, cfg, rng, opts.train);
    const TrainStage ft = stage_from_config(StageName::finetune, cfg);
    std::mt19937_64 rng2(stage_seed(cfg.seed, StageName::finetune) ^ 0xA5A5A5A5ull);
    train_stage(params, manual, ft, cfg, rng2, opts.train);
    if (opts.out_dir) write_checkpoint({cfg, params}, *opts.out_dir / "selftrain.ckpt");
    return params;
}

// ------------------------------------------------------------------ files

inline nlohmann::json pseudo_to_json(const PseudoLabel& p) {
    auto j = subtitle_to_json(p.record);
    j["peak"] = p.peak;
    return j;
}

/// One `<episode>.pseudo.jsonl` per episode with at least one kept label.
inline void write_pseudo_labels(const std::vector<Episode>& episodes, const std::vector<PseudoLabel>& labels,
                                const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::vector<const PseudoLabel*>> per(episodes.size());
    for (const auto& p : labels) per.at(p.episode).push_back(&p);
    for (std::size_t e = 0; e < episodes.size(); ++e) {
        if (per[e].empty()) continue;
        const auto path = dir / (episodes[e].episode_id + ".pseudo.jsonl");
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path.string());
        for (const auto* p : per[e]) out << pseudo_to_json(*p).dump() << '\n';
    }
}

} // namespace sgnalign
