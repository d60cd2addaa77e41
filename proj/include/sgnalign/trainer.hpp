#pragma once

// Staged training: word pre-training, subtitle training on audio-aligned
// labels, fine-tuning on manual labels. Each item pairs a positive window with
// an optional negative window from elsewhere in the same episode.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus_io.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "preprocess.hpp"

namespace sgnalign {

enum class StageName { word_pretrain, subtitle_train, finetune };
enum class LabelSource { word_spans, audio_aligned, manual };

inline const char* to_string(StageName s) {
    switch (s) {
    case StageName::word_pretrain: return "word_pretrain";
    case StageName::subtitle_train: return "subtitle_train";
    case StageName::finetune: return "finetune";
    }
    return "?";
}

struct TrainStage {
    StageName name = StageName::subtitle_train;
    LabelSource label_source = LabelSource::audio_aligned;
    int epochs = 1;
    double lr = 0.0;
    bool freeze_text_stack = false;
    // How the positive prior is built: random (spotting), jittered around the
    // label span, or shifted audio timing as at inference.
    PriorMode prior_mode = PriorMode::jittered;
    std::string tag;  // free-form label for logs
};

inline TrainStage stage_from_config(StageName name, const RunConfig& cfg) {
    TrainStage s;
    s.name = name;
    switch (name) {
    case StageName::word_pretrain:
        s.label_source = LabelSource::word_spans;
        s.epochs = cfg.epochs_word;
        s.lr = cfg.lr_word;
        s.prior_mode = PriorMode::random;
        break;
    case StageName::subtitle_train:
        s.label_source = LabelSource::audio_aligned;
        s.epochs = cfg.epochs_subtitle;
        s.lr = cfg.lr_subtitle;
        s.prior_mode = PriorMode::jittered;
        break;
    case StageName::finetune:
        s.label_source = LabelSource::manual;
        s.epochs = cfg.epochs_finetune;
        s.lr = cfg.lr_finetune;
        s.freeze_text_stack = cfg.freeze_text_stack;
        s.prior_mode = PriorMode::shifted;
        break;
    }
    s.tag = to_string(name);
    return s;
}

// ------------------------------------------------------------------ datasets

struct TrainExample {
    std::size_t episode = 0;
    std::string id;
    std::vector<int> ids;
    TimeSpan label;  // rasterized as S_gt
    TimeSpan audio;  // source of the shifted prior
};

struct TrainDataset {
    std::vector<Episode> episodes;
    std::vector<TrainExample> examples;

    bool empty() const { return examples.empty(); }
};

/// One example per subtitle. Audio-aligned labels use the audio span, manual
/// labels the ground-truth span (which must be present).
inline TrainDataset subtitle_dataset(std::vector<Episode> episodes, LabelSource source, const RunConfig& cfg,
                                     const Lexicon& lex = Lexicon::builtin()) {
    TrainDataset ds;
    ds.episodes = std::move(episodes);
    for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
        for (const auto& sub : ds.episodes[e].subtitles) {
            TrainExample ex;
            ex.episode = e;
            ex.id = sub.id;
            ex.ids = encode_tokens(to_pseudo_gloss(sub, lex).tokens, cfg.vocab_buckets);
            ex.audio = sub.audio();
            if (source == LabelSource::manual) {
                if (!sub.has_gt()) throw ConfigError("manual labels missing for subtitle " + sub.id);
                ex.label = sub.gt();
            } else {
                ex.label = sub.audio();
            }
            ds.examples.push_back(std::move(ex));
        }
    }
    return ds;
}

/// Word queries: each record's text is one gloss token and its gt span is the
/// sign location. Records live in `words` parallel to `episodes`.
inline TrainDataset word_dataset(std::vector<Episode> episodes, const std::vector<std::vector<SubtitleRecord>>& words,
                                 const RunConfig& cfg) {
    if (words.size() != episodes.size()) throw ConfigError("word records must be given per episode");
    TrainDataset ds;
    ds.episodes = std::move(episodes);
    for (std::size_t e = 0; e < words.size(); ++e) {
        for (const auto& w : words[e]) {
            if (!w.has_gt()) throw ConfigError("word record " + w.id + " has no span");
            TrainExample ex;
            ex.episode = e;
            ex.id = w.id;
            ex.ids = encode_tokens({w.text}, cfg.vocab_buckets);
            ex.label = w.gt();
            ex.audio = w.audio();
            ds.examples.push_back(std::move(ex));
        }
    }
    return ds;
}

// --------------------------------------------------------------- sampling

struct NegativeSample {
    Window window;
    PriorVector prior;
};

/// Prior for a query inside a window according to mode.
inline PriorVector make_prior(TimeSpan label, TimeSpan audio, const Window& win, PriorMode mode, const RunConfig& cfg,
                              double fps, std::mt19937_64& rng) {
    switch (mode) {
    case PriorMode::shifted: return rasterize(shifted_prior_span(audio, cfg), win, fps);
    case PriorMode::exact: return rasterize(label, win, fps);
    case PriorMode::jittered: return rasterize(jitter_span(label, rng), win, fps);
    case PriorMode::random: return rasterize(random_prior_span(win, fps, rng), win, fps);
    }
    throw ConfigError("unhandled prior mode");
}

/// A window from the same episode whose frames stay at least window_seconds
/// away from the reference span and whose start lies more than two window
/// lengths from the reference start. Its prior is built (with the stage's prior
/// mode) around another subtitle whose span centre falls inside the window, or
/// placed at random when no such subtitle exists.
inline std::optional<NegativeSample> sample_negative(TimeSpan reference, const Episode& ep, const RunConfig& cfg,
                                                     PriorMode mode, std::mt19937_64& rng) {
    const double fps = ep.fps;
    const std::int64_t total = ep.features.frame_count;
    const std::int64_t len = static_cast<std::int64_t>(cfg.window_frames(fps)) * cfg.stride;
    const std::int64_t margin = seconds_to_frame(cfg.window_seconds, fps);
    const FrameSpan ref = to_frames(reference, fps);
    const std::int64_t max_start = total - len;
    if (max_start < 0) return std::nullopt;
    const std::int64_t left_hi = std::min({ref.start - margin - len, ref.start - 2 * len - 1, max_start});
    const std::int64_t right_lo = std::max<std::int64_t>({ref.end + 1 + margin, ref.start + 2 * len + 1, 0});
    const std::int64_t n_left = left_hi >= 0 ? left_hi + 1 : 0;
    const std::int64_t n_right = right_lo <= max_start ? max_start - right_lo + 1 : 0;
    if (n_left + n_right == 0) return std::nullopt;
    std::uniform_int_distribution<std::int64_t> pick(0, n_left + n_right - 1);
    const std::int64_t k = pick(rng);
    const std::int64_t start = k < n_left ? k : right_lo + (k - n_left);

    NegativeSample neg;
    neg.window = make_window(start, total, fps, cfg);
    const FrameSpan wf = neg.window.frames();
    std::vector<const SubtitleRecord*> inside;
    for (const auto& s : ep.subtitles) {
        const TimeSpan span = s.has_gt() ? s.gt() : s.audio();
        if (wf.contains(seconds_to_frame(span.center(), fps))) inside.push_back(&s);
    }
    if (inside.empty() || mode == PriorMode::random) {
        neg.prior = rasterize(random_prior_span(neg.window, fps, rng), neg.window, fps);
    } else {
        std::uniform_int_distribution<std::size_t> which(0, inside.size() - 1);
        const SubtitleRecord& other = *inside[which(rng)];
        const TimeSpan label = other.has_gt() ? other.gt() : other.audio();
        neg.prior = make_prior(label, other.audio(), neg.window, mode, cfg, fps, rng);
    }
    return neg;
}

inline std::optional<NegativeSample> sample_negative(const SubtitleRecord& sub, const Episode& ep, const RunConfig& cfg,
                                                     std::mt19937_64& rng) {
    return sample_negative(sub.has_gt() ? sub.gt() : sub.audio(), ep, cfg, PriorMode::jittered, rng);
}

// ------------------------------------------------------------------ optimizer

class Adam {
public:
    Adam(const AlignerParams<float>& like, const RunConfig& cfg)
        : beta1_(cfg.adam_beta1), beta2_(cfg.adam_beta2), eps_(cfg.adam_eps), m_(like.zeros_like()),
          v_(like.zeros_like()) {}

    // One update of every tensor for which `trainable(name)` holds.
    template <typename Pred>
    void step(AlignerParams<float>& params, AlignerParams<float>& grad, double lr, Pred&& trainable) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_), c2 = 1.0 - std::pow(beta2_, t_);
        auto p = params.tensors(), g = grad.tensors(), m = m_.tensors(), v = v_.tensors();
        for (std::size_t k = 0; k < p.size(); ++k) {
            if (!trainable(p[k].first)) continue;
            auto& pd = p[k].second->data;
            const auto& gd = g[k].second->data;
            auto& md = m[k].second->data;
            auto& vd = v[k].second->data;
            for (std::size_t i = 0; i < pd.size(); ++i) {
                const double gi = gd[i];
                md[i] = static_cast<float>(beta1_ * md[i] + (1.0 - beta1_) * gi);
                vd[i] = static_cast<float>(beta2_ * vd[i] + (1.0 - beta2_) * gi * gi);
                const double mhat = md[i] / c1, vhat = vd[i] / c2;
                pd[i] = static_cast<float>(pd[i] - lr * mhat / (std::sqrt(vhat) + eps_));
            }
        }
    }

private:
    double beta1_, beta2_, eps_;
    AlignerParams<float> m_, v_;
    long t_ = 0;
};

/// Scales gradients of the trainable tensors so their global L2 norm is at most
/// max_norm. Returns the norm before clipping.
template <typename Pred>
double clip_global_norm(AlignerParams<float>& grad, double max_norm, Pred&& trainable) {
    double sq = 0.0;
    auto tensors = grad.tensors();
    for (auto& [name, m] : tensors)
        if (trainable(name))
            for (float v : m->data) sq += double(v) * v;
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const float s = static_cast<float>(max_norm / norm);
        for (auto& [name, m] : tensors)
            if (trainable(name))
                for (auto& v : m->data) v *= s;
    }
    return norm;
}

// ---------------------------------------------------------------- training

struct EpochLog {
    std::string stage;
    int epoch = 0;
    double l_align = 0, l_neg = 0, l_rel = 0, l_tot = 0;
    std::size_t items = 0, negatives = 0;
};

inline nlohmann::json to_json(const EpochLog& e) {
    return {{"stage", e.stage}, {"epoch", e.epoch}, {"l_align", e.l_align}, {"l_neg", e.l_neg}, {"l_rel", e.l_rel},
            {"l_tot", e.l_tot}, {"items", e.items}, {"negatives", e.negatives}};
}

struct TrainOptions {
    std::function<void(const EpochLog&)> on_epoch;
    std::optional<std::filesystem::path> log_path;  // train_log.jsonl, appended
};

inline bool uses_negatives(const RunConfig& cfg) { return cfg.lambda_neg > 0.0 || cfg.lambda_rel > 0.0; }

/// Runs stage.epochs passes of shuffled mini-batches minimizing the total loss.
inline std::vector<EpochLog> train_stage(AlignerParams<float>& params, const TrainDataset& data, const TrainStage& stage,
                                         const RunConfig& cfg, std::mt19937_64& rng, const TrainOptions& opts = {}) {
    if (data.empty()) throw ConfigError(std::string("empty dataset for stage ") + stage.tag);
    const bool negatives = uses_negatives(cfg);
    auto trainable = [&](const std::string& name) { return !(stage.freeze_text_stack && is_text_tensor(name)); };
    Adam adam(params, cfg);
    std::vector<std::size_t> order(data.examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    ForwardCache<float> pos_cache, neg_cache;
    LossGradient<float> lg;
    std::vector<EpochLog> logs;
    std::ofstream log_file;
    if (opts.log_path) {
        log_file.open(*opts.log_path, std::ios::app);
        if (!log_file) throw IoError("cannot append to " + opts.log_path->string());
    }

    for (int epoch = 1; epoch <= stage.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochLog log;
        log.stage = stage.tag;
        log.epoch = epoch;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
            const float scale = 1.0f / static_cast<float>(b1 - b0);
            AlignerParams<float> grad = params.zeros_like();
            for (std::size_t b = b0; b < b1; ++b) {
                const TrainExample& ex = data.examples[order[b]];
                const Episode& ep = data.episodes[ex.episode];
                try {
                    const Window win = sample_window(ex.label, ep.features.frame_count, ep.fps, cfg, rng);
                    const PriorVector prior = make_prior(ex.label, ex.audio, win, stage.prior_mode, cfg, ep.fps, rng);
                    const PriorVector gt = rasterize(ex.label, win, ep.fps);
                    const auto& pr = forward(params, ex.ids, window_features<float>(ep.features, win), prior.bits, pos_cache);

                    std::optional<std::span<const float>> neg_probs;
                    if (negatives) {
                        if (auto neg = sample_negative(ex.label, ep, cfg, stage.prior_mode, rng)) {
                            neg_probs = forward(params, ex.ids, window_features<float>(ep.features, neg->window),
                                                neg->prior.bits, neg_cache);
                            ++log.negatives;
                        }
                    }
                    const auto loss = total_loss<float>(pr, neg_probs, gt.bits, cfg.lambda_neg, cfg.lambda_rel, &lg);
                    if (!std::isfinite(loss.l_tot))
                        throw NumericError("non-finite loss in " + stage.tag + " epoch " + std::to_string(epoch) +
                                           " batch " + std::to_string(b0 / cfg.batch_size) + " item " + ex.id);
                    for (auto& d : lg.d_pr) d *= scale;
                    backward<float>(params, pos_cache, lg.d_pr, grad, !stage.freeze_text_stack);
                    if (neg_probs) {
                        for (auto& d : lg.d_neg) d *= scale;
                        backward<float>(params, neg_cache, lg.d_neg, grad, !stage.freeze_text_stack);
                    }
                    log.l_align += loss.l_align;
                    log.l_neg += loss.l_neg;
                    log.l_rel += loss.l_rel;
                    log.l_tot += loss.l_tot;
                    ++log.items;
                } catch (const NumericError& e) {
                    const std::string what = e.what();
                    if (what.starts_with("non-finite loss")) throw;
                    throw NumericError(what + " (" + stage.tag + " batch " + std::to_string(b0 / cfg.batch_size) +
                                       " item " + ex.id + ")");
                }
            }
            clip_global_norm(grad, cfg.grad_clip, trainable);
            adam.step(params, grad, stage.lr, trainable);
        }
        if (log.items) {
            const double n = static_cast<double>(log.items);
            log.l_align /= n;
            log.l_neg /= n;
            log.l_rel /= n;
            log.l_tot /= n;
        }
        if (log_file) log_file << to_json(log).dump() << '\n';
        if (opts.on_epoch) opts.on_epoch(log);
        logs.push_back(log);
    }
    return logs;
}

// ---------------------------------------------------------------- schedule

struct ScheduleData {
    std::optional<TrainDataset> words;  // stage skipped when absent
    std::optional<TrainDataset> subtitles;
    std::optional<TrainDataset> manual;
};

struct ScheduleResult {
    AlignerParams<float> params;
    std::vector<EpochLog> logs;
    std::vector<std::filesystem::path> checkpoints;
};

inline std::uint64_t stage_seed(std::uint64_t seed, StageName s) {
    return seed * 1000003ull + static_cast<std::uint64_t>(s) + 17ull;
}

/// word_pretrain (optional) -> subtitle_train -> finetune, checkpoint after each
/// stage when out_dir is given. Starts from `init` or a fresh seeded model.
inline ScheduleResult run_schedule(const ScheduleData& data, const RunConfig& cfg,
                                   std::optional<std::filesystem::path> out_dir = std::nullopt,
                                   std::optional<AlignerParams<float>> init = std::nullopt, TrainOptions opts = {}) {
    cfg.validate();
    if (!data.subtitles || data.subtitles->empty()) throw ConfigError("subtitle_train needs an audio-aligned dataset");
    if (!data.manual || data.manual->empty()) throw ConfigError("finetune needs a manually labelled dataset");
    ScheduleResult res;
    res.params = init ? std::move(*init) : AlignerParams<float>::initialized(cfg, cfg.seed);
    if (out_dir) {
        std::filesystem::create_directories(*out_dir);
        if (!opts.log_path) opts.log_path = *out_dir / "train_log.jsonl";
    }
    auto run = [&](StageName name, const TrainDataset& ds) {
        std::mt19937_64 rng(stage_seed(cfg.seed, name));
        auto logs = train_stage(res.params, ds, stage_from_config(name, cfg), cfg, rng, opts);
        res.logs.insert(res.logs.end(), logs.begin(), logs.end());
        if (out_dir) {
            const auto path = *out_dir / (std::string(to_string(name)) + ".ckpt");
            write_checkpoint({cfg, res.params}, path);
            res.checkpoints.push_back(path);
        }
    };
    if (data.words && !data.words->empty()) run(StageName::word_pretrain, *data.words);
    run(StageName::subtitle_train, *data.subtitles);
    run(StageName::finetune, *data.manual);
    return res;
}

} // namespace sgnalign
