#pragma once

// Command-line front end. Every subcommand takes --seed; where a --config file
// is accepted its fields are applied after the flags and therefore win.
// Exit codes: 0 success, 1 validation or I/O failure, 2 usage error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "checkpoint.hpp"
#include "config.hpp"
#include "corpus_io.hpp"
#include "evaluate.hpp"
#include "inference.hpp"
#include "preprocess.hpp"
#include "selftrain.hpp"
#include "synthgen.hpp"
#include "trainer.hpp"

namespace sgnalign::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitUsage = 2;

struct Common {
    std::uint64_t seed = 0;
    std::string config;
};

namespace detail {

inline void add_seed(CLI::App* sub, Common& c) {
    sub->add_option("--seed", c.seed, "Random seed; runs are deterministic given it")->capture_default_str();
}

inline void add_config(CLI::App* sub, Common& c, const std::string& what) {
    sub->add_option("--config", c.config, what + " JSON; its fields override the corresponding flags")
        ->check(CLI::ExistingFile);
}

inline nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void write_json_file(const nlohmann::json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// The fields a checkpoint fixes; a config may not change them.
inline void require_same_architecture(const RunConfig& a, const RunConfig& b) {
#define SGNALIGN_ARCH(X) X(d_model) X(d_ff) X(n_heads) X(n_layers) X(vocab_buckets) X(feature_dim)
#define X(name)                                                                                    \
    if (a.name != b.name) throw ConfigError("config field '" #name "' differs from the checkpoint");
    SGNALIGN_ARCH(X)
#undef X
#undef SGNALIGN_ARCH
}

inline RunConfig apply_config_file(RunConfig cfg, const Common& c) {
    if (!c.config.empty()) cfg = load_config(c.config, cfg);
    cfg.validate();
    return cfg;
}

struct LoadedModel {
    RunConfig cfg;
    AlignerParams<float> params;
};

// Checkpoint config, then flags (via `tweak`), then the config file.
inline LoadedModel load_model(const std::string& path, const Common& c, const std::function<void(RunConfig&)>& tweak) {
    Checkpoint ck = read_checkpoint(path);
    RunConfig cfg = ck.config;
    cfg.seed = c.seed;
    if (tweak) tweak(cfg);
    cfg = apply_config_file(cfg, c);
    require_same_architecture(cfg, ck.config);
    return {cfg, std::move(ck.params)};
}

inline const std::vector<Episode>& split_of(const CorpusSplits& s, const std::string& name) {
    if (name == "word") return s.word;
    if (name == "train") return s.train;
    if (name == "finetune") return s.finetune;
    if (name == "test") return s.test;
    throw ConfigError("unknown split '" + name + "'");
}

// Subtitles with ground truth for an episode; train episodes use the sealed sidecar.
inline std::vector<SubtitleRecord> gt_subtitles(const CorpusSplits& s, const Episode& ep) {
    auto it = s.sealed_gt.find(ep.episode_id);
    return it != s.sealed_gt.end() ? it->second : ep.subtitles;
}

inline ScheduleData schedule_data(const CorpusSplits& s, const RunConfig& cfg) {
    ScheduleData d;
    if (!s.word.empty()) d.words = word_dataset(s.word, s.word_spans, cfg);
    if (!s.train.empty()) d.subtitles = subtitle_dataset(s.train, LabelSource::audio_aligned, cfg);
    if (!s.finetune.empty()) d.manual = subtitle_dataset(s.finetune, LabelSource::manual, cfg);
    return d;
}

inline std::optional<StageName> stage_by_flag(const std::string& s) {
    if (s == "word") return StageName::word_pretrain;
    if (s == "subtitle") return StageName::subtitle_train;
    if (s == "finetune") return StageName::finetune;
    return std::nullopt;  // "all"
}


inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

} // namespace detail

// ------------------------------------------------------------------ report

/// Markdown table with one row per report: frame accuracy and F1 at the three
/// IoU thresholds. Rows are named by the report's "name" field or file stem.
inline std::string markdown_table(const std::vector<std::pair<std::string, nlohmann::json>>& reports) {
    std::ostringstream md;
    md << "| method | frame-acc | F1@0.10 | F1@0.25 | F1@0.50 |\n";
    md << "|---|---:|---:|---:|---:|\n";
    for (const auto& [name, r] : reports) {
        for (const char* key : {"frame_acc", "f1_10", "f1_25", "f1_50"})
            if (!r.contains(key) || !r[key].is_number()) throw ValidationError("report " + name + " lacks " + key);
        md << "| " << name << " | " << detail::fmt2(r["frame_acc"]) << " | " << detail::fmt2(r["f1_10"]) << " | "
           << detail::fmt2(r["f1_25"]) << " | " << detail::fmt2(r["f1_50"]) << " |\n";
    }
    return md.str();
}

struct TimelineRow {
    std::string id;
    std::optional<TimeSpan> prior, pred, gt;
};

/// Three lanes (prior, predicted, ground truth) over the episode; one bar per
/// subtitle, coloured by subtitle so matching bars line up vertically.
inline std::string timeline_svg(const std::string& title, double seconds, const std::vector<TimelineRow>& rows) {
    const double width = 1200, left = 90, lane_h = 26, top = 30;
    const double scale = (width - left - 10) / std::max(seconds, 1e-9);
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << top + 3 * lane_h + 30
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg << "<text x=\"4\" y=\"18\">" << detail::xml_escape(title) << "</text>\n";
    const char* lanes[] = {"prior", "predicted", "ground truth"};
    for (int l = 0; l < 3; ++l)
        svg << "<text x=\"4\" y=\"" << top + l * lane_h + 17 << "\">" << lanes[l] << "</text>\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int hue = static_cast<int>((i * 137) % 360);
        const std::optional<TimeSpan>* spans[] = {&rows[i].prior, &rows[i].pred, &rows[i].gt};
        for (int l = 0; l < 3; ++l) {
            if (!*spans[l]) continue;
            const TimeSpan s = **spans[l];
            svg << "<rect x=\"" << left + s.start * scale << "\" y=\"" << top + l * lane_h + 4 << "\" width=\""
                << std::max(1.0, (s.end - s.start) * scale) << "\" height=\"" << lane_h - 8 << "\" fill=\"hsl(" << hue
                << ",65%,55%)\"><title>" << detail::xml_escape(rows[i].id) << "</title></rect>\n";
        }
    }
    const double axis_y = top + 3 * lane_h + 4;
    svg << "<line x1=\"" << left << "\" y1=\"" << axis_y << "\" x2=\"" << width - 10 << "\" y2=\"" << axis_y
        << "\" stroke=\"black\"/>\n";
    for (int t = 0; t <= static_cast<int>(seconds); t += 10)
        svg << "<text x=\"" << left + t * scale << "\" y=\"" << axis_y + 16 << "\">" << t << "s</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

// ---------------------------------------------------------------- dispatch

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Sign-language subtitle alignment toolkit"};
    app.name("sgnalign");
    app.require_subcommand(1, 1);
    std::function<void()> action;
    Common common;

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "Generate a synthetic corpus with word/train/finetune/test splits");
    DeskCorpus desk;
    std::string gen_out;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--episodes", desk.episodes, "Number of episodes")->capture_default_str();
    gen->add_option("--seconds", desk.episode_seconds, "Episode length in seconds")->capture_default_str();
    gen->add_option("--split-seed", desk.split_seed, "Seed of the episode split")->capture_default_str();
    detail::add_seed(gen, common);
    detail::add_config(gen, common, "Synthesis config (generator fields plus episodes, episode_seconds, ratios, split_seed)");
    gen->callback([&] {
        action = [&] {
            SynthConfig sc;
            sc.seed = common.seed;
            if (!common.config.empty()) {
                auto j = detail::read_json_file(common.config);
                if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
                try {
                    if (j.contains("episodes")) desk.episodes = j["episodes"].get<int>();
                    if (j.contains("episode_seconds")) desk.episode_seconds = j["episode_seconds"].get<double>();
                    if (j.contains("ratios")) desk.ratios = j["ratios"].get<std::array<double, 4>>();
                    if (j.contains("split_seed")) desk.split_seed = j["split_seed"].get<std::uint64_t>();
                } catch (const nlohmann::json::exception& e) {
                    throw ConfigError(common.config + ": " + e.what());
                }
                for (const char* k : {"episodes", "episode_seconds", "ratios", "split_seed"}) j.erase(k);
                sc = synth_config_from_json(j, sc);
            }
            sc.validate();
            const auto splits = desk_splits(sc, desk);
            write_corpus(splits, sc, desk.split_seed, gen_out);
            out << nlohmann::json{{"out", gen_out},
                                  {"corpus", to_json(desk)},
                                  {"word", splits.word.size()},
                                  {"train", splits.train.size()},
                                  {"finetune", splits.finetune.size()},
                                  {"test", splits.test.size()}}
                       .dump()
                << '\n';
        };
    });

    // preprocess
    auto* pre = app.add_subcommand("preprocess", "Rewrite subtitle text as pseudo-gloss tokens");
    std::string pre_in, pre_out, pre_lex;
    pre->add_option("--in", pre_in, "Subtitle JSONL")->required()->check(CLI::ExistingFile);
    pre->add_option("--out", pre_out, "Output JSONL with id, tokens and fallback per subtitle")->required();
    pre->add_option("--lexicon", pre_lex, "Directory with lexicon JSON files (default: built in)")
        ->check(CLI::ExistingDirectory);
    detail::add_seed(pre, common);
    pre->callback([&] {
        action = [&] {
            const Lexicon lex = pre_lex.empty() ? Lexicon::builtin() : Lexicon::load(pre_lex);
            const auto subs = read_subtitles(pre_in);
            if (fs::path(pre_out).has_parent_path()) fs::create_directories(fs::path(pre_out).parent_path());
            std::ofstream o(pre_out);
            if (!o) throw IoError("cannot write " + pre_out);
            std::size_t fallbacks = 0;
            for (const auto& s : subs) {
                const auto g = to_pseudo_gloss(s, lex);
                fallbacks += g.used_fallback;
                o << nlohmann::json{{"id", g.source_id}, {"tokens", g.tokens}, {"fallback", g.used_fallback}}.dump()
                  << '\n';
            }
            out << nlohmann::json{{"subtitles", subs.size()}, {"fallbacks", fallbacks}}.dump() << '\n';
        };
    });

    // train / finetune share most options
    struct TrainFlags {
        std::string corpus, out, init, stage = "all";
        std::optional<double> lambda_neg, lambda_rel;
        bool unfreeze = false;
    } tf;
    auto tweak_train = [&](RunConfig& c) {
        c.seed = common.seed;
        if (tf.lambda_neg) c.lambda_neg = *tf.lambda_neg;
        if (tf.lambda_rel) c.lambda_rel = *tf.lambda_rel;
        if (tf.unfreeze) c.freeze_text_stack = false;
    };
    auto train_config = [&](std::optional<AlignerParams<float>>& init) {
        if (tf.init.empty()) {
            RunConfig c = desk_recipe();
            tweak_train(c);
            return detail::apply_config_file(c, common);
        }
        auto m = detail::load_model(tf.init, common, tweak_train);
        init = std::move(m.params);
        return m.cfg;
    };
    auto run_training = [&] {
        std::optional<AlignerParams<float>> init;
        const RunConfig cfg = train_config(init);
        const CorpusSplits splits = load_corpus(tf.corpus);
        const ScheduleData data = detail::schedule_data(splits, cfg);
        TrainOptions opts;
        opts.on_epoch = [&](const EpochLog& l) { out << to_json(l).dump() << '\n'; };
        const auto stage = detail::stage_by_flag(tf.stage);
        if (!stage) {
            run_schedule(data, cfg, fs::path(tf.out), std::move(init), opts);
            return;
        }
        const std::optional<TrainDataset>* ds = *stage == StageName::word_pretrain    ? &data.words
                                                : *stage == StageName::subtitle_train ? &data.subtitles
                                                                                      : &data.manual;
        if (!*ds) throw ConfigError(std::string("corpus has no data for stage ") + to_string(*stage));
        AlignerParams<float> params = init ? std::move(*init) : AlignerParams<float>::initialized(cfg, cfg.seed);
        fs::create_directories(tf.out);
        opts.log_path = fs::path(tf.out) / "train_log.jsonl";
        std::mt19937_64 rng(stage_seed(cfg.seed, *stage));
        train_stage(params, **ds, stage_from_config(*stage, cfg), cfg, rng, opts);
        write_checkpoint({cfg, params}, fs::path(tf.out) / (std::string(to_string(*stage)) + ".ckpt"));
    };

    auto* train = app.add_subcommand("train", "Train the aligner on a generated corpus");
    train->add_option("--corpus", tf.corpus, "Corpus directory from gen-corpus")->required()->check(CLI::ExistingDirectory);
    train->add_option("--out", tf.out, "Checkpoint directory; <stage>.ckpt and train_log.jsonl are written here")
        ->required();
    train->add_option("--stage", tf.stage, "Stage to run")
        ->check(CLI::IsMember({"all", "word", "subtitle", "finetune"}))
        ->capture_default_str();
    train->add_option("--init", tf.init, "Start from this checkpoint instead of a fresh model")->check(CLI::ExistingFile);
    train->add_option("--lambda-neg", tf.lambda_neg, "Weight of the negative alignment loss");
    train->add_option("--lambda-rel", tf.lambda_rel, "Weight of the relative alignment loss");
    train->add_flag("--unfreeze", tf.unfreeze, "Also update the text stack during fine-tuning");
    detail::add_seed(train, common);
    detail::add_config(train, common, "Run config");
    train->callback([&] { action = run_training; });

    auto* finetune = app.add_subcommand("finetune", "Fine-tune a checkpoint on the manually labelled split");
    finetune->add_option("--corpus", tf.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    finetune->add_option("--model", tf.init, "Checkpoint to start from")->required()->check(CLI::ExistingFile);
    finetune->add_option("--out", tf.out, "Checkpoint directory; finetune.ckpt is written here")->required();
    finetune->add_option("--lambda-neg", tf.lambda_neg, "Weight of the negative alignment loss");
    finetune->add_option("--lambda-rel", tf.lambda_rel, "Weight of the relative alignment loss");
    finetune->add_flag("--unfreeze", tf.unfreeze, "Also update the text stack");
    detail::add_seed(finetune, common);
    detail::add_config(finetune, common, "Run config");
    finetune->callback([&] {
        tf.stage = "finetune";
        action = run_training;
    });

    // selftrain
    auto* self = app.add_subcommand("selftrain", "Pseudo-label the train split and run one self-training round");
    std::string st_corpus, st_model, st_out;
    std::optional<double> st_tau_c;
    bool st_control = false;
    self->add_option("--corpus", st_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    self->add_option("--model", st_model, "Trained checkpoint")->required()->check(CLI::ExistingFile);
    self->add_option("--out", st_out, "Output directory for *.pseudo.jsonl and selftrain.ckpt")->required();
    self->add_option("--tau-c", st_tau_c, "Peak-confidence threshold for keeping a pseudo label")
        ->check(CLI::Range(0.0, 1.0));
    self->add_flag("--control", st_control, "Retrain on shifted audio spans instead of pseudo labels");
    detail::add_seed(self, common);
    detail::add_config(self, common, "Run config");
    self->callback([&] {
        action = [&] {
            auto m = detail::load_model(st_model, common, [&](RunConfig& c) {
                if (st_tau_c) c.tau_c = *st_tau_c;
            });
            const CorpusSplits splits = load_corpus(st_corpus);
            if (splits.finetune.empty()) throw ConfigError("corpus has no manually labelled split");
            const auto labels = generate_pseudo_labels(m.params, splits.train, m.cfg);
            const auto filtered = filter_by_confidence(labels.kept, m.cfg.tau_c);
            fs::create_directories(st_out);
            write_pseudo_labels(splits.train, filtered.kept, st_out);
            nlohmann::json sweep;
            for (double t : {0.0, 0.5, 0.9, 0.95}) sweep[detail::fmt2(t)] = filter_by_confidence(labels.kept, t).kept_ratio;
            SelfTrainOptions opts;
            opts.use_shifted_audio = st_control;
            opts.out_dir = fs::path(st_out);
            opts.train.log_path = fs::path(st_out) / "train_log.jsonl";
            opts.train.on_epoch = [&](const EpochLog& l) { out << to_json(l).dump() << '\n'; };
            self_train_round(std::move(m.params), splits.train, filtered.kept,
                             subtitle_dataset(splits.finetune, LabelSource::manual, m.cfg), m.cfg, opts);
            out << nlohmann::json{{"pseudo_labels", labels.kept.size()},
                                  {"excluded", labels.excluded.size()},
                                  {"kept", filtered.kept.size()},
                                  {"kept_ratio", filtered.kept_ratio},
                                  {"kept_ratio_by_tau_c", sweep}}
                       .dump()
                << '\n';
        };
    });

    // align
    auto* align = app.add_subcommand("align", "Predict sign spans for subtitles");
    std::string al_model, al_baseline, al_subs, al_feat, al_corpus, al_split = "test", al_out;
    std::optional<double> al_theta;
    double al_fps = 25.0;
    bool al_global = false, al_local = false, al_probs = false;
    auto* al_model_opt = align->add_option("--model", al_model, "Trained checkpoint")->check(CLI::ExistingFile);
    align->add_option("--baseline", al_baseline, "Emit a heuristic baseline instead of model output")
        ->check(CLI::IsMember({"audio", "shifted"}))
        ->excludes(al_model_opt);
    auto* al_subs_opt = align->add_option("--subs", al_subs, "Subtitle JSONL of one episode")->check(CLI::ExistingFile);
    auto* al_feat_opt = align->add_option("--feat", al_feat, "Feature file of the same episode")->check(CLI::ExistingFile);
    al_subs_opt->needs(al_feat_opt);
    al_feat_opt->needs(al_subs_opt);
    align->add_option("--corpus", al_corpus, "Corpus directory; aligns every episode of --split")
        ->check(CLI::ExistingDirectory)
        ->excludes(al_subs_opt);
    align->add_option("--split", al_split, "Corpus split to align")
        ->check(CLI::IsMember({"word", "train", "finetune", "test"}))
        ->capture_default_str();
    align->add_option("--fps", al_fps, "Frame rate of --feat")->capture_default_str();
    align->add_option("--out", al_out, "pred.jsonl for one episode, or a directory of <episode>.pred.jsonl")->required();
    auto* g_opt = align->add_flag("--global", al_global, "Decode all subtitles jointly with DTW (default)");
    align->add_flag("--local", al_local, "Threshold each subtitle independently")->excludes(g_opt);
    align->add_option("--theta", al_theta, "DTW background threshold")->check(CLI::Range(0.0, 1.0));
    align->add_flag("--probs", al_probs, "Include the per-frame probabilities in the output");
    detail::add_seed(align, common);
    detail::add_config(align, common, "Run config");
    align->callback([&] {
        action = [&] {
            if (al_subs.empty() && al_corpus.empty()) throw CLI::RequiredError("--subs/--feat or --corpus");
            if (al_model.empty() && al_baseline.empty()) throw CLI::RequiredError("--model or --baseline");
            auto tweak = [&](RunConfig& c) {
                if (al_theta) c.dtw_theta = *al_theta;
            };
            std::optional<detail::LoadedModel> model;
            RunConfig cfg;
            if (!al_model.empty()) {
                model = detail::load_model(al_model, common, tweak);
                cfg = model->cfg;
            } else {
                cfg = desk_recipe();
                cfg.seed = common.seed;
                tweak(cfg);
                cfg = detail::apply_config_file(cfg, common);
            }
            const DecodeMode mode = al_local ? DecodeMode::local : DecodeMode::global;
            auto predict_episode = [&](const Episode& ep) {
                if (model) return align_episode(model->params, ep, cfg, mode, al_probs);
                const auto spans =
                    baseline_spans(ep.subtitles, al_baseline == "audio" ? BaselineMode::audio : BaselineMode::audio_shifted,
                                   cfg, ep.fps);
                std::vector<AlignmentSpan> as;
                for (const auto& s : spans) as.push_back({s.span, 1.0});
                return to_predictions(ep.subtitles, as, nullptr, ep.fps);
            };
            if (!al_subs.empty()) {
                Episode ep;
                ep.episode_id = fs::path(al_subs).stem().string();
                ep.fps = al_fps;
                ep.subtitles = read_subtitles(al_subs);
                ep.features = read_features(al_feat);
                ep.validate();
                write_predictions(predict_episode(ep), al_out);
                out << nlohmann::json{{"episodes", 1}, {"subtitles", ep.subtitles.size()}}.dump() << '\n';
                return;
            }
            const CorpusSplits splits = load_corpus(al_corpus);
            fs::create_directories(al_out);
            std::size_t n = 0;
            for (const auto& ep : detail::split_of(splits, al_split)) {
                write_predictions(predict_episode(ep), fs::path(al_out) / (ep.episode_id + ".pred.jsonl"));
                n += ep.subtitles.size();
            }
            out << nlohmann::json{{"episodes", detail::split_of(splits, al_split).size()}, {"subtitles", n}}.dump()
                << '\n';
        };
    });

    // spot
    auto* spot = app.add_subcommand("spot", "Word spotting with random priors on the word queries of a split");
    std::string sp_model, sp_corpus, sp_split = "test", sp_out;
    std::size_t sp_every = 1;
    bool sp_baseline = false;
    auto* sp_model_opt = spot->add_option("--model", sp_model, "Trained checkpoint")->check(CLI::ExistingFile);
    spot->add_flag("--baseline", sp_baseline, "Score frames by the random prior alone")->excludes(sp_model_opt);
    spot->add_option("--corpus", sp_corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
    spot->add_option("--split", sp_split, "Split whose word spans are queried")
        ->check(CLI::IsMember({"word", "test"}))
        ->capture_default_str();
    spot->add_option("--every", sp_every, "Use every n-th word as a query")->check(CLI::PositiveNumber)->capture_default_str();
    spot->add_option("--out", sp_out, "Write the result JSON here as well as to stdout");
    detail::add_seed(spot, common);
    detail::add_config(spot, common, "Run config");
    spot->callback([&] {
        action = [&] {
            if (sp_model.empty() && !sp_baseline) throw CLI::RequiredError("--model or --baseline");
            std::optional<detail::LoadedModel> model;
            RunConfig cfg;
            if (!sp_model.empty()) {
                model = detail::load_model(sp_model, common, nullptr);
                cfg = model->cfg;
            } else {
                cfg = desk_recipe();
                cfg.seed = common.seed;
                cfg = detail::apply_config_file(cfg, common);
            }
            const CorpusSplits splits = load_corpus(sp_corpus);
            const auto& eps = sp_split == "word" ? splits.word : splits.test;
            const auto& words = sp_split == "word" ? splits.word_spans : splits.test_word_spans;
            const auto cases = spot_cases(eps, words, cfg, cfg.seed, sp_every);
            if (cases.empty()) throw ValidationError("no word queries in split " + sp_split);
            const auto r = spotting_metrics(model ? model_spot_queries(model->params, eps, cases, cfg)
                                                  : prior_spot_queries(cases));
            const nlohmann::json j{{"map", r.map}, {"acc_at_1", r.acc_at_1}, {"queries", cases.size()}};
            if (!sp_out.empty()) detail::write_json_file(j, sp_out);
            out << j.dump() << '\n';
        };
    });

    // eval
    auto* ev = app.add_subcommand("eval", "Score predictions against ground truth");
    std::string ev_pred, ev_gt, ev_feat, ev_corpus, ev_split = "test", ev_report, ev_name;
    std::optional<std::int64_t> ev_frames;
    double ev_fps = 25.0;
    ev->add_option("--pred", ev_pred, "pred.jsonl, or a directory of <episode>.pred.jsonl with --corpus")->required();
    auto* ev_gt_opt = ev->add_option("--gt", ev_gt, "Subtitle JSONL with ground-truth spans")->check(CLI::ExistingFile);
    ev->add_option("--feat", ev_feat, "Feature file giving the episode length in frames")->check(CLI::ExistingFile);
    ev->add_option("--frames", ev_frames, "Episode length in frames (default: last labelled frame + 1)");
    ev->add_option("--fps", ev_fps, "Frame rate for --gt")->capture_default_str();
    ev->add_option("--corpus", ev_corpus, "Corpus directory; evaluates every episode of --split")
        ->check(CLI::ExistingDirectory)
        ->excludes(ev_gt_opt);
    ev->add_option("--split", ev_split, "Corpus split")
        ->check(CLI::IsMember({"word", "train", "finetune", "test"}))
        ->capture_default_str();
    ev->add_option("--report", ev_report, "Write report.json here as well as to stdout");
    ev->add_option("--name", ev_name, "Row label used by `report`");
    detail::add_seed(ev, common);
    ev->callback([&] {
        action = [&] {
            EvalReport rep;
            if (!ev_corpus.empty()) {
                const CorpusSplits splits = load_corpus(ev_corpus);
                for (const auto& ep : detail::split_of(splits, ev_split)) {
                    const auto preds = read_predictions(fs::path(ev_pred) / (ep.episode_id + ".pred.jsonl"));
                    rep.add(prediction_spans(preds, ep.fps), gt_spans(detail::gt_subtitles(splits, ep), ep.fps),
                            ep.features.frame_count);
                }
            } else {
                if (ev_gt.empty()) throw CLI::RequiredError("--gt or --corpus");
                const auto preds = prediction_spans(read_predictions(ev_pred), ev_fps);
                const auto gts = gt_spans(read_subtitles(ev_gt), ev_fps);
                std::int64_t frames = 0;
                if (ev_frames) {
                    frames = *ev_frames;
                } else if (!ev_feat.empty()) {
                    frames = read_features(ev_feat).frame_count;
                } else {
                    for (const auto* v : {&preds, &gts})
                        for (const auto& s : *v)
                            if (!s.span.empty()) frames = std::max(frames, s.span.end + 1);
                }
                if (frames <= 0) throw ValidationError("episode length must be positive");
                rep.add(preds, gts, frames);
            }
            auto j = to_json(rep);
            if (!ev_name.empty()) j["name"] = ev_name;
            if (!ev_report.empty()) detail::write_json_file(j, ev_report);
            out << j.dump() << '\n';
        };
    });

    // report
    auto* rp = app.add_subcommand("report", "Merge report.json files into a table and draw episode timelines");
    std::vector<std::string> rp_in;
    std::string rp_out, rp_corpus, rp_pred, rp_svg, rp_split = "test";
    std::size_t rp_limit = 5;
    rp->add_option("reports", rp_in, "report.json files, one table row each")->check(CLI::ExistingFile);
    rp->add_option("--out", rp_out, "Markdown output (default: stdout)");
    auto* rp_corpus_opt = rp->add_option("--corpus", rp_corpus, "Corpus directory for timelines")->check(CLI::ExistingDirectory);
    auto* rp_pred_opt =
        rp->add_option("--pred", rp_pred, "Directory of <episode>.pred.jsonl for timelines")->check(CLI::ExistingDirectory);
    auto* rp_svg_opt = rp->add_option("--svg-dir", rp_svg, "Write one <episode>.svg timeline here");
    rp_svg_opt->needs(rp_corpus_opt)->needs(rp_pred_opt);
    rp->add_option("--split", rp_split, "Corpus split for timelines")
        ->check(CLI::IsMember({"train", "finetune", "test"}))
        ->capture_default_str();
    rp->add_option("--limit", rp_limit, "Maximum number of timelines")->capture_default_str();
    detail::add_seed(rp, common);
    detail::add_config(rp, common, "Run config for the prior lane");
    rp->callback([&] {
        action = [&] {
            if (rp_in.empty() && rp_svg.empty()) throw CLI::RequiredError("report files or --svg-dir");
            if (!rp_in.empty()) {
                std::vector<std::pair<std::string, nlohmann::json>> rows;
                for (const auto& p : rp_in) {
                    auto j = detail::read_json_file(p);
                    rows.emplace_back(j.value("name", fs::path(p).stem().string()), j);
                }
                const std::string md = markdown_table(rows);
                if (rp_out.empty()) {
                    out << md;
                } else {
                    if (fs::path(rp_out).has_parent_path()) fs::create_directories(fs::path(rp_out).parent_path());
                    std::ofstream o(rp_out);
                    if (!o) throw IoError("cannot write " + rp_out);
                    o << md;
                }
            }
            if (rp_svg.empty()) return;
            RunConfig cfg = desk_recipe();
            cfg.seed = common.seed;
            cfg = detail::apply_config_file(cfg, common);
            const CorpusSplits splits = load_corpus(rp_corpus);
            fs::create_directories(rp_svg);
            std::size_t n = 0;
            for (const auto& ep : detail::split_of(splits, rp_split)) {
                if (n++ >= rp_limit) break;
                std::map<std::string, PredictionRecord> preds;
                for (auto& p : read_predictions(fs::path(rp_pred) / (ep.episode_id + ".pred.jsonl")))
                    preds[p.subtitle_id] = p;
                std::vector<TimelineRow> rows;
                for (const auto& s : detail::gt_subtitles(splits, ep)) {
                    TimelineRow r;
                    r.id = s.id;
                    r.prior = shifted_prior_span(s.audio(), cfg);
                    if (s.has_gt()) r.gt = s.gt();
                    auto it = preds.find(s.id);
                    if (it != preds.end() && it->second.pred_start >= 0)
                        r.pred = TimeSpan{it->second.pred_start, it->second.pred_end};
                    rows.push_back(r);
                }
                std::ofstream o(fs::path(rp_svg) / (ep.episode_id + ".svg"));
                if (!o) throw IoError("cannot write timeline for " + ep.episode_id);
                o << timeline_svg(ep.episode_id, ep.features.frame_count / ep.fps, rows);
            }
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        action();
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\nRun with --help for usage.\n";
        return kExitUsage;
    } catch (const Error& e) {
        const char* kind = dynamic_cast<const ParseError*>(&e)        ? "ParseError"
                           : dynamic_cast<const ValidationError*>(&e) ? "ValidationError"
                           : dynamic_cast<const FormatError*>(&e)     ? "FormatError"
                           : dynamic_cast<const LengthError*>(&e)     ? "LengthError"
                           : dynamic_cast<const IoError*>(&e)         ? "IoError"
                           : dynamic_cast<const ShapeError*>(&e)      ? "ShapeError"
                           : dynamic_cast<const NumericError*>(&e)    ? "NumericError"
                           : dynamic_cast<const ConfigError*>(&e)     ? "ConfigError"
                                                                      : "Error";
        err << nlohmann::json{{"error", kind}, {"message", e.what()}}.dump() << '\n';
        return kExitValidation;
    } catch (const fs::filesystem_error& e) {
        err << nlohmann::json{{"error", "IoError"}, {"message", e.what()}}.dump() << '\n';
        return kExitValidation;
    }
    return kExitOk;
}

} // namespace sgnalign::cli
