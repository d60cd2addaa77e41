#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include <sgnalign/checkpoint.hpp>
#include <sgnalign/inference.hpp>
#include <sgnalign/synthgen.hpp>
#include <sgnalign/trainer.hpp>

using namespace sgnalign;
namespace fs = std::filesystem;

namespace {

RunConfig small_config(std::uint64_t seed = 0) {
    RunConfig c;
    c.d_model = 16;
    c.d_ff = 32;
    c.vocab_buckets = 256;
    c.batch_size = 4;
    c.lr_word = c.lr_subtitle = c.lr_finetune = 2e-3;
    c.epochs_word = 1;
    c.epochs_subtitle = 1;
    c.epochs_finetune = 2;
    c.seed = seed;
    return c;
}

// Two short labelled episodes; every subtitle carries its gt span.
std::vector<Episode> tiny_episodes(std::uint64_t seed = 3) {
    SynthConfig sc;
    sc.seed = seed;
    const auto corpus = generate_corpus(sc, 2, 70.0);
    std::vector<Episode> out;
    for (const auto& e : corpus.episodes) out.push_back(e.episode);
    return out;
}

TrainDataset first_n(TrainDataset ds, std::size_t n) {
    if (ds.examples.size() > n) ds.examples.resize(n);
    return ds;
}

Episode blank_episode(double seconds, double fps = 25.0) {
    Episode ep;
    ep.episode_id = "blank";
    ep.fps = fps;
    ep.features = FeatureSequence(static_cast<std::uint32_t>(std::lround(seconds * fps)), 16);
    return ep;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("sgnalign_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST(StageConfig, DefaultsFollowPublishedSchedule) {
    const RunConfig cfg;
    const auto w = stage_from_config(StageName::word_pretrain, cfg);
    const auto s = stage_from_config(StageName::subtitle_train, cfg);
    const auto f = stage_from_config(StageName::finetune, cfg);
    EXPECT_EQ(w.epochs, 7);
    EXPECT_EQ(s.epochs, 4);
    EXPECT_EQ(f.epochs, 100);
    EXPECT_DOUBLE_EQ(w.lr, 1e-5);
    EXPECT_DOUBLE_EQ(s.lr, 5e-6);
    EXPECT_DOUBLE_EQ(f.lr, 5e-6);
    EXPECT_EQ(w.label_source, LabelSource::word_spans);
    EXPECT_EQ(s.label_source, LabelSource::audio_aligned);
    EXPECT_EQ(f.label_source, LabelSource::manual);
    EXPECT_TRUE(f.freeze_text_stack);
    EXPECT_FALSE(s.freeze_text_stack);
}

TEST(TrainStage, ZeroLearningRateLeavesParamsBitwise) {
    auto cfg = small_config();
    cfg.batch_size = 64;
    const auto ds = first_n(subtitle_dataset(tiny_episodes(), LabelSource::manual, cfg), 8);
    auto params = AlignerParams<float>::initialized(cfg, 1);
    const auto before = params;
    auto stage = stage_from_config(StageName::subtitle_train, cfg);
    stage.epochs = 1;
    stage.lr = 0.0;
    std::mt19937_64 rng(1);
    const auto logs = train_stage(params, ds, stage, cfg, rng);
    ASSERT_EQ(logs.size(), 1u);
    EXPECT_EQ(logs[0].items, 8u);
    EXPECT_TRUE(params == before);
}

TEST(TrainStage, FrozenTextStackIsBitwiseUnchanged) {
    const auto cfg = small_config();
    const auto ds = first_n(subtitle_dataset(tiny_episodes(), LabelSource::manual, cfg), 8);
    auto params = AlignerParams<float>::initialized(cfg, 2);
    auto before = params;
    auto stage = stage_from_config(StageName::finetune, cfg);
    ASSERT_TRUE(stage.freeze_text_stack);
    stage.epochs = 2;
    std::mt19937_64 rng(2);
    train_stage(params, ds, stage, cfg, rng);
    auto after = params.tensors();
    auto prev = before.tensors();
    int text = 0, moved = 0;
    for (std::size_t k = 0; k < after.size(); ++k) {
        const bool same = after[k].second->data == prev[k].second->data;
        if (is_text_tensor(after[k].first)) {
            ++text;
            EXPECT_TRUE(same) << after[k].first;
        } else {
            moved += !same;
        }
    }
    EXPECT_GT(text, 0);
    EXPECT_GT(moved, 0);
}

TEST(TrainStage, UnfrozenStageUpdatesTextTensors) {
    const auto cfg = small_config();
    const auto ds = first_n(subtitle_dataset(tiny_episodes(), LabelSource::manual, cfg), 8);
    auto params = AlignerParams<float>::initialized(cfg, 2);
    auto before = params;
    auto stage = stage_from_config(StageName::subtitle_train, cfg);
    std::mt19937_64 rng(2);
    train_stage(params, ds, stage, cfg, rng);
    auto after = params.tensors();
    auto prev = before.tensors();
    bool text_moved = false;
    for (std::size_t k = 0; k < after.size(); ++k)
        if (is_text_tensor(after[k].first) && after[k].second->data != prev[k].second->data) text_moved = true;
    EXPECT_TRUE(text_moved);
}

TEST(TrainStage, LossDecreasesOnTinyDataset) {
    int decreased = 0;
    for (std::uint64_t seed : {11u, 12u, 13u}) {
        const auto cfg = small_config(seed);
        const auto ds = first_n(subtitle_dataset(tiny_episodes(seed), LabelSource::manual, cfg), 16);
        auto params = AlignerParams<float>::initialized(cfg, seed);
        auto stage = stage_from_config(StageName::subtitle_train, cfg);
        stage.epochs = 5;
        std::mt19937_64 rng(seed);
        const auto logs = train_stage(params, ds, stage, cfg, rng);
        ASSERT_EQ(logs.size(), 5u);
        decreased += logs[4].l_tot < logs[0].l_tot;
    }
    EXPECT_GE(decreased, 2);
}

TEST(TrainStage, NonFiniteLossNamesTheBatch) {
    const auto cfg = small_config();
    const auto ds = first_n(subtitle_dataset(tiny_episodes(), LabelSource::manual, cfg), 4);
    auto params = AlignerParams<float>::initialized(cfg, 1);
    for (auto& [name, m] : params.tensors())
        if (!is_text_tensor(name)) m->data[0] = std::numeric_limits<float>::quiet_NaN();
    std::mt19937_64 rng(1);
    try {
        train_stage(params, ds, stage_from_config(StageName::subtitle_train, cfg), cfg, rng);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("batch 0"), std::string::npos) << e.what();
    }
}

TEST(TrainStage, EmptyDatasetRejected) {
    const auto cfg = small_config();
    auto params = AlignerParams<float>::initialized(cfg, 1);
    std::mt19937_64 rng(1);
    EXPECT_THROW(train_stage(params, TrainDataset{}, stage_from_config(StageName::finetune, cfg), cfg, rng),
                 ConfigError);
}

TEST(TrainStage, LogIsAppendedPerEpoch) {
    TempDir dir("trainlog");
    const auto cfg = small_config();
    const auto ds = first_n(subtitle_dataset(tiny_episodes(), LabelSource::manual, cfg), 4);
    auto params = AlignerParams<float>::initialized(cfg, 1);
    auto stage = stage_from_config(StageName::finetune, cfg);
    stage.epochs = 3;
    std::mt19937_64 rng(1);
    TrainOptions opts;
    opts.log_path = dir.path / "train_log.jsonl";
    train_stage(params, ds, stage, cfg, rng, opts);
    std::ifstream in(*opts.log_path);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_EQ(j["epoch"].get<int>(), ++n);
        EXPECT_EQ(j["stage"].get<std::string>(), "finetune");
    }
    EXPECT_EQ(n, 3);
}

// --------------------------------------------------------------- negatives

TEST(NegativeSampling, StartStaysOutsideDoubleWindowAroundReference) {
    const RunConfig cfg;
    const Episode ep = blank_episode(600.0);
    std::mt19937_64 rng(4);
    for (int i = 0; i < 2000; ++i) {
        const auto neg = sample_negative({100.0, 102.0}, ep, cfg, PriorMode::jittered, rng);
        ASSERT_TRUE(neg);
        const double start = frame_to_seconds(neg->window.start_frame, ep.fps);
        EXPECT_TRUE(start < 60.0 || start > 140.0) << start;
    }
}

TEST(NegativeSampling, ShortEpisodeHasNone) {
    const RunConfig cfg;
    const Episode ep = blank_episode(30.0);
    std::mt19937_64 rng(4);
    for (double s : {0.0, 5.0, 14.0, 28.0}) EXPECT_FALSE(sample_negative({s, s + 1.5}, ep, cfg, PriorMode::jittered, rng));
}

TEST(NegativeSampling, WindowNeverOverlapsReference) {
    const RunConfig cfg;
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> len_s(40.0, 400.0), u(0.0, 1.0), dur(0.1, 8.0);
    int produced = 0;
    for (int i = 0; i < 10000; ++i) {
        const Episode ep = blank_episode(len_s(rng));
        const double total = ep.features.frame_count / ep.fps;
        const double a = u(rng) * total;
        const TimeSpan ref{a, std::min(total, a + dur(rng))};
        const auto neg = sample_negative(ref, ep, cfg, PriorMode::jittered, rng);
        if (!neg) continue;
        ++produced;
        const FrameSpan r = to_frames(ref, ep.fps);
        const std::int64_t gap = seconds_to_frame(cfg.window_seconds, ep.fps);
        ASSERT_EQ(neg->prior.bits.size(), static_cast<std::size_t>(neg->window.length));
        for (int g = 0; g < neg->window.length; ++g) {
            const std::int64_t t = neg->window.grid_frame(g);
            ASSERT_GE(t, 0);
            ASSERT_LT(t, static_cast<std::int64_t>(ep.features.frame_count));
            // Brute-force distance from every window frame to every reference frame.
            for (std::int64_t x = r.start; x <= r.end; ++x) ASSERT_GE(std::abs(t - x), gap) << i;
        }
    }
    EXPECT_GT(produced, 1000);
}

TEST(NegativeSampling, PriorFollowsAnotherSubtitleInsideTheWindow) {
    RunConfig cfg;
    Episode ep = blank_episode(300.0);
    ep.subtitles.push_back({"near", "x", 10.0, 12.0, 10.0, 12.0});
    ep.subtitles.push_back({"far", "y", 200.0, 203.0, 200.0, 203.0});
    std::mt19937_64 rng(6);
    int with_prior = 0;
    for (int i = 0; i < 200; ++i) {
        const auto neg = sample_negative(TimeSpan{10.0, 12.0}, ep, cfg, PriorMode::exact, rng);
        ASSERT_TRUE(neg);
        const FrameSpan wf = neg->window.frames();
        if (!wf.contains(seconds_to_frame(201.5, ep.fps))) continue;
        ++with_prior;
        EXPECT_EQ(neg->prior.bits, rasterize({200.0, 203.0}, neg->window, ep.fps).bits);
    }
    EXPECT_GT(with_prior, 0);
}

// ------------------------------------------------------------------ labels

TEST(Labels, GroundTruthRasterMatchesExactPrior) {
    const RunConfig cfg;
    const auto eps = tiny_episodes();
    const auto ds = subtitle_dataset(eps, LabelSource::manual, cfg);
    std::mt19937_64 rng(9);
    for (const auto& ex : ds.examples) {
        const Episode& ep = ds.episodes[ex.episode];
        const SubtitleRecord* sub = nullptr;
        for (const auto& s : ep.subtitles)
            if (s.id == ex.id) sub = &s;
        ASSERT_NE(sub, nullptr);
        const Window win = sample_window(ex.label, ep.features.frame_count, ep.fps, cfg, rng);
        EXPECT_EQ(rasterize(ex.label, win, ep.fps).bits, encode_prior(*sub, win, cfg, PriorMode::exact, ep.fps, rng).bits);
    }
}

TEST(Labels, AudioAlignedUsesAudioSpan) {
    const RunConfig cfg;
    const auto ds = subtitle_dataset(tiny_episodes(), LabelSource::audio_aligned, cfg);
    ASSERT_FALSE(ds.empty());
    for (const auto& ex : ds.examples) {
        EXPECT_EQ(ex.label.start, ex.audio.start);
        EXPECT_EQ(ex.label.end, ex.audio.end);
    }
}

TEST(Labels, ManualWithoutGroundTruthRejected) {
    auto eps = tiny_episodes();
    eps[0].subtitles[0].gt_start.reset();
    eps[0].subtitles[0].gt_end.reset();
    EXPECT_THROW(subtitle_dataset(eps, LabelSource::manual, RunConfig{}), ConfigError);
}

// ---------------------------------------------------------------- schedule

TEST(Schedule, SameSeedSameCheckpoint) {
    const auto cfg = small_config(5);
    const auto eps = tiny_episodes();
    ScheduleData d;
    d.subtitles = first_n(subtitle_dataset(eps, LabelSource::audio_aligned, cfg), 12);
    d.manual = first_n(subtitle_dataset(eps, LabelSource::manual, cfg), 6);
    const auto a = run_schedule(d, cfg);
    const auto b = run_schedule(d, cfg);
    EXPECT_TRUE(a.params == b.params);
    auto other = cfg;
    other.seed = 6;
    EXPECT_FALSE(run_schedule(d, other).params == a.params);
}

TEST(Schedule, StagesEchoConfigAndCheckpoint) {
    TempDir dir("schedule");
    auto cfg = small_config(1);
    cfg.epochs_word = 2;
    cfg.epochs_subtitle = 1;
    cfg.epochs_finetune = 3;
    SynthConfig sc;
    const auto corpus = generate_corpus(sc, 2, 70.0);
    std::vector<Episode> eps;
    std::vector<std::vector<SubtitleRecord>> words;
    for (const auto& e : corpus.episodes) {
        eps.push_back(e.episode);
        words.push_back(e.words);
    }
    ScheduleData d;
    d.words = first_n(word_dataset(eps, words, cfg), 8);
    d.subtitles = first_n(subtitle_dataset(eps, LabelSource::audio_aligned, cfg), 8);
    d.manual = first_n(subtitle_dataset(eps, LabelSource::manual, cfg), 4);
    const auto res = run_schedule(d, cfg, dir.path);
    std::map<std::string, int> per_stage;
    for (const auto& l : res.logs) ++per_stage[l.stage];
    EXPECT_EQ(per_stage["word_pretrain"], 2);
    EXPECT_EQ(per_stage["subtitle_train"], 1);
    EXPECT_EQ(per_stage["finetune"], 3);
    ASSERT_EQ(res.checkpoints.size(), 3u);
    const auto last = read_checkpoint(res.checkpoints.back());
    EXPECT_TRUE(last.params == res.params);
    EXPECT_EQ(last.config.epochs_finetune, 3);
    EXPECT_TRUE(fs::exists(dir.path / "train_log.jsonl"));
}

TEST(Schedule, WordStageIsOptional) {
    TempDir dir("noword");
    const auto cfg = small_config(2);
    const auto eps = tiny_episodes();
    ScheduleData d;
    d.subtitles = first_n(subtitle_dataset(eps, LabelSource::audio_aligned, cfg), 8);
    d.manual = first_n(subtitle_dataset(eps, LabelSource::manual, cfg), 4);
    const auto res = run_schedule(d, cfg, dir.path);
    ASSERT_EQ(res.checkpoints.size(), 2u);
    EXPECT_EQ(res.checkpoints[0].filename(), "subtitle_train.ckpt");
    for (const auto& p : res.checkpoints) EXPECT_NO_THROW(read_checkpoint(p));
}

TEST(Schedule, MissingDatasetsAreConfigErrors) {
    const auto cfg = small_config();
    const auto eps = tiny_episodes();
    ScheduleData only_manual;
    only_manual.manual = subtitle_dataset(eps, LabelSource::manual, cfg);
    EXPECT_THROW(run_schedule(only_manual, cfg), ConfigError);
    ScheduleData only_audio;
    only_audio.subtitles = subtitle_dataset(eps, LabelSource::audio_aligned, cfg);
    EXPECT_THROW(run_schedule(only_audio, cfg), ConfigError);
}

// -------------------------------------------------------------- checkpoint

TEST(Checkpoint, RoundTripIsBitwise) {
    TempDir dir("ckpt");
    const auto cfg = small_config(3);
    const Checkpoint ck{cfg, AlignerParams<float>::initialized(cfg, 3)};
    write_checkpoint(ck, dir.path / "m.ckpt");
    const auto back = read_checkpoint(dir.path / "m.ckpt");
    EXPECT_TRUE(back.params == ck.params);
    EXPECT_EQ(to_json(back.config), to_json(cfg));
}

TEST(Checkpoint, CorruptFilesRejected) {
    TempDir dir("ckptbad");
    const auto cfg = small_config(3);
    const auto path = dir.path / "m.ckpt";
    write_checkpoint({cfg, AlignerParams<float>::initialized(cfg, 3)}, path);
    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    auto write = [&](const std::string& b) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << b;
    };
    write(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(read_checkpoint(path), LengthError);
    write(bytes + "x");
    EXPECT_THROW(read_checkpoint(path), LengthError);
    write("JUNK" + bytes.substr(4));
    EXPECT_THROW(read_checkpoint(path), FormatError);
    EXPECT_THROW(read_checkpoint(dir.path / "missing.ckpt"), IoError);
}

TEST(Spotting, CasesHoldTheSignInsideTheirWindow) {
    SynthConfig sc;
    sc.feature_dim = 8;
    const auto corpus = generate_corpus(sc, 2, 30.0);
    std::vector<Episode> eps;
    std::vector<std::vector<SubtitleRecord>> words;
    for (const auto& e : corpus.episodes) {
        eps.push_back(e.episode);
        words.push_back(e.words);
    }
    const RunConfig cfg = small_config();
    const auto cases = spot_cases(eps, words, cfg, 5);
    ASSERT_FALSE(cases.empty());
    for (const auto& c : cases) {
        const auto w = std::find_if(words[c.episode].begin(), words[c.episode].end(),
                                    [&](const SubtitleRecord& r) { return r.text == c.word; });
        ASSERT_NE(w, words[c.episode].end());
        ASSERT_EQ(c.prior.bits.size(), static_cast<std::size_t>(c.window.length));
        // the prior is a single run of ones
        int edges = 0;
        for (std::size_t i = 1; i < c.prior.bits.size(); ++i) edges += c.prior.bits[i] != c.prior.bits[i - 1];
        EXPECT_LE(edges, 2);
        EXPECT_GE(c.gt.start, 0);
        EXPECT_LT(c.gt.end, c.window.length);
        EXPECT_LE(c.gt.start, c.gt.end);
    }
    EXPECT_THROW(spot_cases(eps, words, cfg, 5, 0), ConfigError);
    words.pop_back();
    EXPECT_THROW(spot_cases(eps, words, cfg, 5), ValidationError);
}

TEST(Spotting, QueriesAreParallelToCases) {
    SynthConfig sc;
    sc.feature_dim = 8;
    const auto corpus = generate_corpus(sc, 1, 30.0);
    std::vector<Episode> eps{corpus.episodes[0].episode};
    std::vector<std::vector<SubtitleRecord>> words{corpus.episodes[0].words};
    RunConfig cfg = small_config();
    cfg.feature_dim = 8;
    const auto cases = spot_cases(eps, words, cfg, 9, 3);
    const auto params = AlignerParams<float>::initialized(cfg, 1);
    const auto model = model_spot_queries(params, eps, cases, cfg);
    const auto prior = prior_spot_queries(cases);
    ASSERT_EQ(model.size(), cases.size());
    ASSERT_EQ(prior.size(), cases.size());
    for (std::size_t i = 0; i < cases.size(); ++i) {
        EXPECT_EQ(model[i].probs.size(), cases[i].prior.bits.size());
        EXPECT_EQ(prior[i].probs, cases[i].prior.bits);
    }
}
