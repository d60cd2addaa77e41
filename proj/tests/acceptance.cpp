// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.
//
//   acceptance [--criteria 1-6,8]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <sgnalign/dtw_align.hpp>
#include <sgnalign/evaluate.hpp>
#include <sgnalign/inference.hpp>
#include <sgnalign/losses.hpp>
#include <sgnalign/preprocess.hpp>
#include <sgnalign/selftrain.hpp>
#include <sgnalign/synthgen.hpp>
#include <sgnalign/trainer.hpp>

#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace sgnalign;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = true;
    std::string detail;
};

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

std::string list(const std::vector<double>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt("%.2f", v[i]);
    return s + "]";
}

std::span<const double> sp(const std::vector<double>& v) { return {v.data(), v.size()}; }

// ------------------------------------------------------------ criteria 1-6

Verdict loss_oracle() {
    const auto t0 = Clock::now();
    Verdict v;
    double worst_example = 0, worst_random = 0;
    auto example = [&](double got, double want) { worst_example = std::max(worst_example, std::abs(got - want)); };
    const double e = std::exp(1.0);
    example(align_loss(sp({1.0, 0.0}), sp({1.0, 0.0})), 0.0);
    example(align_loss(sp({0.5, 0.5}), sp({1.0, 0.0})), std::log(2.0));
    example(align_loss(sp({0.9, 0.1, 0.5}), sp({1.0, 0.0, 1.0})), -(2 * std::log(0.9) + std::log(0.5)) / 3);
    example(neg_loss(sp({0.0, 0.0, 0.0})), 0.0);
    example(neg_loss(sp({0.5})), std::log(2.0));
    example(neg_loss(sp({0.5, 0.0})), std::log(2.0) / 2);
    for (double x : {0.0, 0.25, 1.0}) example(rel_loss(sp({x}), sp({x}), sp({1.0})), std::log(2.0));
    example(rel_loss(sp({1.0, 0.0}), sp({0.0, 0.0}), sp({1.0, 0.0})), std::log((e + 3) / e));
    example(rel_loss(sp({0.3, 0.8}), sp({0.1, 0.4}), sp({0.0, 0.0})), 0.0);
    std::optional<std::span<const double>> none;
    const auto b = total_loss<double>(sp({0.9, 0.2}), none, sp({1.0, 0.0}), 1.0, 1.0);
    example(b.l_tot, b.l_align);

    std::mt19937_64 rng(1);
    for (int i = 0; i < 1000; ++i) {
        const auto in = oracle::random_loss_instance(rng);
        worst_random = std::max({worst_random, std::abs(align_loss(sp(in.p), sp(in.g)) - oracle::align_loss(in.p, in.g)),
                                 std::abs(neg_loss(sp(in.n)) - oracle::neg_loss(in.n)),
                                 std::abs(rel_loss(sp(in.p), sp(in.n), sp(in.g)) - oracle::rel_loss(in.p, in.n, in.g))});
    }
    const double t = seconds_since(t0);
    v.pass = worst_example <= 1e-6 && worst_random <= 1e-9 && t < 1.0;
    v.detail = "worked examples max |err| " + fmt("%.1e", worst_example) + " (<= 1e-6), 1000 random max |err| " +
               fmt("%.1e", worst_random) + " (<= 1e-9), " + fmt("%.3f", t) + " s (< 1 s)";
    return v;
}

Verdict gradient_check() {
    const auto t0 = Clock::now();
    double worst = 0;
    std::string where;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto r = oracle::run_gradcheck(seed);
        if (r.worst_rel_error >= worst) {
            worst = r.worst_rel_error;
            where = r.worst_tensor + " seed " + std::to_string(seed);
        }
    }
    const double t = seconds_since(t0);
    return {worst <= 1e-4 && t < 30.0, "10 seeds, worst relative error " + fmt("%.2e", worst) + " at " + where +
                                           " (<= 1e-4), " + fmt("%.1f", t) + " s (< 30 s)"};
}

Verdict golden_corpus() {
    std::ifstream in(std::string(SGNALIGN_TEST_DATA_DIR) + "/golden_gloss.jsonl");
    if (!in) return {false, "golden corpus missing"};
    std::string line;
    int rows = 0, exact = 0;
    std::set<int> rules;
    std::string first_miss;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        ++rows;
        for (int r : j["rules"]) rules.insert(r);
        const auto got = to_pseudo_gloss(j["text"].get<std::string>()).tokens;
        if (got == j["expected"].get<std::vector<std::string>>()) ++exact;
        else if (first_miss.empty()) first_miss = j["text"].get<std::string>();
    }
    Verdict v;
    v.pass = rows == 30 && exact == rows && rules == std::set<int>{1, 2, 3, 4, 5, 6};
    v.detail = std::to_string(exact) + "/" + std::to_string(rows) + " exact, rules covered " +
               std::to_string(rules.size()) + "/6";
    if (!first_miss.empty()) v.detail += ", first mismatch: \"" + first_miss + "\"";
    return v;
}

Verdict metric_oracle() {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> kd(1, 8);
    std::uniform_int_distribution<std::int64_t> td(1, 300);
    int mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int K = kd(rng);
        const std::int64_t T = td(rng);
        const auto gt = oracle::random_disjoint_spans(rng, K, T);
        auto pred = oracle::random_disjoint_spans(rng, K, T);
        if (trial % 4 == 0) pred.pop_back();
        mismatches += frame_accuracy(pred, gt, T) != oracle::frame_accuracy(pred, gt, T);
        for (double th : kIouThresholds) mismatches += f1_at_iou(pred, gt, th) != oracle::f1_at_iou(pred, gt, th);
    }
    double worst_ap = 0;
    std::uniform_int_distribution<int> nd(1, 80), lv(0, 4);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = nd(rng);
        std::vector<float> s(n);
        for (auto& x : s) x = trial % 2 ? u(rng) : static_cast<float>(lv(rng)) / 4.0f;
        std::uniform_int_distribution<std::int64_t> pos(0, n - 1);
        std::int64_t a = pos(rng), b = pos(rng);
        if (a > b) std::swap(a, b);
        worst_ap = std::max(worst_ap, std::abs(average_precision(s, {a, b}) - oracle::average_precision(s, {a, b})));
    }
    return {mismatches == 0 && worst_ap <= 1e-9, "1000 episodes (K <= 8): " + std::to_string(mismatches) +
                                                     " frame-acc/F1 mismatches; 1000 AP queries max |err| " +
                                                     fmt("%.1e", worst_ap) + " (<= 1e-9)"};
}

Verdict dtw_oracle() {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::size_t> kd(1, 3), td(1, 20);
    int mismatches = 0, broken = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t K = kd(rng), T = td(rng);
        const auto grid = oracle::random_cost_grid(rng, K, T, quantize_cost);
        const std::int64_t theta = quantize_cost(0.4);
        const auto fast = global_align_quantized(grid, theta, T);
        const auto ref = oracle::exhaustive_align(grid, theta, T);
        if (fast != ref.spans) ++mismatches;
        std::int64_t last = -1;
        for (const auto& s : fast) {
            if (s.empty()) continue;
            if (s.start <= last || s.end >= static_cast<std::int64_t>(T)) ++broken;
            last = s.end;
        }
    }
    return {mismatches == 0 && broken == 0, "500 grids (K <= 3, T <= 20): " + std::to_string(mismatches) +
                                                " differ from exhaustive search, " + std::to_string(broken) +
                                                " non-monotone or overlapping"};
}

// ---------------------------------------------------------- shared corpus

struct Desk {
    CorpusSplits splits;
    RunConfig cfg;
};

const Desk& desk() {
    static const Desk d = [] {
        SynthConfig sc;
        sc.seed = 1;
        return Desk{desk_splits(sc), desk_recipe()};
    }();
    return d;
}

EvalReport evaluate_spans(const std::vector<Episode>& eps,
                          const std::function<std::vector<LabeledSpan>(const Episode&)>& predict) {
    EvalReport r;
    for (const auto& ep : eps) r.add(predict(ep), gt_spans(ep.subtitles, ep.fps), ep.features.frame_count);
    return r;
}

EvalReport evaluate_baseline(BaselineMode mode) {
    const auto& d = desk();
    return evaluate_spans(d.splits.test, [&](const Episode& ep) { return baseline_spans(ep.subtitles, mode, d.cfg, ep.fps); });
}

EvalReport evaluate_model(const AlignerParams<float>& params, const RunConfig& cfg) {
    return evaluate_spans(desk().splits.test, [&](const Episode& ep) {
        return prediction_spans(align_episode(params, ep, cfg, DecodeMode::global), ep.fps);
    });
}

Verdict baseline_ordering() {
    const auto t0 = Clock::now();
    const double audio = evaluate_baseline(BaselineMode::audio).frame_acc();
    const double shifted = evaluate_baseline(BaselineMode::audio_shifted).frame_acc();
    const double t = seconds_since(t0);
    return {shifted - audio >= 10.0 && t < 60.0, "frame-acc S_audio " + fmt("%.2f", audio) + " < S+_audio " +
                                                     fmt("%.2f", shifted) + ", gap " + fmt("%.2f", shifted - audio) +
                                                     " (>= 10), " + fmt("%.1f", t) + " s (< 60 s)"};
}

// -------------------------------------------------------- criteria 7-10

// One seed of the training ladder, keeping every intermediate model.
struct SeedRun {
    double plain = 0, selective = 0, selftrain = 0, control = 0, unfrozen = 0;
    double spot_map = 0, spot_base = 0;
    std::vector<double> kept_ratio;  // at tau_c = 0, 0.5, 0.9, 0.95
    double ladder_seconds = 0;
};

struct Staged {
    AlignerParams<float> word, subtitle, final;
};

Staged train_ladder(const RunConfig& cfg, const ScheduleData& data) {
    auto params = AlignerParams<float>::initialized(cfg, cfg.seed);
    auto stage = [&](StageName name, const TrainDataset& ds) {
        std::mt19937_64 rng(stage_seed(cfg.seed, name));
        train_stage(params, ds, stage_from_config(name, cfg), cfg, rng);
        return params;
    };
    Staged s;
    s.word = stage(StageName::word_pretrain, *data.words);
    s.subtitle = stage(StageName::subtitle_train, *data.subtitles);
    s.final = stage(StageName::finetune, *data.manual);
    return s;
}

ScheduleData desk_data(const RunConfig& cfg) {
    const auto& s = desk().splits;
    ScheduleData d;
    d.words = word_dataset(s.word, s.word_spans, cfg);
    d.subtitles = subtitle_dataset(s.train, LabelSource::audio_aligned, cfg);
    d.manual = subtitle_dataset(s.finetune, LabelSource::manual, cfg);
    return d;
}

SeedRun run_seed(std::uint64_t seed) {
    const auto& d = desk();
    SeedRun r;
    const auto t0 = Clock::now();

    RunConfig plain = d.cfg;
    plain.seed = seed;
    plain.lambda_neg = plain.lambda_rel = 0.0;
    r.plain = evaluate_model(train_ladder(plain, desk_data(plain)).final, plain).frame_acc();

    RunConfig cfg = d.cfg;
    cfg.seed = seed;
    const ScheduleData data = desk_data(cfg);
    const Staged st = train_ladder(cfg, data);
    r.selective = evaluate_model(st.final, cfg).frame_acc();

    const auto labels = generate_pseudo_labels(st.final, d.splits.train, cfg);
    const auto filtered = filter_by_confidence(labels.kept, cfg.tau_c);
    for (double tc : {0.0, 0.5, 0.9, 0.95}) r.kept_ratio.push_back(filter_by_confidence(labels.kept, tc).kept_ratio);
    r.selftrain = evaluate_model(self_train_round(st.final, d.splits.train, filtered.kept, *data.manual, cfg), cfg).frame_acc();
    r.ladder_seconds = seconds_since(t0);

    SelfTrainOptions control;
    control.use_shifted_audio = true;
    r.control =
        evaluate_model(self_train_round(st.final, d.splits.train, filtered.kept, *data.manual, cfg, control), cfg).frame_acc();

    RunConfig open = cfg;
    open.freeze_text_stack = false;
    AlignerParams<float> unfrozen = st.subtitle;
    std::mt19937_64 rng(stage_seed(cfg.seed, StageName::finetune));
    train_stage(unfrozen, *data.manual, stage_from_config(StageName::finetune, open), open, rng);
    r.unfrozen = evaluate_model(unfrozen, cfg).frame_acc();

    const auto cases = spot_cases(d.splits.test, d.splits.test_word_spans, cfg, 1000 + seed);
    r.spot_map = spotting_metrics(model_spot_queries(st.word, d.splits.test, cases, cfg)).map;
    r.spot_base = spotting_metrics(prior_spot_queries(cases)).map;

    std::fprintf(stderr,
                 "seed %llu: plain %.2f selective %.2f selftrain %.2f control %.2f unfrozen %.2f spot %.4f/%.4f "
                 "ladder %.0f s total %.0f s\n",
                 static_cast<unsigned long long>(seed), r.plain, r.selective, r.selftrain, r.control, r.unfrozen,
                 r.spot_map, r.spot_base, r.ladder_seconds, seconds_since(t0));
    return r;
}

const std::vector<SeedRun>& seed_runs() {
    static const std::vector<SeedRun> runs = [] {
        std::vector<SeedRun> v;
        for (std::uint64_t s : {1, 2, 3}) v.push_back(run_seed(s));
        return v;
    }();
    return runs;
}

template <typename F>
std::vector<double> collect(F&& f) {
    std::vector<double> v;
    for (const auto& r : seed_runs()) v.push_back(f(r));
    return v;
}

Verdict component_ladder() {
    const double prior = evaluate_baseline(BaselineMode::audio_shifted).frame_acc();
    const auto plain = collect([](const SeedRun& r) { return r.plain; });
    const auto sel = collect([](const SeedRun& r) { return r.selective; });
    const auto self = collect([](const SeedRun& r) { return r.selftrain; });
    double seconds = 0;
    int improved = 0;
    for (const auto& r : seed_runs()) {
        seconds += r.ladder_seconds;
        improved += r.selective > r.plain;
    }
    const double mp = median(plain), ms = median(sel), mt = median(self);
    const bool step1 = mp - prior >= 8.0;
    const bool step2 = ms >= mp - 0.5 && improved >= 2;
    const bool step3 = mt >= ms - 0.5;
    const bool fast = seconds <= 1800.0;
    Verdict v;
    v.pass = step1 && step2 && step3 && fast;
    v.detail = "median frame-acc: prior " + fmt("%.2f", prior) + " | model " + fmt("%.2f", mp) + " " + list(plain) +
               (step1 ? " ok" : " FAIL(gap<8)") + " | +selective " + fmt("%.2f", ms) + " " + list(sel) + ", improved " +
               std::to_string(improved) + "/3" + (step2 ? " ok" : " FAIL") + " | +selftrain " + fmt("%.2f", mt) + " " +
               list(self) + (step3 ? " ok" : " FAIL") + " | " + fmt("%.0f", seconds) + " s (<= 1800 s)";
    return v;
}

Verdict selftrain_control() {
    const auto self = collect([](const SeedRun& r) { return r.selftrain; });
    const auto ctrl = collect([](const SeedRun& r) { return r.control; });
    bool monotone = true;
    std::string ratios;
    for (const auto& r : seed_runs()) {
        for (std::size_t i = 1; i < r.kept_ratio.size(); ++i) monotone = monotone && r.kept_ratio[i] <= r.kept_ratio[i - 1];
        ratios += (ratios.empty() ? "" : " ") + list(r.kept_ratio);
    }
    const double ms = median(self), mc = median(ctrl);
    return {mc <= ms + 0.5 && monotone, "median frame-acc control " + fmt("%.2f", mc) + " " + list(ctrl) +
                                            " <= pseudo " + fmt("%.2f", ms) + " " + list(self) +
                                            " + 0.5; kept ratio at tau_c {0,0.5,0.9,0.95}: " + ratios +
                                            (monotone ? " non-increasing" : " NOT monotone")};
}

Verdict freeze_ablation() {
    const auto frozen = collect([](const SeedRun& r) { return r.selective; });
    const auto open = collect([](const SeedRun& r) { return r.unfrozen; });
    const double mf = median(frozen), mo = median(open);
    return {mf >= mo - 1.0, "median frame-acc frozen " + fmt("%.2f", mf) + " " + list(frozen) + " vs unfrozen " +
                                fmt("%.2f", mo) + " " + list(open) + " (frozen >= unfrozen - 1.0)"};
}

Verdict spotting() {
    bool pass = true;
    std::string detail;
    for (const auto& r : seed_runs()) {
        pass = pass && r.spot_map >= 5.0 * r.spot_base;
        detail += (detail.empty() ? "" : ", ") + fmt("%.3f", r.spot_map) + " vs " + fmt("%.3f", r.spot_base) + " (" +
                  fmt("%.1f", r.spot_map / r.spot_base) + "x)";
    }
    return {pass, "mAP word-pretrained vs random prior per seed: " + detail + " (>= 5x each)"};
}

std::set<int> parse_criteria(const std::string& spec) {
    std::set<int> out;
    std::size_t pos = 0;
    while (pos < spec.size()) {
        std::size_t comma = spec.find(',', pos);
        if (comma == std::string::npos) comma = spec.size();
        const std::string part = spec.substr(pos, comma - pos);
        const std::size_t dash = part.find('-');
        const int lo = std::stoi(part.substr(0, dash));
        const int hi = dash == std::string::npos ? lo : std::stoi(part.substr(dash + 1));
        for (int i = lo; i <= hi; ++i) out.insert(i);
        pos = comma + 1;
    }
    return out;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string which = "1-10";
    app.add_option("--criteria", which, "Criteria to run, e.g. 1-6 or 2,7-10")->capture_default_str();
    CLI11_PARSE(app, argc, argv);
    std::set<int> selected;
    try {
        selected = parse_criteria(which);
    } catch (const std::exception&) {
        std::fprintf(stderr, "bad --criteria '%s'\n", which.c_str());
        return 2;
    }

    const std::map<int, std::pair<const char*, std::function<Verdict()>>> criteria{
        {1, {"loss oracle", loss_oracle}},
        {2, {"gradient check", gradient_check}},
        {3, {"pre-processing golden corpus", golden_corpus}},
        {4, {"metric oracle", metric_oracle}},
        {5, {"DTW oracle", dtw_oracle}},
        {6, {"baseline ordering", baseline_ordering}},
        {7, {"component ladder", component_ladder}},
        {8, {"self-training control", selftrain_control}},
        {9, {"freeze ablation", freeze_ablation}},
        {10, {"spotting mode", spotting}},
    };
    int failed = 0;
    for (int id : selected) {
        auto it = criteria.find(id);
        if (it == criteria.end()) {
            std::fprintf(stderr, "no criterion %d\n", id);
            return 2;
        }
        Verdict v;
        try {
            v = it->second.second();
        } catch (const std::exception& e) {
            v = {false, std::string("threw: ") + e.what()};
        }
        failed += !v.pass;
        std::printf("criterion %2d %s: %s: %s\n", id, v.pass ? "PASS" : "FAIL", it->second.first, v.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
