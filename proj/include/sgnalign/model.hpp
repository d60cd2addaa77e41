#pragma once

// Prior-conditioned text/video alignment model.
//
//   tokens -> embedding -> linear -> +pos -> encoder x N           (text memory)
//   [linear(frames) | linear(prior)] -> linear -> +pos -> decoder x N (cross-attends text)
//   decoder -> linear -> clamp(+-30) -> sigmoid                     (per-frame probability)
//
// Everything is templated on the scalar so the same code runs in float for
// training and in double for finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "config.hpp"
#include "corpus_io.hpp"
#include "error.hpp"
#include "layers.hpp"
#include "tensor.hpp"
#include "types.hpp"

namespace sgnalign {

inline constexpr int kBosToken = 0;
inline constexpr int kEosToken = 1;
inline constexpr double kLogitClamp = 30.0;

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Buckets 0 and 1 are reserved for the sentence markers.
inline int token_bucket(std::string_view token, int vocab_buckets) {
    return 2 + static_cast<int>(fnv1a(token) % static_cast<std::uint64_t>(vocab_buckets - 2));
}

inline std::vector<int> encode_tokens(const std::vector<std::string>& tokens, int vocab_buckets) {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 2);
    ids.push_back(kBosToken);
    for (const auto& t : tokens) ids.push_back(token_bucket(t, vocab_buckets));
    ids.push_back(kEosToken);
    return ids;
}

template <typename Real>
struct AlignerParams {
    Matrix<Real> embedding;
    Linear<Real> text_proj;
    std::vector<EncoderLayer<Real>> encoder;
    Linear<Real> video_proj, prior_proj, fuse;
    std::vector<DecoderLayer<Real>> decoder;
    Linear<Real> head;
    std::size_t heads = 4;

    AlignerParams() = default;

    // Zero-valued tensors with the shapes implied by cfg.
    explicit AlignerParams(const RunConfig& cfg)
        : embedding(cfg.vocab_buckets, cfg.d_model),
          text_proj(cfg.d_model, cfg.d_model),
          video_proj(cfg.feature_dim, cfg.d_model),
          prior_proj(1, cfg.d_model),
          fuse(2 * cfg.d_model, cfg.d_model),
          head(cfg.d_model, 1),
          heads(cfg.n_heads) {
        cfg.validate();
        for (int i = 0; i < cfg.n_layers; ++i) {
            encoder.emplace_back(cfg.d_model, cfg.d_ff, cfg.n_heads);
            decoder.emplace_back(cfg.d_model, cfg.d_ff, cfg.n_heads);
        }
    }

    static AlignerParams initialized(const RunConfig& cfg, std::uint64_t seed) {
        AlignerParams p(cfg);
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> emb(-1.0, 1.0);
        for (auto& v : p.embedding.data) v = static_cast<Real>(emb(rng));
        p.text_proj.init(rng);
        for (auto& l : p.encoder) l.init(rng);
        p.video_proj.init(rng);
        p.prior_proj.init(rng);
        p.fuse.init(rng);
        for (auto& l : p.decoder) l.init(rng);
        p.head.init(rng);
        return p;
    }

    std::size_t d_model() const { return embedding.cols; }
    std::size_t feature_dim() const { return video_proj.weight.rows; }
    std::size_t vocab_buckets() const { return embedding.rows; }

    template <typename Fn>
    void visit(Fn&& fn) {
        fn(std::string("text.embedding"), embedding);
        text_proj.visit("text.proj", fn);
        for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].visit("text.encoder." + std::to_string(i), fn);
        video_proj.visit("video.proj", fn);
        prior_proj.visit("prior.proj", fn);
        fuse.visit("fuse", fn);
        for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].visit("decoder." + std::to_string(i), fn);
        head.visit("head", fn);
    }

    template <typename Fn>
    void visit(Fn&& fn) const {
        const_cast<AlignerParams*>(this)->visit([&](const std::string& name, Matrix<Real>& m) {
            fn(name, static_cast<const Matrix<Real>&>(m));
        });
    }

    std::vector<std::pair<std::string, Matrix<Real>*>> tensors() {
        std::vector<std::pair<std::string, Matrix<Real>*>> out;
        visit([&](const std::string& name, Matrix<Real>& m) { out.emplace_back(name, &m); });
        return out;
    }

    AlignerParams zeros_like() const {
        AlignerParams z = *this;
        z.visit([](const std::string&, Matrix<Real>& m) { m.zero(); });
        return z;
    }

    friend bool operator==(const AlignerParams& a, const AlignerParams& b) {
        bool eq = true;
        auto ta = const_cast<AlignerParams&>(a).tensors();
        auto tb = const_cast<AlignerParams&>(b).tensors();
        if (ta.size() != tb.size()) return false;
        for (std::size_t i = 0; i < ta.size(); ++i) eq = eq && ta[i].first == tb[i].first && *ta[i].second == *tb[i].second;
        return eq;
    }
};

// Embedding, text projection and text encoder: the stack frozen during fine-tuning.
inline bool is_text_tensor(std::string_view name) { return name.starts_with("text."); }

template <typename To, typename From>
AlignerParams<To> cast_params(const AlignerParams<From>& src) {
    AlignerParams<To> dst;
    auto copy = [](const Matrix<From>& s) {
        Matrix<To> m(s.rows, s.cols);
        for (std::size_t i = 0; i < s.data.size(); ++i) m.data[i] = static_cast<To>(s.data[i]);
        return m;
    };
    std::vector<Matrix<To>> mats;
    src.visit([&](const std::string&, const Matrix<From>& m) { mats.push_back(copy(m)); });
    dst.heads = src.heads;
    dst.encoder.resize(src.encoder.size());
    dst.decoder.resize(src.decoder.size());
    for (auto& l : dst.encoder) l.self_attn.heads = src.heads;
    for (auto& l : dst.decoder) {
        l.self_attn.heads = src.heads;
        l.cross_attn.heads = src.heads;
    }
    std::size_t i = 0;
    dst.visit([&](const std::string&, Matrix<To>& m) { m = std::move(mats[i++]); });
    return dst;
}

// ------------------------------------------------------------------ forward

template <typename Real>
struct ForwardCache {
    std::vector<int> ids;
    Matrix<Real> text_in;  // embeddings, before projection
    Matrix<Real> text_proj_out;
    std::vector<Matrix<Real>> enc_inputs;
    std::vector<typename EncoderLayer<Real>::Cache> enc;
    Matrix<Real> memory;
    Matrix<Real> features, prior;
    Matrix<Real> concat;
    std::vector<Matrix<Real>> dec_inputs;
    std::vector<typename DecoderLayer<Real>::Cache> dec;
    Matrix<Real> dec_out;
    std::vector<Real> raw_logits;
    std::vector<Real> probs;
};

namespace detail {

template <typename Real>
const Matrix<Real>& positions(std::size_t length, std::size_t dim) {
    thread_local std::map<std::pair<std::size_t, std::size_t>, Matrix<Real>> table;
    auto key = std::make_pair(length, dim);
    auto it = table.find(key);
    if (it == table.end()) it = table.emplace(key, sinusoidal_positions<Real>(length, dim)).first;
    return it->second;
}

template <typename Real>
void check_finite(const Matrix<Real>& m, const char* layer) {
    if (!all_finite(m)) throw NumericError(std::string("non-finite activation in ") + layer);
}

} // namespace detail

/// Runs the model for one query over one window. `features` is T x feature_dim,
/// `prior` has T entries in {0,1}. Returns T probabilities in (0,1).
template <typename Real>
const std::vector<Real>& forward(const AlignerParams<Real>& p, std::span<const int> ids, const Matrix<Real>& features,
                                 std::span<const float> prior, ForwardCache<Real>& c) {
    const std::size_t T = features.rows, d = p.d_model();
    if (prior.size() != T) throw ShapeError("forward: prior length differs from feature window length");
    if (features.cols != p.feature_dim()) throw ShapeError("forward: feature dim differs from model");
    if (ids.empty()) throw ShapeError("forward: empty token sequence");

    c.ids.assign(ids.begin(), ids.end());
    c.text_in.resize(ids.size(), d);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= p.vocab_buckets()) throw ShapeError("forward: token id out of range");
        std::copy_n(p.embedding.row(ids[i]), d, c.text_in.row(i));
    }
    p.text_proj.forward(c.text_in, c.text_proj_out);
    Matrix<Real> x = c.text_proj_out;
    add_inplace(x, detail::positions<Real>(ids.size(), d));
    c.enc_inputs.resize(p.encoder.size());
    c.enc.resize(p.encoder.size());
    for (std::size_t l = 0; l < p.encoder.size(); ++l) {
        c.enc_inputs[l] = x;
        Matrix<Real> y;
        p.encoder[l].forward(x, y, c.enc[l]);
        x = std::move(y);
        detail::check_finite(x, "text encoder");
    }
    c.memory = std::move(x);

    c.features = features;
    c.prior.resize(T, 1);
    for (std::size_t t = 0; t < T; ++t) c.prior.data[t] = static_cast<Real>(prior[t]);
    Matrix<Real> v, pr;
    p.video_proj.forward(c.features, v);
    p.prior_proj.forward(c.prior, pr);
    c.concat.resize(T, 2 * d);
    for (std::size_t t = 0; t < T; ++t) {
        std::copy_n(v.row(t), d, c.concat.row(t));
        std::copy_n(pr.row(t), d, c.concat.row(t) + d);
    }
    Matrix<Real> h;
    p.fuse.forward(c.concat, h);
    add_inplace(h, detail::positions<Real>(T, d));
    detail::check_finite(h, "video/prior fusion");

    c.dec_inputs.resize(p.decoder.size());
    c.dec.resize(p.decoder.size());
    for (std::size_t l = 0; l < p.decoder.size(); ++l) {
        c.dec_inputs[l] = h;
        Matrix<Real> y;
        p.decoder[l].forward(h, c.memory, y, c.dec[l]);
        h = std::move(y);
        detail::check_finite(h, "decoder");
    }
    c.dec_out = std::move(h);

    Matrix<Real> logits;
    p.head.forward(c.dec_out, logits);
    c.raw_logits.assign(logits.data.begin(), logits.data.end());
    c.probs.resize(T);
    for (std::size_t t = 0; t < T; ++t) {
        const Real z = std::clamp(c.raw_logits[t], Real(-kLogitClamp), Real(kLogitClamp));
        c.probs[t] = Real(1) / (Real(1) + std::exp(-z));
        if (!std::isfinite(c.probs[t])) throw NumericError("non-finite activation in output head");
    }
    return c.probs;
}

/// Accumulates dLoss/dparams into `grad` given dLoss/dprobs. The text stack is
/// skipped when `text_grads` is false (its gradients stay untouched).
template <typename Real>
void backward(const AlignerParams<Real>& p, const ForwardCache<Real>& c, std::span<const Real> dprobs,
              AlignerParams<Real>& grad, bool text_grads = true) {
    const std::size_t T = c.probs.size(), d = p.d_model();
    if (dprobs.size() != T) throw ShapeError("backward: gradient length differs from output length");
    Matrix<Real> dlogit(T, 1);
    for (std::size_t t = 0; t < T; ++t) {
        const Real z = c.raw_logits[t];
        const bool inside = z >= Real(-kLogitClamp) && z <= Real(kLogitClamp);
        dlogit.data[t] = inside ? dprobs[t] * c.probs[t] * (Real(1) - c.probs[t]) : Real(0);
    }
    Matrix<Real> dh;
    p.head.backward(grad.head, c.dec_out, dlogit, &dh);

    Matrix<Real> dmemory(c.memory.rows, d);
    for (std::size_t l = p.decoder.size(); l-- > 0;) {
        Matrix<Real> dx;
        p.decoder[l].backward(grad.decoder[l], c.dec[l], dh, dx, dmemory);
        dh = std::move(dx);
    }
    Matrix<Real> dconcat;
    p.fuse.backward(grad.fuse, c.concat, dh, &dconcat);
    Matrix<Real> dv(T, d), dp(T, d);
    for (std::size_t t = 0; t < T; ++t) {
        std::copy_n(dconcat.row(t), d, dv.row(t));
        std::copy_n(dconcat.row(t) + d, d, dp.row(t));
    }
    p.video_proj.backward(grad.video_proj, c.features, dv, nullptr);
    p.prior_proj.backward(grad.prior_proj, c.prior, dp, nullptr);

    if (!text_grads) return;
    Matrix<Real> dx = std::move(dmemory);
    for (std::size_t l = p.encoder.size(); l-- > 0;) {
        Matrix<Real> dprev;
        p.encoder[l].backward(grad.encoder[l], c.enc[l], dx, dprev);
        dx = std::move(dprev);
    }
    Matrix<Real> demb;
    p.text_proj.backward(grad.text_proj, c.text_in, dx, &demb);
    for (std::size_t i = 0; i < c.ids.size(); ++i) {
        Real* g = grad.embedding.row(c.ids[i]);
        const Real* s = demb.row(i);
        for (std::size_t j = 0; j < d; ++j) g[j] += s[j];
    }
}

// ------------------------------------------------------- windows and priors

/// A search window: `length` stride-grid frames starting at episode frame
/// `start_frame`. Grid frame i sits at episode frame start_frame + i * stride.
struct Window {
    std::int64_t start_frame = 0;
    int length = 0;
    int stride = 1;
    std::int64_t episode_frames = 0;

    std::int64_t grid_frame(int i) const { return start_frame + static_cast<std::int64_t>(i) * stride; }
    std::int64_t span_frames() const { return static_cast<std::int64_t>(length) * stride; }
    // Native-frame interval covered by the window (last grid frame inclusive).
    FrameSpan frames() const { return {start_frame, grid_frame(length - 1)}; }
};

enum class PriorMode { shifted, exact, random, jittered };

inline PriorMode prior_mode_from_string(std::string_view s) {
    if (s == "shifted") return PriorMode::shifted;
    if (s == "exact") return PriorMode::exact;
    if (s == "random") return PriorMode::random;
    if (s == "jittered") return PriorMode::jittered;
    throw ConfigError("unknown prior mode '" + std::string(s) + "'");
}

/// Audio timing shifted by prior_shift_s and padded by prior_pad_s on both sides.
inline TimeSpan shifted_prior_span(TimeSpan audio, const RunConfig& cfg) {
    return {audio.start + cfg.prior_shift_s - cfg.prior_pad_s, audio.end + cfg.prior_shift_s + cfg.prior_pad_s};
}

// Uniform shift in [-2, 2] s and duration scale in [0.8, 1.2] about the centre.
inline TimeSpan jitter_span(TimeSpan base, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> shift(-2.0, 2.0), scale(0.8, 1.2);
    const double c = base.center() + shift(rng);
    const double half = 0.5 * base.duration() * scale(rng);
    return {c - half, c + half};
}

// Span of length U(0.5, 4) s placed uniformly inside the window.
inline TimeSpan random_prior_span(const Window& win, double fps, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> len_dist(0.5, 4.0);
    const double len = len_dist(rng);
    const double w0 = frame_to_seconds(win.start_frame, fps);
    const double w1 = frame_to_seconds(win.start_frame + win.span_frames(), fps);
    const double hi = std::max(w0, w1 - len);
    std::uniform_real_distribution<double> start_dist(w0, hi);
    const double s = hi > w0 ? start_dist(rng) : w0;
    return {s, s + len};
}

/// Marks grid frames whose timestamp lies inside the span (closed interval).
inline PriorVector rasterize(TimeSpan span, const Window& win, double fps) {
    PriorVector pv;
    pv.window_start_frame = win.start_frame;
    pv.stride = win.stride;
    pv.bits.assign(win.length, 0.0f);
    for (int i = 0; i < win.length; ++i) {
        const double t = frame_to_seconds(win.grid_frame(i), fps);
        if (t >= span.start && t <= span.end) pv.bits[i] = 1.0f;
    }
    return pv;
}

inline void check_window(const Window& win) {
    if (win.length <= 0 || win.stride <= 0) throw ShapeError("window must have positive length and stride");
    if (win.start_frame >= win.episode_frames || win.grid_frame(win.length - 1) < 0)
        throw ValidationError("window lies outside the episode");
}

inline PriorVector encode_prior(const SubtitleRecord& sub, const Window& win, const RunConfig& cfg, PriorMode mode,
                                double fps, std::mt19937_64& rng) {
    check_window(win);
    switch (mode) {
    case PriorMode::shifted:
        return rasterize(shifted_prior_span(sub.audio(), cfg), win, fps);
    case PriorMode::exact:
        if (!sub.has_gt()) throw ValidationError("exact prior needs a ground-truth span for " + sub.id);
        return rasterize(sub.gt(), win, fps);
    case PriorMode::jittered:
        return rasterize(jitter_span(sub.has_gt() ? sub.gt() : sub.audio(), rng), win, fps);
    case PriorMode::random:
        return rasterize(random_prior_span(win, fps, rng), win, fps);
    }
    throw ConfigError("unhandled prior mode");
}

inline Window make_window(std::int64_t start, std::int64_t episode_frames, double fps, const RunConfig& cfg) {
    Window w;
    w.length = cfg.window_frames(fps);
    w.stride = cfg.stride;
    w.episode_frames = episode_frames;
    if (w.length <= 0) throw ConfigError("window_seconds too short for stride");
    const std::int64_t max_start = std::max<std::int64_t>(0, episode_frames - w.span_frames());
    w.start_frame = std::clamp<std::int64_t>(start, 0, max_start);
    return w;
}

/// Window centred on a span (clamped to the episode).
inline Window centered_window(TimeSpan span, std::int64_t episode_frames, double fps, const RunConfig& cfg) {
    const std::int64_t len = static_cast<std::int64_t>(cfg.window_frames(fps)) * cfg.stride;
    const std::int64_t mid = seconds_to_frame(span.center(), fps);
    return make_window(mid - len / 2, episode_frames, fps, cfg);
}

/// Random window containing the reference span; placement uniform over the
/// valid start frames. Spans longer than the window get a centred window.
inline Window sample_window(TimeSpan reference, std::int64_t episode_frames, double fps, const RunConfig& cfg,
                            std::mt19937_64& rng) {
    const std::int64_t len = static_cast<std::int64_t>(cfg.window_frames(fps)) * cfg.stride;
    const FrameSpan ref = to_frames(reference, fps);
    if (ref.length() > len) return centered_window(reference, episode_frames, fps, cfg);
    std::int64_t lo = ref.end - len + 1;
    std::int64_t hi = ref.start;
    lo = std::max<std::int64_t>(lo, 0);
    hi = std::min<std::int64_t>(hi, std::max<std::int64_t>(0, episode_frames - len));
    if (hi < lo) return make_window(lo, episode_frames, fps, cfg);
    std::uniform_int_distribution<std::int64_t> dist(lo, hi);
    return make_window(dist(rng), episode_frames, fps, cfg);
}

inline Window sample_window(const SubtitleRecord& sub, const Episode& ep, const RunConfig& cfg, std::mt19937_64& rng) {
    return sample_window(sub.has_gt() ? sub.gt() : sub.audio(), ep.features.frame_count, ep.fps, cfg, rng);
}

/// Gathers the strided feature rows of a window; rows past the episode end are zero.
template <typename Real>
Matrix<Real> window_features(const FeatureSequence& feats, const Window& win) {
    Matrix<Real> m(win.length, feats.dim);
    for (int i = 0; i < win.length; ++i) {
        const std::int64_t f = win.grid_frame(i);
        if (f < 0 || f >= static_cast<std::int64_t>(feats.frame_count)) continue;
        auto row = feats.row(static_cast<std::size_t>(f));
        for (std::size_t j = 0; j < feats.dim; ++j) m(i, j) = static_cast<Real>(row[j]);
    }
    return m;
}

/// First and last grid frames above tau, mapped to episode frames.
inline std::optional<AlignmentSpan> decode_span(const FrameProbs& probs, double tau) {
    std::optional<std::size_t> first, last;
    double peak = 0.0;
    for (std::size_t i = 0; i < probs.values.size(); ++i) {
        peak = std::max(peak, static_cast<double>(probs.values[i]));
        if (probs.values[i] > tau) {
            if (!first) first = i;
            last = i;
        }
    }
    if (!first) return std::nullopt;
    return AlignmentSpan{{probs.grid_to_frame(*first), probs.grid_to_frame(*last)}, peak};
}

/// Float inference helper: one query, one window.
inline FrameProbs predict(const AlignerParams<float>& params, std::span<const int> ids, const FeatureSequence& feats,
                          const Window& win, const PriorVector& prior) {
    ForwardCache<float> cache;
    const auto x = window_features<float>(feats, win);
    const auto& probs = forward(params, ids, x, prior.bits, cache);
    FrameProbs out;
    out.values = probs;
    out.window_start_frame = win.start_frame;
    out.stride = win.stride;
    return out;
}

} // namespace sgnalign
