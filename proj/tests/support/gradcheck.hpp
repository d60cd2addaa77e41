#pragma once

// Finite-difference check of the full model under the total loss.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "sgnalign/losses.hpp"
#include "sgnalign/model.hpp"

namespace sgnalign::oracle {

struct GradCheckResult {
    std::string worst_tensor;
    double worst_rel_error = 0.0;
    std::size_t tensors = 0;
};

struct GradCheckInstance {
    RunConfig cfg;
    AlignerParams<double> params;
    std::vector<int> ids;
    Matrix<double> pos_feats, neg_feats;
    std::vector<float> pos_prior, neg_prior;
    std::vector<double> gt;
};

inline std::vector<float> random_run(std::size_t T, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> a(0, T - 1);
    std::size_t s = a(rng), e = a(rng);
    if (s > e) std::swap(s, e);
    std::vector<float> v(T, 0.0f);
    for (std::size_t t = s; t <= e; ++t) v[t] = 1.0f;
    return v;
}

inline GradCheckInstance make_gradcheck_instance(std::uint64_t seed, std::size_t T = 12, std::size_t n_tokens = 4) {
    GradCheckInstance in;
    in.cfg.d_model = 8;
    in.cfg.d_ff = 16;
    in.cfg.n_heads = 4;
    in.cfg.n_layers = 2;
    in.cfg.vocab_buckets = 32;
    in.cfg.feature_dim = 6;
    in.params = AlignerParams<double>::initialized(in.cfg, seed);
    std::mt19937_64 rng(seed * 7919 + 1);
    std::uniform_int_distribution<int> tok(2, in.cfg.vocab_buckets - 1);
    in.ids.push_back(kBosToken);
    for (std::size_t i = 0; i < n_tokens; ++i) in.ids.push_back(tok(rng));
    in.ids.push_back(kEosToken);
    std::normal_distribution<double> nd(0.0, 1.0);
    in.pos_feats.resize(T, in.cfg.feature_dim);
    in.neg_feats.resize(T, in.cfg.feature_dim);
    for (auto& v : in.pos_feats.data) v = nd(rng);
    for (auto& v : in.neg_feats.data) v = nd(rng);
    in.pos_prior = random_run(T, rng);
    in.neg_prior = random_run(T, rng);
    auto g = random_run(T, rng);
    in.gt.assign(g.begin(), g.end());
    return in;
}

// L_tot with lambda_neg = lambda_rel = 1 for one positive/negative pair.
inline double gradcheck_loss(const GradCheckInstance& in, const AlignerParams<double>& p,
                             AlignerParams<double>* grad = nullptr) {
    ForwardCache<double> cp, cn;
    const auto pr = forward(p, in.ids, in.pos_feats, in.pos_prior, cp);
    const auto ng = forward(p, in.ids, in.neg_feats, in.neg_prior, cn);
    LossGradient<double> lg;
    std::optional<std::span<const double>> neg = std::span<const double>(ng);
    const auto b = total_loss<double>(pr, neg, in.gt, 1.0, 1.0, grad ? &lg : nullptr);
    if (grad) {
        backward<double>(p, cp, lg.d_pr, *grad);
        backward<double>(p, cn, lg.d_neg, *grad);
    }
    return b.l_tot;
}

/// Per tensor: ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-6).
/// The floor matters only for tensors whose true gradient is identically zero
/// (attention key biases), where both sides are pure rounding noise.
inline GradCheckResult run_gradcheck(std::uint64_t seed, double eps = 1e-4) {
    auto in = make_gradcheck_instance(seed);
    AlignerParams<double> grad = in.params.zeros_like();
    gradcheck_loss(in, in.params, &grad);

    GradCheckResult res;
    AlignerParams<double> probe = in.params;
    auto probe_tensors = probe.tensors();
    auto grad_tensors = grad.tensors();
    for (std::size_t k = 0; k < probe_tensors.size(); ++k) {
        auto& m = *probe_tensors[k].second;
        const auto& g = *grad_tensors[k].second;
        double diff2 = 0, a2 = 0, n2 = 0;
        for (std::size_t i = 0; i < m.data.size(); ++i) {
            const double orig = m.data[i];
            m.data[i] = orig + eps;
            const double hi = gradcheck_loss(in, probe);
            m.data[i] = orig - eps;
            const double lo = gradcheck_loss(in, probe);
            m.data[i] = orig;
            const double num = (hi - lo) / (2 * eps);
            diff2 += (num - g.data[i]) * (num - g.data[i]);
            a2 += g.data[i] * g.data[i];
            n2 += num * num;
        }
        const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-6});
        const double rel = std::sqrt(diff2) / denom;
        ++res.tensors;
        if (rel >= res.worst_rel_error) {
            res.worst_rel_error = rel;
            res.worst_tensor = probe_tensors[k].first;
        }
    }
    return res;
}

} // namespace sgnalign::oracle
