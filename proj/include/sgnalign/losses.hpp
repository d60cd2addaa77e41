#pragma once

// Alignment losses on per-frame probabilities and their gradients.
// All sums run in double regardless of the input scalar type.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "error.hpp"

namespace sgnalign {

inline constexpr double kProbClamp = 1e-7;

struct LossBreakdown {
    double l_align = 0.0;
    double l_neg = 0.0;
    double l_rel = 0.0;
    double l_tot = 0.0;
};

namespace detail {

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }
inline bool inside_clamp(double p) { return p > kProbClamp && p < 1.0 - kProbClamp; }

inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw ShapeError(std::string(what) + ": length mismatch");
}

} // namespace detail

template <typename Real>
double align_loss(std::span<const Real> pr, std::span<const Real> gt) {
    detail::require_same_length(pr.size(), gt.size(), "align_loss");
    if (pr.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t t = 0; t < pr.size(); ++t) {
        const double p = detail::clamp_prob(pr[t]), g = gt[t];
        s += g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
    }
    return -s / static_cast<double>(pr.size());
}

template <typename Real>
double neg_loss(std::span<const Real> neg) {
    if (neg.empty()) return 0.0;
    double s = 0.0;
    for (Real v : neg) s += std::log(1.0 - detail::clamp_prob(v));
    return -s / static_cast<double>(neg.size());
}

template <typename Real>
double rel_loss(std::span<const Real> pr, std::span<const Real> neg, std::span<const Real> gt) {
    detail::require_same_length(pr.size(), gt.size(), "rel_loss");
    detail::require_same_length(pr.size(), neg.size(), "rel_loss");
    double gsum = 0.0;
    for (Real g : gt) gsum += g;
    if (gsum <= 0.0) return 0.0;
    double mx = -INFINITY;
    for (std::size_t i = 0; i < pr.size(); ++i) mx = std::max({mx, double(pr[i]), double(neg[i])});
    double z = 0.0;
    for (std::size_t i = 0; i < pr.size(); ++i) z += std::exp(pr[i] - mx) + std::exp(neg[i] - mx);
    const double log_z = mx + std::log(z);
    double s = 0.0;
    for (std::size_t t = 0; t < pr.size(); ++t) s += gt[t] * (pr[t] - log_z);
    return -s / gsum;
}

/// Gradients of l_tot with respect to both probability vectors.
template <typename Real>
struct LossGradient {
    std::vector<Real> d_pr;
    std::vector<Real> d_neg;  // empty when there is no negative
};

template <typename Real>
LossBreakdown total_loss(std::span<const Real> pr, std::optional<std::span<const Real>> neg, std::span<const Real> gt,
                         double lambda_neg, double lambda_rel, LossGradient<Real>* grad = nullptr) {
    LossBreakdown b;
    b.l_align = align_loss(pr, gt);
    if (neg) {
        b.l_neg = neg_loss(*neg);
        b.l_rel = rel_loss(pr, *neg, gt);
    }
    b.l_tot = b.l_align + lambda_neg * b.l_neg + lambda_rel * b.l_rel;
    if (!grad) return b;

    const std::size_t T = pr.size();
    const double inv_t = T ? 1.0 / static_cast<double>(T) : 0.0;
    grad->d_pr.assign(T, Real(0));
    for (std::size_t t = 0; t < T; ++t) {
        const double p = pr[t], g = gt[t];
        if (detail::inside_clamp(p)) grad->d_pr[t] = static_cast<Real>(-inv_t * (g / p - (1.0 - g) / (1.0 - p)));
    }
    grad->d_neg.clear();
    if (!neg) return b;

    const auto& n = *neg;
    const double inv_n = n.empty() ? 0.0 : 1.0 / static_cast<double>(n.size());
    std::vector<double> dn(n.size(), 0.0);
    for (std::size_t t = 0; t < n.size(); ++t)
        if (detail::inside_clamp(n[t])) dn[t] = lambda_neg * inv_n / (1.0 - n[t]);

    double gsum = 0.0;
    for (Real g : gt) gsum += g;
    if (gsum > 0.0) {
        double mx = -INFINITY;
        for (std::size_t i = 0; i < T; ++i) mx = std::max({mx, double(pr[i]), double(n[i])});
        double z = 0.0;
        for (std::size_t i = 0; i < T; ++i) z += std::exp(pr[i] - mx) + std::exp(n[i] - mx);
        for (std::size_t i = 0; i < T; ++i) {
            const double sp = std::exp(pr[i] - mx) / z, sn = std::exp(n[i] - mx) / z;
            grad->d_pr[i] += static_cast<Real>(lambda_rel * (sp - gt[i] / gsum));
            dn[i] += lambda_rel * sn;
        }
    }
    grad->d_neg.assign(dn.begin(), dn.end());
    return b;
}

} // namespace sgnalign
