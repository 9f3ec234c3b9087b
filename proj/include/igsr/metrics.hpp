#pragma once

// Evaluation metrics: NMSE, accuracy-within-tolerance, term recall over
// skeletonized term sets, Student-t confidence intervals and the candidate
// diversity index.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "igsr/common.hpp"
#include "igsr/expr.hpp"

namespace igsr {

// NMSE = sum (y - yhat)^2 / sum (y - ybar)^2 with ybar taken from the
// evaluation split, so the constant mean predictor scores exactly 1.
inline double nmse(std::span<const double> y, std::span<const double> y_hat) {
    if (y.size() != y_hat.size()) throw Error("nmse length mismatch");
    if (y.size() < 2) throw Error("nmse needs at least 2 samples");
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        num += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
        den += (y[i] - mean) * (y[i] - mean);
    }
    if (den == 0.0) throw Error("nmse undefined for a constant target");
    return num / den;
}

// Fraction of runs achieving an NMSE strictly below the tolerance.
inline double acc_at_tol(std::span<const double> nmse_values, double tol = 0.1) {
    if (nmse_values.empty()) throw Error("acc_at_tol needs at least one run");
    std::size_t hits = 0;
    for (double v : nmse_values)
        if (v < tol) ++hits;
    return static_cast<double>(hits) / static_cast<double>(nmse_values.size());
}

// ---------------------------------------------------------------------------
// Term recall: |S(gt) intersect S(pred)| / |S(gt)| where S holds skeletonized
// additive terms compared by canonical text.

inline std::set<std::string> skeleton_set(const std::vector<Term>& terms) {
    std::set<std::string> out;
    for (const auto& t : terms) out.insert(print_expr(skeletonize(t.ast)));
    return out;
}

inline double term_recall(const std::vector<Term>& gt_terms, const std::vector<Term>& pred_terms) {
    if (gt_terms.empty()) throw Error("term recall needs a non-empty ground truth");
    std::set<std::string> gt = skeleton_set(gt_terms);
    std::set<std::string> pred = skeleton_set(pred_terms);
    std::size_t hits = 0;
    for (const auto& s : gt)
        if (pred.count(s)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(gt.size());
}

// ---------------------------------------------------------------------------
// Student-t quantile and two-sided 95% confidence intervals,
// mean +- t_{0.975, n-1} s / sqrt(n) with unbiased s.

namespace detail {

inline double log_gamma(double x) { return std::lgamma(x); }

// Regularized incomplete beta I_x(a, b) by continued fraction (Lentz).
inline double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

inline double reg_inc_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_beta = log_gamma(a + b) - log_gamma(a) - log_gamma(b);
    const double front = std::exp(ln_beta + a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

inline double student_t_cdf(double t, double nu) {
    const double x = nu / (nu + t * t);
    const double p = 0.5 * reg_inc_beta(nu / 2.0, 0.5, x);
    return t >= 0.0 ? 1.0 - p : p;
}

} // namespace detail

// Inverse CDF for p in (0.5, 1), by bisection on the monotone CDF.
inline double student_t_quantile(double p, double dof) {
    if (dof < 1.0) throw Error("student_t_quantile requires dof >= 1");
    if (p <= 0.5 || p >= 1.0) throw Error("student_t_quantile expects p in (0.5, 1)");
    double lo = 0.0, hi = 2.0;
    while (detail::student_t_cdf(hi, dof) < p) hi *= 2.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (detail::student_t_cdf(mid, dof) < p) lo = mid;
        else hi = mid;
        if (hi - lo < 1e-12 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

struct MetricSummary {
    std::vector<double> values;
    double mean = 0.0;
    double half_width = 0.0;  // 95% CI half-width
    std::size_t n = 0;
};

inline MetricSummary confidence_interval(std::span<const double> samples) {
    if (samples.size() < 2) throw Error("confidence interval needs n >= 2");
    MetricSummary s;
    s.values.assign(samples.begin(), samples.end());
    s.n = samples.size();
    for (double v : samples) s.mean += v;
    s.mean /= static_cast<double>(s.n);
    double ss = 0.0;
    for (double v : samples) ss += (v - s.mean) * (v - s.mean);
    const double sd = std::sqrt(ss / static_cast<double>(s.n - 1));
    const double t = student_t_quantile(0.975, static_cast<double>(s.n - 1));
    s.half_width = t * sd / std::sqrt(static_cast<double>(s.n));
    return s;
}

// ---------------------------------------------------------------------------
// Diversity of a candidate pool: D = 1 - mean pairwise Jaccard similarity of
// the terms' symbol bags over the unique terms, plus the unique-string ratio.
// D is undefined (absent) below two unique terms.

struct DiversityResult {
    std::optional<double> diversity;
    double distinct_ratio = 0.0;
};

inline DiversityResult diversity_index(const std::vector<Term>& terms) {
    DiversityResult r;
    if (terms.empty()) return r;
    std::vector<const Term*> unique;
    std::set<std::string> seen;
    for (const auto& t : terms)
        if (seen.insert(t.source).second) unique.push_back(&t);
    r.distinct_ratio = static_cast<double>(unique.size()) / static_cast<double>(terms.size());
    if (unique.size() < 2) return r;

    std::vector<std::set<std::string>> bags;
    bags.reserve(unique.size());
    for (const Term* t : unique) bags.push_back(symbol_bag(t->ast));
    double sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < bags.size(); ++i)
        for (std::size_t j = i + 1; j < bags.size(); ++j) {
            std::size_t inter = 0;
            for (const auto& s : bags[i]) inter += bags[j].count(s);
            const std::size_t uni = bags[i].size() + bags[j].size() - inter;
            sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
            ++pairs;
        }
    r.diversity = 1.0 - sum / static_cast<double>(pairs);
    return r;
}

} // namespace igsr
