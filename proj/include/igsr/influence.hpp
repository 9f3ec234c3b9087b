#pragma once

// Per-term influence scores Delta_{k,m}: the change in validation MSE when
// term k is removed. Three variants:
//   NoRefit        - delete w_k with all other weights held fixed; computed
//                    through the exact expansion
//                      Delta = (2 w/n) phi^T r + (w^2/n) ||phi||^2,
//                    which can be slightly negative on validation data.
//   RefitFull      - refit on train with column k removed, then re-score.
//   RefitEfficient - leave-one-out refit via the partitioned inverse of
//                    A = X^T X (+ lambda I): with B = A^{-1}, alpha_k = B_kk,
//                    beta_{-k} = B_{-k,k},
//                      W^(-k)_{-k} = W_{-k} - (beta_{-k}/alpha_k) W_k.
// All variants work columnwise for multi-output targets.

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "igsr/common.hpp"
#include "igsr/linfit.hpp"

namespace igsr {

enum class InfluenceVariant { NoRefit, RefitFull, RefitEfficient };

inline const char* influence_variant_name(InfluenceVariant v) {
    switch (v) {
    case InfluenceVariant::NoRefit: return "no_refit";
    case InfluenceVariant::RefitFull: return "refit_full";
    case InfluenceVariant::RefitEfficient: return "refit_efficient";
    }
    return "?";
}

struct InfluenceReport {
    Eigen::MatrixXd delta;          // p terms x m outputs
    InfluenceVariant variant = InfluenceVariant::NoRefit;
    std::vector<double> mse_full;   // per output, on the scored split
    int fallback_terms = 0;         // RefitEfficient columns that fell back to a full refit
};

namespace detail {

inline Eigen::MatrixXd drop_column(const Eigen::MatrixXd& m, Eigen::Index k) {
    Eigen::MatrixXd out(m.rows(), m.cols() - 1);
    if (k > 0) out.leftCols(k) = m.leftCols(k);
    if (k + 1 < m.cols()) out.rightCols(m.cols() - 1 - k) = m.rightCols(m.cols() - 1 - k);
    return out;
}

inline Eigen::MatrixXd drop_row(const Eigen::MatrixXd& m, Eigen::Index k) {
    Eigen::MatrixXd out(m.rows() - 1, m.cols());
    if (k > 0) out.topRows(k) = m.topRows(k);
    if (k + 1 < m.rows()) out.bottomRows(m.rows() - 1 - k) = m.bottomRows(m.rows() - 1 - k);
    return out;
}

inline void refit_full_column(Eigen::MatrixXd& delta, const std::vector<double>& mse_full,
                              Eigen::Index k, const Eigen::MatrixXd& phi_train,
                              const Eigen::MatrixXd& y_train, const Eigen::MatrixXd& phi_val,
                              const Eigen::MatrixXd& y_val, double lambda) {
    if (phi_train.cols() == 1) {
        // Removing the only term leaves the zero model.
        MseResult zero = mse_of(Eigen::MatrixXd::Zero(y_val.rows(), y_val.cols()), y_val);
        for (Eigen::Index j = 0; j < y_val.cols(); ++j)
            delta(k, j) = zero.per_output[static_cast<std::size_t>(j)] -
                          mse_full[static_cast<std::size_t>(j)];
        return;
    }
    LinearFit refit = fit_linear(drop_column(phi_train, k), y_train, lambda);
    MseResult m = evaluate_mse(refit, drop_column(phi_val, k), y_val);
    for (Eigen::Index j = 0; j < y_val.cols(); ++j)
        delta(k, j) =
            m.per_output[static_cast<std::size_t>(j)] - mse_full[static_cast<std::size_t>(j)];
}

} // namespace detail

// Score every term of `fit` on (phi_val, y_val). The refit variants also
// need the training data the fit came from; term order must match.
inline InfluenceReport compute_influence(const LinearFit& fit, const Eigen::MatrixXd& phi_val,
                                         const Eigen::MatrixXd& y_val,
                                         InfluenceVariant variant = InfluenceVariant::NoRefit,
                                         const Eigen::MatrixXd* phi_train = nullptr,
                                         const Eigen::MatrixXd* y_train = nullptr,
                                         double lambda = 0.0) {
    const Eigen::Index p = fit.weights.rows();
    const Eigen::Index m = fit.weights.cols();
    if (phi_val.cols() != p) throw Error("validation design matrix does not match fit term order");
    if (y_val.cols() != m || y_val.rows() != phi_val.rows()) throw Error("target shape mismatch");
    const double n_val = static_cast<double>(phi_val.rows());

    InfluenceReport report;
    report.variant = variant;
    report.delta.resize(p, m);
    report.mse_full = mse_of(phi_val * fit.weights, y_val).per_output;

    if (variant == InfluenceVariant::NoRefit) {
        Eigen::MatrixXd residual = y_val - phi_val * fit.weights;        // n x m
        Eigen::MatrixXd cross = phi_val.transpose() * residual;         // p x m
        Eigen::VectorXd col_sq = phi_val.colwise().squaredNorm();       // p
        for (Eigen::Index k = 0; k < p; ++k)
            for (Eigen::Index j = 0; j < m; ++j) {
                const double w = fit.weights(k, j);
                report.delta(k, j) = (2.0 * w / n_val) * cross(k, j) + (w * w / n_val) * col_sq(k);
            }
        return report;
    }

    if (!phi_train || !y_train)
        throw Error("refit influence variants require the training split");
    if (phi_train->cols() != p) throw Error("training design matrix does not match fit term order");

    if (variant == InfluenceVariant::RefitFull) {
        for (Eigen::Index k = 0; k < p; ++k)
            detail::refit_full_column(report.delta, report.mse_full, k, *phi_train, *y_train,
                                      phi_val, y_val, lambda);
        return report;
    }

    // RefitEfficient. B is computed once through a symmetric factorization;
    // a non-positive-definite A or a tiny alpha_k falls back to the full
    // refit for that term (counted in the report).
    Eigen::MatrixXd a = phi_train->transpose() * *phi_train;
    if (lambda > 0.0) a += lambda * Eigen::MatrixXd::Identity(p, p);
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) {
        for (Eigen::Index k = 0; k < p; ++k)
            detail::refit_full_column(report.delta, report.mse_full, k, *phi_train, *y_train,
                                      phi_val, y_val, lambda);
        report.fallback_terms = static_cast<int>(p);
        return report;
    }
    Eigen::MatrixXd b = llt.solve(Eigen::MatrixXd::Identity(p, p));
    const double alpha_floor = 1e-12 * b.trace() / static_cast<double>(p);

    for (Eigen::Index k = 0; k < p; ++k) {
        const double alpha = b(k, k);
        if (!(alpha > 0.0) || alpha < alpha_floor) {
            detail::refit_full_column(report.delta, report.mse_full, k, *phi_train, *y_train,
                                      phi_val, y_val, lambda);
            ++report.fallback_terms;
            continue;
        }
        if (p == 1) {
            detail::refit_full_column(report.delta, report.mse_full, k, *phi_train, *y_train,
                                      phi_val, y_val, lambda);
            continue;
        }
        Eigen::VectorXd beta = detail::drop_row(b.col(k), k);
        Eigen::MatrixXd w_minus = detail::drop_row(fit.weights, k);      // (p-1) x m
        w_minus.noalias() -= (beta / alpha) * fit.weights.row(k);
        Eigen::MatrixXd pred = detail::drop_column(phi_val, k) * w_minus;
        for (Eigen::Index j = 0; j < m; ++j) {
            const double mse = (y_val.col(j) - pred.col(j)).squaredNorm() / n_val;
            report.delta(k, j) = mse - report.mse_full[static_cast<std::size_t>(j)];
        }
    }
    return report;
}

// Aggregate across outputs: a term's score is its maximum influence over all
// targets, so a term critical to any one output survives pruning.
inline std::vector<double> aggregate_influence(const InfluenceReport& r) {
    std::vector<double> out(static_cast<std::size_t>(r.delta.rows()));
    for (Eigen::Index k = 0; k < r.delta.rows(); ++k)
        out[static_cast<std::size_t>(k)] = r.delta.row(k).maxCoeff();
    return out;
}

} // namespace igsr
