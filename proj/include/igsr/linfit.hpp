#pragma once

// Multi-output linear least squares / ridge over a design matrix. Solved via
// SVD so the lambda = 0 path returns the minimum-norm solution under rank
// deficiency; Phi^T Phi is never formed or inverted here.

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "igsr/common.hpp"

namespace igsr {

struct LinearFit {
    Eigen::MatrixXd weights;        // p terms x m outputs
    double lambda = 0.0;
    Eigen::Index effective_rank = 0;
    bool min_norm = false;          // rank-deficient design, min-norm solution taken
    std::vector<double> train_mse;  // per output, on the fitted split
};

struct MseResult {
    std::vector<double> per_output;
    double overall = 0.0;  // arithmetic mean across outputs
};

inline MseResult mse_of(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& y) {
    if (predictions.rows() != y.rows() || predictions.cols() != y.cols())
        throw Error("prediction/target shape mismatch");
    MseResult r;
    const auto n = static_cast<double>(y.rows());
    for (Eigen::Index j = 0; j < y.cols(); ++j)
        r.per_output.push_back((y.col(j) - predictions.col(j)).squaredNorm() / n);
    double sum = 0.0;
    for (double v : r.per_output) sum += v;
    r.overall = r.per_output.empty() ? 0.0 : sum / static_cast<double>(r.per_output.size());
    return r;
}

// Least squares min over W of ||Y - Phi W||_F^2 (+ lambda ||W||_F^2 when
// lambda > 0, implemented by augmenting Phi with sqrt(lambda) I rows).
// Singular values below max(n,p) * eps * sigma_max are treated as zero.
inline LinearFit fit_linear(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& y,
                            double lambda = 0.0) {
    if (phi.rows() == 0 || phi.cols() == 0) throw Error("empty design matrix");
    if (phi.rows() != y.rows()) throw Error("design/target row mismatch");
    if (lambda < 0.0) throw Error("ridge lambda must be non-negative");

    const Eigen::Index n = phi.rows();
    const Eigen::Index p = phi.cols();

    Eigen::MatrixXd a = phi;
    Eigen::MatrixXd b = y;
    if (lambda > 0.0) {
        a.conservativeResize(n + p, Eigen::NoChange);
        a.bottomRows(p) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(p, p);
        b.conservativeResize(n + p, Eigen::NoChange);
        b.bottomRows(p).setZero();
    }

    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cutoff = static_cast<double>(std::max(a.rows(), a.cols())) *
                          std::numeric_limits<double>::epsilon() *
                          (sv.size() > 0 ? sv(0) : 0.0);

    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) ++rank;

    Eigen::MatrixXd ut_b = svd.matrixU().leftCols(rank).transpose() * b;
    for (Eigen::Index i = 0; i < rank; ++i) ut_b.row(i) /= sv(i);
    LinearFit fit;
    fit.weights = svd.matrixV().leftCols(rank) * ut_b;
    fit.lambda = lambda;
    fit.effective_rank = rank;
    fit.min_norm = rank < p;
    fit.train_mse = mse_of(phi * fit.weights, y).per_output;
    return fit;
}

inline Eigen::MatrixXd predict(const LinearFit& fit, const Eigen::MatrixXd& phi) {
    if (phi.cols() != fit.weights.rows())
        throw Error("design matrix has " + std::to_string(phi.cols()) +
                    " columns, fit expects " + std::to_string(fit.weights.rows()));
    return phi * fit.weights;
}

inline MseResult evaluate_mse(const LinearFit& fit, const Eigen::MatrixXd& phi,
                              const Eigen::MatrixXd& y) {
    return mse_of(predict(fit, phi), y);
}

} // namespace igsr
