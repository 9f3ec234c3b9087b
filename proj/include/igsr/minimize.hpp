#pragma once

// Small dense quasi-Newton minimizer with central finite-difference
// gradients, Armijo backtracking and optional box bounds. Built for the
// handful-of-parameters objectives of term-local constant optimization;
// accepted iterates are strictly non-increasing in the objective.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace igsr {

struct MinimizeOptions {
    int max_iterations = 200;
    double objective_tol = 1e-12;  // stop when |J_prev - J| <= tol
    double gradient_tol = 1e-8;    // stop when ||g||_inf <= tol
    std::optional<Eigen::VectorXd> lower;
    std::optional<Eigen::VectorXd> upper;
};

struct MinimizeResult {
    Eigen::VectorXd x;
    double value = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
    std::string status;
    std::vector<double> trace;  // objective at accepted iterates
};

namespace detail {

inline Eigen::VectorXd clamp_to_bounds(Eigen::VectorXd x, const MinimizeOptions& opt) {
    if (opt.lower)
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = std::max(x(i), (*opt.lower)(i));
    if (opt.upper)
        for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = std::min(x(i), (*opt.upper)(i));
    return x;
}

// Central differences with step h_i = max(1e-6, 1e-6 |x_i|); probes falling
// outside the bounds degrade to one-sided differences.
inline Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                   const Eigen::VectorXd& x, double fx,
                                   const MinimizeOptions& opt, int& evals) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = std::max(1e-6, 1e-6 * std::fabs(x(i)));
        Eigen::VectorXd xp = x, xm = x;
        xp(i) += h;
        xm(i) -= h;
        bool p_ok = !(opt.upper && xp(i) > (*opt.upper)(i));
        bool m_ok = !(opt.lower && xm(i) < (*opt.lower)(i));
        double fp = p_ok ? f(xp) : std::numeric_limits<double>::infinity();
        double fm = m_ok ? f(xm) : std::numeric_limits<double>::infinity();
        evals += (p_ok ? 1 : 0) + (m_ok ? 1 : 0);
        if (std::isfinite(fp) && std::isfinite(fm)) g(i) = (fp - fm) / (2.0 * h);
        else if (std::isfinite(fp)) g(i) = (fp - fx) / h;
        else if (std::isfinite(fm)) g(i) = (fx - fm) / h;
        else g(i) = 0.0;
    }
    return g;
}

} // namespace detail

inline MinimizeResult minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                               Eigen::VectorXd x0, const MinimizeOptions& opt = {}) {
    MinimizeResult res;
    const Eigen::Index n = x0.size();
    Eigen::VectorXd x = detail::clamp_to_bounds(std::move(x0), opt);
    double fx = f(x);
    res.evaluations = 1;
    res.trace.push_back(fx);
    if (!std::isfinite(fx)) {
        res.x = x;
        res.value = fx;
        res.status = "objective not finite at the initial point";
        return res;
    }

    Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd g = detail::fd_gradient(f, x, fx, opt, res.evaluations);

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        res.iterations = iter + 1;
        if (g.lpNorm<Eigen::Infinity>() <= opt.gradient_tol) {
            res.converged = true;
            res.status = "gradient tolerance reached";
            break;
        }

        Eigen::VectorXd dir = -(h_inv * g);
        if (dir.dot(g) >= 0.0) {  // not a descent direction; reset curvature
            h_inv.setIdentity();
            dir = -g;
        }

        // Backtracking Armijo line search on the bound-clamped trial point.
        double step = 1.0;
        const double slope = g.dot(dir);
        bool accepted = false;
        Eigen::VectorXd x_new;
        double f_new = fx;
        for (int ls = 0; ls < 40; ++ls) {
            x_new = detail::clamp_to_bounds(x + step * dir, opt);
            f_new = f(x_new);
            ++res.evaluations;
            if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted || f_new > fx) {
            res.converged = true;
            res.status = "line search made no progress";
            break;
        }

        Eigen::VectorXd g_new = detail::fd_gradient(f, x_new, f_new, opt, res.evaluations);
        Eigen::VectorXd s = x_new - x;
        Eigen::VectorXd yv = g_new - g;
        const double sy = s.dot(yv);
        if (sy > 1e-14 * s.norm() * yv.norm() && sy > 0.0) {
            // BFGS inverse update.
            const double rho = 1.0 / sy;
            Eigen::MatrixXd i_mat = Eigen::MatrixXd::Identity(n, n);
            h_inv = (i_mat - rho * s * yv.transpose()) * h_inv *
                        (i_mat - rho * yv * s.transpose()) +
                    rho * s * s.transpose();
        } else {
            h_inv.setIdentity();
        }

        const double improvement = fx - f_new;
        x = std::move(x_new);
        fx = f_new;
        g = std::move(g_new);
        res.trace.push_back(fx);
        if (improvement <= opt.objective_tol) {
            res.converged = true;
            res.status = "objective tolerance reached";
            break;
        }
    }
    if (res.status.empty()) res.status = "iteration limit reached";
    res.x = x;
    res.value = fx;
    return res;
}

} // namespace igsr
