#include <doctest.h>

#include <random>

#include "igsr/linfit.hpp"

using namespace igsr;

TEST_CASE("exact single-column fit") {
    Eigen::MatrixXd phi(3, 1);
    phi << 1, 2, 3;
    Eigen::MatrixXd y(3, 1);
    y << 2, 4, 6;
    LinearFit fit = fit_linear(phi, y);
    CHECK(fit.weights(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(fit.train_mse[0] < 1e-24);
    CHECK(fit.effective_rank == 1);
    CHECK(!fit.min_norm);
}

TEST_CASE("duplicated column takes the minimum-norm solution") {
    Eigen::MatrixXd phi(4, 2);
    phi << 1, 1, 2, 2, 3, 3, 4, 4;
    Eigen::MatrixXd y(4, 1);
    y << 2, 4, 6, 8;
    LinearFit fit = fit_linear(phi, y);
    CHECK(fit.min_norm);
    CHECK(fit.effective_rank == 1);
    CHECK(fit.weights(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fit.weights(1, 0) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("consistent 3x2 system solves exactly") {
    Eigen::MatrixXd phi(3, 2);
    phi << 1, 0, 0, 1, 1, 1;
    Eigen::MatrixXd y(3, 1);
    y << 1, 2, 3;
    LinearFit fit = fit_linear(phi, y);
    CHECK(fit.weights(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.weights(1, 0) == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("evaluate_mse per output and overall") {
    Eigen::MatrixXd pred(2, 1), y(2, 1);
    pred << 1, 1;
    y << 0, 2;
    MseResult r = mse_of(pred, y);
    CHECK(r.per_output[0] == doctest::Approx(1.0));
    CHECK(r.overall == doctest::Approx(1.0));

    Eigen::MatrixXd perfect = y;
    MseResult p = mse_of(perfect, y);
    CHECK(p.overall == 0.0);

    // Multi-output overall is the arithmetic mean across outputs.
    const double a = 0.010905755578988435, b = 6.33977252002678e-27;
    Eigen::MatrixXd y2 = Eigen::MatrixXd::Zero(2, 2);
    Eigen::MatrixXd pr(2, 2);
    const double da = std::sqrt(a), db = std::sqrt(b);
    pr << da, db, da, db;
    MseResult m = mse_of(pr, y2);
    CHECK(m.overall == doctest::Approx((a + b) / 2.0).epsilon(1e-12));
    CHECK(m.overall == doctest::Approx(0.005453).epsilon(1e-3));

    Eigen::MatrixXd wrong(3, 1);
    wrong << 1, 2, 3;
    CHECK_THROWS_AS(mse_of(wrong, y), Error);
}

TEST_CASE("empty design matrix and bad lambda are rejected") {
    Eigen::MatrixXd phi(0, 0), y(0, 1);
    CHECK_THROWS_AS(fit_linear(phi, y), Error);
    Eigen::MatrixXd p1(2, 1), y1(2, 1);
    p1 << 1, 2;
    y1 << 1, 2;
    CHECK_THROWS_AS(fit_linear(p1, y1, -0.1), Error);
}

TEST_CASE("property: residual orthogonality at lambda 0 and full rank") {
    std::mt19937 gen(3);
    std::normal_distribution<double> n01;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd phi(40, 5);
        Eigen::MatrixXd y(40, 1);
        for (int i = 0; i < 40; ++i) {
            for (int j = 0; j < 5; ++j) phi(i, j) = n01(gen);
            y(i, 0) = n01(gen);
        }
        LinearFit fit = fit_linear(phi, y);
        Eigen::VectorXd r = y.col(0) - phi * fit.weights.col(0);
        for (int k = 0; k < 5; ++k)
            CHECK(std::fabs(phi.col(k).dot(r)) <= 1e-8 * phi.col(k).norm() * (r.norm() + 1e-30));
    }
}

TEST_CASE("property: train MSE is non-decreasing in ridge lambda") {
    std::mt19937 gen(5);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd phi(30, 4), y(30, 2);
    for (int i = 0; i < 30; ++i) {
        for (int j = 0; j < 4; ++j) phi(i, j) = n01(gen);
        y(i, 0) = n01(gen);
        y(i, 1) = n01(gen);
    }
    double prev = -1.0;
    for (double lambda : {0.0, 0.01, 0.1, 1.0, 10.0, 100.0}) {
        LinearFit fit = fit_linear(phi, y, lambda);
        MseResult m = evaluate_mse(fit, phi, y);
        CHECK(m.overall >= prev - 1e-12);
        prev = m.overall;
    }
}

TEST_CASE("property: multi-output fit equals independent single-output fits") {
    std::mt19937 gen(8);
    std::normal_distribution<double> n01;
    Eigen::MatrixXd phi(25, 3), y(25, 3);
    for (int i = 0; i < 25; ++i) {
        for (int j = 0; j < 3; ++j) phi(i, j) = n01(gen);
        for (int j = 0; j < 3; ++j) y(i, j) = n01(gen);
    }
    LinearFit joint = fit_linear(phi, y);
    for (int j = 0; j < 3; ++j) {
        LinearFit single = fit_linear(phi, y.col(j));
        for (int k = 0; k < 3; ++k)
            CHECK(joint.weights(k, j) ==
                  doctest::Approx(single.weights(k, 0)).epsilon(1e-12));
    }
}
