#pragma once

// Pruning stress protocols: one trial = generate data, split, fit the full
// candidate pool on train, score influence on validation, aggregate across
// outputs via max, keep top-K, refit the kept terms and measure test MSE.

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "igsr/dataset.hpp"
#include "igsr/influence.hpp"
#include "igsr/linfit.hpp"
#include "igsr/prune.hpp"
#include "igsr/simgen.hpp"

namespace igsr {

struct CollinearityTrial {
    std::uint64_t seed = 0;
    double rho = 0.0;
    int groups_covered = 0;    // signal groups with at least one member kept (of 6)
    int duplicate_groups = 0;  // groups where both the original and its clone survived
    double test_mse = 0.0;
    std::vector<std::string> kept;
};

struct EpistasisTrial {
    std::uint64_t seed = 0;
    int experiment = 1;
    bool interactions_top_ranked = false;  // ranks 1..k by aggregate influence
    double test_mse = 0.0;
    double max_marginal_abs_delta = 0.0;
    std::vector<std::string> kept;
};

namespace detail {

struct PoolScores {
    std::vector<Term> terms;
    std::vector<double> delta_agg;
    LinearFit fit;
    DesignSet set;
};

inline PoolScores score_pool(const std::vector<std::string>& pool, const Dataset& d,
                             InfluenceVariant variant) {
    PoolScores out;
    for (const auto& src : pool) out.terms.push_back(Term::parse(src));
    out.set = build_design_set(out.terms, d);
    if (out.set.terms.size() != out.terms.size())
        throw Error("stress pool term was rejected during evaluation");
    out.fit = fit_linear(out.set.phi(Split::Train), d.targets_on(Split::Train));
    const Eigen::MatrixXd& phi_train = out.set.phi(Split::Train);
    const Eigen::MatrixXd& y_train = d.targets_on(Split::Train);
    InfluenceReport rep =
        compute_influence(out.fit, out.set.phi(Split::Validation),
                          d.targets_on(Split::Validation), variant, &phi_train, &y_train);
    out.delta_agg = aggregate_influence(rep);
    return out;
}

inline double kept_test_mse(const PoolScores& scores, const PruneDecision& decision,
                            const Dataset& d) {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < scores.set.terms.size(); ++i)
        if (std::find(decision.keep.begin(), decision.keep.end(), scores.set.terms[i].source) !=
            decision.keep.end())
            idx.push_back(static_cast<Eigen::Index>(i));
    auto select = [&](const Eigen::MatrixXd& m) {
        Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j)
            out.col(static_cast<Eigen::Index>(j)) = m.col(idx[j]);
        return out;
    };
    LinearFit refit = fit_linear(select(scores.set.phi(Split::Train)), d.targets_on(Split::Train));
    return evaluate_mse(refit, select(scores.set.phi(Split::Test)), d.targets_on(Split::Test))
        .overall;
}

} // namespace detail

inline CollinearityTrial run_collinearity_trial(double rho, std::uint64_t seed,
                                                std::size_t n_patients = 200,
                                                InfluenceVariant variant =
                                                    InfluenceVariant::NoRefit,
                                                std::size_t keep_n = 6) {
    CollinearityData gen = gen_collinearity(rho, n_patients, seed);
    Dataset d = split_dataset(std::move(gen.data), {}, seed);
    detail::PoolScores scores = detail::score_pool(gen.pool, d, variant);
    PruneDecision decision =
        prune_deterministic(gen.pool, scores.delta_agg, PruneMode::TopK, keep_n);

    CollinearityTrial trial;
    trial.seed = seed;
    trial.rho = rho;
    trial.kept = decision.keep;
    std::set<int> covered;
    std::unordered_map<int, int> members_kept;
    for (const auto& term : decision.keep) {
        auto it = gen.group_of.find(term);
        if (it != gen.group_of.end()) {
            covered.insert(it->second);
            ++members_kept[it->second];
        }
    }
    trial.groups_covered = static_cast<int>(covered.size());
    for (const auto& [group, count] : members_kept)
        if (count > 1) ++trial.duplicate_groups;
    trial.test_mse = detail::kept_test_mse(scores, decision, d);
    return trial;
}

inline EpistasisTrial run_epistasis_trial(int experiment, std::uint64_t seed,
                                          std::size_t n_rows = 5000,
                                          InfluenceVariant variant = InfluenceVariant::NoRefit,
                                          double noise_sd = 0.05) {
    EpistasisData gen = gen_epistasis(experiment, n_rows, seed, noise_sd);
    Dataset d = split_dataset(std::move(gen.data), {}, seed);
    detail::PoolScores scores = detail::score_pool(gen.pool, d, variant);

    EpistasisTrial trial;
    trial.seed = seed;
    trial.experiment = experiment;

    // Rank by aggregate influence, ties toward the earlier pool position.
    std::vector<std::size_t> order(gen.pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores.delta_agg[a] > scores.delta_agg[b];
    });
    std::set<std::string> top;
    for (std::size_t r = 0; r < gen.interactions.size(); ++r) top.insert(gen.pool[order[r]]);
    trial.interactions_top_ranked = true;
    for (const auto& gt : gen.interactions)
        if (!top.count(gt)) trial.interactions_top_ranked = false;

    const std::vector<std::string> marginals = {"x1", "x2", "x3", "x4", "x1 + x2"};
    for (std::size_t i = 0; i < gen.pool.size(); ++i)
        if (std::find(marginals.begin(), marginals.end(), gen.pool[i]) != marginals.end())
            trial.max_marginal_abs_delta =
                std::max(trial.max_marginal_abs_delta, std::fabs(scores.delta_agg[i]));

    PruneDecision decision =
        prune_deterministic(gen.pool, scores.delta_agg, PruneMode::TopK, gen.keep_n);
    trial.kept = decision.keep;
    trial.test_mse = detail::kept_test_mse(scores, decision, d);
    return trial;
}

} // namespace igsr
