#pragma once

// The propose-and-prune cycle: one refinement step from a current equation
// state to a new one. Phases run in fixed order: propose, aggregate,
// (term-local constant optimization), evaluate, fit, influence, prune, final
// refit on the kept terms, history append.

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "igsr/common.hpp"
#include "igsr/dataset.hpp"
#include "igsr/expr.hpp"
#include "igsr/influence.hpp"
#include "igsr/linfit.hpp"
#include "igsr/minimize.hpp"
#include "igsr/propose.hpp"
#include "igsr/prune.hpp"

namespace igsr {

// ---------------------------------------------------------------------------
// History buffer. Each successful cycle appends one entry; entries render to
// the exact line format the prompts consume.

struct HistoryEntry {
    std::string round_id;
    std::vector<std::string> keep;
    std::vector<std::string> drop;
    double mse_before_overall = 0.0;
    std::vector<double> mse_before_per_output;
    double mse_after_overall = 0.0;
    std::vector<double> mse_after_per_output;
};

namespace detail {
inline std::string quoted_list(const std::vector<std::string>& items) {
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ", ";
        out += "'" + items[i] + "'";
    }
    out += "]";
    return out;
}

inline std::string plain_list(const std::vector<double>& values) {
    std::string out = "[";
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i) out += ", ";
        out += format_shortest(values[i]);
    }
    out += "]";
    return out;
}
} // namespace detail

// Overall MSE values use 6 significant digits; per-output lists use the full
// round-trip representation.
inline std::string format_history_entry(const HistoryEntry& h) {
    return "Round " + h.round_id + ":  KEEP=" + detail::quoted_list(h.keep) + "  |  DROP=" +
           detail::quoted_list(h.drop) + "  |  MSE before pruning=" +
           format_g6(h.mse_before_overall) +
           " (per-output=" + detail::plain_list(h.mse_before_per_output) + ") |  " +
           "MSE after pruning=" + format_g6(h.mse_after_overall) +
           " (per-output=" + detail::plain_list(h.mse_after_per_output) + ")";
}

// One line per output, weights at 4 significant digits with the sign folded
// into the separator: "dv_dt = 0.009194 cancer_volume - 1.214 np.log(...)".
inline std::string equation_text(const std::vector<std::string>& target_names,
                                 const std::vector<std::string>& term_sources,
                                 const Eigen::MatrixXd& weights) {
    if (weights.rows() != static_cast<Eigen::Index>(term_sources.size()) ||
        weights.cols() != static_cast<Eigen::Index>(target_names.size()))
        throw Error("equation weight shape mismatch");
    std::string out;
    for (std::size_t j = 0; j < target_names.size(); ++j) {
        if (j) out += '\n';
        out += target_names[j] + " =";
        for (std::size_t i = 0; i < term_sources.size(); ++i) {
            const double w = weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            const bool negative = std::signbit(w) && w != 0.0;
            out += (i == 0) ? (negative ? " - " : " ") : (negative ? " - " : " + ");
            out += format_g(std::fabs(w), 4);
            out += ' ';
            out += term_sources[i];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Term-local constant optimization (IGSR-TLO). All c() markers across the
// candidate set form one parameter vector theta; J(theta) refits the outer
// weights on the training split at every evaluation and scores the result on
// the validation split, so the constants are tuned for generalization.

struct TloOptions {
    int max_iterations = 200;
    double objective_tol = 1e-12;
    double gradient_tol = 1e-8;
    std::optional<double> lower_bound;  // uniform per-marker bounds; default unbounded
    std::optional<double> upper_bound;
};

struct TloResult {
    std::vector<Term> terms;  // markers updated to their optimized values
    std::vector<std::pair<Term, std::string>> dropped;  // non-finite at the initial point
    bool ran = false;         // false when no term carries a marker
    double objective = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
    std::vector<double> trace;
};

inline TloResult tlo_optimize(const std::vector<Term>& candidates, const Dataset& d,
                              double lambda, const TloOptions& opt, Split fit_split,
                              Split val_split) {
    TloResult result;

    // Drop terms that are non-finite at the initial marker values; the rest
    // of the pipeline never sees them.
    std::vector<Term> usable;
    for (const auto& t : candidates) {
        std::string reason;
        for (Split s : {fit_split, val_split}) {
            try {
                auto col = evaluate(t.ast, d.frame(s), d.rows_of(s).size());
                if (!all_finite(col)) {
                    reason = std::string("non-finite at initial marker values on ") +
                             split_name(s);
                    break;
                }
            } catch (const Error& e) {
                reason = e.what();
                break;
            }
        }
        if (reason.empty()) usable.push_back(t);
        else result.dropped.emplace_back(t, reason);
    }

    std::vector<std::size_t> param_counts(usable.size(), 0);
    std::vector<double> theta0;
    for (std::size_t i = 0; i < usable.size(); ++i) {
        std::vector<double> inits;
        collect_param_inits(usable[i].ast, inits);
        param_counts[i] = inits.size();
        theta0.insert(theta0.end(), inits.begin(), inits.end());
    }
    if (usable.empty()) return result;

    const auto n_fit = d.rows_of(fit_split).size();
    const auto n_val = d.rows_of(val_split).size();
    const Eigen::MatrixXd& y_fit = d.targets_on(fit_split);
    const Eigen::MatrixXd& y_val = d.targets_on(val_split);

    // Constant columns (no markers) are evaluated once.
    std::vector<std::vector<double>> fixed_fit(usable.size()), fixed_val(usable.size());
    for (std::size_t i = 0; i < usable.size(); ++i) {
        if (param_counts[i] > 0) continue;
        fixed_fit[i] = evaluate(usable[i].ast, d.frame(fit_split), n_fit);
        fixed_val[i] = evaluate(usable[i].ast, d.frame(val_split), n_val);
    }

    auto objective = [&](const Eigen::VectorXd& theta) -> double {
        Eigen::MatrixXd phi_fit(static_cast<Eigen::Index>(n_fit),
                                static_cast<Eigen::Index>(usable.size()));
        Eigen::MatrixXd phi_val(static_cast<Eigen::Index>(n_val),
                                static_cast<Eigen::Index>(usable.size()));
        std::size_t cursor = 0;
        for (std::size_t i = 0; i < usable.size(); ++i) {
            std::vector<double> col_fit, col_val;
            if (param_counts[i] == 0) {
                col_fit = fixed_fit[i];
                col_val = fixed_val[i];
            } else {
                std::span<const double> slice(theta.data() + cursor, param_counts[i]);
                col_fit = evaluate(usable[i].ast, d.frame(fit_split), n_fit, slice);
                col_val = evaluate(usable[i].ast, d.frame(val_split), n_val, slice);
                cursor += param_counts[i];
                if (!all_finite(col_fit) || !all_finite(col_val))
                    return std::numeric_limits<double>::infinity();
            }
            for (std::size_t r = 0; r < n_fit; ++r)
                phi_fit(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = col_fit[r];
            for (std::size_t r = 0; r < n_val; ++r)
                phi_val(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = col_val[r];
        }
        LinearFit fit = fit_linear(phi_fit, y_fit, lambda);
        return evaluate_mse(fit, phi_val, y_val).overall;
    };

    if (theta0.empty()) {
        // No tunable constants: report the baseline validation MSE.
        result.objective = objective(Eigen::VectorXd{});
        result.terms = std::move(usable);
        return result;
    }
    result.ran = true;

    MinimizeOptions mopt;
    mopt.max_iterations = opt.max_iterations;
    mopt.objective_tol = opt.objective_tol;
    mopt.gradient_tol = opt.gradient_tol;
    const Eigen::Index dim = static_cast<Eigen::Index>(theta0.size());
    if (opt.lower_bound) mopt.lower = Eigen::VectorXd::Constant(dim, *opt.lower_bound);
    if (opt.upper_bound) mopt.upper = Eigen::VectorXd::Constant(dim, *opt.upper_bound);

    Eigen::VectorXd x0 = Eigen::Map<Eigen::VectorXd>(theta0.data(), dim);
    MinimizeResult mres = minimize(objective, x0, mopt);
    result.objective = mres.value;
    result.iterations = mres.iterations;
    result.trace = mres.trace;

    // Write the optimized values back into the term texts.
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < usable.size(); ++i) {
        if (param_counts[i] == 0) {
            result.terms.push_back(usable[i]);
            continue;
        }
        std::span<const double> slice(mres.x.data() + cursor, param_counts[i]);
        cursor += param_counts[i];
        ExprPtr updated = with_param_values(usable[i].ast, slice);
        Term t;
        t.ast = updated;
        t.canonical = print_expr(updated);
        t.source = t.canonical;
        result.terms.push_back(std::move(t));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Cycle driver.

struct EngineConfig {
    std::size_t keep_n_terms = 6;
    bool keep_n_enabled = true;  // disabled -> any number of terms may survive
    int terms_per_round = 5;
    int first_round_n_candidates = 10;
    InfluenceVariant influence_variant = InfluenceVariant::NoRefit;
    PruneMode prune_mode = PruneMode::TopK;
    double threshold_epsilon = 0.0;
    double ridge_lambda = 0.0;
    bool nested_validation = false;
    bool tlo_enabled = false;
    TloOptions tlo;
    bool simplified_prompts = false;
    int proposer_retry_budget = 2;

    std::optional<std::size_t> keep_limit() const {
        if (!keep_n_enabled) return std::nullopt;
        return keep_n_terms;
    }
    Split influence_split() const { return nested_validation ? Split::ValInner : Split::Validation; }
    Split reward_split() const { return nested_validation ? Split::ValOuter : Split::Validation; }
};

// Equation state carried by a search node.
struct CycleState {
    std::vector<Term> terms;
    std::vector<HistoryEntry> history;
    std::string equation;
    double val_mse = std::numeric_limits<double>::infinity();  // reward-split overall
};

struct CycleDeps {
    const Dataset* data = nullptr;
    CompletionBackend* backend = nullptr;
    std::string description;
    std::string data_preview;
    std::string best_equation;  // global best so far, shown to the proposer
};

struct CycleResult {
    bool success = false;
    std::string failure_reason;

    CycleState state;  // new state on success
    MseResult val_mse;   // reward split
    MseResult test_mse;
    Eigen::MatrixXd weights;            // kept terms x outputs
    Eigen::MatrixXd candidate_weights;  // full candidate fit, before pruning
    std::vector<std::string> candidate_terms;
    std::vector<double> delta_agg;  // over candidate_terms
    InfluenceReport influence;
    PruneDecision decision;
    std::vector<std::pair<std::string, std::string>> rejected;  // term/line -> reason
    TokenUsage tokens;
    std::vector<std::string> warnings;
    double tlo_objective = std::numeric_limits<double>::quiet_NaN();
};

// First 5 training rows, pipe-delimited, 6 significant digits. The
// trajectory-id bookkeeping column is not part of the preview.
inline std::string build_data_preview(const Dataset& d, std::size_t rows = 5) {
    const auto& frame = d.frame(Split::Train);
    const auto n = std::min(rows, d.rows_of(Split::Train).size());
    std::vector<std::string> cols;
    for (const auto& name : d.feature_names())
        if (name != kTrajectoryColumn) cols.push_back(name);
    std::string out;
    for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? " | " : "") + cols[i];
    for (const auto& t : d.target_names()) out += " | " + t;
    const auto& targets = d.targets_on(Split::Train);
    for (std::size_t r = 0; r < n; ++r) {
        out += '\n';
        for (std::size_t i = 0; i < cols.size(); ++i)
            out += (i ? " | " : "") + format_g6(frame.at(cols[i])[r]);
        for (Eigen::Index j = 0; j < targets.cols(); ++j)
            out += " | " + format_g6(targets(static_cast<Eigen::Index>(r), j));
    }
    return out;
}

namespace detail {

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Backend call with the per-node retry budget for unparseable replies.
// Budget exhaustion propagates; hard backend errors fail the cycle.
template <typename ParseFn>
auto call_with_retries(CompletionBackend& backend, PromptKind kind, const std::string& prompt,
                       CallContext call, const ProposerContext& ctx, const PruneFeedback* fb,
                       int retry_budget, TokenUsage& tokens, ParseFn&& parse)
    -> std::pair<std::optional<decltype(parse(std::string{}))>, std::string> {
    std::string last_error;
    for (int attempt = 0; attempt <= retry_budget; ++attempt) {
        call.attempt = attempt;
        ChatReply reply;
        try {
            reply = backend.complete(kind, prompt, call, ctx, fb);
        } catch (const BudgetExceeded&) {
            throw;
        } catch (const ConfigError&) {
            throw;  // misconfiguration, not a transient proposer failure
        } catch (const Error& e) {
            return {std::nullopt, std::string("proposer failure: ") + e.what()};
        }
        tokens.prompt_tokens += reply.usage.prompt_tokens;
        tokens.completion_tokens += reply.usage.completion_tokens;
        try {
            return {parse(reply.content), ""};
        } catch (const Error& e) {
            last_error = e.what();
        }
    }
    return {std::nullopt, "unparseable reply after retries: " + last_error};
}

} // namespace detail

inline CycleResult run_cycle(const CycleState& state, const CycleDeps& deps,
                             const EngineConfig& cfg, const CallContext& call) {
    CycleResult r;
    const Dataset& d = *deps.data;
    const Split infl_split = cfg.influence_split();
    const Split reward_split = cfg.reward_split();

    ProposerContext ctx;
    ctx.description = deps.description;
    for (const auto& t : state.terms) ctx.current_terms.push_back(t.source);
    ctx.current_equation = deps.best_equation;
    for (const auto& h : state.history) ctx.history.push_back(format_history_entry(h));
    ctx.data_preview = deps.data_preview;
    ctx.terms_per_round = cfg.terms_per_round;
    ctx.first_round_n_candidates = cfg.first_round_n_candidates;
    ctx.first_round = state.terms.empty() && state.history.empty();
    ctx.simplified = cfg.simplified_prompts;

    // 1) Propose.
    const std::string propose_prompt = render_prompt(PromptKind::Propose, ctx);
    auto [parsed, propose_err] = detail::call_with_retries(
        *deps.backend, PromptKind::Propose, propose_prompt, call, ctx, nullptr,
        cfg.proposer_retry_budget, r.tokens,
        [](const std::string& reply) { return parse_terms_block(reply); });
    if (!parsed) {
        r.failure_reason = propose_err;
        return r;
    }
    for (const auto& [line, why] : parsed->rejected) r.rejected.emplace_back(line, why);
    for (const auto& w : parsed->warnings) r.warnings.push_back(w);

    // 2) Aggregate with the current set (dedup by canonical text).
    std::vector<Term> candidates = state.terms;
    std::set<std::string> seen;
    for (const auto& t : candidates) seen.insert(t.canonical);
    for (const auto& t : parsed->terms)
        if (seen.insert(t.canonical).second) candidates.push_back(t);
    if (candidates.empty()) {
        r.failure_reason = "no candidate terms (empty proposal on an empty state)";
        return r;
    }

    // 3) Term-local optimization over the full candidate set, before
    //    influence so the scores reflect tuned terms.
    if (cfg.tlo_enabled) {
        TloResult tlo = tlo_optimize(candidates, d, cfg.ridge_lambda, cfg.tlo, Split::Train,
                                     infl_split);
        for (const auto& [t, why] : tlo.dropped) r.rejected.emplace_back(t.source, why);
        candidates = tlo.terms;
        r.tlo_objective = tlo.objective;
        if (candidates.empty()) {
            r.failure_reason = "all candidates rejected during constant optimization";
            return r;
        }
    }

    // 4) Evaluate on every split; reject non-finite terms.
    DesignSet set;
    try {
        set = build_design_set(candidates, d);
    } catch (const DataError& e) {
        r.failure_reason = e.what();
        return r;
    }
    for (const auto& [t, why] : set.rejected) r.rejected.emplace_back(t.source, why);
    for (const auto& t : set.terms) r.candidate_terms.push_back(t.source);

    // 5) Fit the expanded candidate model.
    LinearFit fit = fit_linear(set.phi(Split::Train), d.targets_on(Split::Train),
                               cfg.ridge_lambda);
    r.candidate_weights = fit.weights;

    // 6) Influence on the pruning split.
    const Eigen::MatrixXd& phi_train = set.phi(Split::Train);
    const Eigen::MatrixXd& y_train = d.targets_on(Split::Train);
    r.influence = compute_influence(fit, set.phi(infl_split), d.targets_on(infl_split),
                                    cfg.influence_variant, &phi_train, &y_train,
                                    cfg.ridge_lambda);
    if (r.influence.fallback_terms > 0)
        r.warnings.push_back("refit_efficient fell back to full refits for " +
                             std::to_string(r.influence.fallback_terms) + " terms");
    r.delta_agg = aggregate_influence(r.influence);

    // 7) Prune.
    if (cfg.prune_mode == PruneMode::Agentic) {
        PruneFeedback fb;
        fb.keep_n_terms = cfg.keep_limit().value_or(r.candidate_terms.size());
        fb.mse_per_output = r.influence.mse_full;
        fb.mse_overall = detail::mean_of(fb.mse_per_output);
        for (std::size_t j = 0; j < d.target_names().size(); ++j) {
            InfluenceFeedbackTable table;
            table.output_name = d.target_names()[j];
            table.terms = r.candidate_terms;
            for (Eigen::Index k = 0; k < fit.weights.rows(); ++k) {
                table.weights.push_back(fit.weights(k, static_cast<Eigen::Index>(j)));
                table.influences.push_back(r.influence.delta(k, static_cast<Eigen::Index>(j)));
            }
            fb.tables.push_back(std::move(table));
        }
        const std::string prune_prompt = render_prompt(PromptKind::Prune, ctx, &fb);
        auto [decision, prune_err] = detail::call_with_retries(
            *deps.backend, PromptKind::Prune, prune_prompt, call, ctx, &fb,
            cfg.proposer_retry_budget, r.tokens, [&](const std::string& reply) {
                return parse_decision_block(reply, r.candidate_terms);
            });
        if (!decision) {
            r.failure_reason = prune_err;
            return r;
        }
        r.decision = *decision;
        if (cfg.keep_n_enabled)
            r.decision = enforce_keep_limit(std::move(r.decision), r.candidate_terms, r.delta_agg,
                                            cfg.keep_n_terms);
    } else {
        r.decision = prune_deterministic(r.candidate_terms, r.delta_agg, cfg.prune_mode,
                                         cfg.keep_limit(), cfg.threshold_epsilon);
    }
    for (const auto& w : r.decision.warnings) r.warnings.push_back(w);
    if (r.decision.keep.empty()) {
        r.failure_reason = "pruning kept no terms";
        return r;
    }

    // 8) Final refit on the kept terms only.
    std::vector<Eigen::Index> kept_idx;
    std::vector<Term> kept_terms;
    for (std::size_t i = 0; i < set.terms.size(); ++i) {
        const auto& src = set.terms[i].source;
        if (std::find(r.decision.keep.begin(), r.decision.keep.end(), src) !=
            r.decision.keep.end()) {
            kept_idx.push_back(static_cast<Eigen::Index>(i));
            kept_terms.push_back(set.terms[i]);
        }
    }
    auto select_cols = [&](const Eigen::MatrixXd& m) {
        Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(kept_idx.size()));
        for (std::size_t j = 0; j < kept_idx.size(); ++j)
            out.col(static_cast<Eigen::Index>(j)) = m.col(kept_idx[j]);
        return out;
    };
    LinearFit final_fit =
        fit_linear(select_cols(phi_train), y_train, cfg.ridge_lambda);
    r.weights = final_fit.weights;
    r.val_mse = evaluate_mse(final_fit, select_cols(set.phi(reward_split)),
                             d.targets_on(reward_split));
    MseResult prune_split_mse = evaluate_mse(final_fit, select_cols(set.phi(infl_split)),
                                             d.targets_on(infl_split));
    r.test_mse = evaluate_mse(final_fit, select_cols(set.phi(Split::Test)),
                              d.targets_on(Split::Test));

    // 9) New state with the history entry appended.
    std::vector<std::string> kept_sources;
    for (const auto& t : kept_terms) kept_sources.push_back(t.source);
    HistoryEntry h;
    h.round_id = call.node_id;
    h.keep = r.decision.keep;
    h.drop = r.decision.drop;
    h.mse_before_per_output = r.influence.mse_full;
    h.mse_before_overall = detail::mean_of(h.mse_before_per_output);
    h.mse_after_per_output = prune_split_mse.per_output;
    h.mse_after_overall = prune_split_mse.overall;

    r.state.terms = std::move(kept_terms);
    r.state.history = state.history;
    r.state.history.push_back(std::move(h));
    r.state.equation = equation_text(d.target_names(), kept_sources, final_fit.weights);
    r.state.val_mse = r.val_mse.overall;
    r.success = true;
    return r;
}

} // namespace igsr
