#include <doctest.h>

#include <set>

#include "igsr/engine.hpp"
#include "igsr/simgen.hpp"

using namespace igsr;

namespace {

// The worked history line, spliced from the prompt-template example.
const char* kHistoryLine =
    "Round node_0_0:  KEEP=['cancer_volume', 'cancer_volume * chemo_concentration', "
    "'cancer_volume * radiotherapy_dosage', 'np.log(cancer_volume + 1)', "
    "'np.sqrt(cancer_volume)', 'chemo_dosage']  |  DROP=['chemo_concentration', "
    "'radiotherapy_dosage', 'chemo_dosage * radiotherapy_dosage', "
    "'cancer_volume * chemo_dosage', 'cancer_volume * radiotherapy_dosage', "
    "'np.log(cancer_volume + 1)', 'np.sqrt(cancer_volume)', 'radiotherapy_dosage']  |  "
    "MSE before pruning=0.005453 (per-output=[0.010905755578988435, 6.33977252002678e-27]) |  "
    "MSE after pruning=0.900026 (per-output=[0.011005448429060318, 1.789047395904737])";

class ScriptedBackend : public CompletionBackend {
public:
    explicit ScriptedBackend(std::string reply) : reply_(std::move(reply)) {}
    ChatReply complete(PromptKind, const std::string&, const CallContext&,
                       const ProposerContext&, const PruneFeedback*) override {
        ++calls;
        if (throw_error) throw Error("scripted backend failure");
        return {reply_, usage};
    }
    std::string name() const override { return "scripted"; }

    int calls = 0;
    bool throw_error = false;
    TokenUsage usage;

private:
    std::string reply_;
};

Dataset lc_cr(std::uint64_t seed = 19, std::size_t patients = 20) {
    return split_dataset(simulate_pkpd(PkpdVariant::ChemoRadio, patients, PkpdParams{}, seed),
                         {}, seed);
}

const std::vector<std::string> kGroundTruth = {
    "cancer_volume",
    "cancer_volume * np.log(cancer_volume)",
    "cancer_volume * chemo_concentration",
    "cancer_volume * radiotherapy_dosage",
    "chemo_concentration",
    "chemo_dosage"};

CycleDeps deps_for(const Dataset& d, CompletionBackend& backend) {
    CycleDeps deps;
    deps.data = &d;
    deps.backend = &backend;
    deps.description = "lung cancer dynamics";
    deps.data_preview = build_data_preview(d);
    return deps;
}

} // namespace

TEST_CASE("history entries render the exact line format") {
    HistoryEntry h;
    h.round_id = "node_0_0";
    h.keep = {"cancer_volume", "cancer_volume * chemo_concentration",
              "cancer_volume * radiotherapy_dosage", "np.log(cancer_volume + 1)",
              "np.sqrt(cancer_volume)", "chemo_dosage"};
    h.drop = {"chemo_concentration", "radiotherapy_dosage",
              "chemo_dosage * radiotherapy_dosage", "cancer_volume * chemo_dosage",
              "cancer_volume * radiotherapy_dosage", "np.log(cancer_volume + 1)",
              "np.sqrt(cancer_volume)", "radiotherapy_dosage"};
    h.mse_before_overall = 0.005453;
    h.mse_before_per_output = {0.010905755578988435, 6.33977252002678e-27};
    h.mse_after_overall = 0.900026;
    h.mse_after_per_output = {0.011005448429060318, 1.789047395904737};
    CHECK(format_history_entry(h) == kHistoryLine);
}

TEST_CASE("empty drop lists render as DROP=[]") {
    HistoryEntry h;
    h.round_id = "node_0";
    h.keep = {"x"};
    h.mse_before_overall = 1.0;
    h.mse_before_per_output = {1.0};
    h.mse_after_overall = 1.0;
    h.mse_after_per_output = {1.0};
    CHECK(format_history_entry(h).find("DROP=[]") != std::string::npos);
}

TEST_CASE("equation text folds signs into separators at 4 significant digits") {
    Eigen::MatrixXd w(2, 2);
    w << 0.0091943, -0.0045181, -1.2141, 0.97761;
    std::string eq = equation_text({"dv_dt", "dc_dt"}, {"cancer_volume", "np.sqrt(x)"}, w);
    CHECK(eq == "dv_dt = 0.009194 cancer_volume - 1.214 np.sqrt(x)\n"
                "dc_dt = - 0.004518 cancer_volume + 0.9776 np.sqrt(x)");
}

TEST_CASE("run_cycle aggregates, prunes to K and appends history") {
    Dataset d = lc_cr();
    // Current state holds the six ground-truth terms; the proposer offers
    // five distractors, giving eleven candidates before pruning.
    CycleState state;
    for (const auto& src : kGroundTruth) state.terms.push_back(Term::parse(src));
    ScriptedBackend backend(render_terms_block({"np.sqrt(cancer_volume)",
                                                "np.log(cancer_volume + 1)",
                                                "radiotherapy_dosage",
                                                "chemo_dosage * radiotherapy_dosage",
                                                "cancer_volume**2"}));
    CycleDeps deps = deps_for(d, backend);
    EngineConfig cfg;
    CallContext call;
    call.node_id = "node_0_0";

    CycleResult r = run_cycle(state, deps, cfg, call);
    REQUIRE(r.success);
    CHECK(r.candidate_terms.size() == 11);
    CHECK(r.state.terms.size() == 6);
    CHECK(r.state.history.size() == 1);
    CHECK(r.state.history[0].round_id == "node_0_0");
    CHECK(r.state.history[0].keep.size() == 6);
    CHECK(r.state.history[0].drop.size() == 5);
    CHECK(r.delta_agg.size() == 11);
    CHECK(r.val_mse.per_output.size() == 2);

    // The ground-truth terms dominate the influence ranking.
    std::set<std::string> kept(r.decision.keep.begin(), r.decision.keep.end());
    for (const auto& src : kGroundTruth) CHECK(kept.count(src));
    CHECK(r.val_mse.overall < 1e-3);
}

TEST_CASE("final refit on kept terms only improves restricted train fit") {
    Dataset d = lc_cr();
    CycleState state;
    for (const auto& src : kGroundTruth) state.terms.push_back(Term::parse(src));
    ScriptedBackend backend(render_terms_block({"np.sqrt(cancer_volume)", "cancer_volume**2"}));
    CycleDeps deps = deps_for(d, backend);
    EngineConfig cfg;
    CallContext call;
    call.node_id = "node_0_0";
    CycleResult r = run_cycle(state, deps, cfg, call);
    REQUIRE(r.success);

    // Restrict the pre-prune weights to the kept columns and compare train MSE.
    std::vector<Term> kept_terms;
    for (const auto& src : r.decision.keep) kept_terms.push_back(Term::parse(src));
    DesignSet full = build_design_set(
        [&] {
            std::vector<Term> all;
            for (const auto& src : r.candidate_terms) all.push_back(Term::parse(src));
            return all;
        }(),
        d);
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < full.terms.size(); ++i)
        for (const auto& k : r.decision.keep)
            if (full.terms[i].source == k) idx.push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd phi(full.phi(Split::Train).rows(), static_cast<Eigen::Index>(idx.size()));
    Eigen::MatrixXd w_restricted(static_cast<Eigen::Index>(idx.size()),
                                 r.candidate_weights.cols());
    for (std::size_t j = 0; j < idx.size(); ++j) {
        phi.col(static_cast<Eigen::Index>(j)) = full.phi(Split::Train).col(idx[j]);
        w_restricted.row(static_cast<Eigen::Index>(j)) = r.candidate_weights.row(idx[j]);
    }
    const Eigen::MatrixXd& y = d.targets_on(Split::Train);
    const double restricted_mse = mse_of(phi * w_restricted, y).overall;
    LinearFit refit = fit_linear(phi, y);
    const double final_mse = evaluate_mse(refit, phi, y).overall;
    CHECK(final_mse <= restricted_mse + 1e-9);
}

TEST_CASE("empty proposals proceed with the existing candidates") {
    Dataset d = lc_cr();
    CycleState state;
    for (const auto& src : kGroundTruth) state.terms.push_back(Term::parse(src));
    ScriptedBackend backend("TERMS\n```\n```");
    CycleDeps deps = deps_for(d, backend);
    EngineConfig cfg;
    cfg.keep_n_terms = 4;
    CallContext call;
    call.node_id = "node_0_0";
    CycleResult r = run_cycle(state, deps, cfg, call);
    REQUIRE(r.success);
    CHECK(r.candidate_terms.size() == 6);
    CHECK(r.state.terms.size() == 4);  // pruning may still shrink the set
}

TEST_CASE("proposer failures mark the cycle failed and append nothing") {
    Dataset d = lc_cr();
    CycleState state;
    ScriptedBackend backend("TERMS\n```\nx1\n```");
    backend.throw_error = true;
    CycleDeps deps = deps_for(d, backend);
    EngineConfig cfg;
    CallContext call;
    call.node_id = "node_0_0";
    CycleResult r = run_cycle(state, deps, cfg, call);
    CHECK(!r.success);
    CHECK(r.failure_reason.find("proposer failure") != std::string::npos);
    CHECK(r.state.history.empty());
}

TEST_CASE("unparseable replies consume the retry budget then fail") {
    Dataset d = lc_cr();
    CycleState state;
    ScriptedBackend backend("no fenced block here");
    CycleDeps deps = deps_for(d, backend);
    EngineConfig cfg;
    cfg.proposer_retry_budget = 2;
    CallContext call;
    call.node_id = "node_0_0";
    CycleResult r = run_cycle(state, deps, cfg, call);
    CHECK(!r.success);
    CHECK(backend.calls == 3);  // initial attempt + 2 retries
    CHECK(r.failure_reason.find("unparseable") != std::string::npos);
}

TEST_CASE("run_cycle is deterministic for a fixed reply") {
    Dataset d = lc_cr();
    CycleState state;
    ScriptedBackend backend(render_terms_block(
        {"cancer_volume", "chemo_dosage", "np.sqrt(cancer_volume)", "chemo_concentration"}));
    CycleDeps deps = deps_for(d, backend);
    EngineConfig cfg;
    CallContext call;
    call.node_id = "node_0_0";
    CycleResult a = run_cycle(state, deps, cfg, call);
    CycleResult b = run_cycle(state, deps, cfg, call);
    REQUIRE(a.success);
    REQUIRE(b.success);
    CHECK(a.state.equation == b.state.equation);
    CHECK(a.val_mse.overall == b.val_mse.overall);
    CHECK(format_history_entry(a.state.history[0]) == format_history_entry(b.state.history[0]));
}

TEST_CASE("agentic pruning parses the decision and enforces the keep limit") {
    Dataset d = lc_cr();
    CycleState state;

    // Backend: TERMS reply first, then a DECISION keeping everything (the
    // limit enforcement must truncate it back to K).
    class TwoPhase : public CompletionBackend {
    public:
        ChatReply complete(PromptKind kind, const std::string&, const CallContext&,
                           const ProposerContext&, const PruneFeedback* fb) override {
            if (kind == PromptKind::Propose)
                return {render_terms_block({"cancer_volume", "chemo_concentration",
                                            "chemo_dosage", "np.sqrt(cancer_volume)"}),
                        {}};
            REQUIRE(fb != nullptr);
            std::string keep;
            for (std::size_t i = 0; i < fb->tables[0].terms.size(); ++i)
                keep += (i ? ", " : "") + ("\"" + fb->tables[0].terms[i] + "\"");
            return {"DECISION\n```\n{\"keep\": [" + keep + "], \"drop\": []}\n```", {}};
        }
        std::string name() const override { return "two-phase"; }
    } backend;

    CycleDeps deps = deps_for(d, backend);
    EngineConfig cfg;
    cfg.prune_mode = PruneMode::Agentic;
    cfg.keep_n_terms = 2;
    CallContext call;
    call.node_id = "node_0_0";
    CycleResult r = run_cycle(state, deps, cfg, call);
    REQUIRE(r.success);
    CHECK(r.state.terms.size() == 2);
    bool warned = false;
    for (const auto& w : r.warnings) warned |= w.find("exceeded keep_n_terms") != std::string::npos;
    CHECK(warned);
}

TEST_CASE("tlo recovers the proof-of-concept constant") {
    // y = 1 / (0.123 + x1^2), noiseless.
    const std::size_t rows = 400;
    CounterRng rng(derive_seed(77, "tlo_poc"));
    std::vector<double> x(rows), y(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        x[i] = rng.uniform(-2.0, 2.0);
        y[i] = 1.0 / (0.123 + x[i] * x[i]);
    }
    Dataset d({"x1"}, {{"x1", x}}, {"y"}, {{"y", y}});
    d = split_dataset(std::move(d), {}, 77);

    std::vector<Term> candidates = {Term::parse("1 / (x1**2 + c(0.5))")};
    TloResult res = tlo_optimize(candidates, d, 0.0, TloOptions{}, Split::Train,
                                 Split::Validation);
    REQUIRE(res.ran);
    REQUIRE(res.terms.size() == 1);
    std::vector<double> fitted;
    collect_param_inits(res.terms[0].ast, fitted);
    REQUIRE(fitted.size() == 1);
    CHECK(fitted[0] == doctest::Approx(0.123).epsilon(1e-3));
    CHECK(res.objective <= 1e-10);
    CHECK(res.terms[0].source == "1 / (x1**2 + c(" + format_shortest(fitted[0]) + "))");
}

TEST_CASE("tlo without markers returns the candidates and the baseline objective") {
    Dataset d = lc_cr();
    std::vector<Term> candidates = {Term::parse("cancer_volume"),
                                    Term::parse("chemo_dosage")};
    TloResult res = tlo_optimize(candidates, d, 0.0, TloOptions{}, Split::Train,
                                 Split::Validation);
    CHECK(!res.ran);
    CHECK(res.terms.size() == 2);
    CHECK(res.terms[0].source == "cancer_volume");
    REQUIRE(std::isfinite(res.objective));

    DesignSet set = build_design_set(candidates, d);
    LinearFit fit = fit_linear(set.phi(Split::Train), d.targets_on(Split::Train));
    MseResult baseline =
        evaluate_mse(fit, set.phi(Split::Validation), d.targets_on(Split::Validation));
    CHECK(res.objective == doctest::Approx(baseline.overall).epsilon(1e-12));
}

TEST_CASE("tlo matches a grid-search oracle for an exponential rate") {
    // y = 5 exp(-0.3 x); the outer weight absorbs the 5.
    const std::size_t rows = 300;
    CounterRng rng(derive_seed(81, "tlo_exp"));
    std::vector<double> x(rows), y(rows);
    for (std::size_t i = 0; i < rows; ++i) {
        x[i] = rng.uniform(-1.5, 1.5);
        y[i] = 5.0 * std::exp(-0.3 * x[i]);
    }
    Dataset d({"x"}, {{"x", x}}, {"y"}, {{"y", y}});
    d = split_dataset(std::move(d), {}, 81);

    // Grid oracle over c in [-1, 1].
    auto objective_at = [&](double c) {
        Term t = Term::parse("np.exp(c(" + format_shortest(c) + ") * x)");
        DesignSet set = build_design_set({t}, d);
        LinearFit fit = fit_linear(set.phi(Split::Train), d.targets_on(Split::Train));
        return evaluate_mse(fit, set.phi(Split::Validation), d.targets_on(Split::Validation))
            .overall;
    };
    double best_c = -1.0, best_j = objective_at(-1.0);
    for (double c = -1.0; c <= 1.0; c += 0.001) {
        const double j = objective_at(c);
        if (j < best_j) {
            best_j = j;
            best_c = c;
        }
    }
    CHECK(best_c == doctest::Approx(-0.3).epsilon(2e-3));

    std::vector<Term> candidates = {Term::parse("np.exp(c(0.1) * x)")};
    TloResult res = tlo_optimize(candidates, d, 0.0, TloOptions{}, Split::Train,
                                 Split::Validation);
    std::vector<double> fitted;
    collect_param_inits(res.terms[0].ast, fitted);
    CHECK(fitted[0] == doctest::Approx(best_c).epsilon(1e-3));
    CHECK(fitted[0] == doctest::Approx(-0.3).epsilon(1e-3));
    for (std::size_t i = 1; i < res.trace.size(); ++i)
        CHECK(res.trace[i] <= res.trace[i - 1] + 1e-15);
}

TEST_CASE("tlo drops terms that are non-finite at their initial values") {
    Dataset d = lc_cr();
    std::vector<Term> candidates = {
        Term::parse("cancer_volume"),
        Term::parse("np.log(cancer_volume - c(1e9))"),  // log of a negative number
    };
    TloResult res = tlo_optimize(candidates, d, 0.0, TloOptions{}, Split::Train,
                                 Split::Validation);
    CHECK(res.terms.size() == 1);
    REQUIRE(res.dropped.size() == 1);
    CHECK(res.dropped[0].second.find("non-finite") != std::string::npos);
}

TEST_CASE("nested validation routes pruning and reward to different splits") {
    Dataset d = split_dataset(simulate_pkpd(PkpdVariant::ChemoRadio, 20, PkpdParams{}, 19), {},
                              19, true);
    CycleState state;
    ScriptedBackend backend(render_terms_block({"cancer_volume", "chemo_concentration",
                                                "chemo_dosage", "np.sqrt(cancer_volume)"}));
    CycleDeps deps = deps_for(d, backend);
    EngineConfig cfg;
    cfg.nested_validation = true;
    CHECK(cfg.influence_split() == Split::ValInner);
    CHECK(cfg.reward_split() == Split::ValOuter);
    CallContext call;
    call.node_id = "node_0_0";
    CycleResult r = run_cycle(state, deps, cfg, call);
    REQUIRE(r.success);
    CHECK(std::isfinite(r.val_mse.overall));
    // History MSEs are computed on the inner split, the node reward on the
    // outer one; with disjoint rows these differ.
    CHECK(r.state.history[0].mse_after_overall != r.val_mse.overall);
}

TEST_CASE("data previews show the first train rows without the trajectory id") {
    Dataset d = lc_cr();
    std::string preview = build_data_preview(d);
    auto lines = split_lines(preview);
    CHECK(lines.size() == 6);  // header + 5 rows
    CHECK(lines[0].find("cancer_volume") != std::string::npos);
    CHECK(lines[0].find("dv_dt") != std::string::npos);
    CHECK(lines[0].find(kTrajectoryColumn) == std::string::npos);
}
