#pragma once

// Search over equation states: MCTS with UCT selection (default) and the
// linear iterative-refinement fallback. Each tree edge is one
// propose-and-prune cycle; the heuristic reward of a new node is the
// negative validation MSE of its equation.

#include <cmath>
#include <future>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "igsr/dataset.hpp"
#include "igsr/engine.hpp"
#include "igsr/propose.hpp"

namespace igsr {

enum class SearchMode { Mcts, Iterative };

struct SearchConfig {
    int total_budget = 30;       // node expansions (budget iterations)
    int n_successors = 5;
    double exploration_c = M_SQRT2;
    int depth_limit = 10;
    bool rollout_is_just_node_reward = true;  // heuristic MCTS
    int rollout_depth = 1;
    SearchMode mode = SearchMode::Mcts;
    std::uint64_t seed = 0;
    int jobs = 1;                // concurrent successor cycles per expansion
    EngineConfig engine;
};

struct SearchNode {
    std::string id;
    int depth = 0;
    SearchNode* parent = nullptr;
    std::vector<std::unique_ptr<SearchNode>> children;
    CycleState state;
    double stored_val_mse = std::numeric_limits<double>::infinity();
    long long visits = 0;
    double value_sum = 0.0;
    bool exhausted = false;  // an expansion produced no children
    int spawned = 0;         // successor attempts made (consumes child ids)

    double q() const { return visits > 0 ? value_sum / static_cast<double>(visits) : 0.0; }
};

// UCT(i) = Q(i) + c sqrt(ln N(parent) / N(i)); an unvisited child has
// infinite priority, ties break toward the earlier-created child.
inline SearchNode* uct_select(SearchNode& parent, double c) {
    if (parent.children.empty()) throw Error("uct_select on a childless node");
    SearchNode* best = nullptr;
    double best_score = -std::numeric_limits<double>::infinity();
    const double log_parent = std::log(std::max<double>(1, parent.visits));
    for (const auto& child : parent.children) {
        double score;
        if (child->visits == 0)
            score = std::numeric_limits<double>::infinity();
        else
            score = child->q() + c * std::sqrt(log_parent / static_cast<double>(child->visits));
        if (score > best_score) {
            best_score = score;
            best = child.get();
        }
    }
    return best;
}

inline void backpropagate(SearchNode* node, double reward) {
    for (SearchNode* n = node; n != nullptr; n = n->parent) {
        n->visits += 1;
        n->value_sum += reward;
    }
}

// One trace line per created child.
struct ExpansionRecord {
    int iteration = 0;
    std::string node_id;
    std::string parent_id;
    std::vector<std::string> candidates;
    std::vector<std::string> kept_terms;
    std::vector<std::vector<double>> weights;  // term-major
    double val_mse = 0.0;
    std::vector<double> val_mse_per_output;
    double test_mse = 0.0;
    std::vector<double> test_mse_per_output;
    std::vector<double> delta_agg;
    double reward = 0.0;
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    std::string equation;
};

struct RunReport {
    std::string status = "completed";  // completed | budget_exceeded | tree_exhausted
    std::string best_node_id;
    CycleState best_state;
    double best_val_mse = std::numeric_limits<double>::infinity();
    std::vector<double> best_val_mse_per_output;
    double best_test_mse = std::numeric_limits<double>::infinity();
    std::vector<double> best_test_mse_per_output;
    std::string best_equation;
    int iterations_used = 0;
    int children_created = 0;
    int failed_cycles = 0;
    TokenUsage tokens;
    std::vector<ExpansionRecord> trace;
    std::vector<std::string> warnings;
};

namespace detail {

inline bool expandable(const SearchNode& n, const SearchConfig& cfg) {
    return !n.exhausted && n.depth < cfg.depth_limit &&
           static_cast<int>(n.children.size()) < cfg.n_successors;
}

inline bool any_expandable(const SearchNode& n, const SearchConfig& cfg) {
    if (expandable(n, cfg)) return true;
    for (const auto& c : n.children)
        if (any_expandable(*c, cfg)) return true;
    return false;
}

// Selection policy: descend with UCT while the current node has no free
// successor slots; stop at the first node that can still be expanded.
inline SearchNode* select_node(SearchNode& root, const SearchConfig& cfg) {
    SearchNode* node = &root;
    while (!expandable(*node, cfg) && !node->children.empty())
        node = uct_select(*node, cfg.exploration_c);
    return node;
}

struct AttemptOutcome {
    int successor = 0;
    std::string child_id;
    CycleResult result;
    double rollout_reward = 0.0;
    bool budget_hit = false;
};

} // namespace detail

class SearchDriver {
public:
    SearchDriver(const Dataset& data, SearchConfig cfg, CompletionBackend& backend,
                 std::shared_ptr<BudgetMeter> meter, std::string description)
        : data_(data),
          cfg_(std::move(cfg)),
          backend_(backend),
          meter_(std::move(meter)),
          deps_{} {
        deps_.data = &data_;
        deps_.backend = &backend_;
        deps_.description = std::move(description);
        if (!cfg_.engine.simplified_prompts) deps_.data_preview = build_data_preview(data_);
        root_ = std::make_unique<SearchNode>();
        root_->id = "node_0";
    }

    RunReport run() {
        if (cfg_.mode == SearchMode::Iterative) return run_iterative();
        return run_mcts();
    }

    const SearchNode& root() const { return *root_; }

private:
    RunReport run_mcts() {
        RunReport report;
        for (int iter = 1; iter <= cfg_.total_budget; ++iter) {
            if (meter_ && meter_->latch_if_exceeded()) {
                report.status = "budget_exceeded";
                break;
            }
            if (!detail::any_expandable(*root_, cfg_)) {
                report.status = "tree_exhausted";
                report.warnings.push_back("search tree exhausted before the budget was spent");
                break;
            }
            report.iterations_used = iter;
            SearchNode* node = detail::select_node(*root_, cfg_);
            if (!detail::expandable(*node, cfg_)) {
                // Terminal re-selection: backpropagate the node's known value.
                backpropagate(node, -node->stored_val_mse);
                continue;
            }
            if (!expand(*node, iter, report)) {
                report.status = "budget_exceeded";
                break;
            }
        }
        finalize(report);
        return report;
    }

    RunReport run_iterative() {
        RunReport report;
        CycleState state;  // empty root state
        std::string chain_id = "node_0";
        for (int iter = 1; iter <= cfg_.total_budget; ++iter) {
            if (meter_ && meter_->latch_if_exceeded()) {
                report.status = "budget_exceeded";
                break;
            }
            report.iterations_used = iter;
            const std::string child_id = chain_id + "_0";
            CallContext call;
            call.node_id = child_id;
            call.successor = 0;
            call.seed = derive_seed(cfg_.seed, "cycle:" + child_id);
            CycleResult res;
            try {
                res = run_cycle(state, deps_, cfg_.engine, call);
            } catch (const BudgetExceeded&) {
                report.status = "budget_exceeded";
                break;
            }
            accumulate(report.tokens, res.tokens);
            if (!res.success) {
                ++report.failed_cycles;
                report.warnings.push_back("cycle " + child_id + " failed: " + res.failure_reason);
                continue;
            }
            record_child(report, iter, child_id, chain_id, res, -res.val_mse.overall);
            update_best(report, child_id, res);
            state = res.state;
            chain_id = child_id;
        }
        finalize(report);
        return report;
    }

    // Expands `node` by attempting its free successor slots; children are
    // applied in successor order so the trace is independent of completion
    // order. Returns false when the budget latch fired mid-expansion.
    bool expand(SearchNode& node, int iteration, RunReport& report) {
        const int attempts = cfg_.n_successors - static_cast<int>(node.children.size());
        std::vector<detail::AttemptOutcome> outcomes(static_cast<std::size_t>(attempts));
        const CycleState snapshot = node.state;

        auto run_attempt = [&](int slot) {
            detail::AttemptOutcome out;
            out.successor = node.spawned + slot;
            out.child_id = node.id + "_" + std::to_string(out.successor);
            CallContext call;
            call.node_id = out.child_id;
            call.successor = out.successor;
            call.seed = derive_seed(cfg_.seed, "cycle:" + out.child_id);
            try {
                out.result = run_cycle(snapshot, deps_, cfg_.engine, call);
                if (out.result.success)
                    out.rollout_reward = rollout_reward(out.result, out.child_id);
            } catch (const BudgetExceeded&) {
                out.budget_hit = true;
            }
            return out;
        };

        if (cfg_.jobs > 1 && attempts > 1) {
            std::vector<std::future<detail::AttemptOutcome>> futures;
            futures.reserve(static_cast<std::size_t>(attempts));
            for (int slot = 0; slot < attempts; ++slot) {
                // Bound in-flight tasks by launching in waves of `jobs`.
                futures.push_back(std::async(std::launch::async, run_attempt, slot));
                if ((slot + 1) % cfg_.jobs == 0)
                    for (std::size_t i = futures.size() - static_cast<std::size_t>(cfg_.jobs);
                         i < futures.size(); ++i)
                        futures[i].wait();
            }
            for (int slot = 0; slot < attempts; ++slot)
                outcomes[static_cast<std::size_t>(slot)] = futures[static_cast<std::size_t>(slot)].get();
        } else {
            for (int slot = 0; slot < attempts; ++slot)
                outcomes[static_cast<std::size_t>(slot)] = run_attempt(slot);
        }

        node.spawned += attempts;
        int successes = 0;
        for (auto& out : outcomes) {
            if (out.budget_hit) return false;
            accumulate(report.tokens, out.result.tokens);
            if (!out.result.success) {
                ++report.failed_cycles;
                report.warnings.push_back("cycle " + out.child_id +
                                          " failed: " + out.result.failure_reason);
                continue;
            }
            ++successes;
            auto child = std::make_unique<SearchNode>();
            child->id = out.child_id;
            child->depth = node.depth + 1;
            child->parent = &node;
            child->state = out.result.state;
            child->stored_val_mse = out.result.val_mse.overall;
            SearchNode* child_ptr = child.get();
            node.children.push_back(std::move(child));
            backpropagate(child_ptr, out.rollout_reward);
            record_child(report, iteration, out.child_id, node.id, out.result,
                         out.rollout_reward);
            update_best(report, out.child_id, out.result);
        }
        if (successes == 0) node.exhausted = true;
        return true;
    }

    // Heuristic MCTS: the child's own negative validation MSE. With rollouts
    // enabled, the reward is the end of a chain of further cycles; the child
    // keeps its own equation either way.
    double rollout_reward(const CycleResult& child_result, const std::string& child_id) {
        if (cfg_.rollout_is_just_node_reward) return -child_result.val_mse.overall;
        CycleState state = child_result.state;
        double reward = -child_result.val_mse.overall;
        for (int d = 1; d <= cfg_.rollout_depth; ++d) {
            const std::string rollout_id = child_id + "~r" + std::to_string(d);
            CallContext call;
            call.node_id = rollout_id;
            call.seed = derive_seed(cfg_.seed, "cycle:" + rollout_id);
            CycleResult res = run_cycle(state, deps_, cfg_.engine, call);
            if (!res.success) break;
            reward = -res.val_mse.overall;
            state = res.state;
        }
        return reward;
    }

    void record_child(RunReport& report, int iteration, const std::string& child_id,
                      const std::string& parent_id, const CycleResult& res, double reward) {
        ExpansionRecord rec;
        rec.iteration = iteration;
        rec.node_id = child_id;
        rec.parent_id = parent_id;
        rec.candidates = res.candidate_terms;
        for (const auto& t : res.state.terms) rec.kept_terms.push_back(t.source);
        for (Eigen::Index i = 0; i < res.weights.rows(); ++i) {
            std::vector<double> row;
            for (Eigen::Index j = 0; j < res.weights.cols(); ++j) row.push_back(res.weights(i, j));
            rec.weights.push_back(std::move(row));
        }
        rec.val_mse = res.val_mse.overall;
        rec.val_mse_per_output = res.val_mse.per_output;
        rec.test_mse = res.test_mse.overall;
        rec.test_mse_per_output = res.test_mse.per_output;
        rec.delta_agg = res.delta_agg;
        rec.reward = reward;
        rec.prompt_tokens = res.tokens.prompt_tokens;
        rec.completion_tokens = res.tokens.completion_tokens;
        rec.equation = res.state.equation;
        report.trace.push_back(std::move(rec));
        ++report.children_created;
    }

    void update_best(RunReport& report, const std::string& node_id, const CycleResult& res) {
        if (res.val_mse.overall < report.best_val_mse) {
            report.best_val_mse = res.val_mse.overall;
            report.best_val_mse_per_output = res.val_mse.per_output;
            report.best_test_mse = res.test_mse.overall;
            report.best_test_mse_per_output = res.test_mse.per_output;
            report.best_node_id = node_id;
            report.best_state = res.state;
            report.best_equation = res.state.equation;
            deps_.best_equation = res.state.equation;
        }
    }

    void finalize(RunReport& report) {
        if (meter_) report.tokens = meter_->used().total() > 0 ? meter_->used() : report.tokens;
    }

    static void accumulate(TokenUsage& into, const TokenUsage& delta) {
        into.prompt_tokens += delta.prompt_tokens;
        into.completion_tokens += delta.completion_tokens;
    }

    const Dataset& data_;
    SearchConfig cfg_;
    CompletionBackend& backend_;
    std::shared_ptr<BudgetMeter> meter_;
    CycleDeps deps_;
    std::unique_ptr<SearchNode> root_;
};

inline RunReport run_search(const Dataset& data, const SearchConfig& cfg,
                            CompletionBackend& backend,
                            std::shared_ptr<BudgetMeter> meter = nullptr,
                            std::string description = "") {
    SearchDriver driver(data, cfg, backend, std::move(meter), std::move(description));
    return driver.run();
}

} // namespace igsr
