#pragma once

// Result emission. trace.jsonl gets one line per created child; summary.json
// holds the final outcome. Neither file contains timestamps (wall-clock data
// goes to a separate timing.json) so re-runs with the same seed are
// byte-identical. The trace line schema is shipped in docs/trace.schema.json.

#include <fstream>
#include <json.hpp>
#include <string>

#include "igsr/common.hpp"
#include "igsr/prompts.hpp"
#include "igsr/search.hpp"

namespace igsr {

inline nlohmann::ordered_json trace_line_json(const ExpansionRecord& rec) {
    nlohmann::ordered_json j;
    j["iteration"] = rec.iteration;
    j["node_id"] = rec.node_id;
    j["parent_id"] = rec.parent_id;
    j["candidates"] = rec.candidates;
    j["kept_terms"] = rec.kept_terms;
    j["weights"] = rec.weights;
    j["val_mse"] = rec.val_mse;
    j["val_mse_per_output"] = rec.val_mse_per_output;
    j["test_mse"] = rec.test_mse;
    j["test_mse_per_output"] = rec.test_mse_per_output;
    j["delta_agg"] = rec.delta_agg;
    j["reward"] = rec.reward;
    j["prompt_tokens"] = rec.prompt_tokens;
    j["completion_tokens"] = rec.completion_tokens;
    j["equation"] = rec.equation;
    return j;
}

inline void write_trace_jsonl(const RunReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    for (const auto& rec : report.trace) out << trace_line_json(rec).dump() << '\n';
}

inline nlohmann::ordered_json summary_json(const RunReport& report, std::uint64_t seed) {
    nlohmann::ordered_json j;
    j["status"] = report.status;
    j["seed"] = seed;
    j["prompt_version"] = kPromptAssetVersion;
    nlohmann::ordered_json best;
    best["node_id"] = report.best_node_id;
    best["equation"] = report.best_equation;
    best["val_mse"] = report.best_val_mse;
    best["val_mse_per_output"] = report.best_val_mse_per_output;
    best["test_mse"] = report.best_test_mse;
    best["test_mse_per_output"] = report.best_test_mse_per_output;
    nlohmann::ordered_json terms = nlohmann::ordered_json::array();
    for (const auto& t : report.best_state.terms) terms.push_back(t.source);
    best["terms"] = terms;
    j["best"] = best;
    j["iterations_used"] = report.iterations_used;
    j["children_created"] = report.children_created;
    j["failed_cycles"] = report.failed_cycles;
    j["prompt_tokens"] = report.tokens.prompt_tokens;
    j["completion_tokens"] = report.tokens.completion_tokens;
    j["warnings"] = report.warnings;
    return j;
}

inline void write_summary_json(const RunReport& report, std::uint64_t seed,
                               const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << summary_json(report, seed).dump(2) << '\n';
}

// Best equation in the one-line-per-output form ("dv_dt = ...").
inline void write_best_equation(const RunReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write '" + path + "'");
    out << report.best_equation << '\n';
}

} // namespace igsr
