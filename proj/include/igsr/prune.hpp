#pragma once

// Term pruning: deterministic selection over aggregate influence scores
// (the default), and parsing of the agentic pruner's DECISION payload.

#include <algorithm>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "igsr/common.hpp"
#include "igsr/expr.hpp"
#include "igsr/fenced.hpp"

namespace igsr {

enum class PruneMode { TopK, Threshold, Agentic };

inline const char* prune_mode_name(PruneMode m) {
    switch (m) {
    case PruneMode::TopK: return "top_k";
    case PruneMode::Threshold: return "threshold";
    case PruneMode::Agentic: return "agentic";
    }
    return "?";
}

struct PruneDecision {
    std::vector<std::string> keep;   // ordered by original candidate position
    std::vector<std::string> drop;
    PruneMode mode = PruneMode::TopK;
    std::vector<std::string> warnings;
};

// Keep the K terms with the largest aggregate influence (TopK) or every term
// with influence above epsilon (Threshold). Ties break toward the earlier
// candidate-list position; the keep list preserves original order. A keep
// limit of nullopt disables the cap and keeps everything in TopK mode.
inline PruneDecision prune_deterministic(const std::vector<std::string>& terms,
                                         const std::vector<double>& delta_agg, PruneMode mode,
                                         std::optional<std::size_t> keep_n = std::nullopt,
                                         double epsilon = 0.0) {
    if (terms.size() != delta_agg.size())
        throw Error("term/influence length mismatch");
    if (mode == PruneMode::Agentic)
        throw Error("agentic pruning is not a deterministic mode");

    std::vector<char> kept(terms.size(), 0);
    if (mode == PruneMode::TopK) {
        std::size_t k = keep_n ? std::min(*keep_n, terms.size()) : terms.size();
        std::vector<std::size_t> order(terms.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return delta_agg[a] > delta_agg[b];  // stable: ties keep list order
        });
        for (std::size_t i = 0; i < k; ++i) kept[order[i]] = 1;
    } else {
        for (std::size_t i = 0; i < terms.size(); ++i)
            if (delta_agg[i] > epsilon) kept[i] = 1;
    }

    PruneDecision d;
    d.mode = mode;
    for (std::size_t i = 0; i < terms.size(); ++i)
        (kept[i] ? d.keep : d.drop).push_back(terms[i]);
    return d;
}

// ---------------------------------------------------------------------------
// DECISION payload. A fenced block after the DECISION marker holding a
// brace-delimited mapping with "keep" and "drop" lists of quoted term names.
// The template's own example reply carries trailing `#` comments and trailing
// commas, so both are stripped before interpreting.

namespace detail {

// Comments begin at a '#' outside double quotes and run to end of line.
inline std::string strip_comments(const std::string& content) {
    std::string out;
    for (const auto& line : split_lines(content)) {
        bool in_string = false;
        std::size_t cut = line.size();
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') in_string = !in_string;
            else if (line[i] == '#' && !in_string) {
                cut = i;
                break;
            }
        }
        out += line.substr(0, cut);
        out += '\n';
    }
    return out;
}

inline std::string strip_trailing_commas(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == ',') {
            std::size_t j = i + 1;
            while (j < s.size() && std::isspace(static_cast<unsigned char>(s[j]))) ++j;
            if (j < s.size() && (s[j] == '}' || s[j] == ']')) continue;
        }
        out += s[i];
    }
    return out;
}

} // namespace detail

// Parse the first DECISION block of an LLM reply. When `candidates` is
// non-empty, every candidate must land in exactly one of keep/drop and no
// unknown names may appear.
inline PruneDecision parse_decision_block(const std::string& reply,
                                          const std::vector<std::string>& candidates = {}) {
    auto block = extract_marked_block(reply, "DECISION");
    if (!block) throw Error("no DECISION block found in reply");

    std::string cleaned = detail::strip_trailing_commas(detail::strip_comments(block->content));
    nlohmann::json j = nlohmann::json::parse(cleaned, nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw Error("DECISION block is not a parseable keep/drop mapping");
    if (!j.contains("keep") || !j.contains("drop"))
        throw Error("DECISION block must contain both \"keep\" and \"drop\"");

    PruneDecision d;
    d.mode = PruneMode::Agentic;
    d.warnings = block->warnings;
    for (const auto& v : j["keep"]) d.keep.push_back(trim(v.get<std::string>()));
    for (const auto& v : j["drop"]) d.drop.push_back(trim(v.get<std::string>()));

    for (const auto& k : d.keep)
        if (std::find(d.drop.begin(), d.drop.end(), k) != d.drop.end())
            throw Error("term '" + k + "' appears in both keep and drop");

    if (!candidates.empty()) {
        auto known = [&](const std::string& name) {
            return std::find(candidates.begin(), candidates.end(), name) != candidates.end();
        };
        for (const auto& k : d.keep)
            if (!known(k)) throw Error("unknown term '" + k + "' in keep list");
        for (const auto& k : d.drop)
            if (!known(k)) throw Error("unknown term '" + k + "' in drop list");
        for (const auto& c : candidates) {
            bool in_keep = std::find(d.keep.begin(), d.keep.end(), c) != d.keep.end();
            bool in_drop = std::find(d.drop.begin(), d.drop.end(), c) != d.drop.end();
            if (!in_keep && !in_drop)
                throw Error("candidate term '" + c + "' missing from the DECISION block");
        }
    }
    return d;
}

// The agentic pruner is instructed to keep at most K terms but may violate
// that; enforce the cap by truncating with the influence ranking and record
// the violation.
inline PruneDecision enforce_keep_limit(PruneDecision d, const std::vector<std::string>& terms,
                                        const std::vector<double>& delta_agg, std::size_t keep_n) {
    if (d.keep.size() <= keep_n) return d;
    auto rank_of = [&](const std::string& name) {
        auto it = std::find(terms.begin(), terms.end(), name);
        return it == terms.end() ? std::numeric_limits<double>::lowest()
                                 : delta_agg[static_cast<std::size_t>(it - terms.begin())];
    };
    std::vector<std::string> keep = d.keep;
    std::stable_sort(keep.begin(), keep.end(),
                     [&](const auto& a, const auto& b) { return rank_of(a) > rank_of(b); });
    std::vector<std::string> demoted(keep.begin() + static_cast<std::ptrdiff_t>(keep_n), keep.end());
    d.warnings.push_back("agentic keep list exceeded keep_n_terms=" + std::to_string(keep_n) +
                         "; truncated by influence ranking");
    std::vector<std::string> new_keep;
    for (const auto& t : d.keep)
        if (std::find(demoted.begin(), demoted.end(), t) == demoted.end()) new_keep.push_back(t);
    d.keep = std::move(new_keep);
    for (auto& t : demoted) d.drop.push_back(std::move(t));
    return d;
}

} // namespace igsr
