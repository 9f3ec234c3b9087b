#pragma once

// Prompt templates and rendering for the Propose and Prune agents. The
// default templates are shipped verbatim as versioned text assets below;
// the simplified variants drop the data preview and compress instructions
// for token-constrained runs. Placeholders use {name} syntax with {{ and }}
// as literal-brace escapes.

#include <string>
#include <unordered_map>
#include <vector>

#include "igsr/common.hpp"

namespace igsr {

enum class PromptKind { Propose, Prune };

// Version tag recorded in run summaries so result files identify the prompt
// assets they were produced with.
inline constexpr const char* kPromptAssetVersion = "default-v1";

inline constexpr const char* kProposeTemplate =
    R"PROMPT(You are an automated assistant for proposing linear terms for the equations in a symbolic regression pipeline.

Your proposed terms will be:
1. Concatenated with the current candidate terms.
2. Sent to a LLM term pruner agent that will use various computed signals to decide which terms to keep and which to drop.

# Instructions:
Given below information, propose some candidate terms. The terms can be any valid numpy expressions.
Make use of the dataset and problem description to propose relevant terms.
Make sure to use the learnings from the history of previous rounds.

Return these between triple backticks and one term on each line.
The first backticks must be prepended with TERMS

Example output:

TERMS
```
x1
x2**2
np.sin(x3)
```

NOTES:
* Propose around {terms_per_round} terms, generally not too many unless this is the first round.
* If this *is* the first round, propose around {first_round_n_candidates} terms.
* You may propose no terms (nothing between the TERMS backticks) if you think it is appropriate.

DATASET AND PROBLEM DESCRIPTION
------------------------------
{dataset_and_problem_description}

CURRENT TERMS:
------------------------------
{current_terms}

# Current equation:
{current_equation}

HISTORY
------------------------------
{history}

=========
The input data and target variable(s) preview:
{input_preview})PROMPT";

// The two trailing illustration lines of the source template ("[..., ...]"
// and "...") are placeholders here so the rendered prompt carries the real
// MSE values exactly once.
inline constexpr const char* kPruneTemplate =
    R"PROMPT(You are an equation-pruning assistant for symbolic regression.

========================================================
INPUT YOU RECEIVE
========================================================

* A table (or dictionary/json representation) where each row has:

| field     | meaning                                                                    |
|-----------|----------------------------------------------------------------------------|
| term      | Name of the symbolic basis function psi_k(x) (e.g. "x1", "sin(x2)", ...).  |
| weight    | Fitted scalar coefficient w_k obtained by ordinary least squares (OLS).    |
| influence | Influence score for term k (see definition below).                         |

* The validation set MSE.

**Influence definition (no refit)**

delta_k is the increase in mean-squared-error (MSE) if the k-th weight is deleted while all other weights stay fixed. For OLS this is

    delta_k = (w_k^2 / n) * sum phi_k(x_i)^2  (always >= 0).

* Note that the influence values are computed on the validation (rather than training) set, and thus may not always be >= 0.

Hence:
* If influence is large -> the term is important (its removal hurts the loss a lot).
* If influence ~= 0 -> the term is useless (its removal makes no noticeable difference).

========================================================
YOUR TASK
========================================================
1. **Inspect every row**.
2. **Decide "keep" or "drop"** for each term using the rule:

* Use the heuristic: "delta_k ~= 0 -> drop", "large delta_k -> keep" and your own judgement.

3. **Return** a python dictionary after "DECISION" with exactly the two keys

DECISION
```
{{
    "keep":  ["term_a", "term_b", ...],
    "drop":  ["term_c", "term_d", ...]
}}
````

Place each term name in either **keep** or **drop** - never both, never neither.

**IMPORTANT:**
* Make use of the dataset and problem description to make the best decision.
* Make sure to use the learnings from the history of previous rounds.
* (!) You must consider the generalization beyond the validation set and make decisions accordingly.
* (!) You should also consider BOTH the weights and the influence of the terms.
* (!) You MUST keep {keep_n_terms} terms at most, to keep the model interpretable.

________________________________________________________
CONVENTIONS & NOTES
________________________________________________________

# Important notes
* Treat terms independently; no need to refit or update weights.
* Note that everything was evaluated on the validation set to avoid overfitting.
* If there are multiple outputs (targets), you will see multiple tables, one for each target.
* Use all the information available, but keep in mind that you must only return one keep/drop decision even if there are multiple outputs.
* Keep only the most important terms for each output.

# Output format
* Feel free to comment briefly (<= 30 chars) about each decision, but keep the python dictionary in the right format.
* The dictionary MUST be provided between triple backticks, otherwise it cannot be parsed.
* It must be prepended with "DECISION", otherwise it cannot be parsed.

________________________________________________________
EXAMPLE
________________________________________________________
# INPUT TABLE(S):

y_1:
| term   | weight | influence |
| ------ | ------ | --------- |
| x1     | 3.00   | 12.21     |
| x2     | -1.96  | 5.14      |
| x1**2  | 0.53   | 0.91      |
| sin    | 0.93   | 0.52      |
| cos    | -0.05  | 0.0009    |

y_2:
| term   | weight | influence |
| ------ | ------ | --------- |
| x1     | 3.00   | 12.21     |
| x2     | -1.96  | 5.14      |

MSE (per-output): [0.217, 0.145]
MSE overall: 0.181

# Output:

DECISION
```
{{
    "keep": ["x1", "x2", "x1**2", "sin"],
    "drop": ["cos"]
}}
```

That's it - perform the keep/drop decision based on the information provided.


========================================================
DATASET AND PROBLEM DESCRIPTION
========================================================
{dataset_and_problem_description}


========================================================
CURRENT TERMS
========================================================
{current_terms}

# Current equation:
{current_equation}

========================================================
HISTORY
========================================================
{history}


========================================================
INPUT YOU RECEIVE
========================================================

INPUT TABLE(S):

{input}

MSE (per-output): {mse_per_output}
MSE overall: {mse_overall})PROMPT";

inline constexpr const char* kProposeTemplateSimplified =
    R"PROMPT(You are an automated assistant for proposing linear terms for the equations in a symbolic regression pipeline.

# Instructions:
* Propose candidate terms as valid numpy expressions, one per line, between triple backticks prepended with TERMS.
* Propose around {terms_per_round} terms ({first_round_n_candidates} if this is the first round).
* Use the problem description and the history of previous rounds.
* You may propose no terms.

Example output:

TERMS
```
x1
x2**2
np.sin(x3)
```

DATASET AND PROBLEM DESCRIPTION
------------------------------
{dataset_and_problem_description}

CURRENT TERMS:
------------------------------
{current_terms}

# Current equation:
{current_equation}

HISTORY
------------------------------
{history})PROMPT";

inline constexpr const char* kPruneTemplateSimplified =
    R"PROMPT(You are an equation-pruning assistant for symbolic regression.

# Instructions:
* Each table row gives a term, its fitted weight, and its influence (increase in validation MSE if the term is removed; ~= 0 means the term is useless).
* Place each term in exactly one of keep/drop - never both, never neither.
* You MUST keep {keep_n_terms} terms at most.
* Return the decision between triple backticks prepended with "DECISION":

DECISION
```
{{
    "keep":  ["term_a", "term_b", ...],
    "drop":  ["term_c", "term_d", ...]
}}
```

DATASET AND PROBLEM DESCRIPTION
------------------------------
{dataset_and_problem_description}

CURRENT TERMS
------------------------------
{current_terms}

HISTORY
------------------------------
{history}

INPUT TABLE(S):

{input}

MSE (per-output): {mse_per_output}
MSE overall: {mse_overall})PROMPT";

// ---------------------------------------------------------------------------
// Placeholder substitution.

inline std::string render_template(std::string_view tmpl,
                                   const std::unordered_map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        char c = tmpl[i];
        if (c == '{') {
            if (i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
                out += '{';
                ++i;
                continue;
            }
            std::size_t close = tmpl.find('}', i + 1);
            if (close == std::string_view::npos)
                throw Error("unterminated placeholder in prompt template");
            std::string name(tmpl.substr(i + 1, close - i - 1));
            auto it = values.find(name);
            if (it == values.end()) throw Error("unresolved placeholder '{" + name + "}'");
            out += it->second;
            i = close;
        } else if (c == '}') {
            if (i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
                out += '}';
                ++i;
                continue;
            }
            out += '}';
        } else {
            out += c;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipe-delimited tables in the INPUT TABLE(S) format: term column
// left-aligned, numeric columns decimal-aligned with %g formatting and
// right-aligned headers, exactly as the feedback tables the pruner consumes.

namespace detail {

// Characters after the decimal point; numbers without one align on a
// virtual point after their last digit ('e' starts the exponent tail).
inline int after_point(const std::string& s) {
    auto dot = s.rfind('.');
    if (dot != std::string::npos) return static_cast<int>(s.size() - dot - 1);
    auto e = s.rfind('e');
    if (e == std::string::npos) e = s.rfind('E');
    if (e != std::string::npos) return static_cast<int>(s.size() - e);
    return -1;
}

inline std::vector<std::string> decimal_align(const std::vector<double>& values) {
    std::vector<std::string> cells;
    cells.reserve(values.size());
    int max_after = -1;
    std::vector<int> after;
    for (double v : values) {
        cells.push_back(format_g6(v));
        after.push_back(after_point(cells.back()));
        max_after = std::max(max_after, after.back());
    }
    std::size_t width = 0;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        cells[i].append(static_cast<std::size_t>(max_after - after[i]), ' ');
        width = std::max(width, cells[i].size());
    }
    for (auto& c : cells) c.insert(0, width - c.size(), ' ');  // right-align
    return cells;
}

} // namespace detail

// One table per output: | term | weight | influence |.
inline std::string render_feedback_table(const std::string& output_name,
                                         const std::vector<std::string>& terms,
                                         const std::vector<double>& weights,
                                         const std::vector<double>& influences) {
    if (terms.size() != weights.size() || terms.size() != influences.size())
        throw Error("feedback table column length mismatch");
    std::vector<std::string> w_cells = detail::decimal_align(weights);
    std::vector<std::string> i_cells = detail::decimal_align(influences);

    std::size_t term_w = 4;  // len("term")
    for (const auto& t : terms) term_w = std::max(term_w, t.size());
    std::size_t weight_w = std::max<std::size_t>(6, w_cells.empty() ? 0 : w_cells[0].size());
    std::size_t infl_w = std::max<std::size_t>(9, i_cells.empty() ? 0 : i_cells[0].size());
    // Right-aligned cells all share one width; headers may still be wider.
    for (auto& c : w_cells) c.insert(0, std::max(weight_w, c.size()) - c.size(), ' ');
    for (auto& c : i_cells) c.insert(0, std::max(infl_w, c.size()) - c.size(), ' ');
    if (!w_cells.empty()) weight_w = std::max(weight_w, w_cells[0].size());
    if (!i_cells.empty()) infl_w = std::max(infl_w, i_cells[0].size());

    auto pad_right = [](std::string s, std::size_t w) {
        s.append(w - s.size(), ' ');
        return s;
    };
    auto pad_left = [](std::string s, std::size_t w) {
        s.insert(0, w - s.size(), ' ');
        return s;
    };

    std::string out = output_name + ":\n";
    out += "| " + pad_right("term", term_w) + " | " + pad_left("weight", weight_w) + " | " +
           pad_left("influence", infl_w) + " |\n";
    out += "|:" + std::string(term_w + 1, '-') + "|" + std::string(weight_w + 1, '-') + ":|" +
           std::string(infl_w + 1, '-') + ":|\n";
    for (std::size_t i = 0; i < terms.size(); ++i)
        out += "| " + pad_right(terms[i], term_w) + " | " + w_cells[i] + " | " + i_cells[i] +
               " |\n";
    return out;
}

// Per-output MSE list in shortest round-trip repr: [a, b, ...].
inline std::string render_mse_list(const std::vector<double>& per_output) {
    std::string out = "[";
    for (std::size_t i = 0; i < per_output.size(); ++i) {
        if (i) out += ", ";
        out += format_shortest(per_output[i]);
    }
    out += "]";
    return out;
}

// ---------------------------------------------------------------------------
// Context assembly.

struct ProposerContext {
    std::string description;                  // dataset and problem text
    std::vector<std::string> current_terms;   // source texts
    std::string current_equation;             // empty -> "None"
    std::vector<std::string> history;         // pre-formatted lines
    std::string data_preview;                 // omitted in simplified mode
    int terms_per_round = 5;
    int first_round_n_candidates = 10;
    bool first_round = true;
    bool simplified = false;
};

struct InfluenceFeedbackTable {
    std::string output_name;
    std::vector<std::string> terms;
    std::vector<double> weights;
    std::vector<double> influences;
};

struct PruneFeedback {
    std::vector<InfluenceFeedbackTable> tables;
    std::vector<double> mse_per_output;
    double mse_overall = 0.0;
    std::size_t keep_n_terms = 6;
};

inline std::string render_term_list(const std::vector<std::string>& terms) {
    std::string out = "[";
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (i) out += ", ";
        out += "'" + terms[i] + "'";
    }
    out += "]";
    return out;
}

inline std::string render_prompt(PromptKind kind, const ProposerContext& ctx,
                                 const PruneFeedback* feedback = nullptr) {
    std::unordered_map<std::string, std::string> values;
    values["dataset_and_problem_description"] = ctx.description;
    values["current_terms"] = render_term_list(ctx.current_terms);
    values["current_equation"] = ctx.current_equation.empty() ? "None" : ctx.current_equation;
    std::string history;
    for (const auto& h : ctx.history) {
        history += h;
        history += '\n';
    }
    if (!history.empty()) history.pop_back();
    values["history"] = history.empty() ? "None" : history;

    if (kind == PromptKind::Propose) {
        values["terms_per_round"] = std::to_string(ctx.terms_per_round);
        values["first_round_n_candidates"] = std::to_string(ctx.first_round_n_candidates);
        if (!ctx.simplified) values["input_preview"] = ctx.data_preview;
        return render_template(ctx.simplified ? kProposeTemplateSimplified : kProposeTemplate,
                               values);
    }

    if (!feedback) throw Error("prune prompt requires influence feedback");
    std::string tables;
    for (std::size_t i = 0; i < feedback->tables.size(); ++i) {
        const auto& t = feedback->tables[i];
        if (i) tables += "\n";
        tables += render_feedback_table(t.output_name, t.terms, t.weights, t.influences);
    }
    if (!tables.empty() && tables.back() == '\n') tables.pop_back();
    values["input"] = tables;
    values["mse_per_output"] = render_mse_list(feedback->mse_per_output);
    values["mse_overall"] = format_g6(feedback->mse_overall);
    values["keep_n_terms"] = std::to_string(feedback->keep_n_terms);
    return render_template(ctx.simplified ? kPruneTemplateSimplified : kPruneTemplate, values);
}

} // namespace igsr
