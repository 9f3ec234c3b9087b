#pragma once

// Run configuration. The native format is a small TOML subset (sections,
// dotted section names, scalars, one-line arrays, # comments); a JSON file
// with the same structure is accepted as an alternative. Loading then
// re-serializing preserves every effective value, defaults included.

#include <fstream>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "igsr/common.hpp"
#include "igsr/dataset.hpp"
#include "igsr/engine.hpp"
#include "igsr/propose.hpp"
#include "igsr/search.hpp"
#include "igsr/simgen.hpp"

namespace igsr {

// ---------------------------------------------------------------------------
// TOML subset -> json tree.

namespace detail {

inline std::string strip_toml_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        else if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

inline nlohmann::ordered_json parse_toml_scalar(const std::string& raw) {
    std::string v = trim(raw);
    if (v.empty()) throw ConfigError("empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"') throw ConfigError("unterminated string: " + v);
        std::string out;
        for (std::size_t i = 1; i + 1 < v.size(); ++i) {
            if (v[i] == '\\' && i + 2 < v.size()) {
                ++i;
                out += v[i];
            } else out += v[i];
        }
        return out;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.front() == '[') {
        if (v.back() != ']') throw ConfigError("unterminated array: " + v);
        auto arr = nlohmann::ordered_json::array();
        std::string inner = v.substr(1, v.size() - 2);
        std::string item;
        bool in_string = false;
        for (char c : inner) {
            if (c == '"') in_string = !in_string;
            if (c == ',' && !in_string) {
                if (!trim(item).empty()) arr.push_back(parse_toml_scalar(item));
                item.clear();
            } else item += c;
        }
        if (!trim(item).empty()) arr.push_back(parse_toml_scalar(item));
        return arr;
    }
    // Number: integer when it round-trips without a fractional marker.
    try {
        std::size_t used = 0;
        if (v.find('.') == std::string::npos && v.find('e') == std::string::npos &&
            v.find('E') == std::string::npos) {
            long long i = std::stoll(v, &used);
            if (used == v.size()) return i;
        }
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("cannot parse value: " + v);
}

} // namespace detail

inline nlohmann::ordered_json parse_toml_subset(const std::string& text) {
    nlohmann::ordered_json root = nlohmann::ordered_json::object();
    nlohmann::ordered_json* section = &root;
    std::size_t line_no = 0;
    for (const auto& raw : split_lines(text)) {
        ++line_no;
        std::string line = trim(detail::strip_toml_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": malformed section");
            std::string path = trim(line.substr(1, line.size() - 2));
            section = &root;
            std::size_t pos = 0;
            while (pos <= path.size()) {
                std::size_t dot = path.find('.', pos);
                std::string part =
                    trim(dot == std::string::npos ? path.substr(pos) : path.substr(pos, dot - pos));
                if (part.empty())
                    throw ConfigError("line " + std::to_string(line_no) + ": empty section name");
                section = &((*section)[part]);
                if (section->is_null()) *section = nlohmann::ordered_json::object();
                if (dot == std::string::npos) break;
                pos = dot + 1;
            }
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        try {
            (*section)[key] = detail::parse_toml_scalar(line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return root;
}

// ---------------------------------------------------------------------------
// Configuration model.

struct DataSourceConfig {
    std::string csv_path;                // exactly one of csv_path / simulate
    std::vector<std::string> targets;    // csv mode
    std::string simulate;                // "pkpd" | "synthetic"
    std::string pkpd_variant = "chemo_radio";
    SyntheticSpec synthetic;
    std::size_t patients = 100;
    SplitFractions fractions;
    bool nested_validation = false;
    std::size_t distractor_features = 0;
};

struct ProposerConfig {
    std::string kind = "grammar";        // grammar | llm | replay
    GrammarProposerOptions grammar;
    std::string transcript;              // replay input
    LlmEndpointConfig llm;
};

struct RunConfig {
    std::string description;
    std::vector<std::uint64_t> seeds = {0};
    DataSourceConfig data;
    SearchConfig search;                 // engine settings nested inside
    ProposerConfig proposer;
};

namespace detail {

template <typename T>
T get_or(const nlohmann::ordered_json& j, const std::string& key, T fallback) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad value for '" + key + "': " + e.what());
    }
}

inline const nlohmann::ordered_json& section(const nlohmann::ordered_json& j,
                                             const std::string& name) {
    static const nlohmann::ordered_json empty = nlohmann::ordered_json::object();
    if (j.is_object() && j.contains(name)) return j.at(name);
    return empty;
}

inline InfluenceVariant influence_from_name(const std::string& name) {
    if (name == "no_refit") return InfluenceVariant::NoRefit;
    if (name == "refit_full" || name == "refit_aware") return InfluenceVariant::RefitFull;
    if (name == "refit_efficient" || name == "refit_aware_efficient")
        return InfluenceVariant::RefitEfficient;
    throw ConfigError("unknown influence variant '" + name + "'");
}

inline PruneMode prune_from_name(const std::string& name) {
    if (name == "top_k") return PruneMode::TopK;
    if (name == "threshold") return PruneMode::Threshold;
    if (name == "agentic") return PruneMode::Agentic;
    throw ConfigError("unknown pruning mode '" + name + "'");
}

inline PkpdVariant pkpd_variant_from_name(const std::string& name) {
    if (name == "none") return PkpdVariant::None;
    if (name == "chemo") return PkpdVariant::Chemo;
    if (name == "chemo_radio") return PkpdVariant::ChemoRadio;
    throw ConfigError("unknown pkpd variant '" + name + "'");
}

} // namespace detail

inline RunConfig config_from_json(const nlohmann::ordered_json& j) {
    using detail::get_or;
    using detail::section;
    RunConfig cfg;
    cfg.description = get_or<std::string>(j, "description", "");
    if (j.contains("seeds")) {
        cfg.seeds.clear();
        for (const auto& s : j.at("seeds")) cfg.seeds.push_back(s.get<std::uint64_t>());
        if (cfg.seeds.empty()) throw ConfigError("seeds list is empty");
    }

    const auto& data = section(j, "data");
    cfg.data.csv_path = get_or<std::string>(data, "csv", "");
    cfg.data.simulate = get_or<std::string>(data, "simulate", "");
    if (cfg.data.csv_path.empty() == cfg.data.simulate.empty())
        throw ConfigError("config must set exactly one dataset source (data.csv or data.simulate)");
    if (!cfg.data.simulate.empty() && cfg.data.simulate != "pkpd" &&
        cfg.data.simulate != "synthetic")
        throw ConfigError("data.simulate must be 'pkpd' or 'synthetic'");
    if (data.contains("targets"))
        cfg.data.targets = data.at("targets").get<std::vector<std::string>>();
    if (!cfg.data.csv_path.empty() && cfg.data.targets.empty())
        throw ConfigError("csv datasets need data.targets");
    cfg.data.pkpd_variant = get_or<std::string>(data, "variant", "chemo_radio");
    cfg.data.synthetic.variant = static_cast<int>(get_or<long long>(data, "synthetic_variant", 1));
    cfg.data.patients = static_cast<std::size_t>(get_or<long long>(data, "patients", 100));
    cfg.data.fractions.train = get_or<double>(data, "train_fraction", 0.7);
    cfg.data.fractions.validation = get_or<double>(data, "validation_fraction", 0.15);
    cfg.data.fractions.test = get_or<double>(data, "test_fraction", 0.15);
    cfg.data.nested_validation = get_or<bool>(data, "nested_validation", false);
    cfg.data.distractor_features =
        static_cast<std::size_t>(get_or<long long>(data, "distractor_features", 0));

    const auto& search = section(j, "search");
    std::string mode = get_or<std::string>(search, "mode", "mcts");
    if (mode == "mcts") cfg.search.mode = SearchMode::Mcts;
    else if (mode == "iterative") cfg.search.mode = SearchMode::Iterative;
    else throw ConfigError("search.mode must be 'mcts' or 'iterative'");
    cfg.search.total_budget = static_cast<int>(get_or<long long>(search, "total_budget", 30));
    cfg.search.n_successors = static_cast<int>(get_or<long long>(search, "n_successors", 5));
    cfg.search.exploration_c = get_or<double>(search, "exploration_constant", M_SQRT2);
    cfg.search.depth_limit = static_cast<int>(get_or<long long>(search, "depth_limit", 10));
    cfg.search.rollout_is_just_node_reward =
        get_or<bool>(search, "rollout_is_just_node_reward", true);
    cfg.search.rollout_depth = static_cast<int>(get_or<long long>(search, "rollout_depth", 1));
    cfg.search.jobs = static_cast<int>(get_or<long long>(search, "jobs", 1));
    if (cfg.search.total_budget < 1 || cfg.search.n_successors < 1 || cfg.search.depth_limit < 1 ||
        cfg.search.jobs < 1 || cfg.search.exploration_c < 0.0)
        throw ConfigError("search counts must be positive and exploration_constant non-negative");

    const auto& engine = section(j, "engine");
    long long keep = get_or<long long>(engine, "keep_n_terms", 6);
    cfg.search.engine.keep_n_enabled = keep > 0;
    cfg.search.engine.keep_n_terms = keep > 0 ? static_cast<std::size_t>(keep) : 0;
    cfg.search.engine.terms_per_round =
        static_cast<int>(get_or<long long>(engine, "terms_per_round", 5));
    cfg.search.engine.first_round_n_candidates =
        static_cast<int>(get_or<long long>(engine, "first_round_n_candidates", 10));
    cfg.search.engine.influence_variant =
        detail::influence_from_name(get_or<std::string>(engine, "influence", "no_refit"));
    cfg.search.engine.prune_mode =
        detail::prune_from_name(get_or<std::string>(engine, "pruning", "top_k"));
    cfg.search.engine.threshold_epsilon = get_or<double>(engine, "threshold_epsilon", 0.0);
    cfg.search.engine.ridge_lambda = get_or<double>(engine, "ridge_lambda", 0.0);
    cfg.search.engine.simplified_prompts = get_or<bool>(engine, "simplified_prompts", false);
    cfg.search.engine.proposer_retry_budget =
        static_cast<int>(get_or<long long>(engine, "proposer_retry_budget", 2));
    cfg.search.engine.nested_validation = cfg.data.nested_validation;

    const auto& tlo = section(j, "tlo");
    cfg.search.engine.tlo_enabled = get_or<bool>(tlo, "enabled", false);
    cfg.search.engine.tlo.max_iterations =
        static_cast<int>(get_or<long long>(tlo, "max_iterations", 200));
    cfg.search.engine.tlo.objective_tol = get_or<double>(tlo, "objective_tol", 1e-12);
    cfg.search.engine.tlo.gradient_tol = get_or<double>(tlo, "gradient_tol", 1e-8);
    if (tlo.contains("lower_bound"))
        cfg.search.engine.tlo.lower_bound = tlo.at("lower_bound").get<double>();
    if (tlo.contains("upper_bound"))
        cfg.search.engine.tlo.upper_bound = tlo.at("upper_bound").get<double>();

    const auto& proposer = section(j, "proposer");
    cfg.proposer.kind = get_or<std::string>(proposer, "kind", "grammar");
    if (cfg.proposer.kind != "grammar" && cfg.proposer.kind != "llm" &&
        cfg.proposer.kind != "replay")
        throw ConfigError("proposer.kind must be one of grammar, llm, replay");
    const auto& grammar = section(proposer, "grammar");
    if (grammar.contains("pool"))
        cfg.proposer.grammar.pool = grammar.at("pool").get<std::vector<std::string>>();
    cfg.proposer.grammar.pool_probability = get_or<double>(grammar, "pool_probability", 1.0);
    const auto& replay = section(proposer, "replay");
    cfg.proposer.transcript = get_or<std::string>(replay, "transcript", "");
    if (cfg.proposer.kind == "replay" && cfg.proposer.transcript.empty())
        throw ConfigError("replay proposer needs proposer.replay.transcript");

    const auto& llm = section(j, "llm");
    cfg.proposer.llm.base_url = get_or<std::string>(llm, "base_url", "");
    cfg.proposer.llm.model = get_or<std::string>(llm, "model", "");
    cfg.proposer.llm.temperature = get_or<double>(llm, "temperature", 1.0);
    cfg.proposer.llm.max_retries = static_cast<int>(get_or<long long>(llm, "max_retries", 3));
    cfg.proposer.llm.backoff_initial_ms =
        static_cast<int>(get_or<long long>(llm, "backoff_initial_ms", 250));
    cfg.proposer.llm.token_budget = get_or<long long>(llm, "token_budget", 0LL);
    cfg.proposer.llm.api_key_env = get_or<std::string>(llm, "api_key_env", "IGSR_LLM_API_KEY");
    return cfg;
}

inline RunConfig load_config_text(const std::string& text, bool is_json) {
    nlohmann::ordered_json j;
    if (is_json) {
        j = nlohmann::ordered_json::parse(text, nullptr, false);
        if (j.is_discarded()) throw ConfigError("malformed JSON config");
    } else {
        j = parse_toml_subset(text);
    }
    return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
    return load_config_text(ss.str(), is_json);
}

// Canonical serialization with every effective value spelled out.
inline std::string serialize_config(const RunConfig& cfg) {
    std::string out;
    auto str = [](const std::string& v) { return "\"" + v + "\""; };
    out += "description = " + str(cfg.description) + "\n";
    out += "seeds = [";
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
        out += (i ? ", " : "") + std::to_string(cfg.seeds[i]);
    out += "]\n\n[data]\n";
    if (!cfg.data.csv_path.empty()) {
        out += "csv = " + str(cfg.data.csv_path) + "\n";
        out += "targets = [";
        for (std::size_t i = 0; i < cfg.data.targets.size(); ++i)
            out += (i ? ", " : "") + str(cfg.data.targets[i]);
        out += "]\n";
    } else {
        out += "simulate = " + str(cfg.data.simulate) + "\n";
        out += "variant = " + str(cfg.data.pkpd_variant) + "\n";
        out += "synthetic_variant = " + std::to_string(cfg.data.synthetic.variant) + "\n";
        out += "patients = " + std::to_string(cfg.data.patients) + "\n";
    }
    out += "train_fraction = " + format_shortest(cfg.data.fractions.train) + "\n";
    out += "validation_fraction = " + format_shortest(cfg.data.fractions.validation) + "\n";
    out += "test_fraction = " + format_shortest(cfg.data.fractions.test) + "\n";
    out += std::string("nested_validation = ") + (cfg.data.nested_validation ? "true" : "false") +
           "\n";
    out += "distractor_features = " + std::to_string(cfg.data.distractor_features) + "\n";

    const auto& s = cfg.search;
    out += "\n[search]\n";
    out += std::string("mode = ") + (s.mode == SearchMode::Mcts ? "\"mcts\"" : "\"iterative\"") +
           "\n";
    out += "total_budget = " + std::to_string(s.total_budget) + "\n";
    out += "n_successors = " + std::to_string(s.n_successors) + "\n";
    out += "exploration_constant = " + format_shortest(s.exploration_c) + "\n";
    out += "depth_limit = " + std::to_string(s.depth_limit) + "\n";
    out += std::string("rollout_is_just_node_reward = ") +
           (s.rollout_is_just_node_reward ? "true" : "false") + "\n";
    out += "rollout_depth = " + std::to_string(s.rollout_depth) + "\n";
    out += "jobs = " + std::to_string(s.jobs) + "\n";

    const auto& e = s.engine;
    out += "\n[engine]\n";
    out += "keep_n_terms = " + std::to_string(e.keep_n_enabled ? e.keep_n_terms : 0) + "\n";
    out += "terms_per_round = " + std::to_string(e.terms_per_round) + "\n";
    out += "first_round_n_candidates = " + std::to_string(e.first_round_n_candidates) + "\n";
    out += "influence = " + str(influence_variant_name(e.influence_variant)) + "\n";
    out += "pruning = " + str(prune_mode_name(e.prune_mode)) + "\n";
    out += "threshold_epsilon = " + format_shortest(e.threshold_epsilon) + "\n";
    out += "ridge_lambda = " + format_shortest(e.ridge_lambda) + "\n";
    out += std::string("simplified_prompts = ") + (e.simplified_prompts ? "true" : "false") + "\n";
    out += "proposer_retry_budget = " + std::to_string(e.proposer_retry_budget) + "\n";

    out += "\n[tlo]\n";
    out += std::string("enabled = ") + (e.tlo_enabled ? "true" : "false") + "\n";
    out += "max_iterations = " + std::to_string(e.tlo.max_iterations) + "\n";
    out += "objective_tol = " + format_shortest(e.tlo.objective_tol) + "\n";
    out += "gradient_tol = " + format_shortest(e.tlo.gradient_tol) + "\n";
    if (e.tlo.lower_bound) out += "lower_bound = " + format_shortest(*e.tlo.lower_bound) + "\n";
    if (e.tlo.upper_bound) out += "upper_bound = " + format_shortest(*e.tlo.upper_bound) + "\n";

    out += "\n[proposer]\n";
    out += "kind = " + str(cfg.proposer.kind) + "\n";
    out += "\n[proposer.grammar]\n";
    out += "pool = [";
    for (std::size_t i = 0; i < cfg.proposer.grammar.pool.size(); ++i)
        out += (i ? ", " : "") + str(cfg.proposer.grammar.pool[i]);
    out += "]\n";
    out += "pool_probability = " + format_shortest(cfg.proposer.grammar.pool_probability) + "\n";
    out += "\n[proposer.replay]\n";
    out += "transcript = " + str(cfg.proposer.transcript) + "\n";

    const auto& l = cfg.proposer.llm;
    out += "\n[llm]\n";
    out += "base_url = " + str(l.base_url) + "\n";
    out += "model = " + str(l.model) + "\n";
    out += "temperature = " + format_shortest(l.temperature) + "\n";
    out += "max_retries = " + std::to_string(l.max_retries) + "\n";
    out += "backoff_initial_ms = " + std::to_string(l.backoff_initial_ms) + "\n";
    out += "token_budget = " + std::to_string(l.token_budget) + "\n";
    out += "api_key_env = " + str(l.api_key_env) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Dataset and description assembly. Simulated sources are regenerated for
// every seed; all sub-seeds flow from the run seed by labeled hashing.

inline Dataset make_dataset(const RunConfig& cfg, std::uint64_t seed) {
    Dataset d;
    if (!cfg.data.csv_path.empty()) {
        d = load_table(cfg.data.csv_path, cfg.data.targets);
    } else if (cfg.data.simulate == "pkpd") {
        d = simulate_pkpd(detail::pkpd_variant_from_name(cfg.data.pkpd_variant),
                          cfg.data.patients, PkpdParams{}, derive_seed(seed, "data"));
    } else {
        d = simulate_synthetic_variant(cfg.data.synthetic, cfg.data.patients,
                                       derive_seed(seed, "data"));
    }
    if (cfg.data.distractor_features > 0)
        d = add_distractor_features(d, cfg.data.distractor_features,
                                    derive_seed(seed, "distractors"));
    return split_dataset(std::move(d), cfg.data.fractions, seed, cfg.data.nested_validation);
}

inline std::string build_default_description(const Dataset& d) {
    std::string out = "Discover sparse linear-in-basis equations for the target(s) ";
    for (std::size_t i = 0; i < d.target_names().size(); ++i)
        out += (i ? ", " : "") + ("**" + d.target_names()[i] + "**");
    out += " from the features:\n";
    for (const auto& f : d.feature_names())
        if (f != kTrajectoryColumn) out += "* " + f + "\n";
    out += "Each proposed term is a numpy expression over these features.";
    return out;
}

} // namespace igsr
