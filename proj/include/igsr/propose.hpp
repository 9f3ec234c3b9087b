#pragma once

// Term proposers. All proposers sit behind one seam: they take a rendered
// prompt plus a deterministic call context and return a reply text in the
// TERMS / DECISION wire format. The HTTP chat client talks to any
// chat-completions-compatible endpoint; the grammar proposer synthesizes
// replies offline for deterministic runs; the replay proposer substitutes a
// recorded transcript at the same boundary.

#include <atomic>
#include <chrono>
#include <fstream>
#include <json.hpp>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "igsr/common.hpp"
#include "igsr/dataset.hpp"
#include "igsr/expr.hpp"
#include "igsr/fenced.hpp"
#include "igsr/prompts.hpp"
#include "igsr/prune.hpp"
#include "igsr/rng.hpp"

namespace igsr {

// ---------------------------------------------------------------------------
// Token accounting. The meter is shared by every in-flight call; the
// exhausted latch is only raised at coordinator boundaries (between search
// iterations) so traces do not depend on completion interleaving.

struct TokenUsage {
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    long long total() const { return prompt_tokens + completion_tokens; }
};

class BudgetMeter {
public:
    explicit BudgetMeter(long long budget = 0) : budget_(budget) {}

    void add(const TokenUsage& u) {
        prompt_ += u.prompt_tokens;
        completion_ += u.completion_tokens;
    }

    TokenUsage used() const { return {prompt_.load(), completion_.load()}; }
    long long budget() const { return budget_; }
    bool exceeded() const { return budget_ > 0 && used().total() >= budget_; }
    bool latched() const { return latched_.load(); }

    // Returns true when the budget is spent; raises the latch that makes
    // subsequent llm_complete calls abort.
    bool latch_if_exceeded() {
        if (exceeded()) latched_ = true;
        return latched_.load();
    }

private:
    std::atomic<long long> prompt_{0};
    std::atomic<long long> completion_{0};
    long long budget_;
    std::atomic<bool> latched_{false};
};

// Deterministic identity of one proposer call. Replies are keyed by
// (prompt hash, call id) in transcripts: two successors of the same node
// render identical prompts, so the call id is what keeps their recorded
// replies distinct and replay order-independent.
struct CallContext {
    std::string node_id;
    int successor = 0;
    int attempt = 0;
    std::uint64_t seed = 0;

    std::string id(PromptKind kind) const {
        return node_id + "/" + std::to_string(successor) + "/" + std::to_string(attempt) + "/" +
               (kind == PromptKind::Propose ? "propose" : "prune");
    }
};

inline std::string prompt_hash_hex(const std::string& prompt) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(prompt)));
    return buf;
}

struct ChatReply {
    std::string content;
    TokenUsage usage;
};

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;
    virtual ChatReply complete(PromptKind kind, const std::string& prompt, const CallContext& call,
                               const ProposerContext& ctx, const PruneFeedback* feedback) = 0;
    virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// TERMS block parsing. One term per non-blank trimmed line; an empty block is
// an explicitly permitted empty proposal. Lines the grammar rejects are
// recorded, not fatal.

struct TermsParse {
    std::vector<Term> terms;
    std::vector<std::pair<std::string, std::string>> rejected;  // line -> reason
    std::vector<std::string> warnings;
};

inline TermsParse parse_terms_block(const std::string& reply) {
    auto block = extract_marked_block(reply, "TERMS");
    if (!block) throw Error("no TERMS block found in reply");
    TermsParse out;
    out.warnings = block->warnings;
    for (const auto& raw : split_lines(block->content)) {
        std::string line = trim(raw);
        if (line.empty()) continue;
        try {
            out.terms.push_back(Term::parse(line));
        } catch (const Error& e) {
            out.rejected.emplace_back(line, e.what());
        }
    }
    return out;
}

inline std::string render_terms_block(const std::vector<std::string>& term_sources) {
    std::string out = "TERMS\n```\n";
    for (const auto& t : term_sources) {
        out += t;
        out += '\n';
    }
    out += "```";
    return out;
}

// ---------------------------------------------------------------------------
// HTTP chat-completions client. POST {base_url}/chat/completions with
// {model, messages, temperature}; reads choices[0].message.content and
// usage.{prompt_tokens, completion_tokens}. Transient failures (connection
// errors, 429, 5xx) are retried with exponential backoff.

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 1.0;
};

struct ChatResponse {
    std::string content;
    TokenUsage usage;
};

struct LlmEndpointConfig {
    std::string base_url;        // e.g. https://api.openai.com/v1
    std::string model;
    double temperature = 1.0;
    int max_retries = 3;
    int backoff_initial_ms = 250;
    long long token_budget = 0;  // 0 disables the budget
    std::string api_key_env = "IGSR_LLM_API_KEY";
};

// The HTTP client itself (llm_complete and LlmBackend) lives in
// igsr/http_client.hpp so only HTTP-using translation units pay for httplib.

// ---------------------------------------------------------------------------
// Offline grammar proposer. Samples candidate terms from a fixed grammar over
// the dataset's feature names (variables, pairwise products, np.log(x + 1),
// np.sqrt(x), squares, np.sin / np.cos / np.exp of single variables), merged
// with an optional oracle pool. Every emitted term parses and evaluates
// finitely on the active splits; terms already in play are never re-proposed.
// Replies are rendered through the TERMS wire format so the downstream path
// is identical to the LLM one.

struct GrammarProposerOptions {
    std::vector<std::string> pool;   // oracle terms merged into proposals
    double pool_probability = 1.0;   // per-term chance of emitting a missing pool term each round
    std::vector<std::string> exclude_features = {kTrajectoryColumn, "t"};
};

class GrammarProposer : public CompletionBackend {
public:
    GrammarProposer(const Dataset& data, GrammarProposerOptions opts = {})
        : opts_(std::move(opts)) {
        build_universe(data);
        for (const auto& src : opts_.pool) {
            Term t = Term::parse(src);
            if (term_is_usable(t, data)) pool_.push_back(std::move(t));
        }
    }

    ChatReply complete(PromptKind kind, const std::string&, const CallContext& call,
                       const ProposerContext& ctx, const PruneFeedback* feedback) override {
        if (kind == PromptKind::Prune) return {synthesize_decision(feedback), {}};
        CounterRng rng(derive_seed(call.seed, "grammar", static_cast<std::uint64_t>(call.attempt)));

        std::set<std::string> taken;
        for (const auto& src : ctx.current_terms) {
            try {
                taken.insert(Term::parse(src).canonical);
            } catch (const Error&) {
            }
        }

        const std::size_t want = static_cast<std::size_t>(
            ctx.first_round ? ctx.first_round_n_candidates : ctx.terms_per_round);
        std::vector<std::string> chosen;
        for (const auto& t : pool_) {
            if (taken.count(t.canonical)) continue;
            if (opts_.pool_probability >= 1.0 || rng.bernoulli(opts_.pool_probability)) {
                chosen.push_back(t.source);
                taken.insert(t.canonical);
            }
        }
        std::size_t guard = universe_.size() * 10 + 16;
        while (chosen.size() < want && guard-- > 0 && taken.size() < universe_.size() + pool_.size()) {
            const Term& t = universe_[rng.below(universe_.size())];
            if (taken.count(t.canonical)) continue;
            chosen.push_back(t.source);
            taken.insert(t.canonical);
        }
        return {render_terms_block(chosen), {}};
    }

    std::string name() const override { return "grammar"; }

    std::size_t universe_size() const { return universe_.size(); }

private:
    void build_universe(const Dataset& data) {
        std::vector<std::string> vars;
        for (const auto& n : data.feature_names()) {
            bool excluded = false;
            for (const auto& e : opts_.exclude_features) excluded |= (n == e);
            if (!excluded) vars.push_back(n);
        }
        std::vector<std::string> sources;
        for (const auto& v : vars) sources.push_back(v);
        for (std::size_t i = 0; i < vars.size(); ++i)
            for (std::size_t j = i + 1; j < vars.size(); ++j)
                sources.push_back(vars[i] + " * " + vars[j]);
        for (const auto& v : vars) {
            sources.push_back("np.log(" + v + " + 1)");
            sources.push_back("np.sqrt(" + v + ")");
            sources.push_back(v + "**2");
            sources.push_back("np.sin(" + v + ")");
            sources.push_back("np.cos(" + v + ")");
            sources.push_back("np.exp(" + v + ")");
        }
        for (const auto& src : sources) {
            Term t = Term::parse(src);
            if (term_is_usable(t, data)) universe_.push_back(std::move(t));
        }
    }

    static bool term_is_usable(const Term& t, const Dataset& d) {
        try {
            for (Split s : d.active_splits()) {
                auto col = evaluate(t.ast, d.frame(s), d.rows_of(s).size());
                if (!all_finite(col)) return false;
            }
        } catch (const Error&) {
            return false;
        }
        return true;
    }

    // Offline stand-in for the agentic pruner: a DECISION block keeping the
    // top keep_n_terms by influence.
    static std::string synthesize_decision(const PruneFeedback* feedback) {
        if (!feedback || feedback->tables.empty())
            throw Error("grammar pruner needs influence feedback");
        const auto& terms = feedback->tables.front().terms;
        std::vector<double> agg(terms.size(), std::numeric_limits<double>::lowest());
        for (const auto& t : feedback->tables)
            for (std::size_t i = 0; i < t.influences.size(); ++i)
                agg[i] = std::max(agg[i], t.influences[i]);
        PruneDecision d = prune_deterministic(terms, agg, PruneMode::TopK, feedback->keep_n_terms);
        std::string out = "DECISION\n```\n{\n    \"keep\": [";
        for (std::size_t i = 0; i < d.keep.size(); ++i)
            out += (i ? ", " : "") + ("\"" + d.keep[i] + "\"");
        out += "],\n    \"drop\": [";
        for (std::size_t i = 0; i < d.drop.size(); ++i)
            out += (i ? ", " : "") + ("\"" + d.drop[i] + "\"");
        out += "]\n}\n```";
        return out;
    }

    GrammarProposerOptions opts_;
    std::vector<Term> universe_;
    std::vector<Term> pool_;
};

// ---------------------------------------------------------------------------
// Transcript recording and replay. A transcript is JSONL with one entry per
// call, keyed by (hash of the full rendered prompt, call id).

class TranscriptRecorder : public CompletionBackend {
public:
    TranscriptRecorder(std::shared_ptr<CompletionBackend> inner, std::string path)
        : inner_(std::move(inner)), path_(std::move(path)) {}

    ChatReply complete(PromptKind kind, const std::string& prompt, const CallContext& call,
                       const ProposerContext& ctx, const PruneFeedback* feedback) override {
        ChatReply reply = inner_->complete(kind, prompt, call, ctx, feedback);
        nlohmann::ordered_json entry;
        entry["prompt_hash"] = prompt_hash_hex(prompt);
        entry["call"] = call.id(kind);
        entry["reply"] = reply.content;
        entry["prompt_tokens"] = reply.usage.prompt_tokens;
        entry["completion_tokens"] = reply.usage.completion_tokens;
        std::lock_guard<std::mutex> lock(mu_);
        entries_.push_back(std::move(entry));
        return reply;
    }

    std::string name() const override { return inner_->name() + "+record"; }

    // Entries are sorted by call id so the file does not depend on
    // completion order.
    void save() const {
        std::lock_guard<std::mutex> lock(mu_);
        std::vector<nlohmann::ordered_json> sorted = entries_;
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
            return a.at("call").template get<std::string>() <
                   b.at("call").template get<std::string>();
        });
        std::ofstream out(path_, std::ios::binary);
        if (!out) throw Error("cannot write transcript '" + path_ + "'");
        for (const auto& e : sorted) out << e.dump() << '\n';
    }

private:
    std::shared_ptr<CompletionBackend> inner_;
    std::string path_;
    mutable std::mutex mu_;
    std::vector<nlohmann::ordered_json> entries_;
};

class ReplayBackend : public CompletionBackend {
public:
    ReplayBackend(std::string path, std::shared_ptr<BudgetMeter> meter)
        : meter_(std::move(meter)) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open transcript '" + path + "'");
        std::string line;
        while (std::getline(in, line)) {
            if (trim(line).empty()) continue;
            auto j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded()) throw Error("malformed transcript line in '" + path + "'");
            Entry e;
            e.reply = j.at("reply").get<std::string>();
            e.usage.prompt_tokens = j.value("prompt_tokens", 0LL);
            e.usage.completion_tokens = j.value("completion_tokens", 0LL);
            std::string key = j.at("prompt_hash").get<std::string>() + "|" +
                              j.at("call").get<std::string>();
            entries_[key] = std::move(e);
        }
    }

    ChatReply complete(PromptKind kind, const std::string& prompt, const CallContext& call,
                       const ProposerContext&, const PruneFeedback*) override {
        if (meter_ && meter_->latched()) throw BudgetExceeded("token budget exceeded");
        std::string key = prompt_hash_hex(prompt) + "|" + call.id(kind);
        auto it = entries_.find(key);
        if (it == entries_.end())
            throw Error("transcript has no reply for call " + call.id(kind) +
                        " (prompt hash " + prompt_hash_hex(prompt) + ")");
        if (meter_) meter_->add(it->second.usage);
        return {it->second.reply, it->second.usage};
    }

    std::string name() const override { return "replay"; }

private:
    struct Entry {
        std::string reply;
        TokenUsage usage;
    };
    std::unordered_map<std::string, Entry> entries_;
    std::shared_ptr<BudgetMeter> meter_;
};

} // namespace igsr
