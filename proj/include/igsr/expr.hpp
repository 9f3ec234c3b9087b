#pragma once

// Expression dialect for candidate basis functions. Proposers emit terms as
// numpy-style expressions ("np.sin(x3)", "x1 * x2", "1 / (x_1**2 + c(0.5))");
// this header parses them into immutable ASTs, prints a canonical text form,
// evaluates them column-wise, and provides the canonicalization and
// skeletonization rewrites used for term comparison. The grammar is
// documented in docs/expression-language.md.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "igsr/common.hpp"

namespace igsr {

enum class NodeKind { Constant, Variable, Unary, Binary, Call, Param };
enum class BinaryOp { Add, Sub, Mul, Div, Pow };
enum class UnaryOp { Neg };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    NodeKind kind;
    double value = 0.0;     // Constant payload, or Param initial value
    std::string name;       // Variable identifier or function name
    BinaryOp bop = BinaryOp::Add;
    UnaryOp uop = UnaryOp::Neg;
    std::vector<ExprPtr> args;
};

// Functions accepted by the grammar. Anything else is rejected per term.
inline const std::set<std::string>& supported_functions() {
    static const std::set<std::string> fns = {
        "log", "log1p", "exp", "sin", "cos", "tan", "sqrt", "abs", "sign"};
    return fns;
}

inline ExprPtr make_constant(double v) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Constant;
    e->value = v;
    return e;
}

inline ExprPtr make_variable(std::string name) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Variable;
    e->name = std::move(name);
    return e;
}

inline ExprPtr make_param(double init) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Param;
    e->value = init;
    return e;
}

inline ExprPtr make_unary(UnaryOp op, ExprPtr a) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Unary;
    e->uop = op;
    e->args = {std::move(a)};
    return e;
}

inline ExprPtr make_binary(BinaryOp op, ExprPtr a, ExprPtr b) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Binary;
    e->bop = op;
    e->args = {std::move(a), std::move(b)};
    return e;
}

inline ExprPtr make_call(std::string fn, ExprPtr a) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Call;
    e->name = std::move(fn);
    e->args = {std::move(a)};
    return e;
}

inline bool is_constant(const ExprPtr& e, double v) {
    return e->kind == NodeKind::Constant && e->value == v;
}

inline bool structurally_equal(const Expr& a, const Expr& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
    case NodeKind::Constant:
    case NodeKind::Param:
        // Bit-level comparison so that -0.0 and 0.0 stay distinct.
        return std::memcmp(&a.value, &b.value, sizeof(double)) == 0;
    case NodeKind::Variable: return a.name == b.name;
    case NodeKind::Unary:
        if (a.uop != b.uop) return false;
        break;
    case NodeKind::Binary:
        if (a.bop != b.bop) return false;
        break;
    case NodeKind::Call:
        if (a.name != b.name) return false;
        break;
    }
    if (a.args.size() != b.args.size()) return false;
    for (std::size_t i = 0; i < a.args.size(); ++i)
        if (!structurally_equal(*a.args[i], *b.args[i])) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Parser. Python-like precedence: +,- < *,/ < unary - < ** (right-assoc).

namespace detail {

class Parser {
public:
    explicit Parser(std::string_view text) : s_(text) {}

    ExprPtr parse() {
        ExprPtr e = expression();
        skip_ws();
        if (pos_ != s_.size())
            throw ParseError("unexpected trailing input", pos_);
        return e;
    }

private:
    std::string_view s_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }

    char peek() {
        skip_ws();
        return pos_ < s_.size() ? s_[pos_] : '\0';
    }

    bool consume(char c) {
        if (peek() == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c, const char* what) {
        if (!consume(c)) throw ParseError(std::string("expected '") + c + "' " + what, pos_);
    }

    bool at_number() {
        char c = peek();
        if (std::isdigit(static_cast<unsigned char>(c))) return true;
        return c == '.' && pos_ + 1 < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_ + 1]));
    }

    double number() {
        skip_ws();
        std::size_t start = pos_;
        while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        if (pos_ < s_.size() && s_[pos_] == '.') {
            ++pos_;
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
        }
        if (pos_ == start) throw ParseError("expected a number", pos_);
        if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
            std::size_t mark = pos_ + 1;
            if (mark < s_.size() && (s_[mark] == '+' || s_[mark] == '-')) ++mark;
            if (mark < s_.size() && std::isdigit(static_cast<unsigned char>(s_[mark]))) {
                pos_ = mark;
                while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) ++pos_;
            }
        }
        double v = 0.0;
        auto res = std::from_chars(s_.data() + start, s_.data() + pos_, v);
        if (res.ec != std::errc{}) throw ParseError("malformed numeric literal", start);
        return v;
    }

    std::string identifier() {
        skip_ws();
        std::size_t start = pos_;
        while (pos_ < s_.size() &&
               (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
            ++pos_;
        if (pos_ == start) throw ParseError("expected an identifier", pos_);
        return std::string(s_.substr(start, pos_ - start));
    }

    ExprPtr expression() {
        ExprPtr a = term();
        while (true) {
            if (consume('+')) a = make_binary(BinaryOp::Add, a, term());
            else if (consume('-')) a = make_binary(BinaryOp::Sub, a, term());
            else break;
        }
        return a;
    }

    ExprPtr term() {
        ExprPtr a = unary();
        while (true) {
            skip_ws();
            if (pos_ < s_.size() && s_[pos_] == '*' &&
                !(pos_ + 1 < s_.size() && s_[pos_ + 1] == '*')) {
                ++pos_;
                a = make_binary(BinaryOp::Mul, a, unary());
            } else if (consume('/')) {
                a = make_binary(BinaryOp::Div, a, unary());
            } else break;
        }
        return a;
    }

    ExprPtr unary() {
        if (consume('-')) {
            ExprPtr u = unary();
            if (u->kind == NodeKind::Constant) return make_constant(-u->value);
            return make_unary(UnaryOp::Neg, u);
        }
        return power();
    }

    ExprPtr power() {
        ExprPtr base = atom();
        skip_ws();
        if (pos_ + 1 < s_.size() && s_[pos_] == '*' && s_[pos_ + 1] == '*') {
            pos_ += 2;
            return make_binary(BinaryOp::Pow, base, unary());  // right-associative
        }
        return base;
    }

    ExprPtr atom() {
        char c = peek();
        if (c == '(') {
            ++pos_;
            ExprPtr e = expression();
            expect(')', "to close parenthesis");
            return e;
        }
        if (at_number()) return make_constant(number());
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t id_pos = pos_;
            std::string id = identifier();
            if (id == "np" && peek() == '.') {
                ++pos_;
                std::size_t fn_pos = pos_;
                std::string fn = identifier();
                if (!supported_functions().count(fn))
                    throw ParseError("unsupported function 'np." + fn + "'", fn_pos);
                expect('(', "after function name");
                ExprPtr arg = expression();
                expect(')', "to close function call");
                return make_call(fn, arg);
            }
            if (id == "c" && peek() == '(') {
                ++pos_;
                skip_ws();
                bool neg = consume('-');
                double init = number();
                expect(')', "to close c(...) marker");
                return make_param(neg ? -init : init);
            }
            if (peek() == '(') {
                if (!supported_functions().count(id))
                    throw ParseError("unsupported function '" + id + "'", id_pos);
                ++pos_;
                ExprPtr arg = expression();
                expect(')', "to close function call");
                return make_call(id, arg);
            }
            return make_variable(id);
        }
        throw ParseError("unexpected character", pos_);
    }
};

// Multiplicative factors at the root, looking through nested products and
// negations. Used to enforce the no-outer-c() rule.
inline void root_factors(const ExprPtr& e, std::vector<ExprPtr>& out) {
    if (e->kind == NodeKind::Binary && e->bop == BinaryOp::Mul) {
        root_factors(e->args[0], out);
        root_factors(e->args[1], out);
    } else if (e->kind == NodeKind::Unary) {
        root_factors(e->args[0], out);
    } else {
        out.push_back(e);
    }
}

} // namespace detail

// Parse one candidate term. Throws ParseError on bad syntax, unsupported
// functions, and on a c() marker used as a root-level outer multiplier
// (the outer scaling of a term belongs to its linear weight).
inline ExprPtr parse_expr(std::string_view text) {
    if (trim(text).empty()) throw ParseError("empty expression", 0);
    detail::Parser p(text);
    ExprPtr e = p.parse();
    std::vector<ExprPtr> factors;
    detail::root_factors(e, factors);
    for (const auto& f : factors)
        if (f->kind == NodeKind::Param)
            throw ParseError("param marker used as a root-level outer multiplier", 0);
    return e;
}

// ---------------------------------------------------------------------------
// Printer. Deterministic canonical text: single spaces around + - * /, none
// around **, minimal parentheses, np. prefixes dropped, constants printed
// with the shortest round-trip representation.

namespace detail {

inline int precedence(const Expr& e) {
    switch (e.kind) {
    case NodeKind::Binary:
        switch (e.bop) {
        case BinaryOp::Add:
        case BinaryOp::Sub: return 1;
        case BinaryOp::Mul:
        case BinaryOp::Div: return 2;
        case BinaryOp::Pow: return 4;
        }
        return 1;
    case NodeKind::Unary: return 3;
    case NodeKind::Constant: return e.value < 0 ? 3 : 5;  // "-3" binds like unary
    default: return 5;
    }
}

inline void print_rec(const Expr& e, std::string& out);

inline void print_child(const Expr& child, int parent_prec, bool needs_parens_on_tie,
                        std::string& out) {
    int cp = precedence(child);
    bool parens = cp < parent_prec || (cp == parent_prec && needs_parens_on_tie);
    if (parens) out += '(';
    print_rec(child, out);
    if (parens) out += ')';
}

inline void print_rec(const Expr& e, std::string& out) {
    switch (e.kind) {
    case NodeKind::Constant:
        out += format_shortest(e.value);
        break;
    case NodeKind::Variable:
        out += e.name;
        break;
    case NodeKind::Param:
        out += "c(";
        out += format_shortest(e.value);
        out += ')';
        break;
    case NodeKind::Unary:
        out += '-';
        print_child(*e.args[0], 3, true, out);
        break;
    case NodeKind::Call:
        out += e.name;
        out += '(';
        print_rec(*e.args[0], out);
        out += ')';
        break;
    case NodeKind::Binary: {
        const char* op = nullptr;
        switch (e.bop) {
        case BinaryOp::Add: op = " + "; break;
        case BinaryOp::Sub: op = " - "; break;
        case BinaryOp::Mul: op = " * "; break;
        case BinaryOp::Div: op = " / "; break;
        case BinaryOp::Pow: op = "**"; break;
        }
        int prec = precedence(e);
        if (e.bop == BinaryOp::Pow) {
            // Right-associative: parenthesize the left side on ties.
            print_child(*e.args[0], prec, true, out);
            out += op;
            print_child(*e.args[1], prec, false, out);
        } else {
            print_child(*e.args[0], prec, false, out);
            out += op;
            print_child(*e.args[1], prec, true, out);
        }
        break;
    }
    }
}

} // namespace detail

inline std::string print_expr(const Expr& e) {
    std::string out;
    detail::print_rec(e, out);
    return out;
}

inline std::string print_expr(const ExprPtr& e) { return print_expr(*e); }

// ---------------------------------------------------------------------------
// Parameter markers. Markers are identified by pre-order traversal position;
// the same order is used by evaluation, extraction and substitution.

inline void collect_param_inits(const ExprPtr& e, std::vector<double>& out) {
    if (e->kind == NodeKind::Param) out.push_back(e->value);
    for (const auto& a : e->args) collect_param_inits(a, out);
}

inline std::size_t count_params(const ExprPtr& e) {
    std::vector<double> v;
    collect_param_inits(e, v);
    return v.size();
}

namespace detail {
inline ExprPtr substitute_params(const ExprPtr& e, std::span<const double> values,
                                 std::size_t& cursor) {
    if (e->kind == NodeKind::Param) return make_param(values[cursor++]);
    if (e->args.empty()) return e;
    auto copy = std::make_shared<Expr>(*e);
    for (auto& a : copy->args) a = substitute_params(a, values, cursor);
    return copy;
}
} // namespace detail

// Rebuild the expression with marker initial values replaced in traversal
// order; `values` must have exactly count_params entries.
inline ExprPtr with_param_values(const ExprPtr& e, std::span<const double> values) {
    std::size_t cursor = 0;
    ExprPtr out = detail::substitute_params(e, values, cursor);
    if (cursor != values.size())
        throw Error("param value count mismatch: expression has " + std::to_string(cursor) +
                    " markers, got " + std::to_string(values.size()));
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation. Column-wise with IEEE-754 semantics; non-finite values are
// returned as-is and filtered by the design-matrix builder, never here.

using ColumnMap = std::unordered_map<std::string, std::vector<double>>;

namespace detail {

inline double apply_fn(const std::string& fn, double x) {
    if (fn == "log") return std::log(x);
    if (fn == "log1p") return std::log1p(x);
    if (fn == "exp") return std::exp(x);
    if (fn == "sin") return std::sin(x);
    if (fn == "cos") return std::cos(x);
    if (fn == "tan") return std::tan(x);
    if (fn == "sqrt") return std::sqrt(x);
    if (fn == "abs") return std::fabs(x);
    if (fn == "sign") {
        if (std::isnan(x)) return x;
        return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
    }
    throw Error("unsupported function '" + fn + "'");
}

inline std::vector<double> eval_rec(const Expr& e, const ColumnMap& frame, std::size_t rows,
                                    std::span<const double> params, std::size_t& cursor) {
    switch (e.kind) {
    case NodeKind::Constant:
        return std::vector<double>(rows, e.value);
    case NodeKind::Param: {
        double v = params.empty() ? e.value : params[cursor++];
        return std::vector<double>(rows, v);
    }
    case NodeKind::Variable: {
        auto it = frame.find(e.name);
        if (it == frame.end()) throw Error("unknown variable '" + e.name + "'");
        return it->second;
    }
    case NodeKind::Unary: {
        auto v = eval_rec(*e.args[0], frame, rows, params, cursor);
        for (auto& x : v) x = -x;
        return v;
    }
    case NodeKind::Call: {
        auto v = eval_rec(*e.args[0], frame, rows, params, cursor);
        for (auto& x : v) x = apply_fn(e.name, x);
        return v;
    }
    case NodeKind::Binary: {
        auto a = eval_rec(*e.args[0], frame, rows, params, cursor);
        auto b = eval_rec(*e.args[1], frame, rows, params, cursor);
        switch (e.bop) {
        case BinaryOp::Add: for (std::size_t i = 0; i < rows; ++i) a[i] += b[i]; break;
        case BinaryOp::Sub: for (std::size_t i = 0; i < rows; ++i) a[i] -= b[i]; break;
        case BinaryOp::Mul: for (std::size_t i = 0; i < rows; ++i) a[i] *= b[i]; break;
        case BinaryOp::Div: for (std::size_t i = 0; i < rows; ++i) a[i] /= b[i]; break;
        case BinaryOp::Pow: for (std::size_t i = 0; i < rows; ++i) a[i] = std::pow(a[i], b[i]); break;
        }
        return a;
    }
    }
    throw Error("corrupt expression node");
}

} // namespace detail

// `params` binds marker values in traversal order; empty means "use each
// marker's initial value".
inline std::vector<double> evaluate(const Expr& e, const ColumnMap& frame, std::size_t rows,
                                    std::span<const double> params = {}) {
    std::size_t cursor = 0;
    return detail::eval_rec(e, frame, rows, params, cursor);
}

inline std::vector<double> evaluate(const ExprPtr& e, const ColumnMap& frame, std::size_t rows,
                                    std::span<const double> params = {}) {
    return evaluate(*e, frame, rows, params);
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Canonicalization: log1p(u) -> log(u + 1), constant-only subtrees folded
// (when the result is finite), commutative chains flattened and sorted by
// canonical text, additive 0 / multiplicative 1 / **1 identities dropped.
// Idempotent.

namespace detail {

inline ExprPtr canon_rec(const ExprPtr& e);

inline void flatten(const ExprPtr& e, BinaryOp op, std::vector<ExprPtr>& out) {
    if (e->kind == NodeKind::Binary && e->bop == op) {
        flatten(e->args[0], op, out);
        flatten(e->args[1], op, out);
    } else {
        out.push_back(e);
    }
}

inline ExprPtr rebuild_chain(BinaryOp op, std::vector<ExprPtr> operands) {
    ExprPtr acc = operands.front();
    for (std::size_t i = 1; i < operands.size(); ++i)
        acc = make_binary(op, acc, operands[i]);
    return acc;
}

inline ExprPtr canon_commutative(const ExprPtr& e, BinaryOp op) {
    std::vector<ExprPtr> raw;
    flatten(e, op, raw);
    std::vector<ExprPtr> operands;
    std::vector<ExprPtr> constants;
    double folded = (op == BinaryOp::Add) ? 0.0 : 1.0;
    for (const auto& child : raw) {
        ExprPtr c = canon_rec(child);
        // Re-flatten: canonicalized children may expose nested chains.
        std::vector<ExprPtr> sub;
        flatten(c, op, sub);
        for (const auto& s : sub) {
            if (s->kind == NodeKind::Constant) {
                folded = (op == BinaryOp::Add) ? folded + s->value : folded * s->value;
                constants.push_back(s);
            } else {
                operands.push_back(s);
            }
        }
    }
    double identity = (op == BinaryOp::Add) ? 0.0 : 1.0;
    if (!constants.empty()) {
        if (std::isfinite(folded)) {
            if (folded != identity || operands.empty())
                operands.push_back(make_constant(folded));
        } else {
            // Fold would overflow; keep the literals as written.
            operands.insert(operands.end(), constants.begin(), constants.end());
        }
    }
    if (operands.empty()) return make_constant(identity);
    std::vector<std::pair<std::string, ExprPtr>> keyed;
    keyed.reserve(operands.size());
    for (auto& o : operands) keyed.emplace_back(print_expr(o), o);
    std::stable_sort(keyed.begin(), keyed.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<ExprPtr> sorted;
    sorted.reserve(keyed.size());
    for (auto& k : keyed) sorted.push_back(k.second);
    return rebuild_chain(op, std::move(sorted));
}

inline ExprPtr canon_rec(const ExprPtr& e) {
    switch (e->kind) {
    case NodeKind::Constant:
    case NodeKind::Variable:
    case NodeKind::Param:
        return e;
    case NodeKind::Unary: {
        ExprPtr a = canon_rec(e->args[0]);
        if (a->kind == NodeKind::Constant) return make_constant(-a->value);
        return make_unary(e->uop, a);
    }
    case NodeKind::Call: {
        ExprPtr a = canon_rec(e->args[0]);
        if (e->name == "log1p")
            return canon_rec(make_call("log", make_binary(BinaryOp::Add, a, make_constant(1.0))));
        if (a->kind == NodeKind::Constant) {
            double v = apply_fn(e->name, a->value);
            if (std::isfinite(v)) return make_constant(v);
        }
        return make_call(e->name, a);
    }
    case NodeKind::Binary:
        switch (e->bop) {
        case BinaryOp::Add:
        case BinaryOp::Mul:
            return canon_commutative(e, e->bop);
        case BinaryOp::Sub: {
            ExprPtr a = canon_rec(e->args[0]);
            ExprPtr b = canon_rec(e->args[1]);
            if (a->kind == NodeKind::Constant && b->kind == NodeKind::Constant) {
                double v = a->value - b->value;
                if (std::isfinite(v)) return make_constant(v);
            }
            if (is_constant(b, 0.0)) return a;
            return make_binary(BinaryOp::Sub, a, b);
        }
        case BinaryOp::Div: {
            ExprPtr a = canon_rec(e->args[0]);
            ExprPtr b = canon_rec(e->args[1]);
            if (a->kind == NodeKind::Constant && b->kind == NodeKind::Constant) {
                double v = a->value / b->value;
                if (std::isfinite(v)) return make_constant(v);
            }
            if (is_constant(b, 1.0)) return a;
            return make_binary(BinaryOp::Div, a, b);
        }
        case BinaryOp::Pow: {
            ExprPtr a = canon_rec(e->args[0]);
            ExprPtr b = canon_rec(e->args[1]);
            if (a->kind == NodeKind::Constant && b->kind == NodeKind::Constant) {
                double v = std::pow(a->value, b->value);
                if (std::isfinite(v)) return make_constant(v);
            }
            if (is_constant(b, 1.0)) return a;
            return make_binary(BinaryOp::Pow, a, b);
        }
        }
    }
    throw Error("corrupt expression node");
}

} // namespace detail

inline ExprPtr canonicalize(const ExprPtr& e) { return detail::canon_rec(e); }

// ---------------------------------------------------------------------------
// Skeletonization phi(term): strips top-level scalar coefficients, replaces
// internal floating-point parameters (including c() markers) with 1, and
// preserves integer exponents. Idempotent; phi(0.42*sin(1.01*t)) = sin(t).

namespace detail {

constexpr double kIntegerExponentTol = 1e-9;

inline ExprPtr strip_top_scalars(ExprPtr e) {
    while (e->kind == NodeKind::Unary) e = e->args[0];
    if (e->kind == NodeKind::Binary && e->bop == BinaryOp::Mul) {
        std::vector<ExprPtr> factors;
        flatten(e, BinaryOp::Mul, factors);
        std::vector<ExprPtr> kept;
        for (auto& f : factors) {
            ExprPtr g = f;
            while (g->kind == NodeKind::Unary) g = g->args[0];
            if (g->kind != NodeKind::Constant) kept.push_back(g);
        }
        if (kept.empty()) return make_constant(1.0);
        return rebuild_chain(BinaryOp::Mul, std::move(kept));
    }
    if (e->kind == NodeKind::Binary && e->bop == BinaryOp::Div) {
        ExprPtr num = strip_top_scalars(e->args[0]);  // 3/(x+1) -> 1/(x+1)
        ExprPtr den = e->args[1];
        if (den->kind == NodeKind::Constant) return num;
        return make_binary(BinaryOp::Div, num, den);
    }
    if (e->kind == NodeKind::Constant) return make_constant(1.0);
    return e;
}

inline ExprPtr replace_internal_constants(const ExprPtr& e) {
    switch (e->kind) {
    case NodeKind::Constant:
        return make_constant(1.0);
    case NodeKind::Param:
        return make_constant(1.0);
    case NodeKind::Variable:
        return e;
    default: break;
    }
    auto copy = std::make_shared<Expr>(*e);
    if (e->kind == NodeKind::Binary && e->bop == BinaryOp::Pow &&
        e->args[1]->kind == NodeKind::Constant) {
        double ex = e->args[1]->value;
        double r = std::round(ex);
        copy->args[0] = replace_internal_constants(e->args[0]);
        copy->args[1] = (std::fabs(ex - r) <= kIntegerExponentTol)
                            ? make_constant(r)
                            : make_constant(1.0);
        return copy;
    }
    for (auto& a : copy->args) a = replace_internal_constants(a);
    return copy;
}

} // namespace detail

// Iterate replace -> canonicalize -> strip to a fixed point: replacement can
// expose constant-only subtrees (e.g. sqrt of a bare marker becomes sqrt(1))
// that fold on the next canonicalization pass, and folding can in turn expose
// new top-level constant factors. The loop settles within a few rounds; the
// fixed point makes phi idempotent by construction.
inline ExprPtr skeletonize(const ExprPtr& e) {
    ExprPtr k = detail::strip_top_scalars(canonicalize(e));
    std::string text = print_expr(k);
    for (int round = 0; round < 6; ++round) {
        ExprPtr next =
            detail::strip_top_scalars(canonicalize(detail::replace_internal_constants(k)));
        std::string next_text = print_expr(next);
        if (next_text == text) break;
        k = std::move(next);
        text = std::move(next_text);
    }
    return k;
}

// ---------------------------------------------------------------------------
// Bag-of-symbols: the unique variables, operators, functions and constants of
// an expression. The implicit multiplication operator of a product is
// included, so products over shared variables still register as related.
// Param markers contribute the single label "c".

namespace detail {
inline void symbols_rec(const Expr& e, std::set<std::string>& out) {
    switch (e.kind) {
    case NodeKind::Constant: out.insert(format_shortest(e.value)); break;
    case NodeKind::Variable: out.insert(e.name); break;
    case NodeKind::Param: out.insert("c"); break;
    case NodeKind::Unary: out.insert("-"); break;
    case NodeKind::Call: out.insert(e.name); break;
    case NodeKind::Binary:
        switch (e.bop) {
        case BinaryOp::Add: out.insert("+"); break;
        case BinaryOp::Sub: out.insert("-"); break;
        case BinaryOp::Mul: out.insert("*"); break;
        case BinaryOp::Div: out.insert("/"); break;
        case BinaryOp::Pow: out.insert("**"); break;
        }
        break;
    }
    for (const auto& a : e.args) symbols_rec(*a, out);
}
} // namespace detail

inline std::set<std::string> symbol_bag(const Expr& e) {
    std::set<std::string> out;
    detail::symbols_rec(e, out);
    return out;
}

inline std::set<std::string> symbol_bag(const ExprPtr& e) { return symbol_bag(*e); }

// ---------------------------------------------------------------------------
// Term: one additive candidate basis function, with its verbatim source text
// and the stable canonical print of its AST.

struct Term {
    std::string source;     // text exactly as proposed, trimmed
    ExprPtr ast;
    std::string canonical;  // print_expr(ast); reparse-and-print stable

    static Term parse(std::string_view text) {
        Term t;
        t.source = trim(text);
        t.ast = parse_expr(t.source);
        t.canonical = print_expr(t.ast);
        return t;
    }

    bool has_params() const { return count_params(ast) > 0; }
};

inline bool same_term(const Term& a, const Term& b) { return a.canonical == b.canonical; }

} // namespace igsr
