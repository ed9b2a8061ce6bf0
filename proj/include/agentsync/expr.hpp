#pragma once

// Arithmetic expression language for regressor rows f(x, t) and bound
// functions phi(x) supplied in scenario configs.
//
// Grammar (whitespace insignificant):
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := primary ('^' unary)?              right associative
//   primary := number | 't' | 'x'<digits> | func '(' expr ')' | '(' expr ')'
//   func    := sin | cos | tanh | exp | abs | sqrt
//
// Precedence, tightest first:  ^ , unary - , * / , + -
// Variables x1..xr are state components (x1 is the output), t is time.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "agentsync/errors.hpp"
#include "agentsync/rng.hpp"

namespace agentsync::expr {

enum class BinOp { add, sub, mul, div, pow };
enum class Func { sin, cos, tanh, exp, abs, sqrt };

namespace detail {

struct Node {
    enum class Kind { number, var_x, var_t, neg, binary, call };
    Kind kind = Kind::number;
    double number = 0.0;
    int var_index = 0;  // 1-based state component
    BinOp op = BinOp::add;
    Func fn = Func::sin;
    std::shared_ptr<const Node> a, b;
};

using NodePtr = std::shared_ptr<const Node>;

inline std::string format_number(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string_view func_name(Func f) {
    switch (f) {
        case Func::sin: return "sin";
        case Func::cos: return "cos";
        case Func::tanh: return "tanh";
        case Func::exp: return "exp";
        case Func::abs: return "abs";
        case Func::sqrt: return "sqrt";
    }
    return "?";
}

inline int precedence(const Node& n) {
    switch (n.kind) {
        case Node::Kind::binary:
            switch (n.op) {
                case BinOp::add:
                case BinOp::sub: return 1;
                case BinOp::mul:
                case BinOp::div: return 2;
                case BinOp::pow: return 4;
            }
            return 1;
        case Node::Kind::neg: return 3;
        default: return 5;
    }
}

inline void print_node(const Node& n, std::string& out);

inline void print_child(const Node& child, bool parens, std::string& out) {
    if (parens) out.push_back('(');
    print_node(child, out);
    if (parens) out.push_back(')');
}

inline void print_node(const Node& n, std::string& out) {
    switch (n.kind) {
        case Node::Kind::number:
            out += format_number(n.number);
            return;
        case Node::Kind::var_t:
            out.push_back('t');
            return;
        case Node::Kind::var_x:
            out.push_back('x');
            out += std::to_string(n.var_index);
            return;
        case Node::Kind::neg:
            out.push_back('-');
            print_child(*n.a, precedence(*n.a) < precedence(n), out);
            return;
        case Node::Kind::call:
            out += func_name(n.fn);
            out.push_back('(');
            print_node(*n.a, out);
            out.push_back(')');
            return;
        case Node::Kind::binary: {
            const int p = precedence(n);
            const char* sym = nullptr;
            switch (n.op) {
                case BinOp::add: sym = " + "; break;
                case BinOp::sub: sym = " - "; break;
                case BinOp::mul: sym = "*"; break;
                case BinOp::div: sym = "/"; break;
                case BinOp::pow: sym = "^"; break;
            }
            // Parenthesization must reproduce the exact tree on re-parse:
            // left-associative ops wrap an equal-precedence right child,
            // the right-associative power wraps an equal-precedence left child.
            bool lp, rp;
            if (n.op == BinOp::pow) {
                lp = precedence(*n.a) <= p;
                rp = precedence(*n.b) < p;
            } else {
                lp = precedence(*n.a) < p;
                rp = precedence(*n.b) <= p;
            }
            print_child(*n.a, lp, out);
            out += sym;
            print_child(*n.b, rp, out);
            return;
        }
    }
}

inline std::string subexpr(const Node& n) {
    std::string s;
    print_node(n, s);
    return s;
}

inline double eval_node(const Node& n, std::span<const double> x, double t) {
    switch (n.kind) {
        case Node::Kind::number:
            return n.number;
        case Node::Kind::var_t:
            return t;
        case Node::Kind::var_x:
            if (n.var_index < 1 || static_cast<std::size_t>(n.var_index) > x.size())
                throw EvalError("state variable x" + std::to_string(n.var_index) +
                                " out of range for state of dimension " + std::to_string(x.size()));
            return x[static_cast<std::size_t>(n.var_index) - 1];
        case Node::Kind::neg:
            return -eval_node(*n.a, x, t);
        case Node::Kind::binary: {
            const double l = eval_node(*n.a, x, t);
            const double r = eval_node(*n.b, x, t);
            double v = 0.0;
            switch (n.op) {
                case BinOp::add: v = l + r; break;
                case BinOp::sub: v = l - r; break;
                case BinOp::mul: v = l * r; break;
                case BinOp::div:
                    if (r == 0.0) throw EvalError("division by zero in '" + subexpr(n) + "'");
                    v = l / r;
                    break;
                case BinOp::pow:
                    if (l < 0.0 && r != std::rint(r))
                        throw EvalError("fractional power of negative base in '" + subexpr(n) + "'");
                    v = std::pow(l, r);
                    break;
            }
            if (!std::isfinite(v)) throw EvalError("non-finite value from '" + subexpr(n) + "'");
            return v;
        }
        case Node::Kind::call: {
            const double a = eval_node(*n.a, x, t);
            double v = 0.0;
            switch (n.fn) {
                case Func::sin: v = std::sin(a); break;
                case Func::cos: v = std::cos(a); break;
                case Func::tanh: v = std::tanh(a); break;
                case Func::exp: v = std::exp(a); break;
                case Func::abs: v = std::fabs(a); break;
                case Func::sqrt:
                    if (a < 0.0) throw EvalError("square root of negative value in '" + subexpr(n) + "'");
                    v = std::sqrt(a);
                    break;
            }
            if (!std::isfinite(v)) throw EvalError("non-finite value from '" + subexpr(n) + "'");
            return v;
        }
    }
    throw EvalError("corrupt expression node");
}

inline bool equal_nodes(const Node* l, const Node* r) {
    if (l == r) return true;
    if (!l || !r) return false;
    if (l->kind != r->kind) return false;
    switch (l->kind) {
        case Node::Kind::number: return l->number == r->number;
        case Node::Kind::var_t: return true;
        case Node::Kind::var_x: return l->var_index == r->var_index;
        case Node::Kind::neg: return equal_nodes(l->a.get(), r->a.get());
        case Node::Kind::call:
            return l->fn == r->fn && equal_nodes(l->a.get(), r->a.get());
        case Node::Kind::binary:
            return l->op == r->op && equal_nodes(l->a.get(), r->a.get()) &&
                   equal_nodes(l->b.get(), r->b.get());
    }
    return false;
}

inline int max_var_node(const Node& n) {
    switch (n.kind) {
        case Node::Kind::var_x: return n.var_index;
        case Node::Kind::neg:
        case Node::Kind::call: return max_var_node(*n.a);
        case Node::Kind::binary: return std::max(max_var_node(*n.a), max_var_node(*n.b));
        default: return 0;
    }
}

inline bool uses_time(const Node& n) {
    switch (n.kind) {
        case Node::Kind::var_t: return true;
        case Node::Kind::neg:
        case Node::Kind::call: return uses_time(*n.a);
        case Node::Kind::binary: return uses_time(*n.a) || uses_time(*n.b);
        default: return false;
    }
}

}  // namespace detail

class Expr;

// Construction helpers for building trees programmatically (mainly tests).
Expr number(double v);
Expr variable(int index);
Expr time_var();
Expr negate(Expr e);
Expr binary(BinOp op, Expr lhs, Expr rhs);
Expr call(Func fn, Expr arg);

/// Immutable parsed expression. Default-constructed instances are empty and
/// reject evaluation; parse() or the builders above produce valid ones.
class Expr {
public:
    Expr() = default;

    static Expr parse(std::string_view source);

    bool valid() const { return root_ != nullptr; }

    double eval(std::span<const double> x, double t) const {
        require_valid();
        return detail::eval_node(*root_, x, t);
    }

    /// Checks every state variable index fits a state of `arity` components.
    void bind(int arity) const {
        require_valid();
        const int mv = max_var();
        if (mv > arity)
            throw ConfigError("expression '" + str() + "' references x" + std::to_string(mv) +
                              " but the state has " + std::to_string(arity) + " component" +
                              (arity == 1 ? "" : "s"));
    }

    int max_var() const {
        require_valid();
        return detail::max_var_node(*root_);
    }

    bool time_dependent() const {
        require_valid();
        return detail::uses_time(*root_);
    }

    std::string str() const {
        require_valid();
        return detail::subexpr(*root_);
    }

    friend bool operator==(const Expr& l, const Expr& r) {
        return detail::equal_nodes(l.root_.get(), r.root_.get());
    }

private:
    explicit Expr(detail::NodePtr root) : root_(std::move(root)) {}

    void require_valid() const {
        if (!root_) throw EvalError("empty expression");
    }

    detail::NodePtr root_;

    friend Expr number(double);
    friend Expr variable(int);
    friend Expr time_var();
    friend Expr negate(Expr);
    friend Expr binary(BinOp, Expr, Expr);
    friend Expr call(Func, Expr);
    friend class Parser;
};

namespace detail {

class Parser {
public:
    explicit Parser(std::string_view src) : src_(src) {}

    NodePtr run() {
        NodePtr e = parse_expr();
        skip_ws();
        if (pos_ != src_.size()) fail("unexpected trailing input");
        return e;
    }

private:
    std::string_view src_;
    std::size_t pos_ = 0;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ParseError(msg + " at byte " + std::to_string(pos_), pos_);
    }

    void skip_ws() {
        while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t' ||
                                      src_[pos_] == '\n' || src_[pos_] == '\r'))
            ++pos_;
    }

    bool consume(char c) {
        skip_ws();
        if (pos_ < src_.size() && src_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    NodePtr parse_expr() {
        NodePtr lhs = parse_term();
        for (;;) {
            if (consume('+')) lhs = make_binary(BinOp::add, lhs, parse_term());
            else if (consume('-')) lhs = make_binary(BinOp::sub, lhs, parse_term());
            else return lhs;
        }
    }

    NodePtr parse_term() {
        NodePtr lhs = parse_unary();
        for (;;) {
            if (consume('*')) lhs = make_binary(BinOp::mul, lhs, parse_unary());
            else if (consume('/')) lhs = make_binary(BinOp::div, lhs, parse_unary());
            else return lhs;
        }
    }

    NodePtr parse_unary() {
        if (consume('-')) {
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::neg;
            n->a = parse_unary();
            return n;
        }
        return parse_power();
    }

    NodePtr parse_power() {
        NodePtr base = parse_primary();
        if (consume('^')) return make_binary(BinOp::pow, base, parse_unary());
        return base;
    }

    NodePtr parse_primary() {
        skip_ws();
        if (pos_ >= src_.size()) fail("unexpected end of input");
        const char c = src_[pos_];
        if (c == '(') {
            ++pos_;
            NodePtr e = parse_expr();
            if (!consume(')')) fail("expected ')'");
            return e;
        }
        if ((c >= '0' && c <= '9') || c == '.') return parse_number();
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_') return parse_identifier();
        fail(std::string("unexpected character '") + c + "'");
    }

    NodePtr parse_number() {
        double value = 0.0;
        const char* begin = src_.data() + pos_;
        const char* end = src_.data() + src_.size();
        auto res = std::from_chars(begin, end, value);
        if (res.ec != std::errc() || res.ptr == begin) fail("invalid number");
        pos_ += static_cast<std::size_t>(res.ptr - begin);
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::number;
        n->number = value;
        return n;
    }

    NodePtr parse_identifier() {
        const std::size_t start = pos_;
        while (pos_ < src_.size()) {
            const char c = src_[pos_];
            const bool word = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                              (c >= '0' && c <= '9') || c == '_';
            if (!word) break;
            ++pos_;
        }
        const std::string_view name = src_.substr(start, pos_ - start);
        if (name == "t") {
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::var_t;
            return n;
        }
        if (name.size() >= 2 && name[0] == 'x' &&
            std::all_of(name.begin() + 1, name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
            int index = 0;
            auto res = std::from_chars(name.data() + 1, name.data() + name.size(), index);
            if (res.ec != std::errc()) fail("invalid variable index in '" + std::string(name) + "'");
            if (index < 1) fail("variable index must be at least 1 in '" + std::string(name) + "'");
            auto n = std::make_shared<Node>();
            n->kind = Node::Kind::var_x;
            n->var_index = index;
            return n;
        }
        Func fn;
        if (name == "sin") fn = Func::sin;
        else if (name == "cos") fn = Func::cos;
        else if (name == "tanh") fn = Func::tanh;
        else if (name == "exp") fn = Func::exp;
        else if (name == "abs") fn = Func::abs;
        else if (name == "sqrt") fn = Func::sqrt;
        else fail("unknown identifier '" + std::string(name) + "'");
        if (!consume('(')) fail("expected '(' after '" + std::string(name) + "'");
        NodePtr arg = parse_expr();
        if (!consume(')')) fail("expected ')'");
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::call;
        n->fn = fn;
        n->a = arg;
        return n;
    }

    static NodePtr make_binary(BinOp op, NodePtr a, NodePtr b) {
        auto n = std::make_shared<Node>();
        n->kind = Node::Kind::binary;
        n->op = op;
        n->a = std::move(a);
        n->b = std::move(b);
        return n;
    }
};

}  // namespace detail

inline Expr Expr::parse(std::string_view source) {
    return Expr(detail::Parser(source).run());
}

inline Expr number(double v) {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::number;
    n->number = v;
    return Expr(std::move(n));
}

inline Expr variable(int index) {
    if (index < 1) throw DomainError("state variable index must be at least 1");
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::var_x;
    n->var_index = index;
    return Expr(std::move(n));
}

inline Expr time_var() {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::var_t;
    return Expr(std::move(n));
}

inline Expr negate(Expr e) {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::neg;
    n->a = std::move(e.root_);
    return Expr(std::move(n));
}

inline Expr binary(BinOp op, Expr lhs, Expr rhs) {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::binary;
    n->op = op;
    n->a = std::move(lhs.root_);
    n->b = std::move(rhs.root_);
    return Expr(std::move(n));
}

inline Expr call(Func fn, Expr arg) {
    auto n = std::make_shared<detail::Node>();
    n->kind = detail::Node::Kind::call;
    n->fn = fn;
    n->a = std::move(arg.root_);
    return Expr(std::move(n));
}

/// Configuration of the sampled bound check below.
struct BoundCheckConfig {
    double box_half_width = 5.0;  // states sampled from [-w, w]^r
    double t_max = 20.0;
    int x_samples = 400;
    int t_samples = 9;
    std::uint64_t seed = 0x5eed;
    double tolerance = 1e-9;
};

struct BoundCheckReport {
    bool passed = false;
    double worst_margin = 0.0;  // max of ||f(x,t)|| - phi(x); passing runs keep it <= tolerance
    std::vector<double> worst_x;
    double worst_t = 0.0;
    long samples = 0;
    std::string note;
};

/// Samples ||f(x, t)|| <= phi(x) + tolerance over a box in state space and a
/// time grid. This is a falsification check: a pass is evidence, not a proof.
inline BoundCheckReport check_bound_condition(std::span<const Expr> rows, const Expr& phi,
                                              int arity, const BoundCheckConfig& cfg = {}) {
    if (arity < 1) throw DomainError("bound check requires a positive state dimension");
    if (cfg.x_samples < 1 || cfg.t_samples < 1)
        throw DomainError("bound check requires positive sample counts");

    BoundCheckReport rep;
    rep.note = "sampling falsification check; a pass is evidence, not a proof";
    rep.worst_margin = -std::numeric_limits<double>::infinity();
    SplitMix rng(cfg.seed);
    std::vector<double> x(static_cast<std::size_t>(arity), 0.0);

    for (int i = 0; i <= cfg.x_samples; ++i) {
        if (i == 0) {
            std::fill(x.begin(), x.end(), 0.0);  // always probe the origin
        } else {
            for (auto& xi : x) xi = rng.next_range(-cfg.box_half_width, cfg.box_half_width);
        }
        for (int j = 0; j < cfg.t_samples; ++j) {
            const double t = cfg.t_samples == 1
                                 ? 0.0
                                 : cfg.t_max * static_cast<double>(j) / (cfg.t_samples - 1);
            double margin;
            try {
                double sq = 0.0;
                for (const Expr& row : rows) {
                    const double v = row.eval(x, t);
                    sq += v * v;
                }
                margin = std::sqrt(sq) - phi.eval(x, 0.0);
            } catch (const EvalError& e) {
                rep.passed = false;
                rep.note = std::string("evaluation failed while sampling: ") + e.what();
                rep.worst_x = x;
                rep.worst_t = t;
                return rep;
            }
            ++rep.samples;
            if (margin > rep.worst_margin) {
                rep.worst_margin = margin;
                rep.worst_x = x;
                rep.worst_t = t;
            }
        }
    }
    rep.passed = rep.worst_margin <= cfg.tolerance;
    return rep;
}

}  // namespace agentsync::expr
