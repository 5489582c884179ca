#pragma once

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "eqloop/errors.hpp"

namespace eqloop {

enum class Op : std::uint8_t {
    Const,
    State,
    Input,
    Time,
    // unary
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
    // truth-only unary, never produced by the candidate grammar
    Tan,
    Cot,
    // binary (Add and Mul may be n-ary after canonicalization)
    Add,
    Sub,
    Mul,
    Div,
    Pow,
};

inline bool is_leaf(Op op) { return op == Op::Const || op == Op::State || op == Op::Input || op == Op::Time; }

inline bool is_unary(Op op) { return op >= Op::Neg && op <= Op::Cot; }

inline bool is_function(Op op) { return op >= Op::Sin && op <= Op::Cot; }

inline bool is_truth_only(Op op) { return op == Op::Tan || op == Op::Cot; }

inline bool is_commutative(Op op) { return op == Op::Add || op == Op::Mul; }

inline std::string_view function_name(Op op) {
    switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sqrt: return "sqrt";
    case Op::Abs: return "abs";
    case Op::Tan: return "tan";
    case Op::Cot: return "cot";
    default: return "";
    }
}

/// Expression tree over states x_i, inputs u_j, time t and constants.
/// Plain value type; children are owned.
struct Expr {
    Op op = Op::Const;
    double value = 0.0; // Const only
    int index = 0;      // State / Input only
    std::vector<Expr> args;

    static Expr constant(double v) { return Expr{Op::Const, v, 0, {}}; }
    static Expr state(int i) { return Expr{Op::State, 0.0, i, {}}; }
    static Expr input(int j) { return Expr{Op::Input, 0.0, j, {}}; }
    static Expr time() { return Expr{Op::Time, 0.0, 0, {}}; }
    static Expr unary(Op op, Expr a) {
        Expr e{op, 0.0, 0, {}};
        e.args.push_back(std::move(a));
        return e;
    }
    static Expr binary(Op op, Expr a, Expr b) {
        Expr e{op, 0.0, 0, {}};
        e.args.reserve(2);
        e.args.push_back(std::move(a));
        e.args.push_back(std::move(b));
        return e;
    }
    static Expr nary(Op op, std::vector<Expr> args) { return Expr{op, 0.0, 0, std::move(args)}; }

    bool is_const() const { return op == Op::Const; }

    friend bool operator==(const Expr& a, const Expr& b) {
        if (a.op != b.op || a.args.size() != b.args.size())
            return false;
        if (a.op == Op::Const && !(a.value == b.value))
            return false;
        if ((a.op == Op::State || a.op == Op::Input) && a.index != b.index)
            return false;
        for (std::size_t i = 0; i < a.args.size(); ++i)
            if (!(a.args[i] == b.args[i]))
                return false;
        return true;
    }
};

inline Expr operator+(Expr a, Expr b) { return Expr::binary(Op::Add, std::move(a), std::move(b)); }
inline Expr operator-(Expr a, Expr b) { return Expr::binary(Op::Sub, std::move(a), std::move(b)); }
inline Expr operator*(Expr a, Expr b) { return Expr::binary(Op::Mul, std::move(a), std::move(b)); }
inline Expr operator/(Expr a, Expr b) { return Expr::binary(Op::Div, std::move(a), std::move(b)); }
inline Expr pow(Expr a, double exponent) { return Expr::binary(Op::Pow, std::move(a), Expr::constant(exponent)); }

/// Number of expression-tree nodes.
inline std::size_t node_count(const Expr& e) {
    std::size_t n = 1;
    for (const auto& a : e.args)
        n += node_count(a);
    return n;
}

template <typename Fn>
bool any_node(const Expr& e, Fn&& pred) {
    if (pred(e))
        return true;
    for (const auto& a : e.args)
        if (any_node(a, pred))
            return true;
    return false;
}

/// Rates allowed inside exp() in the candidate grammar.
inline constexpr std::array<double, 8> kExpRateGrid{-2.0, -1.0, -0.5, -0.25, 0.25, 0.5, 1.0, 2.0};

inline bool is_half_integer(double v) {
    return std::isfinite(v) && std::abs(v) <= 64.0 && std::floor(2.0 * v) == 2.0 * v;
}

/// Grammar options. The default is the candidate grammar: whitelisted operators
/// only and exp() restricted to grid rates times a single state. The truth
/// grammar additionally admits tan/cot and arbitrary exp arguments.
struct Grammar {
    int num_states = -1; // -1: no bound check
    int num_inputs = -1;
    bool truth_ops = false;
    bool exp_grid = true;

    static Grammar candidate(int states = -1, int inputs = -1) { return Grammar{states, inputs, false, true}; }
    static Grammar truth(int states = -1, int inputs = -1) { return Grammar{states, inputs, true, false}; }
};

namespace detail {

inline bool is_coefficient_placeholder(std::string_view id) {
    auto digits_after = [&](std::string_view prefix) {
        if (id.substr(0, prefix.size()) != prefix)
            return false;
        for (char c : id.substr(prefix.size()))
            if (!std::isdigit(static_cast<unsigned char>(c)))
                return false;
        return true;
    };
    return digits_after("c") || digits_after("theta") || digits_after("C") || digits_after("a") ||
           digits_after("b") || digits_after("k") || digits_after("p") || digits_after("w");
}

inline std::optional<int> indexed_symbol(std::string_view id, char prefix) {
    if (id.size() < 2 || id[0] != prefix)
        return std::nullopt;
    int v = 0;
    auto [ptr, ec] = std::from_chars(id.data() + 1, id.data() + id.size(), v);
    if (ec != std::errc{} || ptr != id.data() + id.size())
        return std::nullopt;
    if (id.size() > 2 && id[1] == '0')
        return std::nullopt; // no leading zeros: x01 is not x1
    return v;
}

inline std::optional<double> exp_rate(const Expr& arg) {
    if (arg.op == Op::State)
        return 1.0;
    if (arg.op == Op::Neg && arg.args[0].op == Op::State)
        return -1.0;
    if (arg.op == Op::Mul && arg.args.size() == 2) {
        if (arg.args[0].op == Op::Const && arg.args[1].op == Op::State)
            return arg.args[0].value;
        if (arg.args[1].op == Op::Const && arg.args[0].op == Op::State)
            return arg.args[1].value;
    }
    return std::nullopt;
}

class Parser {
public:
    Parser(std::string_view text, const Grammar& g) : s_(text), g_(g) {}

    Expr parse() {
        Expr e = parse_sum();
        skip_ws();
        if (pos_ != s_.size())
            fail(ParseErrorKind::Syntax, "unexpected trailing input");
        return e;
    }

private:
    [[noreturn]] void fail(ParseErrorKind kind, const std::string& msg) const {
        throw ParseError(kind, msg + " at position " + std::to_string(pos_) + " in '" + std::string(s_) + "'",
                         pos_);
    }

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_])))
            ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    Expr parse_sum() {
        Expr lhs = parse_product();
        for (;;) {
            if (accept('+'))
                lhs = Expr::binary(Op::Add, std::move(lhs), parse_product());
            else if (accept('-'))
                lhs = Expr::binary(Op::Sub, std::move(lhs), parse_product());
            else
                return lhs;
        }
    }

    Expr parse_product() {
        Expr lhs = parse_unary();
        for (;;) {
            if (accept('*'))
                lhs = Expr::binary(Op::Mul, std::move(lhs), parse_unary());
            else if (accept('/'))
                lhs = Expr::binary(Op::Div, std::move(lhs), parse_unary());
            else
                return lhs;
        }
    }

    Expr parse_unary() {
        if (accept('-')) {
            Expr inner = parse_unary();
            if (inner.op == Op::Const)
                return Expr::constant(-inner.value);
            return Expr::unary(Op::Neg, std::move(inner));
        }
        if (accept('+'))
            return parse_unary();
        return parse_power();
    }

    Expr parse_power() {
        Expr base = parse_primary();
        if (accept('^')) {
            std::size_t at = pos_;
            Expr exponent = parse_unary();
            if (exponent.op != Op::Const) {
                pos_ = at;
                fail(ParseErrorKind::DisallowedForm, "exponent must be a constant literal");
            }
            if (!is_half_integer(exponent.value)) {
                pos_ = at;
                fail(ParseErrorKind::DisallowedForm, "exponent must be an integer or half-integer");
            }
            return Expr::binary(Op::Pow, std::move(base), std::move(exponent));
        }
        return base;
    }

    Expr parse_primary() {
        skip_ws();
        if (pos_ >= s_.size())
            fail(ParseErrorKind::Syntax, "unexpected end of input");
        char c = s_[pos_];
        if (c == '(') {
            ++pos_;
            Expr inner = parse_sum();
            if (!accept(')'))
                fail(ParseErrorKind::Syntax, "expected ')'");
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.')
            return parse_number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_')
            return parse_identifier();
        fail(ParseErrorKind::Syntax, std::string("unexpected character '") + c + "'");
    }

    Expr parse_number() {
        std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.'))
            ++pos_;
        if (pos_ < s_.size() && (s_[pos_] == 'e' || s_[pos_] == 'E')) {
            std::size_t save = pos_;
            ++pos_;
            if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-'))
                ++pos_;
            if (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])))
                    ++pos_;
            } else {
                pos_ = save;
            }
        }
        double v = 0.0;
        auto [ptr, ec] = std::from_chars(s_.data() + start, s_.data() + pos_, v);
        if (ec != std::errc{} || ptr != s_.data() + pos_) {
            pos_ = start;
            fail(ParseErrorKind::Syntax, "malformed number");
        }
        return Expr::constant(v);
    }

    Expr parse_identifier() {
        std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
            ++pos_;
        std::string_view id = s_.substr(start, pos_ - start);
        skip_ws();
        bool call = pos_ < s_.size() && s_[pos_] == '(';

        if (call) {
            static constexpr std::array<Op, 8> fns{Op::Sin, Op::Cos, Op::Exp, Op::Log,
                                                   Op::Sqrt, Op::Abs, Op::Tan, Op::Cot};
            for (Op op : fns) {
                if (function_name(op) != id)
                    continue;
                if (is_truth_only(op) && !g_.truth_ops) {
                    pos_ = start;
                    fail(ParseErrorKind::DisallowedSymbol, "function '" + std::string(id) + "' is not in the grammar");
                }
                ++pos_;
                Expr arg = parse_sum();
                if (!accept(')'))
                    fail(ParseErrorKind::Syntax, "expected ')' after function argument");
                if (op == Op::Exp && g_.exp_grid)
                    check_exp_grid(arg, start);
                return Expr::unary(op, std::move(arg));
            }
            pos_ = start;
            fail(ParseErrorKind::DisallowedSymbol, "unknown function '" + std::string(id) + "'");
        }

        if (id == "t")
            return Expr::time();
        if (auto i = indexed_symbol(id, 'x')) {
            if (g_.num_states >= 0 && *i >= g_.num_states) {
                pos_ = start;
                fail(ParseErrorKind::DisallowedSymbol, "state '" + std::string(id) + "' out of range");
            }
            return Expr::state(*i);
        }
        if (auto j = indexed_symbol(id, 'u')) {
            if (g_.num_inputs >= 0 && *j >= g_.num_inputs) {
                pos_ = start;
                fail(ParseErrorKind::DisallowedSymbol, "input '" + std::string(id) + "' out of range");
            }
            return Expr::input(*j);
        }
        pos_ = start;
        for (Op op : {Op::Sin, Op::Cos, Op::Exp, Op::Log, Op::Sqrt, Op::Abs})
            if (function_name(op) == id)
                fail(ParseErrorKind::Syntax, "function '" + std::string(id) + "' requires an argument");
        if (is_coefficient_placeholder(id))
            fail(ParseErrorKind::DisallowedForm,
                 "unknown coefficient '" + std::string(id) + "' inside a feature (coefficients are implicit)");
        fail(ParseErrorKind::DisallowedSymbol, "unknown identifier '" + std::string(id) + "'");
    }

    void check_exp_grid(const Expr& arg, std::size_t at) {
        auto rate = exp_rate(arg);
        bool ok = false;
        if (rate)
            for (double r : kExpRateGrid)
                if (*rate == r)
                    ok = true;
        if (!ok) {
            pos_ = at;
            fail(ParseErrorKind::DisallowedForm,
                 "exp() argument must be a grid rate {+-0.25,+-0.5,+-1,+-2} times a single state");
        }
    }

    std::string_view s_;
    Grammar g_;
    std::size_t pos_ = 0;
};

} // namespace detail

/// Parses the infix surface syntax. Throws ParseError.
inline Expr parse_expression(std::string_view text, const Grammar& grammar = Grammar::candidate()) {
    return detail::Parser(text, grammar).parse();
}

/// Shortest decimal string that reads back to exactly `v`.
inline std::string format_number(double v) {
    if (v == 0.0)
        return "0"; // also folds -0
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), ptr);
}

namespace detail {

// Binding strength used by the printer; higher binds tighter.
inline int precedence(const Expr& e) {
    switch (e.op) {
    case Op::Const: return e.value < 0.0 ? 3 : 5;
    case Op::Add:
    case Op::Sub: return 1;
    case Op::Mul:
    case Op::Div: return 2;
    case Op::Neg: return 3;
    case Op::Pow: return 4;
    default: return 5;
    }
}

inline void print_into(const Expr& e, std::string& out);

inline void print_child(const Expr& child, int min_prec, std::string& out) {
    if (precedence(child) < min_prec) {
        out += '(';
        print_into(child, out);
        out += ')';
    } else {
        print_into(child, out);
    }
}

inline void print_into(const Expr& e, std::string& out) {
    switch (e.op) {
    case Op::Const: out += format_number(e.value); return;
    case Op::State: out += 'x'; out += std::to_string(e.index); return;
    case Op::Input: out += 'u'; out += std::to_string(e.index); return;
    case Op::Time: out += 't'; return;
    case Op::Neg: out += '-'; print_child(e.args[0], 3, out); return;
    case Op::Add:
    case Op::Mul: {
        const char* sep = e.op == Op::Add ? " + " : "*";
        int lhs_prec = e.op == Op::Add ? 1 : 2;
        for (std::size_t i = 0; i < e.args.size(); ++i) {
            if (i > 0)
                out += sep;
            print_child(e.args[i], i == 0 ? lhs_prec : lhs_prec + 1, out);
        }
        return;
    }
    case Op::Sub:
        print_child(e.args[0], 1, out);
        out += " - ";
        print_child(e.args[1], 2, out);
        return;
    case Op::Div:
        print_child(e.args[0], 2, out);
        out += '/';
        print_child(e.args[1], 3, out);
        return;
    case Op::Pow:
        print_child(e.args[0], 5, out);
        out += '^';
        print_child(e.args[1], 3, out);
        return;
    default:
        out += function_name(e.op);
        out += '(';
        print_into(e.args[0], out);
        out += ')';
        return;
    }
}

} // namespace detail

/// Renders an expression in the surface syntax accepted by parse_expression.
inline std::string to_string(const Expr& e) {
    std::string out;
    detail::print_into(e, out);
    return out;
}

/// Values an expression is evaluated against.
struct EvalPoint {
    std::span<const double> x;
    std::span<const double> u;
    double t = 0.0;
};

inline constexpr double kMinDenominator = 1e-12;

/// Evaluates `e`. Domain violations (log of nonpositive, sqrt of negative,
/// |denominator| < 1e-12, fractional power of a negative base) yield NaN.
inline double evaluate(const Expr& e, const EvalPoint& p) {
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    switch (e.op) {
    case Op::Const: return e.value;
    case Op::State: return static_cast<std::size_t>(e.index) < p.x.size() ? p.x[e.index] : nan;
    case Op::Input: return static_cast<std::size_t>(e.index) < p.u.size() ? p.u[e.index] : nan;
    case Op::Time: return p.t;
    case Op::Neg: return -evaluate(e.args[0], p);
    case Op::Sin: return std::sin(evaluate(e.args[0], p));
    case Op::Cos: return std::cos(evaluate(e.args[0], p));
    case Op::Exp: return std::exp(evaluate(e.args[0], p));
    case Op::Log: {
        double a = evaluate(e.args[0], p);
        return a > 0.0 ? std::log(a) : nan;
    }
    case Op::Sqrt: {
        double a = evaluate(e.args[0], p);
        return a >= 0.0 ? std::sqrt(a) : nan;
    }
    case Op::Abs: return std::abs(evaluate(e.args[0], p));
    case Op::Tan: {
        double a = evaluate(e.args[0], p);
        double c = std::cos(a);
        return std::abs(c) < kMinDenominator ? nan : std::sin(a) / c;
    }
    case Op::Cot: {
        double a = evaluate(e.args[0], p);
        double s = std::sin(a);
        return std::abs(s) < kMinDenominator ? nan : std::cos(a) / s;
    }
    case Op::Add: {
        double acc = 0.0;
        for (const auto& a : e.args)
            acc += evaluate(a, p);
        return acc;
    }
    case Op::Mul: {
        double acc = 1.0;
        for (const auto& a : e.args)
            acc *= evaluate(a, p);
        return acc;
    }
    case Op::Sub: return evaluate(e.args[0], p) - evaluate(e.args[1], p);
    case Op::Div: {
        double den = evaluate(e.args[1], p);
        if (!(std::abs(den) >= kMinDenominator))
            return nan;
        return evaluate(e.args[0], p) / den;
    }
    case Op::Pow: {
        double base = evaluate(e.args[0], p);
        double ex = evaluate(e.args[1], p);
        if (ex == 2.0)
            return base * base;
        if (ex == 1.0)
            return base;
        if (base < 0.0 && std::floor(ex) != ex)
            return nan;
        if (base == 0.0 && ex < 0.0)
            return nan;
        return std::pow(base, ex);
    }
    }
    return nan;
}

} // namespace eqloop
