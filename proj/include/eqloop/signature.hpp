#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "eqloop/expr.hpp"

namespace eqloop {

/// Canonical string identity of a feature expression.
struct TermSignature {
    std::string text;

    friend bool operator==(const TermSignature&, const TermSignature&) = default;
    friend auto operator<=>(const TermSignature&, const TermSignature&) = default;
};

namespace detail {

inline std::string render_constant(double v) {
    if (v == 0.0)
        return "0";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline void render_into(const Expr& e, std::string& out, bool top);

inline void render_child(const Expr& e, std::string& out) { render_into(e, out, false); }

inline void render_into(const Expr& e, std::string& out, bool top) {
    switch (e.op) {
    case Op::Const: out += render_constant(e.value); return;
    case Op::State: out += 'x'; out += std::to_string(e.index); return;
    case Op::Input: out += 'u'; out += std::to_string(e.index); return;
    case Op::Time: out += 't'; return;
    case Op::Neg: out += "-"; render_child(e.args[0], out); return;
    case Op::Add:
    case Op::Mul:
    case Op::Sub:
    case Op::Div:
    case Op::Pow: {
        const char* sep = e.op == Op::Add ? "+" : e.op == Op::Mul ? "*" : e.op == Op::Sub ? "-"
                          : e.op == Op::Div ? "/" : "^";
        if (!top)
            out += '(';
        for (std::size_t i = 0; i < e.args.size(); ++i) {
            if (i > 0)
                out += sep;
            render_child(e.args[i], out);
        }
        if (!top)
            out += ')';
        return;
    }
    default:
        out += function_name(e.op);
        out += '(';
        render_into(e.args[0], out, true);
        out += ')';
        return;
    }
}

inline std::string render(const Expr& e) {
    std::string out;
    render_into(e, out, true);
    return out;
}

inline Expr folded_constant(double v) { return Expr::constant(v == 0.0 ? 0.0 : v); }

inline Expr canonical(const Expr& e);

inline void sort_by_signature(std::vector<Expr>& xs) {
    std::vector<std::pair<std::string, Expr>> keyed;
    keyed.reserve(xs.size());
    for (auto& x : xs)
        keyed.emplace_back(render(x), std::move(x));
    std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    xs.clear();
    for (auto& [k, x] : keyed)
        xs.push_back(std::move(x));
}

inline Expr make_product(double coef, std::vector<Expr> factors) {
    if (coef == 0.0)
        return folded_constant(0.0);
    if (factors.empty())
        return folded_constant(coef);
    sort_by_signature(factors);
    if (coef != 1.0)
        factors.insert(factors.begin(), folded_constant(coef));
    if (factors.size() == 1)
        return std::move(factors.front());
    return Expr::nary(Op::Mul, std::move(factors));
}

inline Expr canonical_mul(std::vector<Expr> raw) {
    double coef = 1.0;
    std::vector<Expr> flat;
    for (auto& r : raw) {
        Expr c = canonical(r);
        if (c.op == Op::Const) {
            coef *= c.value;
        } else if (c.op == Op::Mul) {
            for (auto& f : c.args) {
                if (f.op == Op::Const)
                    coef *= f.value;
                else
                    flat.push_back(std::move(f));
            }
        } else {
            flat.push_back(std::move(c));
        }
    }
    // merge repeated bases: b^p * b^q -> b^(p+q)
    std::map<std::string, std::pair<Expr, double>> powers;
    std::vector<std::string> order;
    for (auto& f : flat) {
        Expr base = f;
        double ex = 1.0;
        if (f.op == Op::Pow && f.args[1].op == Op::Const) {
            base = f.args[0];
            ex = f.args[1].value;
        }
        std::string key = render(base);
        auto it = powers.find(key);
        if (it == powers.end()) {
            powers.emplace(key, std::make_pair(std::move(base), ex));
            order.push_back(key);
        } else {
            it->second.second += ex;
        }
    }
    std::vector<Expr> factors;
    for (const auto& key : order) {
        auto& [base, ex] = powers.at(key);
        if (ex == 0.0)
            continue;
        if (ex == 1.0)
            factors.push_back(base);
        else
            factors.push_back(Expr::binary(Op::Pow, base, folded_constant(ex)));
    }
    return make_product(coef, std::move(factors));
}

inline Expr canonical_add(std::vector<Expr> raw) {
    double constant = 0.0;
    std::vector<Expr> terms;
    for (auto& r : raw) {
        Expr c = canonical(r);
        if (c.op == Op::Const) {
            constant += c.value;
        } else if (c.op == Op::Add) {
            for (auto& t : c.args) {
                if (t.op == Op::Const)
                    constant += t.value;
                else
                    terms.push_back(std::move(t));
            }
        } else {
            terms.push_back(std::move(c));
        }
    }
    sort_by_signature(terms);
    if (constant != 0.0)
        terms.push_back(folded_constant(constant));
    if (terms.empty())
        return folded_constant(0.0);
    if (terms.size() == 1)
        return std::move(terms.front());
    return Expr::nary(Op::Add, std::move(terms));
}

inline Expr canonical(const Expr& e) {
    switch (e.op) {
    case Op::Const: return folded_constant(e.value);
    case Op::State:
    case Op::Input:
    case Op::Time: return e;
    case Op::Neg: return canonical_mul({Expr::constant(-1.0), e.args[0]});
    case Op::Sub: return canonical_add({e.args[0], Expr::unary(Op::Neg, e.args[1])});
    case Op::Add: return canonical_add(e.args);
    case Op::Mul: return canonical_mul(e.args);
    case Op::Div: {
        Expr num = canonical(e.args[0]);
        Expr den = canonical(e.args[1]);
        if (den.op == Op::Const && den.value != 0.0)
            return canonical_mul({num, Expr::constant(1.0 / den.value)});
        if (num.op == Op::Const && num.value == 0.0)
            return folded_constant(0.0);
        // pull a numeric factor out of the numerator
        if (num.op == Op::Mul && num.args.front().op == Op::Const) {
            double c = num.args.front().value;
            std::vector<Expr> rest(num.args.begin() + 1, num.args.end());
            Expr stripped = rest.size() == 1 ? rest.front() : Expr::nary(Op::Mul, std::move(rest));
            return canonical_mul({Expr::constant(c), Expr::binary(Op::Div, std::move(stripped), std::move(den))});
        }
        if (num.op == Op::Const && num.value != 1.0)
            return canonical_mul({Expr::constant(num.value),
                                  Expr::binary(Op::Div, Expr::constant(1.0), std::move(den))});
        return Expr::binary(Op::Div, std::move(num), std::move(den));
    }
    case Op::Pow: {
        Expr base = canonical(e.args[0]);
        Expr ex = canonical(e.args[1]);
        if (ex.op == Op::Const) {
            if (ex.value == 0.0)
                return folded_constant(1.0);
            if (ex.value == 1.0)
                return base;
            if (base.op == Op::Const) {
                double v = std::pow(base.value, ex.value);
                if (std::isfinite(v))
                    return folded_constant(v);
            }
            // (c*f)^p -> c^p * f^p for a numeric factor c
            if (base.op == Op::Mul && base.args.front().op == Op::Const &&
                (std::floor(ex.value) == ex.value || base.args.front().value > 0.0)) {
                double c = std::pow(base.args.front().value, ex.value);
                std::vector<Expr> rest(base.args.begin() + 1, base.args.end());
                Expr stripped = rest.size() == 1 ? rest.front() : Expr::nary(Op::Mul, std::move(rest));
                return canonical_mul({Expr::constant(c), Expr::binary(Op::Pow, std::move(stripped), ex)});
            }
        }
        return Expr::binary(Op::Pow, std::move(base), std::move(ex));
    }
    default: {
        Expr arg = canonical(e.args[0]);
        if (arg.op == Op::Const) {
            Expr folded = Expr::unary(e.op, arg);
            double v = evaluate(folded, EvalPoint{});
            if (std::isfinite(v))
                return folded_constant(v);
        }
        return Expr::unary(e.op, std::move(arg));
    }
    }
}

} // namespace detail

/// Normal form: constants folded, identities removed, Sub/Neg rewritten as
/// sums and signed products, commutative operands flattened and sorted.
/// No distributive expansion.
inline Expr canonicalize(const Expr& e) { return detail::canonical(e); }

inline TermSignature canonical_signature(const Expr& e) { return TermSignature{detail::render(canonicalize(e))}; }

/// A canonical term split into its numeric coefficient and the remaining
/// structural factor (Const 1 for a pure constant).
struct SignedTerm {
    double coefficient = 1.0;
    Expr term;
    TermSignature signature;
};

inline SignedTerm strip_coefficient(const Expr& e) {
    Expr c = canonicalize(e);
    SignedTerm out;
    if (c.op == Op::Const) {
        out.coefficient = c.value;
        out.term = Expr::constant(1.0);
    } else if (c.op == Op::Mul && c.args.front().op == Op::Const) {
        out.coefficient = c.args.front().value;
        std::vector<Expr> rest(c.args.begin() + 1, c.args.end());
        out.term = rest.size() == 1 ? std::move(rest.front()) : Expr::nary(Op::Mul, std::move(rest));
    } else {
        out.term = std::move(c);
    }
    out.signature = TermSignature{detail::render(out.term)};
    return out;
}

/// Expands the top-level sum of `e` into signed terms.
inline std::vector<SignedTerm> split_terms(const Expr& e) {
    Expr c = canonicalize(e);
    std::vector<SignedTerm> terms;
    if (c.op == Op::Add) {
        for (const auto& a : c.args)
            terms.push_back(strip_coefficient(a));
    } else if (!(c.op == Op::Const && c.value == 0.0)) {
        terms.push_back(strip_coefficient(c));
    }
    return terms;
}

} // namespace eqloop
