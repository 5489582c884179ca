#pragma once

#include <functional>
#include <map>
#include <vector>

#include "eqloop/equation_template.hpp"
#include "eqloop/expr.hpp"
#include "eqloop/families.hpp"

namespace eqloop {

/// Switches for the fixed broad library used by the baseline fit.
struct DictionaryOptions {
    int max_degree = 3;
    bool constant = true;
    bool trig = true;
    bool exponential = true;
    bool include_inputs = true;
};

namespace detail {

inline Expr monomial(const std::vector<Expr>& vars, const std::vector<int>& powers) {
    std::vector<Expr> factors;
    for (std::size_t v = 0; v < vars.size(); ++v) {
        if (powers[v] == 0)
            continue;
        factors.push_back(powers[v] == 1 ? vars[v] : pow(vars[v], powers[v]));
    }
    Expr out = factors.front();
    for (std::size_t k = 1; k < factors.size(); ++k)
        out = std::move(out) * factors[k];
    return out;
}

inline void enumerate_monomials(const std::vector<Expr>& vars, int max_degree, std::vector<Expr>& out) {
    // graded order: all degree-1 terms, then degree 2, ...
    for (int deg = 1; deg <= max_degree; ++deg) {
        std::vector<int> powers(vars.size(), 0);
        std::function<void(std::size_t, int)> rec = [&](std::size_t v, int left) {
            if (v + 1 == vars.size()) {
                powers[v] = left;
                out.push_back(monomial(vars, powers));
                powers[v] = 0;
                return;
            }
            for (int p = left; p >= 0; --p) {
                powers[v] = p;
                rec(v + 1, left - p);
            }
            powers[v] = 0;
        };
        rec(0, deg);
    }
}

inline Expr exp_feature(int state, double rate) {
    if (rate == 1.0)
        return Expr::unary(Op::Exp, Expr::state(state));
    if (rate == -1.0)
        return Expr::unary(Op::Exp, Expr::unary(Op::Neg, Expr::state(state)));
    return Expr::unary(Op::Exp, Expr::constant(rate) * Expr::state(state));
}

} // namespace detail

/// Broad feature library: constant, monomials of the states (and inputs) up
/// to `max_degree`, sin/cos of each state and exp over the rate grid.
inline std::vector<Expr> library_features(std::size_t dim, std::size_t inputs, const DictionaryOptions& opt = {}) {
    std::vector<Expr> feats;
    if (opt.constant)
        feats.push_back(Expr::constant(1.0));
    std::vector<Expr> vars;
    for (std::size_t i = 0; i < dim; ++i)
        vars.push_back(Expr::state(static_cast<int>(i)));
    if (opt.include_inputs)
        for (std::size_t j = 0; j < inputs; ++j)
            vars.push_back(Expr::input(static_cast<int>(j)));
    detail::enumerate_monomials(vars, opt.max_degree, feats);
    if (opt.trig)
        for (std::size_t i = 0; i < dim; ++i) {
            feats.push_back(Expr::unary(Op::Sin, Expr::state(static_cast<int>(i))));
            feats.push_back(Expr::unary(Op::Cos, Expr::state(static_cast<int>(i))));
        }
    if (opt.exponential)
        for (std::size_t i = 0; i < dim; ++i)
            for (double r : kExpRateGrid)
                feats.push_back(detail::exp_feature(static_cast<int>(i), r));
    return feats;
}

/// Baseline dictionary: the same broad library for every state equation.
inline EquationTemplate baseline_dictionary(std::size_t dim, std::size_t inputs, const DictionaryOptions& opt = {}) {
    EquationTemplate tpl;
    auto feats = library_features(dim, inputs, opt);
    tpl.equations.assign(dim, feats);
    return tpl;
}

/// Seed structure: full linear coupling, dx_i/dt over {x_0, ..., x_{d-1}}.
inline EquationTemplate seed_template(std::size_t dim) {
    EquationTemplate tpl;
    tpl.equations.resize(dim);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j)
            tpl.equations[i].push_back(Expr::state(static_cast<int>(j)));
    return tpl;
}

/// Compact per-family feature pools that the mutation proposer draws from.
inline std::map<Family, std::vector<Expr>> family_pools(std::size_t dim, std::size_t inputs) {
    std::map<Family, std::vector<Expr>> pools;
    auto x = [](std::size_t i) { return Expr::state(static_cast<int>(i)); };
    auto& poly = pools[Family::Polynomial];
    poly.push_back(Expr::constant(1.0));
    for (std::size_t i = 0; i < dim; ++i) {
        poly.push_back(x(i));
        poly.push_back(pow(x(i), 2));
        poly.push_back(pow(x(i), 3));
    }
    for (std::size_t j = 0; j < inputs; ++j)
        poly.push_back(Expr::input(static_cast<int>(j)));
    auto& trig = pools[Family::Trig];
    for (std::size_t i = 0; i < dim; ++i) {
        trig.push_back(Expr::unary(Op::Sin, x(i)));
        trig.push_back(Expr::unary(Op::Cos, x(i)));
    }
    auto& ex = pools[Family::Exponential];
    for (std::size_t i = 0; i < dim; ++i)
        for (double r : kExpRateGrid)
            ex.push_back(detail::exp_feature(static_cast<int>(i), r));
    auto& cross = pools[Family::BilinearCross];
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            if (i < j)
                cross.push_back(x(i) * x(j));
            if (i != j)
                cross.push_back(pow(x(i), 2) * x(j));
        }
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < inputs; ++j)
            cross.push_back(x(i) * Expr::input(static_cast<int>(j)));
    auto& rat = pools[Family::RationalSurrogate];
    for (std::size_t i = 0; i < dim; ++i) {
        rat.push_back(Expr::constant(1.0) / (Expr::constant(1.0) + pow(x(i), 2)));
        rat.push_back(x(i) / (Expr::constant(1.0) + pow(x(i), 2)));
    }
    return pools;
}

} // namespace eqloop
