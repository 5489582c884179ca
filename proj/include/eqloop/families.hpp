#pragma once

#include <array>
#include <set>
#include <string_view>
#include <vector>

#include "eqloop/expr.hpp"

namespace eqloop {

/// Function families used for structural priors and grading.
enum class Family { Polynomial, Trig, Exponential, BilinearCross, RationalSurrogate };

inline constexpr std::array<Family, 5> kAllFamilies{Family::Polynomial, Family::Trig, Family::Exponential,
                                                    Family::BilinearCross, Family::RationalSurrogate};

inline std::string_view to_string(Family f) {
    switch (f) {
    case Family::Polynomial: return "polynomial";
    case Family::Trig: return "trig";
    case Family::Exponential: return "exponential";
    case Family::BilinearCross: return "bilinear-cross";
    case Family::RationalSurrogate: return "rational-surrogate";
    }
    return "unknown";
}

namespace detail {

inline void collect_states(const Expr& e, std::set<int>& out) {
    if (e.op == Op::State)
        out.insert(e.index);
    for (const auto& a : e.args)
        collect_states(a, out);
}

// distinct states multiplied together at the top of a product
inline std::size_t product_state_count(const Expr& e) {
    std::set<int> states;
    std::vector<const Expr*> stack{&e};
    while (!stack.empty()) {
        const Expr* cur = stack.back();
        stack.pop_back();
        if (cur->op == Op::Mul) {
            for (const auto& a : cur->args)
                stack.push_back(&a);
        } else if (cur->op == Op::Pow || cur->op == Op::Neg) {
            stack.push_back(&cur->args[0]);
        } else if (cur->op == Op::State) {
            states.insert(cur->index);
        }
    }
    return states.size();
}

} // namespace detail

/// Families a feature belongs to, read off its node kinds. A feature with no
/// transcendental, rational or cross-product structure is polynomial.
inline std::set<Family> feature_families(const Expr& f) {
    std::set<Family> fams;
    if (any_node(f, [](const Expr& n) { return n.op == Op::Sin || n.op == Op::Cos || n.op == Op::Tan || n.op == Op::Cot; }))
        fams.insert(Family::Trig);
    if (any_node(f, [](const Expr& n) { return n.op == Op::Exp || n.op == Op::Log; }))
        fams.insert(Family::Exponential);
    if (any_node(f, [](const Expr& n) {
            return n.op == Op::Div || (n.op == Op::Pow && n.args[1].op == Op::Const && n.args[1].value < 0.0);
        }))
        fams.insert(Family::RationalSurrogate);
    if (detail::product_state_count(f) >= 2)
        fams.insert(Family::BilinearCross);
    if (fams.empty())
        fams.insert(Family::Polynomial);
    return fams;
}

} // namespace eqloop
