#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "eqloop/errors.hpp"
#include "eqloop/expr.hpp"
#include "eqloop/signature.hpp"

namespace eqloop {

inline constexpr std::size_t kDefaultMaxTerms = 8;
inline constexpr double kComplexityNormalization = 50.0;

/// Per-state lists of features phi_{i,k}; each feature is multiplied by its
/// own unknown scalar coefficient: dx_i/dt = sum_k theta_{i,k} phi_{i,k}.
struct EquationTemplate {
    std::vector<std::vector<Expr>> equations;

    std::size_t dim() const { return equations.size(); }

    std::size_t feature_count() const {
        std::size_t n = 0;
        for (const auto& eq : equations)
            n += eq.size();
        return n;
    }

    friend bool operator==(const EquationTemplate&, const EquationTemplate&) = default;
};

/// Outcome of a failed gate: the closed reason plus a one-line explanation.
struct Rejection {
    RejectReason reason;
    std::string message;
};

namespace detail {

inline bool uses_only_candidate_grammar(const Expr& e, std::size_t dim, int num_inputs) {
    return !any_node(e, [&](const Expr& n) {
        if (is_truth_only(n.op))
            return true;
        if (n.op == Op::State && (n.index < 0 || static_cast<std::size_t>(n.index) >= dim))
            return true;
        if (n.op == Op::Input && (n.index < 0 || (num_inputs >= 0 && n.index >= num_inputs)))
            return true;
        return false;
    });
}

inline bool exponent_is_literal(const Expr& e) {
    return !any_node(e, [](const Expr& n) {
        return n.op == Op::Pow && (n.args[1].op != Op::Const || !is_half_integer(n.args[1].value));
    });
}

} // namespace detail

/// Gate applied to every candidate template before fitting.
inline std::optional<Rejection> validate_template(const EquationTemplate& tpl, std::size_t max_terms = kDefaultMaxTerms,
                                                  int num_inputs = -1) {
    if (tpl.equations.empty())
        return Rejection{RejectReason::Syntax, "template has no equations"};
    for (std::size_t i = 0; i < tpl.dim(); ++i) {
        const auto& eq = tpl.equations[i];
        if (eq.empty())
            return Rejection{RejectReason::Syntax, "equation for x" + std::to_string(i) + " has no features"};
        if (eq.size() > max_terms)
            return Rejection{RejectReason::TooManyTerms, "equation for x" + std::to_string(i) + " has " +
                                                             std::to_string(eq.size()) + " features (max " +
                                                             std::to_string(max_terms) + ")"};
        std::set<TermSignature> seen;
        for (const auto& f : eq) {
            if (!detail::uses_only_candidate_grammar(f, tpl.dim(), num_inputs))
                return Rejection{RejectReason::DisallowedSymbol, "feature '" + to_string(f) + "' leaves the grammar"};
            if (!detail::exponent_is_literal(f))
                return Rejection{RejectReason::Linearity,
                                 "feature '" + to_string(f) + "' has a non-literal exponent"};
            if (!seen.insert(canonical_signature(f)).second)
                return Rejection{RejectReason::Duplicate, "equation for x" + std::to_string(i) +
                                                              " repeats feature '" + to_string(f) + "'"};
        }
    }
    return std::nullopt;
}

/// Normalized node count: every feature node plus one node per coefficient
/// slot, divided by `normalization`.
inline double complexity(const EquationTemplate& tpl, double normalization = kComplexityNormalization) {
    std::size_t nodes = 0;
    for (const auto& eq : tpl.equations)
        for (const auto& f : eq)
            nodes += node_count(f) + 1;
    return static_cast<double>(nodes) / normalization;
}

/// Feature matrices, one n x K_i block per state equation.
inline std::vector<Eigen::MatrixXd> evaluate_features(const EquationTemplate& tpl, const Eigen::MatrixXd& states,
                                                      const Eigen::MatrixXd& inputs, const Eigen::VectorXd& times) {
    const Eigen::Index n = states.rows();
    if (times.size() != n)
        throw DimensionMismatch("times has " + std::to_string(times.size()) + " samples, states has " +
                                std::to_string(n));
    if (static_cast<std::size_t>(states.cols()) != tpl.dim())
        throw DimensionMismatch("template has " + std::to_string(tpl.dim()) + " equations, states has " +
                                std::to_string(states.cols()) + " columns");
    if (inputs.cols() > 0 && inputs.rows() != n)
        throw DimensionMismatch("inputs has " + std::to_string(inputs.rows()) + " rows, states has " +
                                std::to_string(n));

    // row-major copies so each sample is a contiguous span
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> x = states;
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> u = inputs;

    std::vector<Eigen::MatrixXd> out;
    out.reserve(tpl.dim());
    for (std::size_t i = 0; i < tpl.dim(); ++i) {
        const auto& eq = tpl.equations[i];
        Eigen::MatrixXd block(n, static_cast<Eigen::Index>(eq.size()));
        for (std::size_t k = 0; k < eq.size(); ++k) {
            for (Eigen::Index j = 0; j < n; ++j) {
                EvalPoint p{std::span<const double>(x.row(j).data(), static_cast<std::size_t>(x.cols())),
                            u.cols() > 0 ? std::span<const double>(u.row(j).data(), static_cast<std::size_t>(u.cols()))
                                         : std::span<const double>{},
                            times[j]};
                double v = evaluate(eq[k], p);
                if (!std::isfinite(v))
                    throw EvaluationError("feature '" + to_string(eq[k]) + "' of x" + std::to_string(i) +
                                              " is undefined at sample " + std::to_string(j),
                                          static_cast<std::size_t>(j), i, k);
                block(j, static_cast<Eigen::Index>(k)) = v;
            }
        }
        out.push_back(std::move(block));
    }
    return out;
}

/// Template-level signature: per equation, the sorted feature signatures.
inline std::string template_signature(const EquationTemplate& tpl) {
    std::string out;
    for (std::size_t i = 0; i < tpl.dim(); ++i) {
        std::vector<std::string> sigs;
        for (const auto& f : tpl.equations[i])
            sigs.push_back(canonical_signature(f).text);
        std::sort(sigs.begin(), sigs.end());
        if (i > 0)
            out += " | ";
        out += "x" + std::to_string(i) + "' = [";
        for (std::size_t k = 0; k < sigs.size(); ++k) {
            if (k > 0)
                out += "; ";
            out += sigs[k];
        }
        out += "]";
    }
    return out;
}

// --- structured document form -----------------------------------------------
//   { "equations": [ { "state": 0, "features": ["x1", "x0^2*x1"] }, ... ] }

inline nlohmann::json template_to_json(const EquationTemplate& tpl) {
    nlohmann::json eqs = nlohmann::json::array();
    for (std::size_t i = 0; i < tpl.dim(); ++i) {
        nlohmann::json feats = nlohmann::json::array();
        for (const auto& f : tpl.equations[i])
            feats.push_back(to_string(f));
        eqs.push_back({{"state", i}, {"features", feats}});
    }
    return {{"equations", eqs}};
}

/// Parses a template document for a system with `dim` states. Every state
/// must appear exactly once. Throws TemplateError carrying the reject reason.
inline EquationTemplate template_from_json(const nlohmann::json& doc, std::size_t dim, int num_inputs = -1) {
    auto fail = [](RejectReason r, const std::string& msg) -> TemplateError { return TemplateError(r, msg); };
    if (!doc.is_object() || !doc.contains("equations") || !doc["equations"].is_array())
        throw fail(RejectReason::Syntax, "template document needs an 'equations' array");
    EquationTemplate tpl;
    tpl.equations.resize(dim);
    std::vector<bool> seen(dim, false);
    Grammar g = Grammar::candidate(static_cast<int>(dim), num_inputs);
    for (const auto& eq : doc["equations"]) {
        if (!eq.is_object() || !eq.contains("state") || !eq["state"].is_number_integer() || !eq.contains("features") ||
            !eq["features"].is_array())
            throw fail(RejectReason::Syntax, "each equation needs an integer 'state' and a 'features' array");
        auto s = eq["state"].get<long long>();
        if (s < 0 || static_cast<std::size_t>(s) >= dim)
            throw fail(RejectReason::DisallowedSymbol, "equation for unknown state x" + std::to_string(s));
        if (seen[static_cast<std::size_t>(s)])
            throw fail(RejectReason::Syntax, "state x" + std::to_string(s) + " appears twice");
        seen[static_cast<std::size_t>(s)] = true;
        for (const auto& f : eq["features"]) {
            if (!f.is_string())
                throw fail(RejectReason::Syntax, "features must be strings");
            try {
                tpl.equations[static_cast<std::size_t>(s)].push_back(parse_expression(f.get<std::string>(), g));
            } catch (const ParseError& e) {
                throw fail(e.reason(), e.what());
            }
        }
    }
    for (std::size_t i = 0; i < dim; ++i)
        if (!seen[i])
            throw fail(RejectReason::Syntax, "no equation for state x" + std::to_string(i));
    return tpl;
}

inline EquationTemplate template_from_json_text(const std::string& text, std::size_t dim, int num_inputs = -1) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw TemplateError(RejectReason::Syntax, std::string("template document is not valid JSON: ") + e.what());
    }
    return template_from_json(doc, dim, num_inputs);
}

} // namespace eqloop
