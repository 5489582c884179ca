#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "eqloop/characterize.hpp"
#include "eqloop/dictionary.hpp"
#include "eqloop/equation_template.hpp"
#include "eqloop/errors.hpp"
#include "eqloop/simulate.hpp"
#include "eqloop/trajectory.hpp"

namespace eqloop {

/// Qualitative rollout-vs-truth comparison for one state.
struct StateDiagnostics {
    double amplitude_ratio = 0.0; // std(rollout) / std(truth)
    double phase_lag = 0.0;       // time shift maximizing cross-correlation; > 0: rollout lags
    double drift_slope = 0.0;     // slope of (rollout - truth) against time
};

struct RolloutDiagnostics {
    bool completed = false;
    std::string failure; // outcome text when not completed
    std::vector<StateDiagnostics> states;
};

inline RolloutDiagnostics diagnose_rollout(const RolloutResult& res, const Trajectory& traj) {
    RolloutDiagnostics out;
    out.completed = res.completed();
    if (!out.completed) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s at t=%.6g", std::string(to_string(res.outcome)).c_str(), res.failed_at);
        out.failure = buf;
        return out;
    }
    const Eigen::Index n = traj.test_size();
    Eigen::VectorXd t = traj.times.tail(n);
    const double dt = n > 1 ? (t[n - 1] - t[0]) / static_cast<double>(n - 1) : 0.0;
    for (Eigen::Index i = 0; i < traj.dim(); ++i) {
        Eigen::VectorXd truth = traj.states.col(i).tail(n);
        Eigen::VectorXd sim = res.states.col(i);
        Eigen::ArrayXd tc = truth.array() - truth.mean();
        Eigen::ArrayXd sc = sim.array() - sim.mean();
        StateDiagnostics d;
        double st = std::sqrt(tc.square().mean()), ss = std::sqrt(sc.square().mean());
        d.amplitude_ratio = st > 0.0 ? ss / st : 0.0;

        const Eigen::Index max_lag = n / 4;
        double best = -std::numeric_limits<double>::infinity();
        Eigen::Index best_lag = 0;
        for (Eigen::Index lag = -max_lag; lag <= max_lag; ++lag) {
            double acc = 0.0;
            Eigen::Index count = 0;
            for (Eigen::Index j = 0; j < n; ++j) {
                Eigen::Index k = j + lag;
                if (k < 0 || k >= n)
                    continue;
                acc += tc[j] * sc[k];
                ++count;
            }
            if (count > 0 && acc / static_cast<double>(count) > best) {
                best = acc / static_cast<double>(count);
                best_lag = lag;
            }
        }
        d.phase_lag = static_cast<double>(best_lag) * dt;

        Eigen::ArrayXd err = sim.array() - truth.array();
        Eigen::ArrayXd tt = t.array() - t.mean();
        double denom = tt.square().sum();
        d.drift_slope = denom > 0.0 ? (tt * (err - err.mean())).sum() / denom : 0.0;
        out.states.push_back(d);
    }
    return out;
}

struct RejectedCandidate {
    std::string signature;
    RejectReason reason;
};

/// Bounded memory of recent rejections; the oldest entries fall off first.
class RejectionMemory {
public:
    explicit RejectionMemory(std::size_t capacity = 20) : capacity_(capacity) {}

    void add(std::string signature, RejectReason reason) {
        entries_.push_back({std::move(signature), reason});
        while (entries_.size() > capacity_)
            entries_.pop_front();
    }

    const std::deque<RejectedCandidate>& entries() const { return entries_; }
    std::size_t capacity() const { return capacity_; }

private:
    std::size_t capacity_;
    std::deque<RejectedCandidate> entries_;
};

/// Everything the proposer is told about the current identification state.
struct PromptContext {
    std::size_t dim = 0;
    std::size_t inputs = 0;
    std::vector<std::string> state_names, state_units, input_names, input_units;
    std::map<std::string, double> known_parameters;

    DataSummary summary;

    EquationTemplate best_template;
    std::vector<std::string> best_equations;
    std::vector<double> best_nrmse;

    std::vector<std::string> baseline_equations;
    std::vector<bool> baseline_reliable;
    std::vector<double> baseline_nrmse;

    PriorSpec priors;
    std::deque<RejectedCandidate> rejected;
    std::size_t error_focus = 0;
    RolloutDiagnostics diagnostics;

    std::size_t max_terms = kDefaultMaxTerms;
    std::size_t requested = 4;
};

inline constexpr std::array<std::string_view, 9> kPromptSections{
    "METADATA", "DATA CHARACTERISTICS", "CURRENT BEST", "BASELINE", "PRIORS",
    "ERROR FOCUS", "ROLLOUT DIAGNOSTICS", "REJECTED CANDIDATES", "OUTPUT FORMAT"};

namespace detail {

inline std::string num(double v) {
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    if (std::isnan(v))
        return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline std::string section(std::string_view name) { return "## " + std::string(name) + "\n"; }

inline std::string nrmse_line(const std::vector<double>& v) {
    std::string s = "nrmse:";
    for (std::size_t i = 0; i < v.size(); ++i)
        s += " x" + std::to_string(i) + "=" + num(v[i]);
    return s + "\n";
}

} // namespace detail

/// Deterministic prompt document with a fixed section order.
inline std::string build_prompt(const PromptContext& ctx) {
    using detail::num;
    std::string p;
    p += "You are proposing candidate ODE structures for sparse regression.\n\n";

    p += detail::section(kPromptSections[0]);
    for (std::size_t i = 0; i < ctx.dim; ++i) {
        p += "state x" + std::to_string(i);
        if (i < ctx.state_names.size() && !ctx.state_names[i].empty() && ctx.state_names[i] != "x" + std::to_string(i))
            p += " name=" + ctx.state_names[i];
        if (i < ctx.state_units.size() && !ctx.state_units[i].empty())
            p += " unit=" + ctx.state_units[i];
        p += "\n";
    }
    for (std::size_t j = 0; j < ctx.inputs; ++j) {
        p += "input u" + std::to_string(j) + " (exogenous, not integrated)";
        if (j < ctx.input_names.size() && !ctx.input_names[j].empty() && ctx.input_names[j] != "u" + std::to_string(j))
            p += " name=" + ctx.input_names[j];
        if (j < ctx.input_units.size() && !ctx.input_units[j].empty())
            p += " unit=" + ctx.input_units[j];
        p += "\n";
    }
    for (const auto& [k, v] : ctx.known_parameters)
        p += "parameter " + k + "=" + num(v) + "\n";
    p += "\n";

    p += detail::section(kPromptSections[1]);
    for (std::size_t i = 0; i < ctx.summary.states.size(); ++i) {
        const auto& s = ctx.summary.states[i];
        p += "x" + std::to_string(i) + ": min=" + num(s.min) + " max=" + num(s.max) + " std=" + num(s.stddev) +
             " monotonic=" + (s.monotonic ? "yes" : "no") + " oscillatory=" + (s.oscillatory ? "yes" : "no") +
             " period=" + (s.period ? num(*s.period) : "-") + " saturating=" + (s.saturating ? "yes" : "no") +
             " sign_definite=" + (s.sign_definite ? "yes" : "no") + (s.degenerate ? " constant=yes" : "") + "\n";
    }
    p += "\n";

    p += detail::section(kPromptSections[2]);
    for (const auto& line : ctx.best_equations)
        p += line + "\n";
    p += detail::nrmse_line(ctx.best_nrmse);
    p += "\n";

    p += detail::section(kPromptSections[3]);
    for (std::size_t i = 0; i < ctx.baseline_equations.size(); ++i) {
        p += ctx.baseline_equations[i];
        if (i < ctx.baseline_reliable.size())
            p += std::string("  [trust: ") + (ctx.baseline_reliable[i] ? "reliable" : "unreliable") + "]";
        p += "\n";
    }
    p += detail::nrmse_line(ctx.baseline_nrmse);
    p += "\n";

    p += detail::section(kPromptSections[4]);
    for (std::size_t i = 0; i < ctx.priors.per_state.size(); ++i) {
        p += "dx" + std::to_string(i) + "/dt:";
        for (Family f : kAllFamilies)
            p += " " + std::string(to_string(f)) + "=" + std::string(to_string(ctx.priors.at(i, f)));
        p += "\n";
    }
    p += "\n";

    p += detail::section(kPromptSections[5]);
    p += "x" + std::to_string(ctx.error_focus);
    if (ctx.error_focus < ctx.best_nrmse.size())
        p += " nrmse=" + num(ctx.best_nrmse[ctx.error_focus]);
    p += " (largest test error; improve dx" + std::to_string(ctx.error_focus) +
         "/dt without degrading the others)\n\n";

    p += detail::section(kPromptSections[6]);
    if (!ctx.diagnostics.completed) {
        p += "rollout failed: " + (ctx.diagnostics.failure.empty() ? std::string("not simulated") : ctx.diagnostics.failure) + "\n";
    } else {
        for (std::size_t i = 0; i < ctx.diagnostics.states.size(); ++i) {
            const auto& d = ctx.diagnostics.states[i];
            p += "x" + std::to_string(i) + ": amplitude_ratio=" + num(d.amplitude_ratio) +
                 " phase_lag=" + num(d.phase_lag) + " drift_slope=" + num(d.drift_slope) + "\n";
        }
    }
    p += "\n";

    p += detail::section(kPromptSections[7]);
    for (const auto& r : ctx.rejected)
        p += "- " + r.signature + " : " + std::string(to_string(r.reason)) + "\n";
    p += "\n";

    p += detail::section(kPromptSections[8]);
    p += "Return " + std::to_string(ctx.requested) +
         " candidate templates inside one fenced ```json block as a JSON array.\n"
         "Each template: {\"equations\": [{\"state\": 0, \"features\": [\"x1\", \"x0^2*x1\"]}, ...]} "
         "with one entry per state x0..x" + std::to_string(ctx.dim == 0 ? 0 : ctx.dim - 1) + ".\n"
         "Features are closed expressions over x0.., u0.., t and numeric constants using + - * / ^, "
         "sin cos exp log sqrt abs. Exponents must be integer or half-integer literals. "
         "exp() arguments must be a rate in {+-0.25, +-0.5, +-1, +-2} times one state.\n"
         "Each feature gets its own fitted coefficient: do not write unknown coefficients, "
         "and never place coefficients inside functions, denominators or exponents.\n"
         "At most " + std::to_string(ctx.max_terms) + " features per equation; no repeated features.\n";
    return p;
}

/// Checks that every prompt section header is present, in order.
inline bool prompt_sections_in_order(std::string_view prompt) {
    std::size_t pos = 0;
    for (auto name : kPromptSections) {
        std::string header = "## " + std::string(name) + "\n";
        auto at = prompt.find(header, pos);
        if (at == std::string_view::npos)
            return false;
        pos = at + header.size();
    }
    return true;
}

struct ProposalRequest {
    const PromptContext* context = nullptr;
    std::string prompt;
    std::size_t count = 4;
    double diversity = 0.3;
};

struct ProposalBatch {
    std::vector<std::string> candidates; // raw template documents
    double diversity = 0.0;
    std::string proposer;
};

/// Source of candidate templates.
class Proposer {
public:
    virtual ~Proposer() = default;
    virtual std::string name() const = 0;
    /// Throws ProposerUnavailable or MalformedResponse.
    virtual ProposalBatch propose(const ProposalRequest& request) = 0;
};

/// Pulls template documents out of ```-fenced blocks in free text. A block
/// may hold one template object, an array of them, or {"candidates": [...]}.
/// Throws MalformedResponse when no block parses.
inline std::vector<std::string> extract_fenced_templates(std::string_view text) {
    std::vector<std::string> out;
    bool any_block = false;
    std::size_t pos = 0;
    for (;;) {
        auto open = text.find("```", pos);
        if (open == std::string_view::npos)
            break;
        auto body_start = text.find('\n', open + 3);
        if (body_start == std::string_view::npos)
            break;
        auto close = text.find("```", body_start + 1);
        if (close == std::string_view::npos)
            break;
        std::string_view body = text.substr(body_start + 1, close - body_start - 1);
        pos = close + 3;
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception&) {
            continue;
        }
        auto take = [&](const nlohmann::json& d) {
            if (d.is_object() && d.contains("equations")) {
                out.push_back(d.dump());
                any_block = true;
            }
        };
        if (doc.is_array()) {
            for (const auto& d : doc)
                take(d);
        } else if (doc.is_object() && doc.contains("candidates") && doc["candidates"].is_array()) {
            for (const auto& d : doc["candidates"])
                take(d);
        } else {
            take(doc);
        }
    }
    if (!any_block)
        throw MalformedResponse("response contains no parseable fenced template block");
    return out;
}

/// Replays pre-recorded batches in file order.
///
/// File: {"batches": [[<template doc or raw string>, ...], ...]}
class ScriptedProposer : public Proposer {
public:
    explicit ScriptedProposer(const nlohmann::json& doc, std::string label = "replay") : label_(std::move(label)) {
        const nlohmann::json* batches = &doc;
        if (doc.is_object()) {
            if (!doc.contains("batches"))
                throw SpecError("replay document needs a 'batches' array");
            batches = &doc["batches"];
        }
        if (!batches->is_array())
            throw SpecError("replay 'batches' must be an array");
        for (const auto& b : *batches) {
            if (!b.is_array())
                throw SpecError("each replay batch must be an array");
            std::vector<std::string> batch;
            for (const auto& c : b)
                batch.push_back(c.is_string() ? c.get<std::string>() : c.dump());
            batches_.push_back(std::move(batch));
        }
    }

    static std::unique_ptr<ScriptedProposer> from_file(const std::filesystem::path& path) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(read_text_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw SpecError("replay file '" + path.string() + "' is not valid JSON: " + e.what());
        }
        return std::make_unique<ScriptedProposer>(doc, "replay:" + path.filename().string());
    }

    std::string name() const override { return label_; }

    ProposalBatch propose(const ProposalRequest& req) override {
        if (!prompt_sections_in_order(req.prompt))
            throw MalformedResponse("scripted proposer received a prompt with missing or reordered sections");
        if (next_ >= batches_.size())
            throw ProposerUnavailable("replay exhausted after " + std::to_string(batches_.size()) + " batches");
        ProposalBatch out;
        out.candidates = batches_[next_++];
        if (out.candidates.size() > req.count)
            out.candidates.resize(req.count);
        out.diversity = req.diversity;
        out.proposer = label_;
        return out;
    }

    std::size_t remaining() const { return batches_.size() - next_; }

private:
    std::string label_;
    std::vector<std::vector<std::string>> batches_;
    std::size_t next_ = 0;
};

/// Random-edit baseline proposer: add, drop or swap features of the current
/// best template, drawing new features from prior-preferred families (and
/// optional ones once diversity reaches 0.5).
class MutationProposer : public Proposer {
public:
    explicit MutationProposer(std::uint64_t seed) : seed_(seed), rng_(seed) {}

    std::string name() const override { return "mutate:" + std::to_string(seed_); }

    ProposalBatch propose(const ProposalRequest& req) override {
        if (!req.context)
            throw ProposerUnavailable("mutation proposer needs the prompt context");
        const PromptContext& ctx = *req.context;
        const EquationTemplate& base = ctx.best_template;
        if (base.dim() == 0)
            throw ProposerUnavailable("mutation proposer has no template to edit");
        auto pools = family_pools(ctx.dim, ctx.inputs);
        const bool explore = req.diversity >= 0.5;

        ProposalBatch out;
        out.diversity = req.diversity;
        out.proposer = name();
        std::set<std::string> seen{template_signature(base)};
        for (std::size_t attempt = 0; attempt < 25 * req.count && out.candidates.size() < req.count; ++attempt) {
            EquationTemplate cand = base;
            int edits = explore ? 2 : 1;
            for (int e = 0; e < edits; ++e)
                mutate(cand, ctx, pools, explore);
            if (validate_template(cand, ctx.max_terms, static_cast<int>(ctx.inputs)))
                continue;
            if (!seen.insert(template_signature(cand)).second)
                continue;
            out.candidates.push_back(template_to_json(cand).dump());
        }
        return out;
    }

private:
    std::size_t uniform(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

    void mutate(EquationTemplate& tpl, const PromptContext& ctx, const std::map<Family, std::vector<Expr>>& pools,
                bool explore) {
        std::size_t state = std::bernoulli_distribution(0.5)(rng_) ? ctx.error_focus % tpl.dim() : uniform(tpl.dim());
        auto& eq = tpl.equations[state];

        std::vector<Family> fams;
        for (Family f : kAllFamilies) {
            auto pref = ctx.priors.per_state.empty() ? Preference::Preferred : ctx.priors.at(state, f);
            if (pref == Preference::Preferred || (explore && pref == Preference::Optional))
                if (!pools.at(f).empty())
                    fams.push_back(f);
        }
        if (fams.empty())
            fams.push_back(Family::Polynomial);

        auto draw = [&]() -> std::optional<Expr> {
            const auto& pool = pools.at(fams[uniform(fams.size())]);
            for (int tries = 0; tries < 8; ++tries) {
                const Expr& f = pool[uniform(pool.size())];
                auto sig = canonical_signature(f);
                bool present = std::any_of(eq.begin(), eq.end(), [&](const Expr& g) { return canonical_signature(g) == sig; });
                if (!present)
                    return f;
            }
            return std::nullopt;
        };

        std::size_t op = uniform(3); // 0 add, 1 drop, 2 swap
        if (op == 0 && eq.size() >= ctx.max_terms)
            op = 2;
        if (op == 1 && eq.size() <= 1)
            op = 0;
        if (op == 0) {
            if (auto f = draw())
                eq.push_back(*f);
        } else if (op == 1) {
            eq.erase(eq.begin() + static_cast<std::ptrdiff_t>(uniform(eq.size())));
        } else {
            if (auto f = draw())
                eq[uniform(eq.size())] = *f;
        }
    }

    std::uint64_t seed_;
    std::mt19937_64 rng_;
};

struct NoveltyResult {
    std::vector<std::size_t> kept;                                // indices into the batch
    std::vector<std::pair<std::size_t, std::string>> dropped;     // index, reason
};

/// Drops templates whose template-level signature is already in `history`
/// (or repeats an earlier entry of the same batch).
inline NoveltyResult novelty_filter(const std::vector<EquationTemplate>& batch, const std::set<std::string>& history) {
    NoveltyResult out;
    std::set<std::string> in_batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto sig = template_signature(batch[i]);
        if (history.count(sig))
            out.dropped.emplace_back(i, "previously tested");
        else if (!in_batch.insert(sig).second)
            out.dropped.emplace_back(i, "repeated within batch");
        else
            out.kept.push_back(i);
    }
    return out;
}

} // namespace eqloop
