#pragma once

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "eqloop/characterize.hpp"
#include "eqloop/dictionary.hpp"
#include "eqloop/equation_template.hpp"
#include "eqloop/errors.hpp"
#include "eqloop/propose.hpp"
#include "eqloop/regress.hpp"
#include "eqloop/simulate.hpp"
#include "eqloop/trajectory.hpp"

namespace eqloop {

struct LoopConfig {
    double tau = 0.1;
    int max_iterations = 10;
    double lambda_c = 0.1;
    double lambda_p = 0.1;
    int plateau_window = 3;
    double plateau_epsilon = 0.02;
    std::size_t base_candidates = 4;
    std::size_t plateau_candidates = 8;
    double base_diversity = 0.3;
    double plateau_diversity = 0.9;
    std::size_t max_terms = kDefaultMaxTerms;
    double threshold = kDefaultStlsqThreshold;
    int max_sweeps = kDefaultStlsqSweeps;
    double safeguard_margin = 0.05;
    std::size_t rejection_memory = 20;
    double complexity_normalization = kComplexityNormalization;
    double trust_r2 = 0.95;
    double trust_nrmse = 0.2;
    DictionaryOptions dictionary;
    SimConfig sim;

    void validate() const {
        if (!(tau > 0.0))
            throw ConfigError("loop.tau must be positive");
        if (max_iterations < 1)
            throw ConfigError("loop.max_iterations must be at least 1");
        if (!(lambda_c >= 0.0 && lambda_p >= 0.0))
            throw ConfigError("loop weights must be nonnegative");
        if (plateau_window < 1 || !(plateau_epsilon >= 0.0))
            throw ConfigError("plateau window must be >= 1 and epsilon >= 0");
        if (base_candidates < 1 || plateau_candidates < 1)
            throw ConfigError("candidate counts must be at least 1");
        if (!(base_diversity >= 0.0 && base_diversity <= 1.0 && plateau_diversity >= 0.0 && plateau_diversity <= 1.0))
            throw ConfigError("diversity settings must lie in [0, 1]");
        if (max_terms < 1)
            throw ConfigError("max_terms must be at least 1");
        if (!(threshold >= 0.0) || max_sweeps < 1)
            throw ConfigError("regression threshold must be >= 0 and sweeps >= 1");
        if (!(complexity_normalization > 0.0))
            throw ConfigError("complexity normalization must be positive");
        if (dictionary.max_degree < 1)
            throw ConfigError("dictionary.max_degree must be at least 1");
        sim.validate();
    }
};

/// Aggregate selection score of one fitted candidate.
struct CandidateScore {
    Eigen::VectorXd nrmse;
    Eigen::VectorXd r2;
    double max_nrmse = std::numeric_limits<double>::infinity();
    double complexity = 0.0;
    double penalty = 0.0;
    double J = std::numeric_limits<double>::infinity();
    RolloutOutcome outcome = RolloutOutcome::Diverged;

    bool completed() const { return outcome == RolloutOutcome::Completed; }
};

inline double aggregate_score(double max_nrmse, double complexity, double penalty, const LoopConfig& cfg) {
    if (!std::isfinite(max_nrmse))
        return std::numeric_limits<double>::infinity();
    return max_nrmse + cfg.lambda_c * complexity + cfg.lambda_p * penalty;
}

inline CandidateScore make_score(const RolloutResult& rollout, const FittedModel& model, const PriorSpec& priors,
                                 const LoopConfig& cfg) {
    CandidateScore s;
    s.outcome = rollout.outcome;
    s.nrmse = rollout.nrmse;
    s.r2 = rollout.r2;
    s.max_nrmse = rollout.completed() ? rollout.max_nrmse : std::numeric_limits<double>::infinity();
    auto active = model.active_template();
    s.complexity = complexity(active, cfg.complexity_normalization);
    s.penalty = prior_penalty(active, priors);
    s.J = rollout.completed() ? aggregate_score(s.max_nrmse, s.complexity, s.penalty, cfg)
                              : std::numeric_limits<double>::infinity();
    return s;
}

/// Rollout-scores a fitted model and folds in complexity and prior penalty.
/// Complexity and penalty are taken over the active (nonzero) terms.
inline CandidateScore score_candidate(const FittedModel& model, const Trajectory& traj, const PriorSpec& priors,
                                      const LoopConfig& cfg) {
    return make_score(score_rollout(model, traj, cfg.sim), model, priors, cfg);
}

/// Index of the state with the largest test NRMSE; ties go to the lowest index.
inline std::size_t select_error_focus(const CandidateScore& score) {
    std::size_t best = 0;
    for (Eigen::Index i = 1; i < score.nrmse.size(); ++i)
        if (score.nrmse[i] > score.nrmse[static_cast<Eigen::Index>(best)])
            best = static_cast<std::size_t>(i);
    return best;
}

/// True iff the last `window` best-J values improved by less than `epsilon`
/// relative to the oldest of them.
inline bool detect_plateau(const std::vector<double>& best_j, int window, double epsilon) {
    if (window < 1 || best_j.size() < static_cast<std::size_t>(window))
        return false;
    double oldest = best_j[best_j.size() - static_cast<std::size_t>(window)];
    double newest = best_j.back();
    if (!std::isfinite(oldest))
        return !std::isfinite(newest);
    if (oldest <= 0.0)
        return false;
    return (oldest - newest) / oldest < epsilon;
}

struct BaselineReport {
    FittedModel model;
    std::vector<double> train_r2; // derivative fit, training rows
    std::vector<double> test_r2;  // derivative fit, test rows
    RolloutResult rollout;
    std::vector<bool> reliable;

    bool all_reliable() const {
        return !reliable.empty() && std::all_of(reliable.begin(), reliable.end(), [](bool b) { return b; });
    }
};

/// Fits the fixed broad dictionary, rolls it out and assigns trust labels.
inline BaselineReport run_baseline(const Trajectory& traj, const EquationTemplate& dictionary, const LoopConfig& cfg) {
    BaselineReport rep;
    rep.model = fit_model(dictionary, traj, cfg.threshold, cfg.max_sweeps);

    Eigen::MatrixXd deriv = estimate_derivatives(traj);
    const Eigen::Index n = traj.samples(), split = traj.split, d = traj.dim();
    Eigen::MatrixXd pred(n, d);
    std::vector<double> dx(static_cast<std::size_t>(d));
    std::vector<double> x(static_cast<std::size_t>(d)), u(static_cast<std::size_t>(traj.num_inputs()));
    for (Eigen::Index j = 0; j < n; ++j) {
        for (Eigen::Index i = 0; i < d; ++i)
            x[static_cast<std::size_t>(i)] = traj.states(j, i);
        for (Eigen::Index k = 0; k < traj.num_inputs(); ++k)
            u[static_cast<std::size_t>(k)] = traj.inputs(j, k);
        rep.model.rhs(traj.times[j], x, u, dx);
        for (Eigen::Index i = 0; i < d; ++i)
            pred(j, i) = dx[static_cast<std::size_t>(i)];
    }
    auto safe_r2 = [](const Eigen::VectorXd& p, const Eigen::VectorXd& a) {
        if (!p.allFinite())
            return -std::numeric_limits<double>::infinity();
        try {
            return r_squared(p, a);
        } catch (const DegenerateData&) {
            return std::numeric_limits<double>::quiet_NaN();
        }
    };
    for (Eigen::Index i = 0; i < d; ++i) {
        rep.train_r2.push_back(safe_r2(pred.col(i).head(split), deriv.col(i).head(split)));
        rep.test_r2.push_back(safe_r2(pred.col(i).tail(n - split), deriv.col(i).tail(n - split)));
    }

    rep.rollout = score_rollout(rep.model, traj, cfg.sim);
    for (Eigen::Index i = 0; i < d; ++i) {
        bool ok = rep.rollout.completed() && rep.train_r2[static_cast<std::size_t>(i)] >= cfg.trust_r2 &&
                  rep.rollout.nrmse[i] <= cfg.trust_nrmse;
        rep.reliable.push_back(ok);
    }
    return rep;
}

enum class StopReason { EarlyStop, BudgetExhausted };

inline std::string_view to_string(StopReason r) {
    return r == StopReason::EarlyStop ? "early-stop" : "budget-exhausted";
}

/// One proposal as it went through the pipeline. `status` is empty for
/// candidates that were fitted and rolled out to completion (accepted).
struct CandidateRecord {
    int iteration = 0;
    std::size_t index = 0;
    std::string raw;
    std::optional<RejectReason> status;
    std::string detail;
    std::string signature;
    std::optional<FittedModel> model;
    std::optional<CandidateScore> score;

    bool accepted() const { return !status.has_value(); }
};

struct IterationRecord {
    int iteration = 0;
    std::string prompt;
    std::string proposer;
    double diversity = 0.0;
    std::size_t requested = 0;
    bool plateau = false;
    std::size_t error_focus = 0;
    std::vector<std::string> raw;
    std::string error; // proposer failure, when any
    double best_j = std::numeric_limits<double>::infinity();
};

struct RefinementResult {
    BaselineReport baseline;
    DataSummary summary;
    PriorSpec priors;
    FittedModel best;
    CandidateScore best_score;
    std::vector<CandidateRecord> history; // iteration 0 holds the seed
    std::vector<IterationRecord> iterations;
    StopReason stop = StopReason::BudgetExhausted;
    bool safeguard_applied = false;
    int best_iteration = 0;
};

namespace detail {

struct Evaluated {
    std::optional<FittedModel> model;
    std::optional<CandidateScore> score;
    std::optional<RejectReason> status;
    std::string detail;
};

inline Evaluated evaluate_candidate(const EquationTemplate& tpl, const Trajectory& traj, const PriorSpec& priors,
                                    const LoopConfig& cfg) {
    Evaluated out;
    try {
        out.model = fit_model(tpl, traj, cfg.threshold, cfg.max_sweeps);
    } catch (const Error& e) {
        out.status = RejectReason::FitFailure;
        out.detail = e.what();
        return out;
    }
    bool finite = std::all_of(out.model->coefficients.begin(), out.model->coefficients.end(),
                              [](const Eigen::VectorXd& c) { return c.allFinite(); });
    if (!finite) {
        out.status = RejectReason::FitFailure;
        out.detail = "non-finite coefficients";
        out.model.reset();
        return out;
    }
    try {
        out.score = score_candidate(*out.model, traj, priors, cfg);
    } catch (const Error& e) {
        out.status = RejectReason::FitFailure;
        out.detail = e.what();
        return out;
    }
    if (!out.score->completed()) {
        out.status = RejectReason::RolloutDivergence;
        out.detail = std::string(to_string(out.score->outcome));
    }
    return out;
}

inline std::vector<double> nrmse_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

} // namespace detail

/// Populates the prompt context from the current state of a run.
inline PromptContext make_context(const Trajectory& traj, const RefinementResult& state, const RejectionMemory& memory,
                                  const RolloutResult& best_rollout, std::size_t requested, const LoopConfig& cfg) {
    PromptContext ctx;
    ctx.dim = static_cast<std::size_t>(traj.dim());
    ctx.inputs = static_cast<std::size_t>(traj.num_inputs());
    ctx.state_names = traj.state_names;
    ctx.state_units = traj.state_units;
    ctx.input_names = traj.input_names;
    ctx.input_units = traj.input_units;
    if (traj.metadata.contains("parameters") && traj.metadata["parameters"].is_object())
        for (const auto& [k, v] : traj.metadata["parameters"].items())
            if (v.is_number())
                ctx.known_parameters[k] = v.get<double>();
    ctx.summary = state.summary;
    ctx.best_template = state.best.active_template();
    for (auto& eq : ctx.best_template.equations)
        if (eq.empty())
            eq.push_back(Expr::state(0));
    ctx.best_equations = state.best.equation_strings();
    ctx.best_nrmse = detail::nrmse_vector(state.best_score.nrmse);
    ctx.baseline_equations = state.baseline.model.equation_strings();
    ctx.baseline_reliable = state.baseline.reliable;
    ctx.baseline_nrmse = detail::nrmse_vector(state.baseline.rollout.nrmse);
    ctx.priors = state.priors;
    ctx.rejected = memory.entries();
    ctx.error_focus = select_error_focus(state.best_score);
    ctx.diagnostics = diagnose_rollout(best_rollout, traj);
    ctx.max_terms = cfg.max_terms;
    ctx.requested = requested;
    return ctx;
}

/// The closed refinement loop: baseline, seed, then up to max_iterations
/// rounds of propose / validate / filter / fit / simulate / score.
inline RefinementResult refine(const Trajectory& traj, Proposer& proposer, const LoopConfig& cfg) {
    cfg.validate();
    traj.validate();
    RefinementResult run;
    const std::size_t d = static_cast<std::size_t>(traj.dim());
    const int m = static_cast<int>(traj.num_inputs());

    run.baseline = run_baseline(traj, baseline_dictionary(d, static_cast<std::size_t>(m), cfg.dictionary), cfg);
    run.summary = summarize(traj);
    run.priors = derive_priors(run.summary);

    std::set<std::string> tested;
    RejectionMemory memory(cfg.rejection_memory);

    // seed: full linear coupling
    {
        EquationTemplate seed = seed_template(d);
        CandidateRecord rec;
        rec.raw = template_to_json(seed).dump();
        rec.signature = template_signature(seed);
        auto ev = detail::evaluate_candidate(seed, traj, run.priors, cfg);
        if (!ev.model) {
            FittedModel zero;
            zero.tpl = seed;
            for (std::size_t i = 0; i < d; ++i)
                zero.coefficients.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d)));
            zero.diagnostics.resize(d);
            ev.model = zero;
            ev.score = score_candidate(zero, traj, run.priors, cfg);
        }
        rec.status = ev.status;
        rec.detail = ev.detail;
        rec.model = ev.model;
        rec.score = ev.score;
        tested.insert(rec.signature);
        run.best = *ev.model;
        run.best_score = *ev.score;
        run.history.push_back(std::move(rec));
    }
    RolloutResult best_rollout = score_rollout(run.best, traj, cfg.sim);
    std::vector<double> best_js{run.best_score.J};

    for (int it = 1; it <= cfg.max_iterations; ++it) {
        IterationRecord iter;
        iter.iteration = it;
        iter.plateau = detect_plateau(best_js, cfg.plateau_window, cfg.plateau_epsilon);
        iter.requested = iter.plateau ? cfg.plateau_candidates : cfg.base_candidates;
        iter.diversity = iter.plateau ? cfg.plateau_diversity : cfg.base_diversity;

        PromptContext ctx = make_context(traj, run, memory, best_rollout, iter.requested, cfg);
        iter.error_focus = ctx.error_focus;
        iter.prompt = build_prompt(ctx);
        iter.proposer = proposer.name();

        ProposalBatch batch;
        try {
            batch = proposer.propose({&ctx, iter.prompt, iter.requested, iter.diversity});
        } catch (const ProposerUnavailable& e) {
            iter.error = std::string("proposer unavailable: ") + e.what();
            iter.best_j = run.best_score.J;
            run.iterations.push_back(std::move(iter));
            run.stop = StopReason::BudgetExhausted;
            break;
        } catch (const MalformedResponse& e) {
            iter.error = std::string("malformed response: ") + e.what();
        }
        iter.raw = batch.candidates;

        // grammar gate
        std::vector<CandidateRecord> records(batch.candidates.size());
        std::vector<EquationTemplate> parsed;
        std::vector<std::size_t> parsed_index;
        for (std::size_t k = 0; k < batch.candidates.size(); ++k) {
            auto& rec = records[k];
            rec.iteration = it;
            rec.index = k;
            rec.raw = batch.candidates[k];
            try {
                EquationTemplate tpl = template_from_json_text(rec.raw, d, m);
                rec.signature = template_signature(tpl);
                if (auto rej = validate_template(tpl, cfg.max_terms, m)) {
                    rec.status = rej->reason;
                    rec.detail = rej->message;
                    continue;
                }
                parsed.push_back(std::move(tpl));
                parsed_index.push_back(k);
            } catch (const TemplateError& e) {
                rec.status = e.reason();
                rec.detail = e.what();
            }
        }

        // novelty gate
        auto novel = novelty_filter(parsed, tested);
        for (auto& [pi, why] : novel.dropped) {
            auto& rec = records[parsed_index[pi]];
            rec.status = RejectReason::Duplicate;
            rec.detail = why;
        }

        // fit + simulate + score, concurrently; merged by index
        std::vector<std::future<detail::Evaluated>> jobs;
        for (std::size_t pi : novel.kept)
            jobs.push_back(std::async(std::launch::async, [&, pi] {
                return detail::evaluate_candidate(parsed[pi], traj, run.priors, cfg);
            }));
        for (std::size_t j = 0; j < novel.kept.size(); ++j) {
            auto ev = jobs[j].get();
            auto& rec = records[parsed_index[novel.kept[j]]];
            rec.status = ev.status;
            rec.detail = ev.detail;
            rec.model = std::move(ev.model);
            rec.score = ev.score;
            tested.insert(rec.signature);
        }

        std::optional<std::size_t> improved;
        for (std::size_t k = 0; k < records.size(); ++k) {
            const auto& rec = records[k];
            if (rec.status) {
                memory.add(rec.signature.empty() ? std::string("<unparsed candidate>") : rec.signature, *rec.status);
                continue;
            }
            double best_now = improved ? records[*improved].score->J : run.best_score.J;
            if (rec.score->J < best_now)
                improved = k;
        }
        if (improved) {
            run.best = *records[*improved].model;
            run.best_score = *records[*improved].score;
            run.best_iteration = it;
            best_rollout = score_rollout(run.best, traj, cfg.sim);
        }
        best_js.push_back(run.best_score.J);
        iter.best_j = run.best_score.J;
        for (auto& rec : records)
            run.history.push_back(std::move(rec));
        run.iterations.push_back(std::move(iter));

        if (run.best_score.max_nrmse < cfg.tau) {
            run.stop = StopReason::EarlyStop;
            break;
        }
    }

    // safeguard against ending materially worse than a trusted baseline
    if (run.baseline.all_reliable() &&
        run.best_score.max_nrmse > run.baseline.rollout.max_nrmse + cfg.safeguard_margin) {
        run.safeguard_applied = true;
        run.best = run.baseline.model;
        run.best_score = make_score(run.baseline.rollout, run.baseline.model, run.priors, cfg);
        run.best_iteration = -1;
    }
    return run;
}

// --- run log -----------------------------------------------------------------

namespace detail {

inline nlohmann::json json_number(double v) {
    if (std::isnan(v))
        return "nan";
    if (std::isinf(v))
        return v > 0 ? "inf" : "-inf";
    return v;
}

inline nlohmann::json json_vector(const Eigen::VectorXd& v) {
    nlohmann::json a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        a.push_back(json_number(v[i]));
    return a;
}

inline nlohmann::json json_vector(const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v)
        a.push_back(json_number(x));
    return a;
}

} // namespace detail

inline nlohmann::json model_to_json(const FittedModel& model) {
    nlohmann::json eqs = nlohmann::json::array();
    for (std::size_t i = 0; i < model.dim(); ++i) {
        nlohmann::json terms = nlohmann::json::array();
        for (std::size_t k = 0; k < model.tpl.equations[i].size(); ++k)
            terms.push_back({{"feature", to_string(model.tpl.equations[i][k])},
                             {"coefficient", detail::json_number(model.coefficients[i][static_cast<Eigen::Index>(k)])}});
        nlohmann::json e = {{"state", i}, {"terms", terms}};
        if (i < model.diagnostics.size()) {
            const auto& dg = model.diagnostics[i];
            e["train_r2"] = detail::json_number(dg.train_r2);
            e["ill_conditioned"] = dg.ill_conditioned;
            e["empty_active_set"] = dg.empty_active_set;
        }
        eqs.push_back(e);
    }
    return {{"equations", eqs}, {"text", model.equation_strings()}};
}

inline nlohmann::json score_to_json(const CandidateScore& s) {
    return {{"outcome", to_string(s.outcome)},
            {"nrmse", detail::json_vector(s.nrmse)},
            {"r2", detail::json_vector(s.r2)},
            {"max_nrmse", detail::json_number(s.max_nrmse)},
            {"complexity", detail::json_number(s.complexity)},
            {"penalty", detail::json_number(s.penalty)},
            {"J", detail::json_number(s.J)}};
}

inline nlohmann::json baseline_to_json(const BaselineReport& rep) {
    nlohmann::json trust = nlohmann::json::array();
    for (bool r : rep.reliable)
        trust.push_back(r ? "reliable" : "unreliable");
    return {{"model", model_to_json(rep.model)},
            {"train_derivative_r2", detail::json_vector(rep.train_r2)},
            {"test_derivative_r2", detail::json_vector(rep.test_r2)},
            {"rollout",
             {{"outcome", to_string(rep.rollout.outcome)},
              {"nrmse", detail::json_vector(rep.rollout.nrmse)},
              {"r2", detail::json_vector(rep.rollout.r2)},
              {"max_nrmse", detail::json_number(rep.rollout.max_nrmse)},
              {"failed_at", detail::json_number(rep.rollout.failed_at)}}},
            {"trust", trust}};
}

inline nlohmann::json summary_to_json(const DataSummary& s) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& st : s.states)
        a.push_back({{"min", st.min},
                     {"max", st.max},
                     {"std", st.stddev},
                     {"monotonic", st.monotonic},
                     {"oscillatory", st.oscillatory},
                     {"period", st.period ? nlohmann::json(*st.period) : nlohmann::json(nullptr)},
                     {"saturating", st.saturating},
                     {"sign_definite", st.sign_definite},
                     {"degenerate", st.degenerate}});
    return a;
}

inline nlohmann::json priors_to_json(const PriorSpec& p) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& m : p.per_state) {
        nlohmann::json o = nlohmann::json::object();
        for (const auto& [f, pref] : m)
            o[std::string(to_string(f))] = to_string(pref);
        a.push_back(o);
    }
    return a;
}

inline nlohmann::json candidate_to_json(const CandidateRecord& c) {
    nlohmann::json j = {{"iteration", c.iteration},
                        {"index", c.index},
                        {"raw", c.raw},
                        {"status", c.status ? std::string(to_string(*c.status)) : std::string("accepted")},
                        {"signature", c.signature}};
    if (!c.detail.empty())
        j["detail"] = c.detail;
    if (c.model)
        j["model"] = model_to_json(*c.model);
    if (c.score)
        j["score"] = score_to_json(*c.score);
    return j;
}

/// Full run artifact. With `extra` the caller can attach config, timestamps
/// and file paths; refine itself records nothing time-dependent.
inline nlohmann::json run_log(const RefinementResult& run) {
    nlohmann::json iters = nlohmann::json::array();
    for (const auto& it : run.iterations) {
        nlohmann::json cands = nlohmann::json::array();
        for (const auto& c : run.history)
            if (c.iteration == it.iteration)
                cands.push_back(candidate_to_json(c));
        nlohmann::json j = {{"iteration", it.iteration},
                            {"proposer", it.proposer},
                            {"plateau", it.plateau},
                            {"requested", it.requested},
                            {"diversity", it.diversity},
                            {"error_focus", it.error_focus},
                            {"prompt", it.prompt},
                            {"raw_proposals", it.raw},
                            {"candidates", cands},
                            {"best_J", detail::json_number(it.best_j)}};
        if (!it.error.empty())
            j["error"] = it.error;
        iters.push_back(j);
    }
    nlohmann::json status_counts = nlohmann::json::object();
    for (const auto& c : run.history) {
        std::string key = c.status ? std::string(to_string(*c.status)) : "accepted";
        status_counts[key] = status_counts.value(key, 0) + 1;
    }
    return {{"baseline", baseline_to_json(run.baseline)},
            {"data_summary", summary_to_json(run.summary)},
            {"priors", priors_to_json(run.priors)},
            {"seed", candidate_to_json(run.history.front())},
            {"iterations", iters},
            {"status_counts", status_counts},
            {"result",
             {{"model", model_to_json(run.best)},
              {"score", score_to_json(run.best_score)},
              {"stop_reason", to_string(run.stop)},
              {"iterations_run", run.iterations.size()},
              {"best_iteration", run.best_iteration},
              {"safeguard_applied", run.safeguard_applied}}}};
}

/// Rebuilds a replay document from a run log so a live session can be re-run
/// offline.
inline nlohmann::json replay_from_run_log(const nlohmann::json& log) {
    nlohmann::json batches = nlohmann::json::array();
    for (const auto& it : log.at("iterations")) {
        nlohmann::json batch = nlohmann::json::array();
        for (const auto& raw : it.at("raw_proposals")) {
            auto text = raw.get<std::string>();
            try {
                batch.push_back(nlohmann::json::parse(text));
            } catch (const nlohmann::json::exception&) {
                batch.push_back(text);
            }
        }
        batches.push_back(batch);
    }
    return {{"batches", batches}};
}

} // namespace eqloop
