#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "eqloop/errors.hpp"
#include "eqloop/expr.hpp"
#include "eqloop/families.hpp"
#include "eqloop/looprun.hpp"
#include "eqloop/regress.hpp"
#include "eqloop/signature.hpp"
#include "eqloop/simulate.hpp"
#include "eqloop/trajectory.hpp"

namespace eqloop {

/// Exogenous input of a benchmark system: either closed-form expressions of
/// t, or samples on the generation grid.
struct InputSpec {
    std::vector<Expr> expressions;
    std::vector<std::string> expression_text;
    Eigen::MatrixXd samples; // n_samples x m, used when expressions is empty
    std::vector<std::string> names;

    std::size_t channels() const {
        return expressions.empty() ? static_cast<std::size_t>(samples.cols()) : expressions.size();
    }
};

/// Ground-truth system description.
struct SystemSpec {
    std::string name;
    std::size_t dim = 0;
    std::vector<Expr> equations;
    std::vector<std::string> equation_text;
    Eigen::VectorXd x0;
    double t0 = 0.0;
    double t1 = 1.0;
    Eigen::Index n_samples = 0;
    std::optional<InputSpec> input;
    std::vector<std::string> state_names;
    nlohmann::json metadata = nlohmann::json::object();
    nlohmann::json config = nlohmann::json::object(); // per-system run-config overrides

    std::size_t num_inputs() const { return input ? input->channels() : 0; }

    void validate() const {
        if (dim < 1 || equations.size() != dim)
            throw SpecError("system '" + name + "': need one equation per state");
        if (static_cast<std::size_t>(x0.size()) != dim || !x0.allFinite())
            throw SpecError("system '" + name + "': x0 must have one finite entry per state");
        if (!(t1 > t0))
            throw SpecError("system '" + name + "': t_span must be increasing");
        if (n_samples < 50)
            throw SpecError("system '" + name + "': n_samples must be at least 50");
        if (input && input->expressions.empty() && input->samples.rows() != n_samples)
            throw SpecError("system '" + name + "': sampled input must have n_samples rows");
        std::vector<double> u0(num_inputs(), 0.0);
        if (input) {
            if (input->expressions.empty())
                for (std::size_t j = 0; j < u0.size(); ++j)
                    u0[j] = input->samples(0, static_cast<Eigen::Index>(j));
            else
                for (std::size_t j = 0; j < u0.size(); ++j)
                    u0[j] = evaluate(input->expressions[j], EvalPoint{{}, {}, t0});
        }
        std::vector<double> x(x0.data(), x0.data() + x0.size());
        for (std::size_t i = 0; i < dim; ++i)
            if (!std::isfinite(evaluate(equations[i], EvalPoint{x, u0, t0})))
                throw SpecError("system '" + name + "': equation " + std::to_string(i) +
                                " is not finite at the initial condition");
    }
};

inline SystemSpec spec_from_json(const nlohmann::json& doc) {
    try {
        SystemSpec s;
        s.name = doc.at("name").get<std::string>();
        s.dim = doc.at("dim").get<std::size_t>();
        int m = 0;
        if (doc.contains("input") && !doc["input"].is_null()) {
            const auto& in = doc["input"];
            InputSpec spec;
            if (in.contains("expressions")) {
                for (const auto& e : in["expressions"]) {
                    spec.expression_text.push_back(e.get<std::string>());
                    spec.expressions.push_back(parse_expression(e.get<std::string>(), Grammar::truth(0, 0)));
                }
            } else if (in.contains("samples")) {
                const auto& rows = in["samples"];
                std::size_t cols = rows.empty() ? 0 : rows[0].size();
                spec.samples.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
                for (std::size_t r = 0; r < rows.size(); ++r) {
                    if (rows[r].size() != cols)
                        throw SpecError("input samples must form a rectangular table");
                    for (std::size_t c = 0; c < cols; ++c)
                        spec.samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
                }
            } else {
                throw SpecError("input needs 'expressions' or 'samples'");
            }
            if (in.contains("names"))
                spec.names = in["names"].get<std::vector<std::string>>();
            m = static_cast<int>(spec.channels());
            s.input = std::move(spec);
        }
        Grammar g = Grammar::truth(static_cast<int>(s.dim), m);
        for (const auto& e : doc.at("equations")) {
            s.equation_text.push_back(e.get<std::string>());
            s.equations.push_back(parse_expression(e.get<std::string>(), g));
        }
        auto x0 = doc.at("x0").get<std::vector<double>>();
        s.x0 = Eigen::Map<Eigen::VectorXd>(x0.data(), static_cast<Eigen::Index>(x0.size()));
        auto span = doc.at("t_span").get<std::vector<double>>();
        if (span.size() != 2)
            throw SpecError("t_span must be [t0, t1]");
        s.t0 = span[0];
        s.t1 = span[1];
        s.n_samples = doc.at("n_samples").get<Eigen::Index>();
        if (doc.contains("state_names"))
            s.state_names = doc["state_names"].get<std::vector<std::string>>();
        if (doc.contains("metadata"))
            s.metadata = doc["metadata"];
        if (doc.contains("config"))
            s.config = doc["config"];
        s.validate();
        return s;
    } catch (const ParseError& e) {
        throw SpecError(std::string("spec equation does not parse: ") + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("malformed system spec: ") + e.what());
    }
}

inline SystemSpec load_spec(const std::filesystem::path& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw SpecError("spec file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return spec_from_json(doc);
}

inline nlohmann::json spec_to_json(const SystemSpec& s) {
    nlohmann::json doc = {{"name", s.name},
                          {"dim", s.dim},
                          {"equations", s.equation_text},
                          {"x0", std::vector<double>(s.x0.data(), s.x0.data() + s.x0.size())},
                          {"t_span", {s.t0, s.t1}},
                          {"n_samples", s.n_samples}};
    if (!s.state_names.empty())
        doc["state_names"] = s.state_names;
    if (s.input) {
        nlohmann::json in = nlohmann::json::object();
        if (!s.input->expressions.empty()) {
            in["expressions"] = s.input->expression_text;
        } else {
            nlohmann::json rows = nlohmann::json::array();
            for (Eigen::Index r = 0; r < s.input->samples.rows(); ++r) {
                nlohmann::json row = nlohmann::json::array();
                for (Eigen::Index c = 0; c < s.input->samples.cols(); ++c)
                    row.push_back(s.input->samples(r, c));
                rows.push_back(row);
            }
            in["samples"] = rows;
        }
        if (!s.input->names.empty())
            in["names"] = s.input->names;
        doc["input"] = in;
    }
    if (!s.metadata.empty())
        doc["metadata"] = s.metadata;
    if (!s.config.empty())
        doc["config"] = s.config;
    return doc;
}

inline Eigen::VectorXd spec_time_grid(const SystemSpec& s) {
    return Eigen::VectorXd::LinSpaced(s.n_samples, s.t0, s.t1);
}

inline Eigen::MatrixXd spec_input_samples(const SystemSpec& s, const Eigen::VectorXd& times) {
    if (!s.input)
        return Eigen::MatrixXd(times.size(), 0);
    if (s.input->expressions.empty())
        return s.input->samples;
    Eigen::MatrixXd u(times.size(), static_cast<Eigen::Index>(s.input->expressions.size()));
    for (Eigen::Index r = 0; r < times.size(); ++r)
        for (std::size_t j = 0; j < s.input->expressions.size(); ++j)
            u(r, static_cast<Eigen::Index>(j)) = evaluate(s.input->expressions[j], EvalPoint{{}, {}, times[r]});
    if (!u.allFinite())
        throw SpecError("system '" + s.name + "': input expression is not finite on the grid");
    return u;
}

/// Integration settings for ground-truth data.
inline SimConfig truth_sim_config() {
    SimConfig c;
    c.rtol = 1e-9;
    c.atol = 1e-12;
    c.blowup_bound = 1e8;
    c.timeout_s = 60.0;
    c.max_steps = 5000000;
    return c;
}

/// Noise-free trajectory of the truth equations on a uniform grid. Throws
/// TruthDivergence when the truth system does not integrate over the span.
inline Trajectory generate_trajectory(const SystemSpec& spec, double split) {
    spec.validate();
    if (!(split > 0.0 && split < 1.0))
        throw SpecError("split fraction must lie in (0, 1)");
    Trajectory traj;
    traj.times = spec_time_grid(spec);
    traj.inputs = spec_input_samples(spec, traj.times);
    RhsFunction f = [&spec](double t, std::span<const double> x, std::span<const double> u, std::span<double> dx) {
        EvalPoint p{x, u, t};
        for (std::size_t i = 0; i < spec.dim; ++i)
            dx[i] = evaluate(spec.equations[i], p);
    };
    InputSignal sig{traj.times, traj.inputs};
    auto res = integrate(f, spec.x0, traj.times, traj.inputs.cols() > 0 ? &sig : nullptr, truth_sim_config());
    if (!res.completed()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.6g", res.failed_at);
        throw TruthDivergence("system '" + spec.name + "': truth integration " + std::string(to_string(res.outcome)) +
                              " at t=" + buf);
    }
    traj.states = std::move(res.states);
    traj.split = split_index(traj.samples(), split);
    traj.state_names = spec.state_names;
    if (spec.input)
        traj.input_names = spec.input->names;
    traj.metadata = {{"system", spec.name}, {"split_fraction", split}};
    if (!spec.metadata.empty())
        traj.metadata["system_metadata"] = spec.metadata;
    traj.validate();
    return traj;
}

// --- structural grading --------------------------------------------------------

enum class Grade { Good, Failed };

inline std::string_view to_string(Grade g) { return g == Grade::Good ? "good" : "failed"; }

struct GradeConfig {
    double min_match_fraction = 0.5;
    double spurious_threshold = 0.1;
};

struct StructuralGrade {
    Grade grade = Grade::Failed;
    std::size_t matched = 0;
    std::size_t truth_terms = 0;
    bool spurious_family = false;
    std::vector<std::string> spurious; // families flagged as contributing
    std::vector<std::string> missed;   // truth terms without a match, "x<i>: <sig>"
};

/// Truth expanded into signed terms, one feature per term.
inline FittedModel truth_as_model(const SystemSpec& spec) {
    FittedModel m;
    for (const auto& eq : spec.equations) {
        auto terms = split_terms(eq);
        std::vector<Expr> feats;
        Eigen::VectorXd coef(static_cast<Eigen::Index>(terms.size()));
        for (std::size_t k = 0; k < terms.size(); ++k) {
            feats.push_back(terms[k].term);
            coef[static_cast<Eigen::Index>(k)] = terms[k].coefficient;
        }
        m.tpl.equations.push_back(std::move(feats));
        m.coefficients.push_back(coef);
    }
    m.diagnostics.resize(spec.dim);
    return m;
}

/// Grades a fitted model against the truth: term matching by canonical
/// signature (leading coefficients ignored) plus a check that no function
/// family absent from the truth carries more than `spurious_threshold` of the
/// rollout error when its coefficients are zeroed.
inline StructuralGrade grade_structure(const FittedModel& model, const SystemSpec& spec, const Trajectory& traj,
                                       const SimConfig& sim, const GradeConfig& gcfg = {}) {
    if (model.dim() != spec.dim)
        throw DimensionMismatch("model and system spec disagree on dimension");
    StructuralGrade g;
    std::set<Family> truth_fams;
    for (std::size_t i = 0; i < spec.dim; ++i) {
        std::set<std::string> model_sigs;
        for (std::size_t k = 0; k < model.tpl.equations[i].size(); ++k)
            if (model.coefficients[i][static_cast<Eigen::Index>(k)] != 0.0)
                model_sigs.insert(strip_coefficient(model.tpl.equations[i][k]).signature.text);
        for (const auto& t : split_terms(spec.equations[i])) {
            ++g.truth_terms;
            for (Family f : feature_families(t.term))
                truth_fams.insert(f);
            if (model_sigs.count(t.signature.text))
                ++g.matched;
            else
                g.missed.push_back("x" + std::to_string(i) + ": " + t.signature.text);
        }
    }

    std::set<Family> extra;
    for (std::size_t i = 0; i < model.dim(); ++i)
        for (std::size_t k = 0; k < model.tpl.equations[i].size(); ++k)
            if (model.coefficients[i][static_cast<Eigen::Index>(k)] != 0.0)
                for (Family f : feature_families(model.tpl.equations[i][k]))
                    if (!truth_fams.count(f))
                        extra.insert(f);

    if (!extra.empty()) {
        auto full = score_rollout(model, traj, sim);
        for (Family f : extra) {
            bool flagged = true;
            if (full.completed()) {
                FittedModel zeroed = model;
                for (std::size_t i = 0; i < zeroed.dim(); ++i)
                    for (std::size_t k = 0; k < zeroed.tpl.equations[i].size(); ++k)
                        if (feature_families(zeroed.tpl.equations[i][k]).count(f))
                            zeroed.coefficients[i][static_cast<Eigen::Index>(k)] = 0.0;
                auto z = score_rollout(zeroed, traj, sim);
                if (z.completed()) {
                    double change = std::abs(z.max_nrmse - full.max_nrmse) / std::max(full.max_nrmse, 1e-6);
                    flagged = change > gcfg.spurious_threshold;
                }
            }
            if (flagged)
                g.spurious.emplace_back(to_string(f));
        }
    }
    g.spurious_family = !g.spurious.empty();
    auto needed = static_cast<std::size_t>(std::ceil(gcfg.min_match_fraction * static_cast<double>(g.truth_terms)));
    g.grade = (g.matched >= needed && !g.spurious_family) ? Grade::Good : Grade::Failed;
    return g;
}

inline nlohmann::json grade_to_json(const StructuralGrade& g) {
    return {{"grade", to_string(g.grade)},
            {"matched", g.matched},
            {"truth_terms", g.truth_terms},
            {"spurious_family", g.spurious_family},
            {"spurious", g.spurious},
            {"missed", g.missed}};
}

// --- reports ---------------------------------------------------------------------

struct BenchResult {
    std::string system;
    double baseline_nrmse = std::numeric_limits<double>::infinity();
    double baseline_r2 = std::numeric_limits<double>::quiet_NaN();
    double refined_nrmse = std::numeric_limits<double>::infinity();
    double refined_r2 = std::numeric_limits<double>::quiet_NaN();
    std::optional<StructuralGrade> baseline_grade;
    std::optional<StructuralGrade> refined_grade;
    std::string stop_reason;
    int iterations = 0;
    bool safeguard_applied = false;
    std::vector<std::string> refined_equations;
    std::string error; // per-system failure, when the run could not complete
};

/// Decade edges 1e-4 ... 1e2; values below the first edge land in the first
/// bin, values at or above the last edge in the last one.
inline constexpr std::array<double, 7> kHistogramEdges{1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2};

inline std::vector<std::size_t> histogram(const std::vector<double>& values) {
    std::vector<std::size_t> bins(kHistogramEdges.size() - 1, 0);
    for (double v : values) {
        if (!std::isfinite(v))
            continue;
        std::size_t b = 0;
        while (b + 1 < bins.size() && v >= kHistogramEdges[b + 1])
            ++b;
        ++bins[b];
    }
    return bins;
}

struct SeriesStats {
    std::size_t success = 0;
    std::size_t divergent = 0;
    std::size_t good = 0;
    std::size_t graded = 0;
    double median = std::numeric_limits<double>::quiet_NaN();
    double mean = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::size_t> bins;
};

inline SeriesStats series_stats(const std::vector<double>& values, const std::vector<std::optional<StructuralGrade>>& grades,
                                double tau) {
    SeriesStats s;
    std::vector<double> finite;
    for (double v : values) {
        if (std::isfinite(v))
            finite.push_back(v);
        else
            ++s.divergent;
        if (v < tau)
            ++s.success;
    }
    if (!finite.empty()) {
        std::sort(finite.begin(), finite.end());
        std::size_t n = finite.size();
        s.median = n % 2 ? finite[n / 2] : 0.5 * (finite[n / 2 - 1] + finite[n / 2]);
        double sum = 0.0;
        for (double v : finite)
            sum += v;
        s.mean = sum / static_cast<double>(n);
    }
    for (const auto& g : grades)
        if (g) {
            ++s.graded;
            if (g->grade == Grade::Good)
                ++s.good;
        }
    s.bins = histogram(values);
    return s;
}

/// Comparison report over a set of benchmark systems.
inline nlohmann::json emit_report(const std::vector<BenchResult>& results, double tau) {
    if (results.empty())
        throw SpecError("report needs at least one result");
    using detail::json_number;
    nlohmann::json rows = nlohmann::json::array();
    std::vector<double> base, refined;
    std::vector<std::optional<StructuralGrade>> base_g, refined_g;
    std::size_t improved = 0;
    for (const auto& r : results) {
        nlohmann::json row = {{"system", r.system},
                              {"baseline_max_nrmse", json_number(r.baseline_nrmse)},
                              {"baseline_r2", json_number(r.baseline_r2)},
                              {"refined_max_nrmse", json_number(r.refined_nrmse)},
                              {"refined_r2", json_number(r.refined_r2)},
                              {"baseline_grade", r.baseline_grade ? grade_to_json(*r.baseline_grade) : nlohmann::json(nullptr)},
                              {"refined_grade", r.refined_grade ? grade_to_json(*r.refined_grade) : nlohmann::json(nullptr)},
                              {"stop_reason", r.stop_reason},
                              {"iterations", r.iterations},
                              {"safeguard_applied", r.safeguard_applied},
                              {"refined_equations", r.refined_equations}};
        if (!r.error.empty())
            row["error"] = r.error;
        rows.push_back(row);
        base.push_back(r.baseline_nrmse);
        refined.push_back(r.refined_nrmse);
        base_g.push_back(r.baseline_grade);
        refined_g.push_back(r.refined_grade);
        if (r.refined_nrmse < r.baseline_nrmse)
            ++improved;
    }
    auto stats_json = [&](const SeriesStats& s) {
        return nlohmann::json{{"success_count", s.success},
                              {"divergent", s.divergent},
                              {"median_nrmse", json_number(s.median)},
                              {"mean_nrmse", json_number(s.mean)},
                              {"good_structures", s.good},
                              {"graded", s.graded},
                              {"histogram", s.bins}};
    };
    return {{"tau", tau},
            {"systems", results.size()},
            {"rows", rows},
            {"baseline", stats_json(series_stats(base, base_g, tau))},
            {"refined", stats_json(series_stats(refined, refined_g, tau))},
            {"refined_better_count", improved},
            {"histogram_edges", kHistogramEdges}};
}

/// Flat per-system table.
inline std::string report_csv(const std::vector<BenchResult>& results) {
    auto num = [](double v) { return detail::num(v); };
    auto grade = [](const std::optional<StructuralGrade>& g) { return g ? std::string(to_string(g->grade)) : std::string(); };
    std::ostringstream out;
    out << "system,baseline_max_nrmse,baseline_r2,refined_max_nrmse,refined_r2,baseline_grade,refined_grade,stop_reason,"
           "iterations,safeguard_applied\n";
    for (const auto& r : results)
        out << r.system << ',' << num(r.baseline_nrmse) << ',' << num(r.baseline_r2) << ',' << num(r.refined_nrmse)
            << ',' << num(r.refined_r2) << ',' << grade(r.baseline_grade) << ',' << grade(r.refined_grade) << ','
            << r.stop_reason << ',' << r.iterations << ',' << (r.safeguard_applied ? "true" : "false") << '\n';
    return out.str();
}

/// Smallest per-state test R^2 of a rollout (NaN entries skipped).
inline double worst_r2(const Eigen::VectorXd& r2) {
    double w = std::numeric_limits<double>::quiet_NaN();
    for (Eigen::Index i = 0; i < r2.size(); ++i)
        if (!std::isnan(r2[i]) && (std::isnan(w) || r2[i] < w))
            w = r2[i];
    return w;
}

/// Runs baseline + refinement on one system and grades both models.
inline BenchResult bench_system(const SystemSpec& spec, const Trajectory& traj, Proposer& proposer, const LoopConfig& cfg,
                                const GradeConfig& gcfg = {}) {
    BenchResult r;
    r.system = spec.name;
    auto run = refine(traj, proposer, cfg);
    r.baseline_nrmse = run.baseline.rollout.max_nrmse;
    r.baseline_r2 = run.baseline.rollout.completed() ? worst_r2(run.baseline.rollout.r2)
                                                     : -std::numeric_limits<double>::infinity();
    r.refined_nrmse = run.best_score.max_nrmse;
    r.refined_r2 = run.best_score.completed() ? worst_r2(run.best_score.r2) : -std::numeric_limits<double>::infinity();
    r.baseline_grade = grade_structure(run.baseline.model, spec, traj, cfg.sim, gcfg);
    r.refined_grade = grade_structure(run.best, spec, traj, cfg.sim, gcfg);
    r.stop_reason = std::string(to_string(run.stop));
    r.iterations = static_cast<int>(run.iterations.size());
    r.safeguard_applied = run.safeguard_applied;
    r.refined_equations = run.best.equation_strings();
    return r;
}

} // namespace eqloop
