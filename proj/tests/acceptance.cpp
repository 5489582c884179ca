// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "eqloop/benchkit.hpp"
#include "eqloop/config.hpp"
#include "eqloop/looprun.hpp"
#include "eqloop/march_leuba.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eqloop;

namespace {

const fs::path kFixtures = EQLOOP_FIXTURES;
const std::string kCli = EQLOOP_CLI;
constexpr double kInf = std::numeric_limits<double>::infinity();

/// Collects the failed checks of one criterion.
class Check {
public:
    void require(bool ok, const std::string& what) {
        if (!ok)
            failures_.push_back(what);
    }
    void note(const std::string& s) { notes_.push_back(s); }
    bool ok() const { return failures_.empty(); }
    std::string detail() const {
        std::string out;
        for (const auto& f : failures_)
            out += (out.empty() ? "" : "; ") + f;
        for (const auto& n : notes_)
            out += (out.empty() ? "" : "; ") + n;
        return out;
    }

private:
    std::vector<std::string> failures_, notes_;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct Prepared {
    SystemSpec spec;
    Trajectory traj;
    RunConfig cfg;
};

Prepared prepare(const std::string& name) {
    Prepared p;
    p.spec = load_spec(kFixtures / "odebench" / (name + ".spec.json"));
    p.cfg = resolve_config(p.spec.config, std::nullopt, {});
    p.traj = generate_trajectory(p.spec, p.cfg.split);
    return p;
}

ScriptedProposer replay_for(const std::string& name) {
    return ScriptedProposer(json::parse(read_text_file(kFixtures / "odebench" / (name + ".replay.json"))));
}

/// Fitted coefficient of `feature` in equation `eq`, matched by canonical
/// signature; NaN when the feature is not in the template.
double coefficient_of(const FittedModel& m, std::size_t eq, const Expr& feature) {
    const auto want = canonical_signature(feature).text;
    const auto& feats = m.tpl.equations.at(eq);
    for (std::size_t k = 0; k < feats.size(); ++k)
        if (canonical_signature(feats[k]).text == want)
            return m.coefficients[eq][static_cast<Eigen::Index>(k)];
    return std::numeric_limits<double>::quiet_NaN();
}

bool within_relative(double got, double want, double tol) {
    return std::isfinite(got) && std::abs(got - want) <= tol * std::abs(want);
}

std::size_t active_terms(const FittedModel& m) {
    std::size_t n = 0;
    for (const auto& eq : m.active_template().equations)
        n += eq.size();
    return n;
}

int run_cli(const std::string& args) {
    std::string cmd = "'" + kCli + "' " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch_dir() {
    auto dir = fs::temp_directory_path() / "eqloop_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// --- criteria ---------------------------------------------------------------

Check oscillator_recovery() {
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    auto p = prepare("odebench24");
    auto replay = replay_for("odebench24");
    auto run = refine(p.traj, replay, p.cfg.loop);
    double elapsed = seconds_since(t0);
    double a = coefficient_of(run.best, 0, Expr::state(1));
    double b = coefficient_of(run.best, 1, Expr::state(0));
    c.require(within_relative(a, 1.0, 0.01), "dx/dt coefficient " + fmt(a) + " not within 1% of 1.0");
    c.require(within_relative(b, -2.1, 0.01), "dy/dt coefficient " + fmt(b) + " not within 1% of -2.1");
    c.require(active_terms(run.best) == 2, "expected two active terms, got " + std::to_string(active_terms(run.best)));
    c.require(run.stop == StopReason::EarlyStop, "stop reason " + std::string(to_string(run.stop)));
    c.require(run.iterations.size() <= 2, "stopped after " + std::to_string(run.iterations.size()) + " iterations");
    c.require(elapsed < 30.0, "took " + fmt(elapsed) + " s");
    c.note("coefficients (" + fmt(a) + ", " + fmt(b) + "), " + std::to_string(run.iterations.size()) +
           " iteration(s), " + fmt(elapsed) + " s");
    return c;
}

Check sir_recovery() {
    Check c;
    auto t0 = std::chrono::steady_clock::now();
    auto p = prepare("odebench31");
    auto replay = replay_for("odebench31");
    auto run = refine(p.traj, replay, p.cfg.loop);
    double elapsed = seconds_since(t0);
    const Expr xy = Expr::state(0) * Expr::state(1);
    double k0 = coefficient_of(run.best, 0, xy);
    double k1 = coefficient_of(run.best, 1, xy);
    double k2 = coefficient_of(run.best, 1, Expr::state(1));
    c.require(run.best_score.max_nrmse <= 1e-3, "max test NRMSE " + fmt(run.best_score.max_nrmse));
    c.require(within_relative(k0, -0.4, 0.05), "xy coefficient in dx/dt " + fmt(k0));
    c.require(within_relative(k1, 0.4, 0.05), "xy coefficient in dy/dt " + fmt(k1));
    c.require(within_relative(k2, -0.314, 0.05), "y coefficient in dy/dt " + fmt(k2));
    c.require(elapsed < 30.0, "took " + fmt(elapsed) + " s");
    c.note("max NRMSE " + fmt(run.best_score.max_nrmse) + ", coefficients (" + fmt(k0) + ", " + fmt(k1) + ", " +
           fmt(k2) + ")");
    return c;
}

Check exponential_pivot() {
    Check c;
    auto p = prepare("odebench21");
    auto replay = replay_for("odebench21");
    auto run = refine(p.traj, replay, p.cfg.loop);
    const double base = run.baseline.rollout.max_nrmse;
    const double refined = run.best_score.max_nrmse;
    c.require(refined < base, "refined NRMSE " + fmt(refined) + " not below baseline " + fmt(base));
    bool baseline_has_trig = false, baseline_has_exp = false;
    for (const auto& eq : run.baseline.model.active_template().equations)
        for (const auto& f : eq) {
            auto fams = feature_families(f);
            baseline_has_trig = baseline_has_trig || fams.count(Family::Trig);
            baseline_has_exp = baseline_has_exp || fams.count(Family::Exponential);
        }
    c.require(baseline_has_trig && !baseline_has_exp, "baseline is not a trigonometric surrogate");
    bool exp_selected = false;
    for (const auto& eq : run.best.active_template().equations)
        for (const auto& f : eq)
            exp_selected = exp_selected || feature_families(f).count(Family::Exponential);
    c.require(exp_selected, "selected model has no exponential feature");
    auto g = grade_structure(run.baseline.model, p.spec, p.traj, p.cfg.loop.sim, p.cfg.grade);
    c.require(g.grade == Grade::Failed, "baseline graded " + std::string(to_string(g.grade)));
    c.note("baseline " + fmt(base) + " -> refined " + fmt(refined));
    return c;
}

Check negative_control() {
    Check c;
    auto p = prepare("odebench35");
    auto replay = replay_for("odebench35");
    RefinementResult run;
    try {
        run = refine(p.traj, replay, p.cfg.loop);
    } catch (const std::exception& e) {
        c.require(false, std::string("refine threw: ") + e.what());
        return c;
    }
    c.require(run.iterations.size() == 10, "ran " + std::to_string(run.iterations.size()) + " iterations");
    c.require(run.stop == StopReason::BudgetExhausted, "stop reason " + std::string(to_string(run.stop)));
    c.require(run.best_score.max_nrmse > p.cfg.loop.tau, "final max NRMSE " + fmt(run.best_score.max_nrmse));
    c.note("final max NRMSE " + fmt(run.best_score.max_nrmse));
    return c;
}

Check parsimony_selection() {
    Check c;
    std::mt19937_64 rng(50);
    std::uniform_real_distribution<double> err(1e-3, 0.5), delta(-1e-4, 1e-4);
    const std::vector<Expr> pool = {Expr::state(0),         Expr::state(1),         pow(Expr::state(0), 2),
                                    pow(Expr::state(1), 2), pow(Expr::state(0), 3), Expr::constant(1.0),
                                    pow(Expr::state(1), 3), Expr::state(0) * Expr::state(1)};
    StateSummary s;
    s.monotonic = true;
    auto priors = derive_priors(DataSummary{{s, s}});
    auto random_model = [&] {
        FittedModel m;
        for (int i = 0; i < 2; ++i) {
            std::vector<Expr> eq;
            std::set<std::string> sigs;
            std::size_t k = 1 + rng() % 4;
            while (eq.size() < k) {
                const Expr& f = pool[rng() % pool.size()];
                if (sigs.insert(canonical_signature(f).text).second)
                    eq.push_back(f);
            }
            m.coefficients.push_back(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(eq.size()), 0.7));
            m.tpl.equations.push_back(std::move(eq));
        }
        m.diagnostics.resize(2);
        return m;
    };
    auto nodes = [](const FittedModel& m) {
        std::size_t n = 0;
        for (const auto& eq : m.tpl.equations)
            for (const auto& f : eq)
                n += node_count(f) + 1;
        return n;
    };
    int pairs = 0, correct = 0;
    while (pairs < 50) {
        auto a = random_model(), b = random_model();
        if (nodes(a) == nodes(b))
            continue;
        RolloutResult ra, rb;
        ra.outcome = rb.outcome = RolloutOutcome::Completed;
        ra.max_nrmse = err(rng);
        rb.max_nrmse = ra.max_nrmse + delta(rng);
        ra.nrmse = Eigen::VectorXd::Constant(2, ra.max_nrmse);
        rb.nrmse = Eigen::VectorXd::Constant(2, rb.max_nrmse);
        auto sa = make_score(ra, a, priors, LoopConfig{});
        auto sb = make_score(rb, b, priors, LoopConfig{});
        bool a_wins = sa.J < sb.J;
        if (a_wins == (nodes(a) < nodes(b)))
            ++correct;
        ++pairs;
    }
    c.require(correct == pairs, std::to_string(pairs - correct) + " of " + std::to_string(pairs) +
                                    " pairs chose the larger model");
    c.note(std::to_string(correct) + "/" + std::to_string(pairs) + " pairs");
    return c;
}

Check dominating_penalty() {
    Check c;
    // x' = x^2 from x(0) = 1 blows up at t = 1; the horizon runs to t = 2
    FittedModel square;
    square.tpl.equations = {{pow(Expr::state(0), 2)}};
    square.coefficients = {Eigen::VectorXd::Ones(1)};
    square.diagnostics.resize(1);
    {
        Trajectory tr;
        tr.times = Eigen::VectorXd::LinSpaced(201, 0.0, 2.0);
        tr.states.resize(201, 1);
        // any finite reference works; the rollout never reaches the test segment
        for (Eigen::Index j = 0; j < 201; ++j)
            tr.states(j, 0) = 1.0 + tr.times[j];
        tr.split = split_index(201, 0.7);
        auto s = make_score(score_rollout(square, tr, SimConfig{}), square, derive_priors(summarize(tr)), LoopConfig{});
        c.require(s.outcome != RolloutOutcome::Completed, "x' = x^2 rollout completed past its blow-up");
        c.require(s.J == kInf, "J = " + fmt(s.J));
    }
    // in the loop, on data from exponential growth, the quadratic candidate
    // diverges and a completed candidate is selected instead
    auto spec = spec_from_json({{"name", "growth"},
                                {"dim", 1},
                                {"equations", {"x0"}},
                                {"x0", {0.01}},
                                {"t_span", {0.0, 10.0}},
                                {"n_samples", 501}});
    auto traj = generate_trajectory(spec, 0.7);
    EquationTemplate sq{{{pow(Expr::state(0), 2)}}};
    EquationTemplate sq_cube{{{pow(Expr::state(0), 2), pow(Expr::state(0), 3)}}};
    json doc = {{"batches", json::array({json::array({template_to_json(sq), template_to_json(sq_cube)})})}};
    ScriptedProposer replay(doc);
    auto run = refine(traj, replay, LoopConfig{});
    bool saw_divergence = false;
    for (const auto& rec : run.history)
        if (rec.status == RejectReason::RolloutDivergence) {
            saw_divergence = true;
            c.require(rec.score && rec.score->J == kInf, "divergent candidate scored finitely");
        }
    c.require(saw_divergence, "no divergent candidate recorded");
    c.require(std::isfinite(run.best_score.J) && run.best_score.completed(), "selected model did not complete");
    c.require(template_signature(run.best.active_template()) != template_signature(sq), "x^2 model was selected");
    return c;
}

Check stlsq_oracle() {
    Check c;
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> kdist(2, 6);
    int agree = 0, coef_misses = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int k = kdist(rng);
        Eigen::MatrixXd a(200, k);
        for (Eigen::Index i = 0; i < a.size(); ++i)
            a.data()[i] = g(rng);
        std::vector<int> idx(static_cast<std::size_t>(k));
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        const int s = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::min(3, k)));
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(k);
        for (int j = 0; j < s; ++j) {
            double mag = 0.2 + 2.0 * std::abs(g(rng));
            theta[idx[static_cast<std::size_t>(j)]] = (rng() % 2 ? 1.0 : -1.0) * mag;
        }
        Eigen::VectorXd b = a * theta;
        auto res = stlsq(a, b, 0.1);
        auto oracle = oracles::subset_oracle(a, b);
        if (res.active == oracle.support) {
            ++agree;
            if ((res.coefficients - oracle.coef).cwiseAbs().maxCoeff() > 1e-6)
                ++coef_misses;
        }
    }
    c.require(agree >= 95, "support agreement " + std::to_string(agree) + "/100");
    c.require(coef_misses == 0, std::to_string(coef_misses) + " agreements with coefficients off by > 1e-6");
    c.note(std::to_string(agree) + "/100 supports agree");
    return c;
}

Check integrator_accuracy() {
    Check c;
    auto harmonic = [](double, std::span<const double> x, std::span<const double>, std::span<double> dx) {
        dx[0] = x[1];
        dx[1] = -x[0];
    };
    const double period = 2 * std::numbers::pi;
    auto h = integrate(harmonic, Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.0, period), nullptr, SimConfig{});
    double herr = h.completed() ? std::hypot(h.states(1, 0) - 1.0, h.states(1, 1)) : kInf;
    c.require(herr < 1e-6, "harmonic endpoint error " + fmt(herr));
    auto decay = [](double, std::span<const double> x, std::span<const double>, std::span<double> dx) { dx[0] = -x[0]; };
    auto e = integrate(decay, Eigen::VectorXd::Ones(1), Eigen::Vector2d(0.0, 1.0), nullptr, SimConfig{});
    double eerr = e.completed() ? std::abs(e.states(1, 0) - std::exp(-1.0)) : kInf;
    c.require(eerr < 1e-6, "exp(-1) endpoint error " + fmt(eerr));
    c.note("errors " + fmt(herr) + ", " + fmt(eerr));
    return c;
}

Check cli_determinism() {
    Check c;
    auto dir = scratch_dir() / "determinism";
    fs::create_directories(dir);
    auto csv = dir / "odebench31.csv";
    c.require(run_cli("generate --spec " + q(kFixtures / "odebench" / "odebench31.spec.json") + " --out " + q(csv)) == 0,
              "generate failed");
    auto replay = q(kFixtures / "odebench" / "odebench31.replay.json");
    auto a = dir / "a.run.json", b = dir / "b.run.json";
    for (const auto& out : {a, b})
        c.require(run_cli("refine --normalize --traj " + q(csv) + " --proposer replay:" + replay + " --out " + q(out)) == 0,
                  "refine failed");
    auto ta = slurp(a), tb = slurp(b);
    c.require(!ta.empty(), "empty run log");
    c.require(ta == tb, "run logs differ");
    return c;
}

Check cli_bench() {
    Check c;
    auto out = scratch_dir() / "bench";
    auto t0 = std::chrono::steady_clock::now();
    int code = run_cli("bench --normalize --specs " + q(kFixtures / "odebench") + " --proposer replay --out " + q(out));
    double elapsed = seconds_since(t0);
    c.require(code == 0, "bench exited with " + std::to_string(code));
    if (code != 0)
        return c;
    auto report = json::parse(slurp(out / "report.json"));
    int better = 0;
    std::string misses;
    for (const auto& row : report["rows"]) {
        const auto name = row["system"].get<std::string>();
        if (name == "odebench35")
            continue;
        auto num = [](const json& v) { return v.is_number() ? v.get<double>() : kInf; };
        if (num(row["refined_max_nrmse"]) < num(row["baseline_max_nrmse"]))
            ++better;
        else
            misses += " " + name;
    }
    c.require(report["rows"].size() == 5, "report has " + std::to_string(report["rows"].size()) + " rows");
    c.require(better >= 4, "refined better on " + std::to_string(better) + " non-exempt systems; misses:" + misses);
    c.require(elapsed < 300.0, "took " + fmt(elapsed) + " s");
    c.note("refined better on " + std::to_string(report["refined_better_count"].get<int>()) + "/5 overall, " +
           fmt(elapsed) + " s");
    return c;
}

Check march_leuba_properties() {
    Check c;
    auto run = march_leuba_generate();
    const auto& tr = run.trajectory;
    c.require(tr.dim() == 7, "dimension " + std::to_string(tr.dim()));
    c.require(tr.states.allFinite() && tr.states.cwiseAbs().maxCoeff() < 10.0, "trajectory not bounded");
    double lead = oracles::max_real_eigenvalue(oracles::march_leuba_analytic_jacobian(run.parameters));
    c.require(lead < 0.0, "largest eigenvalue real part " + fmt(lead));
    auto again = generate_trajectory(run.spec, 0.7);
    double worst = 0.0;
    for (Eigen::Index i = 0; i < 7; ++i)
        worst = std::max(worst, nrmse(again.states.col(i), tr.states.col(i)));
    c.require(worst <= 1e-4, "re-simulation NRMSE " + fmt(worst));
    c.note("leading eigenvalue real part " + fmt(lead) + ", re-simulation NRMSE " + fmt(worst));
    return c;
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
        {"oscillator recovery (odebench24)", oscillator_recovery},
        {"SIR-type recovery (odebench31)", sir_recovery},
        {"exponential pivot (odebench21)", exponential_pivot},
        {"negative control (odebench35)", negative_control},
        {"parsimony at equal error", parsimony_selection},
        {"blow-up scores infinity", dominating_penalty},
        {"STLSQ matches subset oracle", stlsq_oracle},
        {"integrator accuracy", integrator_accuracy},
        {"CLI refine determinism", cli_determinism},
        {"CLI bench over fixtures", cli_bench},
        {"March-Leuba generator", march_leuba_properties},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check c;
        try {
            c = criteria[i].second();
        } catch (const std::exception& e) {
            c.require(false, std::string("threw: ") + e.what());
        }
        if (!c.ok())
            ++failed;
        std::cout << (c.ok() ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first;
        auto d = c.detail();
        if (!d.empty())
            std::cout << " (" << d << ")";
        std::cout << std::endl;
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
              << std::endl;
    return failed == 0 ? 0 : 1;
}
