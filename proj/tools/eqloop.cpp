// eqloop command-line front end.
//
// Exit codes: 0 success, 2 input error, 3 degenerate data, 4 proposer unavailable.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <future>
#include <iostream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eqloop/benchkit.hpp"
#include "eqloop/config.hpp"
#include "eqloop/looprun.hpp"
#include "eqloop/march_leuba.hpp"
#include "eqloop/propose.hpp"
#include "eqloop/remote_proposer.hpp"
#include "eqloop/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace eqloop;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitDegenerate = 3;
constexpr int kExitProposer = 4;

std::string utc_now() {
    auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_json(const std::optional<fs::path>& out, const json& doc) {
    std::string text = doc.dump(2) + "\n";
    if (out)
        write_text_file(*out, text);
    else
        std::cout << text;
}

std::optional<fs::path> opt_path(const std::string& s) {
    if (s.empty())
        return std::nullopt;
    return fs::path(s);
}

/// Builds a proposer from its command-line form. `replay_default` is used by
/// `bench` when the flag is a bare "replay" (per-system replay files).
std::unique_ptr<Proposer> make_proposer(const std::string& flag, const RunConfig& cfg,
                                        const std::optional<fs::path>& replay_default = std::nullopt) {
    if (flag == "remote")
        return std::make_unique<RemoteProposer>(cfg.remote);
    if (flag.rfind("replay:", 0) == 0)
        return ScriptedProposer::from_file(flag.substr(7));
    if (flag == "replay") {
        if (!replay_default)
            throw ConfigError("--proposer replay needs a file: replay:<file>");
        if (!fs::exists(*replay_default))
            throw ProposerUnavailable("no replay file '" + replay_default->string() + "'");
        return ScriptedProposer::from_file(*replay_default);
    }
    if (flag.rfind("mutate:", 0) == 0) {
        std::string seed = flag.substr(7);
        try {
            std::size_t pos = 0;
            auto v = std::stoull(seed, &pos);
            if (pos != seed.size())
                throw std::invalid_argument(seed);
            return std::make_unique<MutationProposer>(v);
        } catch (const std::exception&) {
            throw ConfigError("mutate seed must be a nonnegative integer, got '" + seed + "'");
        }
    }
    throw ConfigError("unknown proposer '" + flag + "' (expected remote, replay:<file> or mutate:<seed>)");
}

json embedded_config(const Trajectory& traj) {
    return traj.metadata.contains("config") ? traj.metadata["config"] : json::object();
}

// --- generate -------------------------------------------------------------------

struct GenerateArgs {
    std::string spec, out;
    double split = 0.7;
    std::uint64_t seed = 0;
};

int cmd_generate(const GenerateArgs& a) {
    json doc;
    try {
        doc = json::parse(read_text_file(a.spec));
    } catch (const json::exception& e) {
        throw SpecError("spec file '" + a.spec + "' is not valid JSON: " + e.what());
    }
    fs::path out(a.out);
    Trajectory traj;
    if (doc.contains("generator")) {
        if (doc["generator"] != "march_leuba")
            throw SpecError("unknown generator " + doc["generator"].dump());
        std::map<std::string, double> params;
        SetpointSchedule sched = march_leuba_default_schedule();
        double t_end = 20.0;
        Eigen::Index samples = 2001;
        try {
            if (doc.contains("parameters"))
                params = doc["parameters"].get<std::map<std::string, double>>();
            if (doc.contains("setpoint_schedule"))
                sched.steps = doc["setpoint_schedule"].get<std::vector<std::pair<double, double>>>();
            t_end = doc.value("t_end", t_end);
            samples = doc.value("n_samples", samples);
        } catch (const json::exception& e) {
            throw SpecError(std::string("malformed March-Leuba spec: ") + e.what());
        }
        auto run = march_leuba_generate(params, sched, t_end, samples, a.split);
        traj = run.trajectory;
        if (doc.contains("config"))
            traj.metadata["config"] = doc["config"];
        auto spec_out = out;
        spec_out.replace_extension(".spec.json");
        write_text_file(spec_out, spec_to_json(run.spec).dump(2) + "\n");
    } else {
        SystemSpec spec = spec_from_json(doc);
        traj = generate_trajectory(spec, a.split);
        if (!spec.config.empty())
            traj.metadata["config"] = spec.config;
    }
    traj.metadata["seed"] = a.seed;
    save_trajectory(traj, out);
    std::cout << "wrote " << out.string() << " (" << traj.samples() << " samples, " << traj.dim() << " states, "
              << traj.num_inputs() << " inputs, split " << traj.split << ")\n";
    return kExitOk;
}

// --- baseline -------------------------------------------------------------------

struct CommonArgs {
    std::string config;
    std::vector<std::string> overrides;
};

struct BaselineArgs {
    std::string traj, out;
    CommonArgs common;
};

int cmd_baseline(const BaselineArgs& a) {
    Trajectory traj = load_trajectory(a.traj);
    RunConfig cfg = resolve_config(embedded_config(traj), opt_path(a.common.config), a.common.overrides);
    auto dict = baseline_dictionary(static_cast<std::size_t>(traj.dim()), static_cast<std::size_t>(traj.num_inputs()),
                                    cfg.loop.dictionary);
    auto rep = run_baseline(traj, dict, cfg.loop);
    json doc = baseline_to_json(rep);
    doc["trajectory"] = fs::path(a.traj).filename().string();
    write_json(opt_path(a.out), doc);
    if (!a.out.empty()) {
        std::cout << "baseline rollout: " << to_string(rep.rollout.outcome)
                  << ", max NRMSE " << detail::num(rep.rollout.max_nrmse) << "\n";
    }
    return kExitOk;
}

// --- refine ---------------------------------------------------------------------

struct RefineArgs {
    std::string traj, proposer, out;
    bool normalize = false;
    CommonArgs common;
};

json refine_log(const RefinementResult& run, const RunConfig& cfg, const std::string& traj_name,
                const std::string& proposer) {
    json log = run_log(run);
    log["config"] = config_to_json(cfg);
    log["trajectory"] = traj_name;
    log["proposer"] = proposer;
    return log;
}

void print_result(const RefinementResult& run) {
    for (const auto& line : run.best.equation_strings())
        std::cout << line << "\n";
    std::cout << "max NRMSE " << detail::num(run.best_score.max_nrmse) << ", J " << detail::num(run.best_score.J)
              << ", stop " << to_string(run.stop) << " after " << run.iterations.size() << " iterations"
              << (run.safeguard_applied ? " (baseline safeguard applied)" : "") << "\n";
}

int cmd_refine(const RefineArgs& a) {
    Trajectory traj = load_trajectory(a.traj);
    RunConfig cfg = resolve_config(embedded_config(traj), opt_path(a.common.config), a.common.overrides);
    auto proposer = make_proposer(a.proposer, cfg);
    std::string started = utc_now();
    auto t0 = std::chrono::steady_clock::now();
    auto run = refine(traj, *proposer, cfg.loop);
    double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    json log = refine_log(run, cfg, fs::path(a.traj).filename().string(), proposer->name());
    if (!a.normalize) {
        log["started_at"] = started;
        log["finished_at"] = utc_now();
        log["elapsed_s"] = elapsed;
    }
    write_json(opt_path(a.out), log);
    if (!a.out.empty())
        print_result(run);
    return kExitOk;
}

// --- bench ----------------------------------------------------------------------

struct BenchArgs {
    std::string specs, proposer, out;
    int jobs = 1;
    bool normalize = false;
    CommonArgs common;
};

int cmd_bench(const BenchArgs& a) {
    fs::path dir(a.specs);
    if (!fs::is_directory(dir))
        throw IoError("spec directory '" + a.specs + "' does not exist");
    std::vector<fs::path> specs;
    for (const auto& e : fs::directory_iterator(dir)) {
        auto name = e.path().filename().string();
        if (e.is_regular_file() && name.size() > 10 && name.substr(name.size() - 10) == ".spec.json")
            specs.push_back(e.path());
    }
    std::sort(specs.begin(), specs.end());
    if (specs.empty())
        throw IoError("no *.spec.json files in '" + a.specs + "'");
    // the config file and overrides are validated up front so typos fail fast
    (void)resolve_config(json::object(), opt_path(a.common.config), a.common.overrides);

    fs::path out(a.out);
    std::vector<BenchResult> results(specs.size());
    std::atomic<std::size_t> next{0};
    std::mutex print_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < specs.size(); i = next++) {
            const auto& path = specs[i];
            std::string stem = path.filename().string();
            stem = stem.substr(0, stem.size() - 10);
            BenchResult r;
            r.system = stem;
            try {
                SystemSpec spec = load_spec(path);
                r.system = spec.name;
                RunConfig cfg = resolve_config(spec.config, opt_path(a.common.config), a.common.overrides);
                Trajectory traj = generate_trajectory(spec, cfg.split);
                auto proposer = make_proposer(a.proposer, cfg, dir / (stem + ".replay.json"));
                auto run = refine(traj, *proposer, cfg.loop);
                r.baseline_nrmse = run.baseline.rollout.max_nrmse;
                r.baseline_r2 = run.baseline.rollout.completed() ? worst_r2(run.baseline.rollout.r2)
                                                                 : -std::numeric_limits<double>::infinity();
                r.refined_nrmse = run.best_score.max_nrmse;
                r.refined_r2 = run.best_score.completed() ? worst_r2(run.best_score.r2)
                                                          : -std::numeric_limits<double>::infinity();
                r.baseline_grade = grade_structure(run.baseline.model, spec, traj, cfg.loop.sim, cfg.grade);
                r.refined_grade = grade_structure(run.best, spec, traj, cfg.loop.sim, cfg.grade);
                r.stop_reason = std::string(to_string(run.stop));
                r.iterations = static_cast<int>(run.iterations.size());
                r.safeguard_applied = run.safeguard_applied;
                r.refined_equations = run.best.equation_strings();
                json log = refine_log(run, cfg, spec.name, proposer->name());
                write_text_file(out / "runs" / (stem + ".run.json"), log.dump(2) + "\n");
            } catch (const std::exception& e) {
                r.error = e.what();
            }
            {
                std::lock_guard lock(print_mutex);
                std::cout << r.system << ": baseline " << detail::num(r.baseline_nrmse) << ", refined "
                          << detail::num(r.refined_nrmse) << (r.error.empty() ? "" : " [error: " + r.error + "]")
                          << "\n";
            }
            results[i] = std::move(r);
        }
    };
    const int jobs = std::max(1, a.jobs);
    std::vector<std::future<void>> pool;
    for (int j = 0; j < jobs; ++j)
        pool.push_back(std::async(std::launch::async, worker));
    for (auto& f : pool)
        f.get();

    RunConfig top = resolve_config(json::object(), opt_path(a.common.config), a.common.overrides);
    json report = emit_report(results, top.loop.tau);
    if (!a.normalize)
        report["generated_at"] = utc_now();
    write_text_file(out / "report.json", report.dump(2) + "\n");
    write_text_file(out / "report.csv", report_csv(results));
    std::cout << "refined better than baseline on " << report["refined_better_count"].get<std::size_t>() << " of "
              << results.size() << " systems; report in " << (out / "report.json").string() << "\n";
    return kExitOk;
}

void add_common(CLI::App* cmd, CommonArgs& c) {
    cmd->add_option("--config", c.config, "JSON config file ({section: {key: value}})");
    cmd->add_option("--set", c.overrides, "override, section.key=value (repeatable)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"eqloop: closed-loop sparse equation discovery"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* g = app.add_subcommand("generate", "simulate a system spec into a trajectory CSV + metadata sidecar");
    g->add_option("--spec", gen.spec, "system spec JSON")->required();
    g->add_option("--out", gen.out, "output CSV path")->required();
    g->add_option("--split", gen.split, "train fraction")->check(CLI::Range(0.0, 1.0));
    g->add_option("--seed", gen.seed, "recorded in metadata; generation is noise-free");

    BaselineArgs base;
    auto* b = app.add_subcommand("baseline", "fit the broad baseline dictionary and report trust labels");
    b->add_option("--traj", base.traj, "trajectory CSV")->required();
    b->add_option("--out", base.out, "report path (default: stdout)");
    add_common(b, base.common);

    RefineArgs ref;
    auto* r = app.add_subcommand("refine", "run the refinement loop and write the run log");
    r->add_option("--traj", ref.traj, "trajectory CSV")->required();
    r->add_option("--proposer", ref.proposer, "remote | replay:<file> | mutate:<seed>")->required();
    r->add_option("--out", ref.out, "run-log path (default: stdout)");
    r->add_flag("--normalize", ref.normalize, "omit timestamps from the run log");
    add_common(r, ref.common);

    BenchArgs bench;
    auto* be = app.add_subcommand("bench", "baseline + refinement over a directory of system specs");
    be->add_option("--specs", bench.specs, "directory of *.spec.json")->required();
    be->add_option("--proposer", bench.proposer, "replay | replay:<file> | mutate:<seed> | remote")->required();
    be->add_option("--out", bench.out, "output directory")->required();
    be->add_option("--jobs", bench.jobs, "concurrent systems")->check(CLI::PositiveNumber);
    be->add_flag("--normalize", bench.normalize, "omit timestamps from the report");
    add_common(be, bench.common);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (*g)
            return cmd_generate(gen);
        if (*b)
            return cmd_baseline(base);
        if (*r)
            return cmd_refine(ref);
        if (*be)
            return cmd_bench(bench);
    } catch (const ProposerUnavailable& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitProposer;
    } catch (const DegenerateData& e) {
        std::cerr << "error: degenerate data: " << e.what() << "\n";
        return kExitDegenerate;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}
