#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "eqloop/benchkit.hpp"
#include "eqloop/errors.hpp"
#include "eqloop/expr.hpp"
#include "eqloop/simulate.hpp"
#include "eqloop/trajectory.hpp"

namespace eqloop {

// Reduced-order closed-loop BWR model in deviation variables.
//
//   x0  relative power deviation      x0' = rho/Lambda (1 + x0) - beta/Lambda x0 + beta/Lambda x1
//   x1  delayed-neutron precursors    x1' = lambda (x0 - x1)
//   x2  fuel temperature              x2' = a1 x0 - a2 x2
//   x3  void reactivity               x3' = x4
//   x4  void reactivity rate          x4' = -a3 x4 - a4 x3 + k x2
//   x5  power sensor                  x5' = (x0 - x5) / tau_s
//   x6  rod reactivity (actuator)     x6' = (Kr u - x6) / tau_a
//
//   rho = x3 + D x2 + x6
//
// The controller is a PI law on the sensed power, sampled on the output grid
// and held in between:  u_k = Kp e_k + Ki z_k,  z' = r - x5,  e = r - x5.
// Only u is exported; the integrator z stays internal.

inline std::map<std::string, double> march_leuba_default_parameters() {
    return {
        {"beta", 0.0056},   {"Lambda", 4.0e-5}, {"lambda", 0.08},  {"a1", 25.04},  {"a2", 0.23},
        {"D", -2.52e-5},    {"k", -3.7e-3},     {"a3", 2.25},      {"a4", 6.82},   {"tau_s", 0.1},
        {"tau_a", 0.2},     {"Kr", 0.01},       {"Kp", 0.5},       {"Ki", 2.0},
    };
}

struct SetpointSchedule {
    std::vector<std::pair<double, double>> steps; // (time, value), value holds from that time on

    double at(double t) const {
        double v = 0.0;
        for (const auto& [ts, val] : steps)
            if (t >= ts)
                v = val;
        return v;
    }
};

inline SetpointSchedule march_leuba_default_schedule() { return {{{0.0, 0.0}, {2.0, 0.05}, {15.0, -0.03}}}; }

struct MarchLeubaRun {
    Trajectory trajectory;
    SystemSpec spec;
    std::map<std::string, double> parameters;
};

namespace detail {

inline std::map<std::string, double> merge_parameters(const std::map<std::string, double>& overrides) {
    auto p = march_leuba_default_parameters();
    for (const auto& [k, v] : overrides) {
        if (!p.count(k))
            throw ConfigError("unknown March-Leuba parameter '" + k + "'");
        if (!std::isfinite(v))
            throw ConfigError("March-Leuba parameter '" + k + "' must be finite");
        p[k] = v;
    }
    for (const char* positive : {"beta", "Lambda", "lambda", "a2", "tau_s", "tau_a"})
        if (!(p[positive] > 0.0))
            throw ConfigError(std::string("March-Leuba parameter '") + positive + "' must be positive");
    return p;
}

inline std::string lit(double v) {
    std::string s = format_number(v);
    return v < 0 ? "(" + s + ")" : s;
}

} // namespace detail

/// The seven plant equations in the truth grammar, u0 being the control input.
inline std::vector<std::string> march_leuba_equations(const std::map<std::string, double>& p) {
    using detail::lit;
    const double bl = p.at("beta") / p.at("Lambda");
    const double il = 1.0 / p.at("Lambda");
    const std::string rho = "(x3 + " + lit(p.at("D")) + "*x2 + x6)";
    return {
        lit(il) + "*" + rho + "*(1 + x0) - " + lit(bl) + "*x0 + " + lit(bl) + "*x1",
        lit(p.at("lambda")) + "*(x0 - x1)",
        lit(p.at("a1")) + "*x0 - " + lit(p.at("a2")) + "*x2",
        "x4",
        "-" + lit(p.at("a3")) + "*x4 - " + lit(p.at("a4")) + "*x3 + " + lit(p.at("k")) + "*x2",
        "(x0 - x5)/" + lit(p.at("tau_s")),
        "(" + lit(p.at("Kr")) + "*u0 - x6)/" + lit(p.at("tau_a")),
    };
}

/// Continuous closed-loop right-hand side over the 7 plant states plus the
/// controller integrator (index 7), for a given setpoint value.
inline void march_leuba_closed_loop(const std::map<std::string, double>& p, double r, const double* x, double u,
                                    double* dx) {
    const double beta = p.at("beta"), Lambda = p.at("Lambda");
    const double rho = x[3] + p.at("D") * x[2] + x[6];
    dx[0] = rho / Lambda * (1.0 + x[0]) - beta / Lambda * x[0] + beta / Lambda * x[1];
    dx[1] = p.at("lambda") * (x[0] - x[1]);
    dx[2] = p.at("a1") * x[0] - p.at("a2") * x[2];
    dx[3] = x[4];
    dx[4] = -p.at("a3") * x[4] - p.at("a4") * x[3] + p.at("k") * x[2];
    dx[5] = (x[0] - x[5]) / p.at("tau_s");
    dx[6] = (p.at("Kr") * u - x[6]) / p.at("tau_a");
    dx[7] = r - x[5];
}

inline double march_leuba_control(const std::map<std::string, double>& p, double r, const double* x) {
    return p.at("Kp") * (r - x[5]) + p.at("Ki") * x[7];
}

/// Simulates the sampled closed loop from the all-zero equilibrium and
/// exports 7 states plus the control column. Throws UnstableConfiguration
/// when the loop diverges.
inline MarchLeubaRun march_leuba_generate(const std::map<std::string, double>& overrides = {},
                                          const SetpointSchedule& schedule = march_leuba_default_schedule(),
                                          double t_end = 20.0, Eigen::Index samples = 2001, double split = 0.7,
                                          const Eigen::VectorXd& x0 = Eigen::VectorXd::Zero(7)) {
    if (samples < 50 || !(t_end > 0.0))
        throw ConfigError("March-Leuba run needs t_end > 0 and at least 50 samples");
    if (x0.size() != 7 || !x0.allFinite())
        throw ConfigError("March-Leuba initial state must have 7 finite entries");
    MarchLeubaRun run;
    run.parameters = detail::merge_parameters(overrides);
    const auto& p = run.parameters;

    Eigen::VectorXd times = Eigen::VectorXd::LinSpaced(samples, 0.0, t_end);
    Eigen::MatrixXd states(samples, 7);
    Eigen::MatrixXd u(samples, 1);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(8);
    x.head(7) = x0;

    SimConfig cfg = truth_sim_config();
    cfg.blowup_bound = 1e3;
    for (Eigen::Index k = 0; k < samples; ++k) {
        const double r = schedule.at(times[k]);
        const double uk = march_leuba_control(p, r, x.data());
        states.row(k) = x.head(7).transpose();
        u(k, 0) = uk;
        if (k + 1 == samples)
            break;
        RhsFunction f = [&p, r, uk](double, std::span<const double> y, std::span<const double>, std::span<double> dy) {
            march_leuba_closed_loop(p, r, y.data(), uk, dy.data());
        };
        Eigen::VectorXd grid(2);
        grid << times[k], times[k + 1];
        auto res = integrate(f, x, grid, nullptr, cfg);
        if (!res.completed())
            throw UnstableConfiguration("March-Leuba closed loop " + std::string(to_string(res.outcome)) + " near t=" +
                                        detail::num(times[k]));
        x = res.states.row(1).transpose();
    }
    if (!states.allFinite() || !u.allFinite())
        throw UnstableConfiguration("March-Leuba closed loop produced non-finite values");

    Trajectory& tr = run.trajectory;
    tr.times = times;
    tr.states = states;
    tr.inputs = u;
    tr.split = split_index(samples, split);
    tr.state_names = {"power", "precursors", "fuel_temperature", "void_reactivity", "void_reactivity_rate",
                      "power_sensor", "rod_reactivity"};
    tr.state_units = {"1", "1", "K", "1", "1/s", "1", "1"};
    tr.input_names = {"control"};
    tr.input_units = {"1"};
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [k, v] : p)
        params[k] = v;
    tr.metadata = {{"system", "march_leuba"}, {"split_fraction", split}};
    tr.validate();

    SystemSpec& s = run.spec;
    s.name = "march_leuba";
    s.dim = 7;
    s.equation_text = march_leuba_equations(p);
    Grammar g = Grammar::truth(7, 1);
    for (const auto& e : s.equation_text)
        s.equations.push_back(parse_expression(e, g));
    s.x0 = x0;
    s.t0 = 0.0;
    s.t1 = t_end;
    s.n_samples = samples;
    InputSpec in;
    in.samples = u;
    in.names = {"control"};
    s.input = std::move(in);
    s.state_names = tr.state_names;
    nlohmann::json sched = nlohmann::json::array();
    for (const auto& [ts, v] : schedule.steps)
        sched.push_back({ts, v});
    s.metadata = {{"parameters", params}, {"setpoint_schedule", sched}, {"controller", "sampled PI on x5, zero-order hold"}};
    return run;
}

/// Finite-difference Jacobian of the continuous closed loop (8 x 8) at the
/// all-zero equilibrium.
inline Eigen::MatrixXd march_leuba_jacobian(const std::map<std::string, double>& overrides = {}, double h = 1e-7) {
    auto p = detail::merge_parameters(overrides);
    Eigen::MatrixXd J(8, 8);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(8);
    for (int c = 0; c < 8; ++c) {
        Eigen::VectorXd xp = x, xm = x, fp(8), fm(8);
        xp[c] += h;
        xm[c] -= h;
        march_leuba_closed_loop(p, 0.0, xp.data(), march_leuba_control(p, 0.0, xp.data()), fp.data());
        march_leuba_closed_loop(p, 0.0, xm.data(), march_leuba_control(p, 0.0, xm.data()), fm.data());
        J.col(c) = (fp - fm) / (2.0 * h);
    }
    return J;
}

} // namespace eqloop
