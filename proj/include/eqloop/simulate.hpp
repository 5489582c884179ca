#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "eqloop/errors.hpp"
#include "eqloop/regress.hpp"
#include "eqloop/trajectory.hpp"

namespace eqloop {

enum class RolloutOutcome { Completed, Diverged, Timeout, StiffnessFailure };

inline std::string_view to_string(RolloutOutcome o) {
    switch (o) {
    case RolloutOutcome::Completed: return "completed";
    case RolloutOutcome::Diverged: return "diverged";
    case RolloutOutcome::Timeout: return "timeout";
    case RolloutOutcome::StiffnessFailure: return "stiffness-failure";
    }
    return "unknown";
}

struct SimConfig {
    double rtol = 1e-6;
    double atol = 1e-8;
    double blowup_bound = 1e6; // absolute for integrate(); score_rollout scales it by max(1, training range)
    double timeout_s = 10.0;
    long max_steps = 500000;

    void validate() const {
        if (!(rtol > 0 && atol > 0 && blowup_bound > 0 && max_steps > 0))
            throw ConfigError("simulation tolerances, blow-up bound and step budget must be positive");
        if (!(timeout_s >= 0.1))
            throw ConfigError("simulation timeout must be at least 0.1 s");
    }
};

struct RolloutResult {
    RolloutOutcome outcome = RolloutOutcome::Completed;
    Eigen::MatrixXd states;  // rows = output times; present iff Completed
    Eigen::VectorXd nrmse;   // per state, filled by score_rollout
    Eigen::VectorXd r2;      // per state test R^2 (NaN when undefined)
    double max_nrmse = std::numeric_limits<double>::infinity();
    long steps = 0;
    long rejected = 0;
    double failed_at = std::numeric_limits<double>::quiet_NaN(); // time of failure, when not Completed

    bool completed() const { return outcome == RolloutOutcome::Completed; }
};

/// Piecewise-constant (zero-order hold) exogenous signal: value row k holds on
/// [times[k], times[k+1]).
struct InputSignal {
    Eigen::VectorXd times;
    Eigen::MatrixXd values; // rows = samples

    bool empty() const { return values.cols() == 0 || values.rows() == 0; }

    Eigen::Index segment(double t) const {
        auto begin = times.data(), end = times.data() + times.size();
        auto it = std::upper_bound(begin, end, t);
        if (it == begin)
            return 0;
        return static_cast<Eigen::Index>(it - begin) - 1;
    }
};

/// Right-hand side f(t, x, u) -> dx.
using RhsFunction = std::function<void(double, std::span<const double>, std::span<const double>, std::span<double>)>;

namespace detail {

// Dormand-Prince 5(4) tableau
inline constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
inline constexpr double a21 = 1.0 / 5;
inline constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
inline constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
inline constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561, a54 = -212.0 / 729;
inline constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                        a65 = -5103.0 / 18656;
inline constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                        a76 = 11.0 / 84;
inline constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                        e6 = 22.0 / 525, e7 = -1.0 / 40;
// continuous extension
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

class DormandPrince {
public:
    DormandPrince(const RhsFunction& f, Eigen::Index dim, const SimConfig& cfg) : f_(f), n_(dim), cfg_(cfg) {
        for (auto* v : {&k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &ytmp_, &y1_, &r1_, &r2_, &r3_, &r4_, &r5_, &sk_})
            v->resize(n_);
    }

    RolloutResult run(const Eigen::VectorXd& x0, const Eigen::VectorXd& out_times, const InputSignal* input) {
        RolloutResult res;
        const Eigen::Index m = out_times.size();
        res.states.resize(m, n_);
        if (m == 0)
            return res;
        const double t_start = out_times[0], t_end = out_times[m - 1];
        const double span = std::max(t_end - t_start, std::numeric_limits<double>::min());
        const auto deadline = std::chrono::steady_clock::now() +
                              std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                  std::chrono::duration<double>(cfg_.timeout_s));

        Eigen::VectorXd y = x0;
        if (!y.allFinite())
            return fail(res, RolloutOutcome::Diverged, t_start);
        res.states.row(0) = y.transpose();
        Eigen::Index next_out = 1;
        double t = t_start;
        double h = 0.0;
        facold_ = 1e-4;

        // integrate segment by segment; the input is constant on each one
        while (next_out < m) {
            double seg_end = t_end;
            u_.resize(0);
            if (input && !input->empty()) {
                Eigen::Index k = input->segment(t + 1e-12 * span);
                u_ = input->values.row(k).transpose();
                if (k + 1 < input->times.size() && input->times[k + 1] < t_end)
                    seg_end = std::max(input->times[k + 1], t);
            }
            if (!eval(t, y, k1_))
                return fail(res, RolloutOutcome::Diverged, t);
            if (h <= 0.0)
                h = initial_step(t, y, seg_end - t, span);

            while (t < seg_end) {
                if (std::chrono::steady_clock::now() > deadline)
                    return fail(res, RolloutOutcome::Timeout, t);
                if (res.steps + res.rejected >= cfg_.max_steps)
                    return fail(res, RolloutOutcome::StiffnessFailure, t);
                if (h < 1e-14 * span)
                    return fail(res, RolloutOutcome::StiffnessFailure, t);

                bool last = false;
                double step = h;
                if (t + step >= seg_end - 1e-13 * span) {
                    step = seg_end - t;
                    last = true;
                }
                double err = attempt(t, y, step);
                if (!(err <= 1.0)) {
                    ++res.rejected;
                    double shrink = std::isfinite(err) ? std::min(5.0, std::pow(err, 0.2) / 0.9) : 5.0;
                    h = step / shrink;
                    continue;
                }
                ++res.steps;
                // dense output on (t, t + step]
                const double t_new = last ? seg_end : t + step;
                dense_coefficients(y, step);
                while (next_out < m && out_times[next_out] <= t_new + 1e-13 * span) {
                    double theta = (out_times[next_out] - t) / step;
                    theta = std::clamp(theta, 0.0, 1.0);
                    double theta1 = 1.0 - theta;
                    res.states.row(next_out) =
                        (r1_ + theta * (r2_ + theta1 * (r3_ + theta * (r4_ + theta1 * r5_)))).transpose();
                    ++next_out;
                }
                y = y1_;
                k1_ = k7_; // first-same-as-last
                t = t_new;
                if (y.cwiseAbs().maxCoeff() > cfg_.blowup_bound || !y.allFinite())
                    return fail(res, RolloutOutcome::Diverged, t);

                // step-size update (PI controller)
                constexpr double beta = 0.04, expo1 = 0.2 - beta * 0.75, safe = 0.9;
                double fac11 = std::pow(std::max(err, 1e-300), expo1);
                double fac = fac11 / std::pow(facold_, beta);
                fac = std::clamp(fac / safe, 0.1, 5.0);
                facold_ = std::max(err, 1e-4);
                if (!last)
                    h = step / fac;
                if (last)
                    break;
            }
            if (!res.states.topRows(next_out).allFinite())
                return fail(res, RolloutOutcome::Diverged, t);
            if (t >= t_end) {
                for (; next_out < m; ++next_out)
                    res.states.row(next_out) = y.transpose();
            }
        }
        return res;
    }

private:
    RolloutResult& fail(RolloutResult& res, RolloutOutcome o, double t) {
        res.outcome = o;
        res.states.resize(0, n_);
        res.failed_at = t;
        return res;
    }

    bool eval(double t, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
        f_(t, std::span<const double>(y.data(), static_cast<std::size_t>(n_)),
           std::span<const double>(u_.data(), static_cast<std::size_t>(u_.size())),
           std::span<double>(dy.data(), static_cast<std::size_t>(n_)));
        return dy.allFinite();
    }

    double norm_scaled(const Eigen::VectorXd& v, const Eigen::VectorXd& scale) const {
        return std::sqrt((v.cwiseQuotient(scale)).squaredNorm() / static_cast<double>(n_));
    }

    double initial_step(double t, const Eigen::VectorXd& y, double remaining, double span) {
        Eigen::VectorXd sk = cfg_.atol + cfg_.rtol * y.cwiseAbs().array();
        double d0 = norm_scaled(y, sk), d1v = norm_scaled(k1_, sk);
        double h0 = (d0 < 1e-10 || d1v < 1e-10) ? 1e-6 * span : 0.01 * d0 / d1v;
        h0 = std::min(h0, std::max(remaining, 1e-12 * span));
        ytmp_ = y + h0 * k1_;
        if (!eval(t + h0, ytmp_, k2_))
            return h0 * 1e-3;
        double d2 = norm_scaled(k2_ - k1_, sk) / h0;
        double dm = std::max(d1v, d2);
        double h1 = dm <= 1e-15 ? std::max(1e-6 * span, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
        return std::min({100.0 * h0, h1, span});
    }

    // One trial step; returns the scaled error norm (inf when a stage is undefined).
    double attempt(double t, const Eigen::VectorXd& y, double h) {
        constexpr double inf = std::numeric_limits<double>::infinity();
        ytmp_ = y + h * a21 * k1_;
        if (!eval(t + c2 * h, ytmp_, k2_))
            return inf;
        ytmp_ = y + h * (a31 * k1_ + a32 * k2_);
        if (!eval(t + c3 * h, ytmp_, k3_))
            return inf;
        ytmp_ = y + h * (a41 * k1_ + a42 * k2_ + a43 * k3_);
        if (!eval(t + c4 * h, ytmp_, k4_))
            return inf;
        ytmp_ = y + h * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
        if (!eval(t + c5 * h, ytmp_, k5_))
            return inf;
        ytmp_ = y + h * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
        if (!eval(t + h, ytmp_, k6_))
            return inf;
        y1_ = y + h * (a71 * k1_ + a73 * k3_ + a74 * k4_ + a75 * k5_ + a76 * k6_);
        if (!eval(t + h, y1_, k7_))
            return inf;
        ytmp_ = h * (e1 * k1_ + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);
        sk_ = (cfg_.atol + cfg_.rtol * y.cwiseAbs().cwiseMax(y1_.cwiseAbs()).array()).matrix();
        double err = norm_scaled(ytmp_, sk_);
        return std::isfinite(err) ? err : inf;
    }

    void dense_coefficients(const Eigen::VectorXd& y, double h) {
        r1_ = y;
        r2_ = y1_ - y;
        r3_ = h * k1_ - r2_;
        r4_ = r2_ - h * k7_ - r3_;
        r5_ = h * (d1 * k1_ + d3 * k3_ + d4 * k4_ + d5 * k5_ + d6 * k6_ + d7 * k7_);
    }

    const RhsFunction& f_;
    Eigen::Index n_;
    SimConfig cfg_;
    Eigen::VectorXd u_;
    Eigen::VectorXd k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_, y1_, r1_, r2_, r3_, r4_, r5_, sk_;
    double facold_ = 1e-4;
};

} // namespace detail

/// Adaptive Dormand-Prince 5(4) integration of dx/dt = f(t, x, u) from
/// out_times[0], sampled at every entry of out_times via dense output. Input
/// sample times are treated as breakpoints. Failures are encoded in the outcome.
inline RolloutResult integrate(const RhsFunction& f, const Eigen::VectorXd& x0, const Eigen::VectorXd& out_times,
                               const InputSignal* input, const SimConfig& cfg) {
    detail::DormandPrince dp(f, x0.size(), cfg);
    return dp.run(x0, out_times, input);
}

inline RhsFunction model_rhs(const FittedModel& model) {
    return [&model](double t, std::span<const double> x, std::span<const double> u, std::span<double> dx) {
        model.rhs(t, x, u, dx);
    };
}

inline RolloutResult integrate(const FittedModel& model, const Eigen::VectorXd& x0, const Eigen::VectorXd& out_times,
                               const InputSignal* input, const SimConfig& cfg) {
    if (static_cast<std::size_t>(x0.size()) != model.dim())
        throw DimensionMismatch("initial state dimension differs from model dimension");
    return integrate(model_rhs(model), x0, out_times, input, cfg);
}

inline double training_range(const Trajectory& traj) {
    double r = 0.0;
    for (Eigen::Index i = 0; i < traj.dim(); ++i) {
        auto col = traj.states.col(i).head(traj.train_size());
        r = std::max(r, col.maxCoeff() - col.minCoeff());
    }
    return r;
}

inline InputSignal input_signal(const Trajectory& traj) {
    if (traj.num_inputs() == 0)
        return {};
    return InputSignal{traj.times, traj.inputs};
}

/// Fills per-state NRMSE / R^2 of a rollout against the test segment.
inline void score_against(RolloutResult& res, const Trajectory& traj) {
    const Eigen::Index d = traj.dim(), n_test = traj.test_size();
    res.nrmse = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
    res.r2 = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::quiet_NaN());
    res.max_nrmse = std::numeric_limits<double>::infinity();
    if (!res.completed())
        return;
    for (Eigen::Index i = 0; i < d; ++i) {
        Eigen::VectorXd truth = traj.states.col(i).tail(n_test);
        Eigen::VectorXd pred = res.states.col(i);
        res.nrmse[i] = nrmse(pred, truth);
        try {
            res.r2[i] = r_squared(pred, truth);
        } catch (const DegenerateData&) {
        }
    }
    res.max_nrmse = res.nrmse.maxCoeff();
}

/// Rolls `model` out from the first test-segment state across the test grid
/// and scores it. Non-completed rollouts get +inf NRMSE for every state.
inline RolloutResult score_rollout(const FittedModel& model, const Trajectory& traj, const SimConfig& cfg) {
    if (traj.test_size() < 5)
        throw InvalidTrajectory("test segment needs at least 5 samples");
    SimConfig local = cfg;
    local.blowup_bound = cfg.blowup_bound * std::max(1.0, training_range(traj));
    Eigen::VectorXd x0 = traj.states.row(traj.split).transpose();
    Eigen::VectorXd times = traj.times.tail(traj.test_size());
    InputSignal input = input_signal(traj);
    RolloutResult res = integrate(model, x0, times, input.empty() ? nullptr : &input, local);
    score_against(res, traj);
    return res;
}

} // namespace eqloop
