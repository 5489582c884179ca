#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eqloop/equation_template.hpp"
#include "eqloop/errors.hpp"
#include "eqloop/trajectory.hpp"

namespace eqloop {

inline constexpr double kDefaultStlsqThreshold = 0.05;
inline constexpr int kDefaultStlsqSweeps = 10;
inline constexpr double kIllConditionedLimit = 1e12;

/// Time derivatives by three-point Lagrange differentiation: central on
/// interior samples, one-sided at both ends. Exact for quadratics on any grid.
inline Eigen::MatrixXd estimate_derivatives(const Eigen::VectorXd& t, const Eigen::MatrixXd& x) {
    const Eigen::Index n = t.size();
    if (n < 3 || x.rows() != n)
        throw DimensionMismatch("derivative estimation needs at least 3 samples matching the time grid");
    Eigen::MatrixXd dx(n, x.cols());
    for (Eigen::Index j = 0; j < n; ++j) {
        Eigen::Index c = std::clamp<Eigen::Index>(j, 1, n - 2); // centre of the stencil
        const double t0 = t[c - 1], t1 = t[c], t2 = t[c + 1], s = t[j];
        const double w0 = (2 * s - t1 - t2) / ((t0 - t1) * (t0 - t2));
        const double w2 = (2 * s - t0 - t1) / ((t2 - t0) * (t2 - t1));
        // the weights sum to zero, so write the stencil in differences from the
        // centre sample; flat data then gives an exact zero
        dx.row(j) = w0 * (x.row(c - 1) - x.row(c)) + w2 * (x.row(c + 1) - x.row(c));
    }
    return dx;
}

inline Eigen::MatrixXd estimate_derivatives(const Trajectory& traj) {
    return estimate_derivatives(traj.times, traj.states);
}

struct StlsqResult {
    Eigen::VectorXd coefficients; // inactive entries exactly 0
    std::vector<bool> active;
    int sweeps = 0;
    bool empty_active_set = false;
    bool ill_conditioned = false;
    double condition_estimate = 0.0;

    std::size_t support_size() const { return static_cast<std::size_t>(std::count(active.begin(), active.end(), true)); }
};

namespace detail {

struct LeastSquaresSolution {
    Eigen::VectorXd x;
    double condition = 1.0;
};

/// Least squares on column-normalized features via column-pivoting QR;
/// falls back to the minimum-norm complete orthogonal decomposition when
/// the active columns are rank deficient.
inline LeastSquaresSolution least_squares(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
    const Eigen::Index k = a.cols();
    Eigen::VectorXd scale(k);
    Eigen::MatrixXd scaled = a;
    for (Eigen::Index c = 0; c < k; ++c) {
        double nrm = a.col(c).norm();
        scale[c] = nrm > 0.0 ? nrm : 1.0;
        scaled.col(c) /= scale[c];
    }
    LeastSquaresSolution out;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
    const auto& r = qr.matrixQR();
    double dmax = 0.0, dmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < k; ++i) {
        double d = std::abs(r(i, i));
        dmax = std::max(dmax, d);
        dmin = std::min(dmin, d);
    }
    out.condition = dmin > 0.0 ? dmax / dmin : std::numeric_limits<double>::infinity();
    Eigen::VectorXd y;
    if (qr.rank() < k) {
        Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(scaled);
        y = cod.solve(b);
    } else {
        y = qr.solve(b);
    }
    out.x = y.cwiseQuotient(scale);
    return out;
}

} // namespace detail

/// Sequential thresholded least squares: fit on the active set, drop
/// coefficients below `threshold` in magnitude, refit, until the active set
/// stops changing or `max_sweeps` fits have been done.
inline StlsqResult stlsq(const Eigen::MatrixXd& features, const Eigen::VectorXd& targets, double threshold,
                         int max_sweeps = kDefaultStlsqSweeps) {
    const Eigen::Index n = features.rows(), k = features.cols();
    if (targets.size() != n)
        throw DimensionMismatch("stlsq: targets length differs from feature rows");
    if (threshold < 0.0)
        throw std::invalid_argument("stlsq: threshold must be nonnegative");
    if (n <= k)
        throw DimensionMismatch("stlsq: need more samples (" + std::to_string(n) + ") than features (" +
                                std::to_string(k) + ")");

    StlsqResult res;
    res.coefficients = Eigen::VectorXd::Zero(k);
    res.active.assign(static_cast<std::size_t>(k), false);
    for (Eigen::Index c = 0; c < k; ++c)
        res.active[static_cast<std::size_t>(c)] = features.col(c).squaredNorm() > 0.0;

    for (int sweep = 0; sweep < std::max(1, max_sweeps); ++sweep) {
        std::vector<Eigen::Index> cols;
        for (Eigen::Index c = 0; c < k; ++c)
            if (res.active[static_cast<std::size_t>(c)])
                cols.push_back(c);
        if (cols.empty()) {
            res.empty_active_set = true;
            res.coefficients.setZero();
            return res;
        }
        Eigen::MatrixXd sub(n, static_cast<Eigen::Index>(cols.size()));
        for (std::size_t i = 0; i < cols.size(); ++i)
            sub.col(static_cast<Eigen::Index>(i)) = features.col(cols[i]);
        auto sol = detail::least_squares(sub, targets);
        res.sweeps = sweep + 1;
        res.condition_estimate = sol.condition;
        res.ill_conditioned = sol.condition > kIllConditionedLimit;

        res.coefficients.setZero();
        bool changed = false;
        for (std::size_t i = 0; i < cols.size(); ++i) {
            double v = sol.x[static_cast<Eigen::Index>(i)];
            if (std::abs(v) < threshold || !std::isfinite(v)) {
                res.active[static_cast<std::size_t>(cols[i])] = false;
                changed = true;
            } else {
                res.coefficients[cols[i]] = v;
            }
        }
        if (!changed)
            return res;
    }
    // sweep budget used up: survivors keep their last fitted values
    if (std::none_of(res.active.begin(), res.active.end(), [](bool b) { return b; }))
        res.empty_active_set = true;
    return res;
}

/// 1 - SS_res / SS_tot. Throws DegenerateData when `actual` is constant.
inline double r_squared(const Eigen::Ref<const Eigen::VectorXd>& predicted,
                        const Eigen::Ref<const Eigen::VectorXd>& actual) {
    if (predicted.size() != actual.size() || actual.size() < 2)
        throw DimensionMismatch("r_squared: need equal lengths >= 2");
    const double mean = actual.mean();
    const double ss_tot = (actual.array() - mean).square().sum();
    if (!(ss_tot > 0.0))
        throw DegenerateData("r_squared: actual series has zero variance");
    const double ss_res = (predicted - actual).squaredNorm();
    if (!std::isfinite(ss_res))
        return -std::numeric_limits<double>::infinity();
    return 1.0 - ss_res / ss_tot;
}

/// RMSE divided by the range of `actual`. Non-finite predictions give +inf.
inline double nrmse(const Eigen::Ref<const Eigen::VectorXd>& predicted, const Eigen::Ref<const Eigen::VectorXd>& actual) {
    if (predicted.size() != actual.size() || actual.size() < 1)
        throw DimensionMismatch("nrmse: need equal, nonzero lengths");
    const double range = actual.maxCoeff() - actual.minCoeff();
    if (!(range > 0.0))
        throw DegenerateData("nrmse: actual series has zero range");
    if (!predicted.allFinite())
        return std::numeric_limits<double>::infinity();
    const double rmse = std::sqrt((predicted - actual).squaredNorm() / static_cast<double>(actual.size()));
    return std::isfinite(rmse) ? rmse / range : std::numeric_limits<double>::infinity();
}

struct StateFitDiagnostics {
    double train_r2 = std::numeric_limits<double>::quiet_NaN(); // NaN when the target has no variance
    double residual_norm = 0.0;
    bool empty_active_set = false;
    bool ill_conditioned = false;
    double condition_estimate = 0.0;
    int sweeps = 0;
};

/// A template with its fitted coefficients; coefficients[i][k] multiplies
/// feature k of equation i.
struct FittedModel {
    EquationTemplate tpl;
    std::vector<Eigen::VectorXd> coefficients;
    std::vector<StateFitDiagnostics> diagnostics;

    std::size_t dim() const { return tpl.dim(); }

    /// The template restricted to features with nonzero coefficients.
    EquationTemplate active_template() const {
        EquationTemplate out;
        out.equations.resize(dim());
        for (std::size_t i = 0; i < dim(); ++i)
            for (std::size_t k = 0; k < tpl.equations[i].size(); ++k)
                if (coefficients[i][static_cast<Eigen::Index>(k)] != 0.0)
                    out.equations[i].push_back(tpl.equations[i][k]);
        return out;
    }

    std::size_t active_terms() const { return active_template().feature_count(); }

    /// dx/dt at (t, x, u); NaN entries flag domain violations.
    void rhs(double t, std::span<const double> x, std::span<const double> u, std::span<double> dx) const {
        EvalPoint p{x, u, t};
        for (std::size_t i = 0; i < dim(); ++i) {
            double acc = 0.0;
            const auto& eq = tpl.equations[i];
            for (std::size_t k = 0; k < eq.size(); ++k) {
                double c = coefficients[i][static_cast<Eigen::Index>(k)];
                if (c != 0.0)
                    acc += c * evaluate(eq[k], p);
            }
            dx[i] = acc;
        }
    }

    /// Human-readable equations, one line per state, zero terms omitted.
    std::vector<std::string> equation_strings() const {
        std::vector<std::string> lines;
        for (std::size_t i = 0; i < dim(); ++i) {
            std::string line = "dx" + std::to_string(i) + "/dt =";
            bool any = false;
            for (std::size_t k = 0; k < tpl.equations[i].size(); ++k) {
                double c = coefficients[i][static_cast<Eigen::Index>(k)];
                if (c == 0.0)
                    continue;
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.6g", std::abs(c));
                line += any ? (c < 0 ? " - " : " + ") : (c < 0 ? " -" : " ");
                line += buf;
                line += "*" + to_string(tpl.equations[i][k]);
                any = true;
            }
            if (!any)
                line += " 0";
            lines.push_back(line);
        }
        return lines;
    }
};

/// Fits every equation of `tpl` on the training segment of `traj`.
/// An equation whose terms are all thresholded away is kept as dx_i/dt = 0.
inline FittedModel fit_model(const EquationTemplate& tpl, const Trajectory& traj, double threshold,
                             int max_sweeps = kDefaultStlsqSweeps) {
    if (static_cast<Eigen::Index>(tpl.dim()) != traj.dim())
        throw DimensionMismatch("template dimension " + std::to_string(tpl.dim()) + " != trajectory dimension " +
                                std::to_string(traj.dim()));
    const Eigen::Index n = traj.train_size();
    Eigen::MatrixXd deriv = estimate_derivatives(traj).topRows(n);
    Eigen::MatrixXd inputs = traj.num_inputs() > 0 ? Eigen::MatrixXd(traj.inputs.topRows(n)) : Eigen::MatrixXd(n, 0);
    auto blocks = evaluate_features(tpl, traj.states.topRows(n), inputs, traj.times.head(n));

    FittedModel model;
    model.tpl = tpl;
    for (std::size_t i = 0; i < tpl.dim(); ++i) {
        const auto col = static_cast<Eigen::Index>(i);
        Eigen::VectorXd target = deriv.col(col);
        auto res = stlsq(blocks[i], target, threshold, max_sweeps);
        StateFitDiagnostics diag;
        diag.empty_active_set = res.empty_active_set;
        diag.ill_conditioned = res.ill_conditioned;
        diag.condition_estimate = res.condition_estimate;
        diag.sweeps = res.sweeps;
        Eigen::VectorXd pred = blocks[i] * res.coefficients;
        diag.residual_norm = (pred - target).norm();
        try {
            diag.train_r2 = r_squared(pred, target);
        } catch (const DegenerateData&) {
        }
        model.coefficients.push_back(std::move(res.coefficients));
        model.diagnostics.push_back(diag);
    }
    return model;
}

} // namespace eqloop
