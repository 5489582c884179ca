#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "eqloop/regress.hpp"
#include "eqloop/simulate.hpp"
#include "support/oracles.hpp"

using namespace eqloop;

namespace {

Trajectory make_traj(const Eigen::VectorXd& t, const Eigen::MatrixXd& x, double split = 0.7) {
    Trajectory tr;
    tr.times = t;
    tr.states = x;
    tr.split = split_index(t.size(), split);
    tr.validate();
    return tr;
}

// Reference trajectory from an accurate integration of f.
Trajectory simulate_truth(const RhsFunction& f, Eigen::VectorXd x0, double t1, Eigen::Index n) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(n, 0.0, t1);
    SimConfig cfg;
    cfg.rtol = 1e-10;
    cfg.atol = 1e-12;
    auto res = integrate(f, x0, t, nullptr, cfg);
    EXPECT_TRUE(res.completed());
    return make_traj(t, res.states);
}

} // namespace

TEST(Derivatives, ExactForQuadratics) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(21, 0.0, 2.0);
    Eigen::MatrixXd x = t.array().square().matrix();
    auto dx = estimate_derivatives(t, x);
    EXPECT_NEAR(dx(10, 0), 2.0, 1e-9); // t = 1
    for (Eigen::Index j = 0; j < t.size(); ++j)
        EXPECT_NEAR(dx(j, 0), 2.0 * t[j], 1e-9);
}

TEST(Derivatives, ExactForQuadraticsOnNonuniformGrid) {
    Eigen::VectorXd t(8);
    t << 0.0, 0.1, 0.35, 0.4, 0.9, 1.0, 1.7, 2.0;
    Eigen::MatrixXd x = (3.0 * t.array().square() - t.array() + 2.0).matrix();
    auto dx = estimate_derivatives(t, x);
    for (Eigen::Index j = 0; j < t.size(); ++j)
        EXPECT_NEAR(dx(j, 0), 6.0 * t[j] - 1.0, 1e-9);
}

TEST(Derivatives, SineAgainstAnalyticDerivative) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(301, 0.0, 3.0);
    Eigen::MatrixXd x = t.array().sin().matrix();
    auto dx = estimate_derivatives(t, x);
    EXPECT_NEAR(dx(0, 0), 1.0, 1e-4);
    for (Eigen::Index j = 1; j + 1 < t.size(); ++j)
        EXPECT_NEAR(dx(j, 0), std::cos(t[j]), 2e-5);
}

TEST(Derivatives, ConstantGivesZero) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(15, 0.0, 1.0);
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(15, 2, 4.2);
    EXPECT_NEAR(estimate_derivatives(t, x).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Stlsq, DropsTheInactiveQuadratic) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> noise(0.0, 1e-6);
    Eigen::MatrixXd a(100, 2);
    Eigen::VectorXd b(100);
    for (int j = 0; j < 100; ++j) {
        double x = 1.0 + j;
        a(j, 0) = x;
        a(j, 1) = x * x;
        b[j] = 3.0 * x + noise(rng);
    }
    auto res = stlsq(a, b, 0.1);
    auto oracle = oracles::subset_oracle(a, b);
    EXPECT_EQ(res.active, oracle.support);
    EXPECT_NEAR(res.coefficients[0], 3.0, 1e-6);
    EXPECT_EQ(res.coefficients[1], 0.0);
}

TEST(Stlsq, ZeroTargetsEmptyTheActiveSet) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(30, 3);
    auto res = stlsq(a, Eigen::VectorXd::Zero(30), 0.1);
    EXPECT_TRUE(res.empty_active_set);
    EXPECT_EQ(res.support_size(), 0u);
    EXPECT_TRUE(res.coefficients.isZero());
}

TEST(Stlsq, ZeroThresholdIsOrdinaryLeastSquares) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd a(60, 5);
        Eigen::VectorXd b(60);
        for (Eigen::Index i = 0; i < a.size(); ++i)
            a.data()[i] = g(rng);
        for (Eigen::Index i = 0; i < b.size(); ++i)
            b[i] = g(rng);
        auto res = stlsq(a, b, 0.0);
        EXPECT_EQ(res.support_size(), 5u);
        Eigen::VectorXd ols = a.colPivHouseholderQr().solve(b);
        EXPECT_NEAR((a * res.coefficients - b).norm(), (a * ols - b).norm(), 1e-10);
    }
}

TEST(Stlsq, PreconditionsAreChecked) {
    EXPECT_THROW(stlsq(Eigen::MatrixXd::Random(3, 3), Eigen::VectorXd::Zero(3), 0.1), DimensionMismatch);
    EXPECT_THROW(stlsq(Eigen::MatrixXd::Random(5, 2), Eigen::VectorXd::Zero(4), 0.1), DimensionMismatch);
    EXPECT_THROW(stlsq(Eigen::MatrixXd::Random(5, 2), Eigen::VectorXd::Zero(5), -1.0), std::invalid_argument);
}

TEST(Stlsq, RankDeficientColumnsAreFlaggedNotFatal) {
    Eigen::MatrixXd a(40, 3);
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(40, 0, 1);
    a.col(0) = t;
    a.col(1) = 2.0 * t;
    a.col(2) = t.array().square().matrix();
    Eigen::VectorXd b = 3.0 * t;
    auto res = stlsq(a, b, 0.0);
    EXPECT_TRUE(res.ill_conditioned);
    EXPECT_TRUE(res.coefficients.allFinite());
    EXPECT_NEAR((a * res.coefficients - b).norm(), 0.0, 1e-9);
}

TEST(Stlsq, AgreesWithExhaustiveSubsetOracle) {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g;
    std::uniform_int_distribution<int> kdist(2, 6);
    int agree = 0;
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
            EXPECT_LT((res.coefficients - oracle.coef).cwiseAbs().maxCoeff(), 1e-6);
        }
    }
    EXPECT_GE(agree, 95);
}

TEST(Stlsq, ActiveSetNeverGrowsAcrossSweeps) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd a(80, 6);
        for (Eigen::Index i = 0; i < a.size(); ++i)
            a.data()[i] = g(rng);
        Eigen::VectorXd b(80);
        for (Eigen::Index i = 0; i < b.size(); ++i)
            b[i] = g(rng);
        std::size_t prev = 7;
        for (int sweeps = 1; sweeps <= 6; ++sweeps) {
            auto res = stlsq(a, b, 0.15, sweeps);
            auto prev_res = sweeps > 1 ? stlsq(a, b, 0.15, sweeps - 1) : res;
            for (std::size_t c = 0; c < 6; ++c)
                if (res.active[c])
                    EXPECT_TRUE(prev_res.active[c]);
            EXPECT_LE(res.support_size(), prev);
            prev = res.support_size();
        }
    }
}

TEST(Stlsq, NoiselessExactSupportRecovery) {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g;
        Eigen::MatrixXd a(120, 5);
        for (Eigen::Index i = 0; i < a.size(); ++i)
            a.data()[i] = g(rng);
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(5);
        std::vector<bool> truth(5, false);
        for (int c = 0; c < 5; ++c)
            if (rng() % 2) {
                theta[c] = (rng() % 2 ? 1.0 : -1.0) * (0.2 + std::abs(g(rng)));
                truth[static_cast<std::size_t>(c)] = true;
            }
        auto res = stlsq(a, a * theta, 0.1);
        EXPECT_EQ(res.active, truth) << "seed " << seed;
    }
}

TEST(Metrics, RSquaredExamples) {
    Eigen::VectorXd a(4);
    a << 1, 2, 4, 7;
    EXPECT_DOUBLE_EQ(r_squared(a, a), 1.0);
    EXPECT_NEAR(r_squared(Eigen::VectorXd::Constant(4, a.mean()), a), 0.0, 1e-15);
    EXPECT_LT(r_squared(Eigen::VectorXd::Constant(4, 40.0), a), -20.0);
    EXPECT_THROW(r_squared(a, Eigen::VectorXd::Ones(4)), DegenerateData);
}

TEST(Metrics, NrmseExamples) {
    Eigen::VectorXd actual(2), pred(2);
    actual << 0, 1;
    pred << 0.5, 0.5;
    EXPECT_DOUBLE_EQ(nrmse(actual, actual), 0.0);
    EXPECT_DOUBLE_EQ(nrmse(pred, actual), 0.5);
    pred[0] = std::numeric_limits<double>::quiet_NaN();
    EXPECT_EQ(nrmse(pred, actual), std::numeric_limits<double>::infinity());
    EXPECT_THROW(nrmse(actual, Eigen::VectorXd::Ones(2)), DegenerateData);
}

TEST(Metrics, NrmseShiftAndScaleBehaviour) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::VectorXd a(30), err(30);
        for (int j = 0; j < 30; ++j) {
            a[j] = g(rng);
            err[j] = 0.1 * g(rng);
        }
        double base = nrmse(a + err, a);
        double c = 5.0 * g(rng);
        Eigen::VectorXd shifted = a.array() + c;
        EXPECT_NEAR(nrmse(shifted + err, shifted), base, 1e-12);
        double s = 3.7;
        EXPECT_NEAR(nrmse(s * a + err, s * a), base / s, 1e-12);
    }
}

TEST(FitModel, HarmonicTemplateRecoversCoefficients) {
    auto tr = simulate_truth(
        [](double, std::span<const double> x, std::span<const double>, std::span<double> dx) {
            dx[0] = x[1];
            dx[1] = -2.1 * x[0];
        },
        Eigen::Vector2d(0.4, -0.3), 10.0, 1001);
    EquationTemplate tpl{{{Expr::state(1)}, {Expr::state(0)}}};
    auto m = fit_model(tpl, tr, 0.05);
    EXPECT_NEAR(m.coefficients[0][0], 1.0, 0.01);
    EXPECT_NEAR(m.coefficients[1][0], -2.1, 0.021);
    EXPECT_GT(m.diagnostics[0].train_r2, 0.9999);
}

TEST(FitModel, SirTypeTemplateRecoversCoefficients) {
    auto tr = simulate_truth(
        [](double, std::span<const double> x, std::span<const double>, std::span<double> dx) {
            dx[0] = -0.4 * x[0] * x[1];
            dx[1] = 0.4 * x[0] * x[1] - 0.314 * x[1];
        },
        Eigen::Vector2d(2.0, 0.1), 20.0, 1001);
    Expr xy = Expr::state(0) * Expr::state(1);
    EquationTemplate tpl{{{xy}, {xy, Expr::state(1)}}};
    auto m = fit_model(tpl, tr, 0.05);
    EXPECT_NEAR(m.coefficients[0][0], -0.4, 0.004);
    EXPECT_NEAR(m.coefficients[1][0], 0.4, 0.004);
    EXPECT_NEAR(m.coefficients[1][1], -0.314, 0.00314);
}

TEST(FitModel, ExactTemplateDataRecoversWithinOnePercent) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> c(0.3, 1.5);
    for (int trial = 0; trial < 10; ++trial) {
        double a = c(rng), b = c(rng), k = c(rng);
        auto tr = simulate_truth(
            [=](double, std::span<const double> x, std::span<const double>, std::span<double> dx) {
                dx[0] = -a * x[0] + b * x[1];
                dx[1] = -k * x[0] - 0.5 * x[1] * x[1] * x[1];
            },
            Eigen::Vector2d(1.0, -0.5), 8.0, 2001);
        EquationTemplate tpl{{{Expr::state(0), Expr::state(1)}, {Expr::state(0), pow(Expr::state(1), 3)}}};
        auto m = fit_model(tpl, tr, 0.05);
        EXPECT_NEAR(m.coefficients[0][0], -a, 1e-2 * a);
        EXPECT_NEAR(m.coefficients[0][1], b, 1e-2 * b);
        EXPECT_NEAR(m.coefficients[1][0], -k, 1e-2 * k);
        EXPECT_NEAR(m.coefficients[1][1], -0.5, 5e-3);
    }
}

TEST(FitModel, ConstantTrajectoryGivesAllZeroModel) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(50, 0, 1);
    auto tr = make_traj(t, Eigen::MatrixXd::Constant(50, 2, 1.5));
    EquationTemplate tpl{{{Expr::state(0), Expr::state(1)}, {Expr::constant(1.0)}}};
    auto m = fit_model(tpl, tr, 0.05);
    for (const auto& c : m.coefficients)
        EXPECT_TRUE(c.isZero());
    EXPECT_TRUE(m.diagnostics[0].empty_active_set);
    EXPECT_TRUE(std::isnan(m.diagnostics[0].train_r2));
    EXPECT_EQ(m.equation_strings()[0], "dx0/dt = 0");
}

TEST(FitModel, DimensionMismatchIsRejected) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(20, 0, 1);
    auto tr = make_traj(t, Eigen::MatrixXd::Random(20, 2));
    EXPECT_THROW(fit_model(EquationTemplate{{{Expr::state(0)}}}, tr, 0.05), DimensionMismatch);
}

TEST(TrajectoryIo, CsvRoundTripIsBitExact) {
    Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(25, 0, 1.0 / 3.0);
    Trajectory tr = make_traj(t, Eigen::MatrixXd::Random(25, 2));
    tr.inputs = Eigen::MatrixXd::Random(25, 1);
    tr.state_names = {"x", "y"};
    tr.state_units = {"m", "m/s"};
    tr.input_names = {"u"};
    auto dir = std::filesystem::temp_directory_path() / "eqloop_regress_io";
    std::filesystem::create_directories(dir);
    save_trajectory(tr, dir / "a.csv");
    Trajectory back = load_trajectory(dir / "a.csv");
    EXPECT_EQ(back.times, tr.times);
    EXPECT_EQ(back.states, tr.states);
    EXPECT_EQ(back.inputs, tr.inputs);
    EXPECT_EQ(back.split, tr.split);
    EXPECT_EQ(back.state_names, tr.state_names);
    EXPECT_EQ(back.state_units, tr.state_units);
    std::filesystem::remove_all(dir);
}

TEST(TrajectoryIo, InvariantsAreEnforced) {
    Trajectory tr;
    tr.times = Eigen::VectorXd::LinSpaced(5, 0, 1);
    tr.states = Eigen::MatrixXd::Zero(5, 1);
    tr.split = 2;
    EXPECT_THROW(tr.validate(), InvalidTrajectory);
    tr.times = Eigen::VectorXd::LinSpaced(12, 0, 1);
    tr.states = Eigen::MatrixXd::Zero(12, 1);
    tr.split = 12;
    EXPECT_THROW(tr.validate(), InvalidTrajectory);
    tr.split = 6;
    tr.times[3] = tr.times[2];
    EXPECT_THROW(tr.validate(), InvalidTrajectory);
}
