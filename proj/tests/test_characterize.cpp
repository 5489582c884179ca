#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "eqloop/characterize.hpp"
#include "eqloop/dictionary.hpp"

using namespace eqloop;

namespace {

Eigen::VectorXd grid(double t0, double t1, Eigen::Index n) { return Eigen::VectorXd::LinSpaced(n, t0, t1); }

StateSummary oscillating() {
    StateSummary s;
    s.oscillatory = true;
    s.period = 1.0;
    return s;
}

StateSummary decaying() {
    StateSummary s;
    s.monotonic = true;
    return s;
}

StateSummary saturating() {
    StateSummary s;
    s.monotonic = true;
    s.saturating = true;
    return s;
}

// Independent reading of the penalty rule, written per feature and family.
double penalty_oracle(const EquationTemplate& tpl, const PriorSpec& p) {
    double total = 0.0;
    for (std::size_t i = 0; i < tpl.dim(); ++i) {
        std::set<Family> used;
        for (const auto& f : tpl.equations[i]) {
            auto fams = feature_families(f);
            used.insert(fams.begin(), fams.end());
            if (std::any_of(fams.begin(), fams.end(),
                            [&](Family x) { return p.at(i, x) == Preference::Discouraged; }))
                total += 0.5;
        }
        total += 0.25 * std::max<int>(0, static_cast<int>(used.size()) - 2);
    }
    return total;
}

} // namespace

TEST(Summary, SineIsOscillatoryWithItsPeriod) {
    auto t = grid(0, 4 * std::numbers::pi, 400);
    Eigen::VectorXd x = t.array().sin().matrix();
    auto s = summarize_state(x, t);
    EXPECT_TRUE(s.oscillatory);
    EXPECT_FALSE(s.monotonic);
    EXPECT_FALSE(s.saturating);
    ASSERT_TRUE(s.period);
    EXPECT_NEAR(*s.period, 2 * std::numbers::pi, 0.02 * 2 * std::numbers::pi);
}

TEST(Summary, LogisticIsMonotoneAndSaturating) {
    auto t = grid(-6, 6, 300);
    Eigen::VectorXd x = (1.0 / (1.0 + (-t.array()).exp())).matrix();
    auto s = summarize_state(x, t);
    EXPECT_TRUE(s.monotonic);
    EXPECT_TRUE(s.saturating);
    EXPECT_FALSE(s.oscillatory);
    EXPECT_TRUE(s.sign_definite);
    EXPECT_FALSE(s.period);
}

TEST(Summary, ConstantSeriesIsDegenerate) {
    auto t = grid(0, 1, 50);
    auto s = summarize_state(Eigen::VectorXd::Constant(50, 3.0), t);
    EXPECT_TRUE(s.degenerate);
    EXPECT_FALSE(s.monotonic || s.oscillatory || s.saturating || s.sign_definite);
    EXPECT_EQ(s.stddev, 0.0);
    EXPECT_LE(s.min, s.max);
}

TEST(Summary, FlagsSurviveAffineRescaling) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.2, 5.0);
    auto t = grid(0, 30, 600);
    for (int trial = 0; trial < 20; ++trial) {
        double w = u(rng), decay = 0.05 * u(rng);
        Eigen::VectorXd x = ((-decay * t.array()).exp() * (w * t.array()).sin()).matrix();
        auto a = summarize_state(x, t);
        double scale = u(rng) * (trial % 2 ? -1.0 : 1.0), shift = 10.0 * u(rng);
        Eigen::VectorXd y = (scale * x.array() + shift).matrix();
        auto b = summarize_state(y, t);
        EXPECT_EQ(a.monotonic, b.monotonic);
        EXPECT_EQ(a.oscillatory, b.oscillatory);
        ASSERT_EQ(a.period.has_value(), b.period.has_value());
        if (a.period)
            EXPECT_NEAR(*a.period, *b.period, 1e-9 * *a.period);
        EXPECT_LE(b.min, b.max);
    }
}

TEST(Summary, TooShortSeriesIsRejected) {
    EXPECT_THROW(summarize_state(Eigen::VectorXd::Zero(5), grid(0, 1, 5)), DimensionMismatch);
}

TEST(Priors, RuleTable) {
    auto p = derive_priors(DataSummary{{oscillating(), decaying()}});
    EXPECT_EQ(p.at(0, Family::Polynomial), Preference::Preferred);
    EXPECT_EQ(p.at(0, Family::Trig), Preference::Optional);
    EXPECT_EQ(p.at(1, Family::Trig), Preference::Discouraged);
    EXPECT_EQ(p.at(0, Family::BilinearCross), Preference::Optional);
    EXPECT_EQ(p.at(1, Family::RationalSurrogate), Preference::Optional);

    auto sat = derive_priors(DataSummary{{saturating()}});
    EXPECT_EQ(sat.at(0, Family::Exponential), Preference::Preferred);
    EXPECT_EQ(sat.at(0, Family::Trig), Preference::Discouraged);
    EXPECT_EQ(sat.at(0, Family::BilinearCross), Preference::Discouraged);

    for (const auto& m : p.per_state)
        EXPECT_EQ(m.size(), kAllFamilies.size());
}

TEST(Penalty, Examples) {
    auto p = derive_priors(DataSummary{{decaying()}});
    EquationTemplate poly{{{Expr::state(0), pow(Expr::state(0), 2), Expr::constant(1.0)}}};
    EXPECT_EQ(prior_penalty(poly, p), 0.0);

    EquationTemplate one_sin{{{Expr::unary(Op::Sin, Expr::state(0))}}};
    EXPECT_EQ(prior_penalty(one_sin, p), 0.5);

    auto osc = derive_priors(DataSummary{{oscillating()}});
    EquationTemplate three{{{Expr::state(0), Expr::unary(Op::Sin, Expr::state(0)),
                             Expr::unary(Op::Exp, Expr::constant(-0.5) * Expr::state(0))}}};
    EXPECT_EQ(prior_penalty(three, osc), 0.25);
    EXPECT_EQ(penalty_oracle(three, osc), 0.25);
}

TEST(Penalty, FamiliesReadFromNodeKinds) {
    EXPECT_EQ(feature_families(Expr::state(0)), std::set<Family>{Family::Polynomial});
    EXPECT_EQ(feature_families(Expr::state(0) * Expr::state(1)), std::set<Family>{Family::BilinearCross});
    EXPECT_EQ(feature_families(pow(Expr::state(0), 2) * Expr::state(1)), std::set<Family>{Family::BilinearCross});
    EXPECT_EQ(feature_families(Expr::state(0) / (Expr::constant(1.0) + pow(Expr::state(0), 2))),
              std::set<Family>{Family::RationalSurrogate});
    EXPECT_EQ(feature_families(Expr::unary(Op::Log, Expr::state(0))), std::set<Family>{Family::Exponential});
}

TEST(Penalty, MatchesOracleAndIsMonotoneUnderAddingFeatures) {
    std::mt19937_64 rng(8);
    auto pools = family_pools(2, 0);
    std::vector<Expr> all;
    for (const auto& [fam, pool] : pools)
        all.insert(all.end(), pool.begin(), pool.end());
    const StateSummary kinds[] = {oscillating(), decaying(), saturating()};
    for (int trial = 0; trial < 200; ++trial) {
        auto priors = derive_priors(DataSummary{{kinds[rng() % 3], kinds[rng() % 3]}});
        EquationTemplate tpl{{{all[rng() % all.size()]}, {all[rng() % all.size()]}}};
        double before = prior_penalty(tpl, priors);
        EXPECT_DOUBLE_EQ(before, penalty_oracle(tpl, priors));
        tpl.equations[rng() % 2].push_back(all[rng() % all.size()]);
        double after = prior_penalty(tpl, priors);
        EXPECT_GE(after, before);
        EXPECT_DOUBLE_EQ(after, penalty_oracle(tpl, priors));
    }
}

TEST(Penalty, ZeroWhenNothingIsDiscouragedAndAtMostTwoFamilies) {
    auto priors = derive_priors(DataSummary{{oscillating(), oscillating()}});
    EquationTemplate tpl{{{Expr::state(1), Expr::unary(Op::Cos, Expr::state(0))},
                          {Expr::state(0) * Expr::state(1), Expr::state(0)}}};
    EXPECT_EQ(prior_penalty(tpl, priors), 0.0);
    EXPECT_THROW(prior_penalty(EquationTemplate{{{Expr::state(0)}}}, priors), DimensionMismatch);
}

TEST(Dictionary, BaselineLibraryContents) {
    auto feats = library_features(2, 0);
    // constant + 9 monomials (degree <= 3 in 2 variables) + 4 trig + 16 exp
    EXPECT_EQ(feats.size(), 1u + 9u + 4u + 16u);
    DictionaryOptions no_exp;
    no_exp.exponential = false;
    EXPECT_EQ(library_features(2, 0, no_exp).size(), 14u);
    EXPECT_EQ(library_features(1, 1, no_exp).size(), 1u + 9u + 2u);
    auto seed = seed_template(3);
    ASSERT_EQ(seed.dim(), 3u);
    for (const auto& eq : seed.equations)
        EXPECT_EQ(eq.size(), 3u);
    EXPECT_FALSE(validate_template(baseline_dictionary(2, 0), 64, 0).has_value());
}
