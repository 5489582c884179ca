#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eqloop/equation_template.hpp"
#include "eqloop/errors.hpp"
#include "eqloop/families.hpp"
#include "eqloop/trajectory.hpp"

namespace eqloop {

/// Empirical summary of one state over the training segment.
struct StateSummary {
    double min = 0.0;
    double max = 0.0;
    double stddev = 0.0;
    bool monotonic = false;
    bool oscillatory = false;
    std::optional<double> period;
    bool saturating = false;
    bool sign_definite = false;
    bool degenerate = false; // constant series
    int zero_crossings = 0;
};

struct DataSummary {
    std::vector<StateSummary> states;
};

inline constexpr int kOscillationLobes = 4;

/// Heuristic behaviour flags for a single series.
///
/// - monotonic: successive differences never change sign (steps below
///   1e-9 * range are ignored)
/// - oscillatory: the mean-centred series splits into >= 4 sign lobes, i.e.
///   at least three zero crossings
/// - period: mean spacing of consecutive same-direction crossings
/// - saturating: last-decile range < 5% of total range and not oscillatory
inline StateSummary summarize_state(const Eigen::Ref<const Eigen::VectorXd>& series,
                                    const Eigen::Ref<const Eigen::VectorXd>& times) {
    const Eigen::Index n = series.size();
    if (n < 10 || times.size() != n)
        throw DimensionMismatch("summarize_state needs >= 10 samples with matching times");
    if (!series.allFinite())
        throw InvalidTrajectory("summarize_state: non-finite samples");

    StateSummary s;
    s.min = series.minCoeff();
    s.max = series.maxCoeff();
    const double range = s.max - s.min;
    const double mean = series.mean();
    if (!(range > 1e-12 * std::max(1.0, std::abs(mean)))) {
        s.degenerate = true; // constant: every flag stays false
        return s;
    }
    s.stddev = std::sqrt((series.array() - mean).square().sum() / static_cast<double>(n));
    s.sign_definite = s.min > 0.0 || s.max < 0.0;

    const double tol = 1e-9 * range;
    int dir = 0;
    s.monotonic = true;
    for (Eigen::Index j = 1; j < n; ++j) {
        double d = series[j] - series[j - 1];
        if (std::abs(d) <= tol)
            continue;
        int sgn = d > 0 ? 1 : -1;
        if (dir == 0)
            dir = sgn;
        else if (sgn != dir) {
            s.monotonic = false;
            break;
        }
    }

    // zero crossings of the mean-centred series, linear interpolation in time
    std::vector<double> up, down;
    int prev_sign = 0;
    double prev_t = 0.0, prev_v = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        double v = series[j] - mean;
        if (std::abs(v) <= tol)
            continue;
        int sgn = v > 0 ? 1 : -1;
        if (prev_sign != 0 && sgn != prev_sign) {
            double tc = prev_t + (times[j] - prev_t) * (prev_v / (prev_v - v));
            (sgn > 0 ? up : down).push_back(tc);
        }
        prev_sign = sgn;
        prev_t = times[j];
        prev_v = v;
    }
    s.zero_crossings = static_cast<int>(up.size() + down.size());
    s.oscillatory = s.zero_crossings + 1 >= kOscillationLobes;
    if (s.oscillatory) {
        double total = 0.0;
        int count = 0;
        for (const auto* xs : {&up, &down})
            for (std::size_t k = 1; k < xs->size(); ++k) {
                total += (*xs)[k] - (*xs)[k - 1];
                ++count;
            }
        if (count > 0 && total > 0.0)
            s.period = total / count;
    }

    const Eigen::Index tail = std::max<Eigen::Index>(2, n / 10);
    auto last = series.tail(tail);
    s.saturating = !s.oscillatory && (last.maxCoeff() - last.minCoeff()) < 0.05 * range;
    return s;
}

inline DataSummary summarize(const Trajectory& traj) {
    DataSummary out;
    const Eigen::Index n = traj.train_size();
    for (Eigen::Index i = 0; i < traj.dim(); ++i)
        out.states.push_back(summarize_state(traj.states.col(i).head(n), traj.times.head(n)));
    return out;
}

enum class Preference { Preferred, Optional, Discouraged };

inline std::string_view to_string(Preference p) {
    switch (p) {
    case Preference::Preferred: return "preferred";
    case Preference::Optional: return "optional";
    case Preference::Discouraged: return "discouraged";
    }
    return "unknown";
}

/// Per state derivative, one preference for each function family.
struct PriorSpec {
    std::vector<std::map<Family, Preference>> per_state;

    Preference at(std::size_t state, Family f) const { return per_state.at(state).at(f); }
};

/// Rule table:
///   polynomial      always preferred
///   trig            optional when the state oscillates, otherwise discouraged
///   exponential     preferred for monotone saturating states, otherwise optional
///   bilinear-cross  optional for multi-state systems, discouraged for d = 1
///   rational        always optional
inline PriorSpec derive_priors(const DataSummary& summary) {
    PriorSpec p;
    const bool multi = summary.states.size() > 1;
    for (const auto& s : summary.states) {
        std::map<Family, Preference> m;
        m[Family::Polynomial] = Preference::Preferred;
        m[Family::Trig] = s.oscillatory ? Preference::Optional : Preference::Discouraged;
        m[Family::Exponential] = (s.monotonic && s.saturating) ? Preference::Preferred : Preference::Optional;
        m[Family::BilinearCross] = multi ? Preference::Optional : Preference::Discouraged;
        m[Family::RationalSurrogate] = Preference::Optional;
        p.per_state.push_back(std::move(m));
    }
    return p;
}

inline constexpr double kDiscouragedFeaturePenalty = 0.5;
inline constexpr double kProliferationPenalty = 0.25;

/// Prior-consistency penalty: per equation, 0.5 for every feature touching a
/// discouraged family plus 0.25 for each distinct family beyond the second.
inline double prior_penalty(const EquationTemplate& tpl, const PriorSpec& priors) {
    if (priors.per_state.size() != tpl.dim())
        throw DimensionMismatch("prior spec and template disagree on dimension");
    double p = 0.0;
    for (std::size_t i = 0; i < tpl.dim(); ++i) {
        std::set<Family> used;
        for (const auto& f : tpl.equations[i]) {
            auto fams = feature_families(f);
            bool discouraged = false;
            for (Family fam : fams) {
                used.insert(fam);
                if (priors.at(i, fam) == Preference::Discouraged)
                    discouraged = true;
            }
            if (discouraged)
                p += kDiscouragedFeaturePenalty;
        }
        if (used.size() > 2)
            p += kProliferationPenalty * static_cast<double>(used.size() - 2);
    }
    return p;
}

} // namespace eqloop
