// Minimal end-to-end use of the library: simulate a damped oscillator, fit
// the seed structure, and let the mutation proposer refine it.

#include <iostream>

#include "eqloop/benchkit.hpp"
#include "eqloop/looprun.hpp"
#include "eqloop/propose.hpp"

int main() {
    using namespace eqloop;
    auto spec = spec_from_json(nlohmann::json{
        {"name", "damped_oscillator"},
        {"dim", 2},
        {"equations", {"x1", "-2*x0 - 0.3*x1"}},
        {"x0", {1.0, 0.0}},
        {"t_span", {0.0, 12.0}},
        {"n_samples", 1201},
    });
    Trajectory traj = generate_trajectory(spec, 0.7);

    LoopConfig cfg;
    cfg.max_iterations = 3;
    MutationProposer proposer(7);
    RefinementResult run = refine(traj, proposer, cfg);

    for (const auto& line : run.best.equation_strings())
        std::cout << line << "\n";
    std::cout << "max test NRMSE: " << run.best_score.max_nrmse << "  (" << to_string(run.stop) << ")\n";
    return 0;
}
