#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "dhnn/phase.hpp"

namespace dhnn {

struct TrajectorySpec {
    PhasePoint initial{0.9, 0.0, 0.0};
    double t0 = 0.0;
    double t1 = 0.0;
    double rel_tol = 1e-12;
    double abs_tol = 1e-12;
    std::vector<double> eval_times;          // sorted, within [t0, t1]
    std::optional<double> fixed_step;        // bypasses the step controller
};

struct Trajectory {
    std::vector<double> times;
    std::vector<std::array<double, 2>> states;  // (q, p)
    std::int64_t accepted = 0;
    std::int64_t rejected = 0;
};

// Dormand-Prince 5(4) embedded pair with PI step-size control and 4th-order
// dense output at the requested eval_times.
Trajectory integrate(const FieldFn& field, const TrajectorySpec& spec);

std::vector<double> energy_along(const Trajectory& traj,
                                 const std::function<double(double q, double p)>& hamiltonian);

std::vector<double> linspace(double t0, double t1, std::size_t n);

}  // namespace dhnn
