#pragma once

#include <array>
#include <functional>

namespace dhnn {

// Canonical coordinates plus the auxiliary time input (0 for autonomous tasks).
struct PhasePoint {
    double q = 0.0;
    double p = 0.0;
    double t = 0.0;
};

// One training record: state, network time input, target time derivatives.
// `stamp` keeps the source timestamp for trajectory-style datasets; it never
// enters the network.
struct PhaseSample {
    double q = 0.0;
    double p = 0.0;
    double t = 0.0;
    double dq_dt = 0.0;
    double dp_dt = 0.0;
    double stamp = 0.0;
};

using FieldFn = std::function<std::array<double, 2>(double t, double q, double p)>;

}  // namespace dhnn
