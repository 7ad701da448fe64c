#pragma once

#include <optional>
#include <span>

#include "dhnn/autodiff.hpp"
#include "dhnn/models.hpp"
#include "dhnn/phase.hpp"

namespace dhnn {

struct FieldPair {
    double dq_dt = 0.0;
    double dp_dt = 0.0;
};

// Field evaluation at one phase point. The decomposed parts are absent for
// the direct-map baseline; when present, total = conservative + dissipative
// exactly as summed, and `dissipative` already carries the scale factor.
struct FieldValue {
    double dq_dt = 0.0;
    double dp_dt = 0.0;
    std::optional<FieldPair> conservative;
    std::optional<FieldPair> dissipative;
};

// A scalar potential expressed in tape primitives, so its input-gradient is
// available; lets tests swap analytic potentials for networks.
using PotentialFn = std::function<ad::Var(ad::Tape&, ad::VecVar)>;

// Conservative part = (dH/dp, -dH/dq); dissipative part = s * (dD/dq, dD/dp).
// Pass D = nullptr for a purely Hamiltonian field.
FieldValue eval_potential_field(ad::Tape& tape, const PotentialFn& hamiltonian,
                                const PotentialFn* dissipation, PhasePoint x,
                                double dissipation_scale, std::int32_t input_dim);

FieldValue eval_field(const Model& m, PhasePoint x, double dissipation_scale = 1.0);

// Mean over the batch of squared prediction error summed over the two
// coordinate derivatives. Differentiable w.r.t. all model parameters when
// gradient buffers are bound.
ad::Var loss(ad::Tape& tape, const Model& m, std::span<const PhaseSample> batch,
             ModelGrads* grads = nullptr);

// Field with the dissipative component multiplied by `scale`, ready for
// integration. scale=0 removes dissipation entirely.
FieldFn counterfactual_field(const Model& m, double scale);

// Total field of any model kind (scale applies where a decomposition exists).
FieldFn model_field(const Model& m, double dissipation_scale = 1.0);

// Scalar potential values at a point (H always; D present for dhnn only).
struct PotentialValues {
    double hamiltonian = 0.0;
    std::optional<double> dissipation;
};
PotentialValues potential_values(const Model& m, PhasePoint x);

}  // namespace dhnn
