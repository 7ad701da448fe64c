#include "dhnn/dynamics.hpp"

#include <array>

#include "dhnn/errors.hpp"

namespace dhnn {

namespace {

thread_local ad::Tape g_eval_tape;

ad::VecVar make_input(ad::Tape& tape, PhasePoint x, std::int32_t input_dim) {
    if (input_dim == 3) {
        const std::array<double, 3> v{x.q, x.p, x.t};
        return tape.input_vec(v);
    }
    const std::array<double, 2> v{x.q, x.p};
    return tape.input_vec(v);
}

}  // namespace

FieldValue eval_potential_field(ad::Tape& tape, const PotentialFn& hamiltonian,
                                const PotentialFn* dissipation, PhasePoint x,
                                double dissipation_scale, std::int32_t input_dim) {
    ad::VecVar in = make_input(tape, x, input_dim);
    const std::array<ad::Var, 2> coords{in[0], in[1]};

    ad::Var h = hamiltonian(tape, in);
    std::vector<ad::Var> gh = tape.gradient_as_nodes(h, coords);
    FieldPair cons{gh[1].value(), -gh[0].value()};

    FieldPair diss{0.0, 0.0};
    if (dissipation != nullptr) {
        ad::Var d = (*dissipation)(tape, in);
        std::vector<ad::Var> gd = tape.gradient_as_nodes(d, coords);
        diss.dq_dt = dissipation_scale * gd[0].value();
        diss.dp_dt = dissipation_scale * gd[1].value();
    }

    FieldValue out;
    out.conservative = cons;
    out.dissipative = diss;
    out.dq_dt = cons.dq_dt + diss.dq_dt;
    out.dp_dt = cons.dp_dt + diss.dp_dt;
    return out;
}

FieldValue eval_field(const Model& m, PhasePoint x, double dissipation_scale) {
    ad::Tape& tape = g_eval_tape;
    tape.reset();

    if (m.kind == ModelType::baseline) {
        ad::VecVar in = make_input(tape, x, m.input_dim);
        ad::VecVar y = direct_value(tape, m.direct, in);
        FieldValue out;
        out.dq_dt = y[0].value();
        out.dp_dt = y[1].value();
        return out;  // no conservative/dissipative split for a direct map
    }

    PotentialFn h = [&m](ad::Tape& t, ad::VecVar in) {
        return potential_value(t, m.hamiltonian, in);
    };
    if (m.kind == ModelType::hnn) {
        return eval_potential_field(tape, h, nullptr, x, dissipation_scale, m.input_dim);
    }
    PotentialFn d = [&m](ad::Tape& t, ad::VecVar in) {
        return potential_value(t, m.dissipation, in);
    };
    return eval_potential_field(tape, h, &d, x, dissipation_scale, m.input_dim);
}

ad::Var loss(ad::Tape& tape, const Model& m, std::span<const PhaseSample> batch,
             ModelGrads* grads) {
    if (batch.empty()) throw DataError("loss: empty batch");

    ad::Var total{};
    bool first = true;
    for (const PhaseSample& s : batch) {
        ad::VecVar in = make_input(tape, PhasePoint{s.q, s.p, s.t}, m.input_dim);
        ad::Var pred_dq{}, pred_dp{};
        switch (m.kind) {
            case ModelType::baseline: {
                ad::VecVar y = direct_value(tape, m.direct, in, grads ? &grads->direct : nullptr);
                pred_dq = y[0];
                pred_dp = y[1];
                break;
            }
            case ModelType::hnn: {
                ad::Var h = potential_value(tape, m.hamiltonian, in,
                                            grads ? &grads->hamiltonian : nullptr);
                const std::array<ad::Var, 2> coords{in[0], in[1]};
                std::vector<ad::Var> gh = tape.gradient_as_nodes(h, coords);
                pred_dq = gh[1];
                pred_dp = tape.neg(gh[0]);
                break;
            }
            case ModelType::dhnn: {
                ad::Var h = potential_value(tape, m.hamiltonian, in,
                                            grads ? &grads->hamiltonian : nullptr);
                ad::Var d = potential_value(tape, m.dissipation, in,
                                            grads ? &grads->dissipation : nullptr);
                const std::array<ad::Var, 2> coords{in[0], in[1]};
                std::vector<ad::Var> gh = tape.gradient_as_nodes(h, coords);
                std::vector<ad::Var> gd = tape.gradient_as_nodes(d, coords);
                pred_dq = tape.add(gh[1], gd[0]);
                pred_dp = tape.add(tape.neg(gh[0]), gd[1]);
                break;
            }
        }
        ad::Var eq = tape.sub(pred_dq, tape.constant(s.dq_dt));
        ad::Var ep = tape.sub(pred_dp, tape.constant(s.dp_dt));
        ad::Var l = tape.add(tape.square(eq), tape.square(ep));
        total = first ? l : tape.add(total, l);
        first = false;
    }
    return tape.scale(total, 1.0 / static_cast<double>(batch.size()));
}

FieldFn counterfactual_field(const Model& m, double scale) {
    if (m.kind == ModelType::baseline) {
        throw UsageError("counterfactual scaling needs a model with a dissipative split");
    }
    return [&m, scale](double t, double q, double p) -> std::array<double, 2> {
        FieldValue f = eval_field(m, PhasePoint{q, p, t}, scale);
        return {f.dq_dt, f.dp_dt};
    };
}

FieldFn model_field(const Model& m, double dissipation_scale) {
    return [&m, dissipation_scale](double t, double q, double p) -> std::array<double, 2> {
        FieldValue f = eval_field(m, PhasePoint{q, p, t}, dissipation_scale);
        return {f.dq_dt, f.dp_dt};
    };
}

PotentialValues potential_values(const Model& m, PhasePoint x) {
    if (m.kind == ModelType::baseline) {
        throw UsageError("baseline model has no potential scalars");
    }
    ad::Tape& tape = g_eval_tape;
    tape.reset();
    ad::VecVar in = make_input(tape, x, m.input_dim);
    PotentialValues out;
    out.hamiltonian = potential_value(tape, m.hamiltonian, in).value();
    if (m.kind == ModelType::dhnn) {
        out.dissipation = potential_value(tape, m.dissipation, in).value();
    }
    return out;
}

}  // namespace dhnn
