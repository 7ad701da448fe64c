#include "dhnn/integrators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dhnn/errors.hpp"

namespace dhnn {

namespace {

using State = std::array<double, 2>;

// Dormand-Prince 5(4) tableau
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                 a75 = -2187.0 / 6784, a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
// dense-output coefficients
constexpr double d1 = -12715105075.0 / 11282082432.0;
constexpr double d3 = 87487479700.0 / 32700410799.0;
constexpr double d4 = -10690763975.0 / 1880347072.0;
constexpr double d5 = 701980252875.0 / 199316789632.0;
constexpr double d6 = -1453857185.0 / 822651844.0;
constexpr double d7 = 69997945.0 / 29380423.0;

constexpr double kSafety = 0.9;
constexpr double kMinScale = 0.2;   // h never shrinks by more than 5x
constexpr double kMaxScale = 10.0;  // h never grows by more than 10x
constexpr double kBeta = 0.04;
constexpr std::int64_t kMaxSteps = 2000000;

State eval(const FieldFn& f, double t, const State& y) {
    std::array<double, 2> d = f(t, y[0], y[1]);
    if (!std::isfinite(d[0]) || !std::isfinite(d[1])) {
        throw NumericalError("field returned a non-finite value at t=" + std::to_string(t));
    }
    return {d[0], d[1]};
}

struct DenseSegment {
    double t0 = 0, h = 0;
    State c1{}, c2v{}, c3v{}, c4v{}, c5v{};

    State at(double t) const {
        double th = (t - t0) / h;
        double th1 = 1.0 - th;
        State out{};
        for (int i = 0; i < 2; ++i) {
            out[i] = c1[i] + th * (c2v[i] + th1 * (c3v[i] + th * (c4v[i] + th1 * c5v[i])));
        }
        return out;
    }
};

DenseSegment make_dense(double t0, double h, const State& y0, const State& y1,
                        const State& k1, const State& k3, const State& k4, const State& k5,
                        const State& k6, const State& k7) {
    DenseSegment s;
    s.t0 = t0;
    s.h = h;
    for (int i = 0; i < 2; ++i) {
        double dy = y1[i] - y0[i];
        s.c1[i] = y0[i];
        s.c2v[i] = dy;
        s.c3v[i] = h * k1[i] - dy;
        s.c4v[i] = dy - h * k7[i] - s.c3v[i];
        s.c5v[i] = h * (d1 * k1[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] +
                        d7 * k7[i]);
    }
    return s;
}

double initial_step(const FieldFn& f, double t0, const State& y0, const State& k1,
                    double atol, double rtol, double hmax) {
    double dnf = 0, dny = 0;
    for (int i = 0; i < 2; ++i) {
        double sk = atol + rtol * std::fabs(y0[i]);
        dnf += (k1[i] / sk) * (k1[i] / sk);
        dny += (y0[i] / sk) * (y0[i] / sk);
    }
    double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : std::sqrt(dny / dnf) * 0.01;
    h = std::min(h, hmax);
    State y1;
    for (int i = 0; i < 2; ++i) y1[i] = y0[i] + h * k1[i];
    State k2 = eval(f, t0 + h, y1);
    double der2 = 0;
    for (int i = 0; i < 2; ++i) {
        double sk = atol + rtol * std::fabs(y0[i]);
        double diff = (k2[i] - k1[i]) / sk;
        der2 += diff * diff;
    }
    der2 = std::sqrt(der2) / h;
    double der12 = std::max(std::fabs(der2), std::sqrt(dnf));
    double h1 = (der12 <= 1e-15) ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der12, 0.2);
    return std::min({100.0 * h, h1, hmax});
}

}  // namespace

Trajectory integrate(const FieldFn& field, const TrajectorySpec& spec) {
    if (!(spec.t1 > spec.t0)) throw UsageError("integrate: t1 must exceed t0");
    if (!(spec.rel_tol > 0) || !(spec.abs_tol > 0)) {
        throw UsageError("integrate: tolerances must be positive");
    }
    for (std::size_t i = 0; i < spec.eval_times.size(); ++i) {
        double et = spec.eval_times[i];
        if (et < spec.t0 || et > spec.t1 || (i > 0 && et < spec.eval_times[i - 1])) {
            throw UsageError("integrate: eval_times must be sorted within [t0, t1]");
        }
    }

    Trajectory traj;
    traj.times.reserve(spec.eval_times.size());
    traj.states.reserve(spec.eval_times.size());

    double t = spec.t0;
    State y{spec.initial.q, spec.initial.p};
    std::size_t next_eval = 0;
    while (next_eval < spec.eval_times.size() && spec.eval_times[next_eval] <= t) {
        traj.times.push_back(spec.eval_times[next_eval]);
        traj.states.push_back(y);
        ++next_eval;
    }

    const double atol = spec.abs_tol, rtol = spec.rel_tol;
    const double hmax = spec.t1 - spec.t0;
    const double expo1 = 0.2 - kBeta * 0.75;

    State k1 = eval(field, t, y);
    double h = spec.fixed_step ? std::min(*spec.fixed_step, hmax)
                               : initial_step(field, t, y, k1, atol, rtol, hmax);
    double facold = 1e-4;
    bool reject = false;
    std::int64_t nstep = 0;

    while (t < spec.t1) {
        if (++nstep > kMaxSteps) {
            throw NumericalError("integrate: step limit exceeded at t=" + std::to_string(t));
        }
        if (h < 1e-14 * std::max(1.0, std::fabs(t))) {
            throw NumericalError("integrate: step size underflow at t=" + std::to_string(t));
        }
        bool last = false;
        if (t + 1.01 * h - spec.t1 > 0.0) {
            h = spec.t1 - t;
            last = true;
        }

        State ys, k2, k3, k4, k5, k6, k7, y1;
        for (int i = 0; i < 2; ++i) ys[i] = y[i] + h * a21 * k1[i];
        k2 = eval(field, t + c2 * h, ys);
        for (int i = 0; i < 2; ++i) ys[i] = y[i] + h * (a31 * k1[i] + a32 * k2[i]);
        k3 = eval(field, t + c3 * h, ys);
        for (int i = 0; i < 2; ++i) ys[i] = y[i] + h * (a41 * k1[i] + a42 * k2[i] + a43 * k3[i]);
        k4 = eval(field, t + c4 * h, ys);
        for (int i = 0; i < 2; ++i) {
            ys[i] = y[i] + h * (a51 * k1[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
        }
        k5 = eval(field, t + c5 * h, ys);
        for (int i = 0; i < 2; ++i) {
            ys[i] = y[i] + h * (a61 * k1[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] +
                                a65 * k5[i]);
        }
        k6 = eval(field, t + h, ys);
        for (int i = 0; i < 2; ++i) {
            y1[i] = y[i] + h * (a71 * k1[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] +
                                a76 * k6[i]);
        }
        k7 = eval(field, t + h, y1);

        double err = 0;
        for (int i = 0; i < 2; ++i) {
            double sk = atol + rtol * std::max(std::fabs(y[i]), std::fabs(y1[i]));
            double e = h * (e1 * k1[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] +
                            e7 * k7[i]);
            err += (e / sk) * (e / sk);
        }
        err = std::sqrt(err / 2.0);

        if (spec.fixed_step || err <= 1.0) {
            // accepted
            ++traj.accepted;
            DenseSegment seg = make_dense(t, h, y, y1, k1, k3, k4, k5, k6, k7);
            double tnew = t + h;
            while (next_eval < spec.eval_times.size() && spec.eval_times[next_eval] <= tnew) {
                double et = spec.eval_times[next_eval];
                traj.times.push_back(et);
                traj.states.push_back(et == tnew ? y1 : seg.at(et));
                ++next_eval;
            }
            t = tnew;
            y = y1;
            k1 = k7;  // FSAL

            if (spec.fixed_step) {
                h = std::min(*spec.fixed_step, spec.t1 - t > 0 ? spec.t1 - t : *spec.fixed_step);
                if (last) break;
                continue;
            }
            double fac11 = std::pow(err, expo1);
            double fac = fac11 / std::pow(facold, kBeta);
            fac = std::max(1.0 / kMaxScale, std::min(1.0 / kMinScale, fac / kSafety));
            double hnew = h / fac;
            facold = std::max(err, 1e-4);
            if (hnew > hmax) hnew = hmax;
            if (reject) hnew = std::min(hnew, h);
            reject = false;
            if (last) break;
            h = hnew;
        } else {
            ++traj.rejected;
            double fac11 = std::pow(err, expo1);
            h = h / std::min(1.0 / kMinScale, fac11 / kSafety);
            reject = true;
        }
    }
    return traj;
}

std::vector<double> energy_along(const Trajectory& traj,
                                 const std::function<double(double, double)>& hamiltonian) {
    std::vector<double> e;
    e.reserve(traj.states.size());
    for (const auto& s : traj.states) e.push_back(hamiltonian(s[0], s[1]));
    return e;
}

std::vector<double> linspace(double t0, double t1, std::size_t n) {
    std::vector<double> v(n);
    if (n == 1) {
        v[0] = t0;
        return v;
    }
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    if (n > 1) v[n - 1] = t1;
    return v;
}

}  // namespace dhnn
