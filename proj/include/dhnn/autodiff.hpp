#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace dhnn::ad {

class Tape;

// A differentiable scalar: one component of a node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::int32_t node = -1;
    std::int32_t slot = 0;

    bool valid() const { return tape != nullptr && node >= 0; }
    double value() const;
};

// A differentiable dense vector (a whole node).
struct VecVar {
    Tape* tape = nullptr;
    std::int32_t node = -1;

    Var operator[](std::int32_t i) const { return Var{tape, node, i}; }
    std::int32_t size() const;
};

// Weight matrix reference for affine nodes. `grad`, when non-null, receives
// accumulation from Tape::backward; it must outlive the tape contents.
struct MatRef {
    const double* w = nullptr;  // row-major rows x cols
    std::int32_t rows = 0, cols = 0;
    double* grad = nullptr;
};

struct VecRef {
    const double* v = nullptr;
    std::int32_t n = 0;
    double* grad = nullptr;
};

// Append-only record of primitive operations. Reverse sweeps either
// accumulate plain doubles (backward) or emit new nodes so the results stay
// differentiable (gradient_as_nodes).
class Tape {
public:
    Tape();

    // leaves
    Var constant(double v);
    Var input(double v);
    VecVar constant_vec(std::span<const double> v);
    VecVar input_vec(std::span<const double> v);

    // scalar ops (operands may address components of vector nodes)
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var neg(Var a);
    Var tanh(Var a);
    Var sin(Var a);
    Var cos(Var a);
    Var square(Var a);
    Var scale(Var a, double c);

    // elementwise vector ops
    VecVar add(VecVar a, VecVar b);
    VecVar sub(VecVar a, VecVar b);
    VecVar mul(VecVar a, VecVar b);
    VecVar neg(VecVar a);
    VecVar tanh(VecVar a);
    VecVar square(VecVar a);
    VecVar scale(VecVar a, double c);

    Var sum(VecVar a);                         // reduce to scalar
    VecVar broadcast(Var a, std::int32_t n);   // scalar -> vector
    VecVar scatter(Var a, std::int32_t slot, std::int32_t n);  // one-hot embed

    // dense-layer primitives
    VecVar affine(const MatRef& w, const VecRef& b, VecVar x);  // W x + b
    VecVar matvec(const MatRef& w, VecVar x);                   // W x
    VecVar matvec_t(const MatRef& w, VecVar v);                 // W^T v
    VecVar tanh_bwd(VecVar y, VecVar u);                        // u .* (1 - y^2)

    double value(Var v) const;
    std::span<const double> values(VecVar v) const;

    // d out / d wrt_i as plain reals. Inputs with no path to `out` get 0.
    std::vector<double> gradient(Var out, std::span<const Var> wrt);

    // Same derivatives, but embedded in the record so they can be
    // differentiated again. Values match `gradient` bit-for-bit.
    std::vector<Var> gradient_as_nodes(Var out, std::span<const Var> wrt);

    // Full reverse sweep from `out`; accumulates into every MatRef/VecRef
    // grad buffer bound to nodes on the record.
    void backward(Var out);

    std::size_t size() const { return nodes_.size(); }
    void reset();

private:
    enum class Op : std::uint8_t {
        Const, Input,
        Add, Sub, Mul, Div, Neg,
        Tanh, Sin, Cos, Square, Scale,
        Sum, Bcast, Scatter,
        Affine, Matvec, MatvecT, TanhBwd,
    };

    struct Node {
        Op op;
        std::int32_t a = -1, b = -1;
        std::int32_t a_slot = 0, b_slot = 0;
        std::int32_t ofs = 0;
        std::int32_t len = 1;
        std::int32_t aux = -1;  // layer index (Affine/Matvec/MatvecT), slot (Scatter)
        double c = 0.0;         // Scale factor
    };

    struct LayerRef {
        MatRef w;
        VecRef b;  // b.v == nullptr for bias-free nodes
    };

    std::int32_t push(Op op, std::int32_t len, std::int32_t a, std::int32_t as,
                      std::int32_t b, std::int32_t bs, std::int32_t aux, double c);
    double* slots(std::int32_t node) { return val_.data() + nodes_[node].ofs; }
    const double* slots(std::int32_t node) const { return val_.data() + nodes_[node].ofs; }
    Var scalar_binary(Op op, Var a, Var b);
    Var scalar_unary(Op op, Var a, double c = 0.0);
    VecVar vec_binary(Op op, VecVar a, VecVar b);
    VecVar vec_unary(Op op, VecVar a, double c = 0.0);
    void check_owned(Var v, const char* what) const;
    void check_owned(VecVar v, const char* what) const;

    // emitting reverse sweep shared by gradient / gradient_as_nodes
    std::vector<Var> sweep_emit(Var out, std::span<const Var> wrt);
    // contribution accumulation used by sweep_emit
    void acc_node(std::vector<std::int32_t>& adj, std::int32_t n, VecVar contrib);
    void acc_slot(std::vector<std::int32_t>& adj, std::int32_t n, std::int32_t slot, Var contrib);

    std::vector<Node> nodes_;
    std::vector<double> val_;
    std::vector<LayerRef> layers_;

    // scratch for backward()
    std::vector<double> adj_;
    std::vector<std::uint32_t> adj_epoch_;
    std::uint32_t epoch_ = 0;
    double* adj_block(std::int32_t n);  // zero-on-first-touch view
    double* adj_peek(std::int32_t n);   // nullptr if untouched this epoch

    // scratch for sweep_emit()
    std::vector<std::uint8_t> relevant_;
};

// convenience operators for scalar expression building
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double b);
Var operator+(double a, Var b);
Var operator-(Var a, double b);
Var operator-(double a, Var b);
Var operator*(Var a, double b);
Var operator*(double a, Var b);
Var operator/(Var a, double b);
Var operator/(double a, Var b);
Var tanh(Var a);
Var sin(Var a);
Var cos(Var a);
Var square(Var a);

// Max discrepancy between engine gradients and central finite differences,
// relative to max(|fd|, |ad|, 1).
using TapeFn = std::function<Var(Tape&, std::span<const Var>)>;
double finite_difference_check(const TapeFn& f, std::span<const double> point, double step);

}  // namespace dhnn::ad
