#include "dhnn/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "dhnn/errors.hpp"

namespace dhnn::ad {

double Var::value() const { return tape->value(*this); }

std::int32_t VecVar::size() const {
    return static_cast<std::int32_t>(tape->values(*this).size());
}

Tape::Tape() {
    nodes_.reserve(1 << 12);
    val_.reserve(1 << 16);
}

void Tape::reset() {
    nodes_.clear();
    val_.clear();
    layers_.clear();
}

void Tape::check_owned(Var v, const char* what) const {
    if (v.tape != this || v.node < 0 || v.node >= static_cast<std::int32_t>(nodes_.size()) ||
        v.slot < 0 || v.slot >= nodes_[v.node].len) {
        throw std::invalid_argument(std::string(what) + ": value is not registered on this record");
    }
}

void Tape::check_owned(VecVar v, const char* what) const {
    if (v.tape != this || v.node < 0 || v.node >= static_cast<std::int32_t>(nodes_.size())) {
        throw std::invalid_argument(std::string(what) + ": value is not registered on this record");
    }
}

std::int32_t Tape::push(Op op, std::int32_t len, std::int32_t a, std::int32_t as,
                        std::int32_t b, std::int32_t bs, std::int32_t aux, double c) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.a_slot = as;
    n.b_slot = bs;
    n.ofs = static_cast<std::int32_t>(val_.size());
    n.len = len;
    n.aux = aux;
    n.c = c;
    val_.resize(val_.size() + static_cast<std::size_t>(len));
    nodes_.push_back(n);
    return static_cast<std::int32_t>(nodes_.size()) - 1;
}

Var Tape::constant(double v) {
    std::int32_t id = push(Op::Const, 1, -1, 0, -1, 0, -1, 0.0);
    slots(id)[0] = v;
    return Var{this, id, 0};
}

Var Tape::input(double v) {
    std::int32_t id = push(Op::Input, 1, -1, 0, -1, 0, -1, 0.0);
    slots(id)[0] = v;
    return Var{this, id, 0};
}

VecVar Tape::constant_vec(std::span<const double> v) {
    std::int32_t id = push(Op::Const, static_cast<std::int32_t>(v.size()), -1, 0, -1, 0, -1, 0.0);
    std::memcpy(slots(id), v.data(), v.size() * sizeof(double));
    return VecVar{this, id};
}

VecVar Tape::input_vec(std::span<const double> v) {
    std::int32_t id = push(Op::Input, static_cast<std::int32_t>(v.size()), -1, 0, -1, 0, -1, 0.0);
    std::memcpy(slots(id), v.data(), v.size() * sizeof(double));
    return VecVar{this, id};
}

Var Tape::scalar_binary(Op op, Var a, Var b) {
    check_owned(a, "operand");
    check_owned(b, "operand");
    double va = val_[nodes_[a.node].ofs + a.slot];
    double vb = val_[nodes_[b.node].ofs + b.slot];
    double out = 0.0;
    switch (op) {
        case Op::Add: out = va + vb; break;
        case Op::Sub: out = va - vb; break;
        case Op::Mul: out = va * vb; break;
        case Op::Div: out = va / vb; break;
        default: assert(false);
    }
    std::int32_t id = push(op, 1, a.node, a.slot, b.node, b.slot, -1, 0.0);
    slots(id)[0] = out;
    return Var{this, id, 0};
}

Var Tape::scalar_unary(Op op, Var a, double c) {
    check_owned(a, "operand");
    double va = val_[nodes_[a.node].ofs + a.slot];
    double out = 0.0;
    switch (op) {
        case Op::Neg: out = -va; break;
        case Op::Tanh: out = std::tanh(va); break;
        case Op::Sin: out = std::sin(va); break;
        case Op::Cos: out = std::cos(va); break;
        case Op::Square: out = va * va; break;
        case Op::Scale: out = c * va; break;
        default: assert(false);
    }
    std::int32_t id = push(op, 1, a.node, a.slot, -1, 0, -1, c);
    slots(id)[0] = out;
    return Var{this, id, 0};
}

Var Tape::add(Var a, Var b) { return scalar_binary(Op::Add, a, b); }
Var Tape::sub(Var a, Var b) { return scalar_binary(Op::Sub, a, b); }
Var Tape::mul(Var a, Var b) { return scalar_binary(Op::Mul, a, b); }
Var Tape::div(Var a, Var b) { return scalar_binary(Op::Div, a, b); }
Var Tape::neg(Var a) { return scalar_unary(Op::Neg, a); }
Var Tape::tanh(Var a) { return scalar_unary(Op::Tanh, a); }
Var Tape::sin(Var a) { return scalar_unary(Op::Sin, a); }
Var Tape::cos(Var a) { return scalar_unary(Op::Cos, a); }
Var Tape::square(Var a) { return scalar_unary(Op::Square, a); }
Var Tape::scale(Var a, double c) { return scalar_unary(Op::Scale, a, c); }

VecVar Tape::vec_binary(Op op, VecVar a, VecVar b) {
    check_owned(a, "operand");
    check_owned(b, "operand");
    std::int32_t len = nodes_[a.node].len;
    if (nodes_[b.node].len != len) {
        throw std::invalid_argument("vector operand length mismatch");
    }
    std::int32_t id = push(op, len, a.node, 0, b.node, 0, -1, 0.0);
    const double* pa = slots(a.node);
    const double* pb = slots(b.node);
    double* po = slots(id);
    switch (op) {
        case Op::Add: for (std::int32_t i = 0; i < len; ++i) po[i] = pa[i] + pb[i]; break;
        case Op::Sub: for (std::int32_t i = 0; i < len; ++i) po[i] = pa[i] - pb[i]; break;
        case Op::Mul: for (std::int32_t i = 0; i < len; ++i) po[i] = pa[i] * pb[i]; break;
        default: assert(false);
    }
    return VecVar{this, id};
}

VecVar Tape::vec_unary(Op op, VecVar a, double c) {
    check_owned(a, "operand");
    std::int32_t len = nodes_[a.node].len;
    std::int32_t id = push(op, len, a.node, 0, -1, 0, -1, c);
    const double* pa = slots(a.node);
    double* po = slots(id);
    switch (op) {
        case Op::Neg: for (std::int32_t i = 0; i < len; ++i) po[i] = -pa[i]; break;
        case Op::Tanh: for (std::int32_t i = 0; i < len; ++i) po[i] = std::tanh(pa[i]); break;
        case Op::Square: for (std::int32_t i = 0; i < len; ++i) po[i] = pa[i] * pa[i]; break;
        case Op::Scale: for (std::int32_t i = 0; i < len; ++i) po[i] = c * pa[i]; break;
        default: assert(false);
    }
    return VecVar{this, id};
}

VecVar Tape::add(VecVar a, VecVar b) { return vec_binary(Op::Add, a, b); }
VecVar Tape::sub(VecVar a, VecVar b) { return vec_binary(Op::Sub, a, b); }
VecVar Tape::mul(VecVar a, VecVar b) { return vec_binary(Op::Mul, a, b); }
VecVar Tape::neg(VecVar a) { return vec_unary(Op::Neg, a); }
VecVar Tape::tanh(VecVar a) { return vec_unary(Op::Tanh, a); }
VecVar Tape::square(VecVar a) { return vec_unary(Op::Square, a); }
VecVar Tape::scale(VecVar a, double c) { return vec_unary(Op::Scale, a, c); }

Var Tape::sum(VecVar a) {
    check_owned(a, "operand");
    std::int32_t len = nodes_[a.node].len;
    std::int32_t id = push(Op::Sum, 1, a.node, 0, -1, 0, -1, 0.0);
    const double* pa = slots(a.node);
    double s = 0.0;
    for (std::int32_t i = 0; i < len; ++i) s += pa[i];
    slots(id)[0] = s;
    return Var{this, id, 0};
}

VecVar Tape::broadcast(Var a, std::int32_t n) {
    check_owned(a, "operand");
    double va = val_[nodes_[a.node].ofs + a.slot];
    std::int32_t id = push(Op::Bcast, n, a.node, a.slot, -1, 0, -1, 0.0);
    double* po = slots(id);
    for (std::int32_t i = 0; i < n; ++i) po[i] = va;
    return VecVar{this, id};
}

VecVar Tape::scatter(Var a, std::int32_t slot, std::int32_t n) {
    check_owned(a, "operand");
    double va = val_[nodes_[a.node].ofs + a.slot];
    std::int32_t id = push(Op::Scatter, n, a.node, a.slot, -1, 0, slot, 0.0);
    double* po = slots(id);
    std::memset(po, 0, static_cast<std::size_t>(n) * sizeof(double));
    po[slot] = va;
    return VecVar{this, id};
}

VecVar Tape::affine(const MatRef& w, const VecRef& b, VecVar x) {
    check_owned(x, "operand");
    if (nodes_[x.node].len != w.cols) throw std::invalid_argument("affine: dimension mismatch");
    if (b.v != nullptr && b.n != w.rows) throw std::invalid_argument("affine: bias length mismatch");
    layers_.push_back(LayerRef{w, b});
    std::int32_t aux = static_cast<std::int32_t>(layers_.size()) - 1;
    std::int32_t id = push(b.v ? Op::Affine : Op::Matvec, w.rows, x.node, 0, -1, 0, aux, 0.0);
    const double* px = slots(x.node);
    double* po = slots(id);
    for (std::int32_t i = 0; i < w.rows; ++i) {
        const double* row = w.w + static_cast<std::size_t>(i) * w.cols;
        double s = b.v ? b.v[i] : 0.0;
        for (std::int32_t j = 0; j < w.cols; ++j) s += row[j] * px[j];
        po[i] = s;
    }
    return VecVar{this, id};
}

VecVar Tape::matvec(const MatRef& w, VecVar x) { return affine(w, VecRef{}, x); }

VecVar Tape::matvec_t(const MatRef& w, VecVar v) {
    check_owned(v, "operand");
    if (nodes_[v.node].len != w.rows) throw std::invalid_argument("matvec_t: dimension mismatch");
    layers_.push_back(LayerRef{w, VecRef{}});
    std::int32_t aux = static_cast<std::int32_t>(layers_.size()) - 1;
    std::int32_t id = push(Op::MatvecT, w.cols, v.node, 0, -1, 0, aux, 0.0);
    const double* pv = slots(v.node);
    double* po = slots(id);
    std::memset(po, 0, static_cast<std::size_t>(w.cols) * sizeof(double));
    for (std::int32_t i = 0; i < w.rows; ++i) {
        const double* row = w.w + static_cast<std::size_t>(i) * w.cols;
        double vi = pv[i];
        if (vi == 0.0) continue;
        for (std::int32_t j = 0; j < w.cols; ++j) po[j] += vi * row[j];
    }
    return VecVar{this, id};
}

VecVar Tape::tanh_bwd(VecVar y, VecVar u) {
    check_owned(y, "operand");
    check_owned(u, "operand");
    std::int32_t len = nodes_[y.node].len;
    if (nodes_[u.node].len != len) throw std::invalid_argument("tanh_bwd: length mismatch");
    std::int32_t id = push(Op::TanhBwd, len, y.node, 0, u.node, 0, -1, 0.0);
    const double* py = slots(y.node);
    const double* pu = slots(u.node);
    double* po = slots(id);
    for (std::int32_t i = 0; i < len; ++i) po[i] = pu[i] * (1.0 - py[i] * py[i]);
    return VecVar{this, id};
}

double Tape::value(Var v) const {
    check_owned(v, "value");
    return val_[nodes_[v.node].ofs + v.slot];
}

std::span<const double> Tape::values(VecVar v) const {
    check_owned(v, "values");
    const Node& n = nodes_[v.node];
    return {val_.data() + n.ofs, static_cast<std::size_t>(n.len)};
}

// ---------------------------------------------------------------------------
// emitting reverse sweep

void Tape::acc_node(std::vector<std::int32_t>& adj, std::int32_t n, VecVar contrib) {
    if (adj[n] < 0) {
        adj[n] = contrib.node;
    } else {
        adj[n] = add(VecVar{this, adj[n]}, contrib).node;
    }
}

void Tape::acc_slot(std::vector<std::int32_t>& adj, std::int32_t n, std::int32_t slot, Var contrib) {
    if (contrib.slot != 0 || nodes_[contrib.node].len != 1) {
        contrib = scale(contrib, 1.0);  // materialize the component as its own node
    }
    if (nodes_[n].len == 1 && slot == 0) {
        acc_node(adj, n, VecVar{this, contrib.node});
    } else {
        acc_node(adj, n, scatter(contrib, slot, nodes_[n].len));
    }
}

std::vector<Var> Tape::sweep_emit(Var out, std::span<const Var> wrt) {
    check_owned(out, "gradient output");
    for (const Var& w : wrt) check_owned(w, "gradient input");

    const std::int32_t top = out.node;

    // forward reachability from the requested inputs
    relevant_.assign(static_cast<std::size_t>(top) + 1, 0);
    for (const Var& w : wrt) {
        if (w.node <= top) relevant_[w.node] = 1;
    }
    for (std::int32_t n = 0; n <= top; ++n) {
        if (relevant_[n]) continue;
        const Node& nd = nodes_[n];
        bool r = false;
        if (nd.a >= 0 && relevant_[nd.a]) r = true;
        if (!r && nd.b >= 0 && relevant_[nd.b]) r = true;
        relevant_[n] = r ? 1 : 0;
    }

    std::vector<std::int32_t> adj(static_cast<std::size_t>(top) + 1, -1);

    auto zeros = [&]() {
        std::vector<Var> res;
        res.reserve(wrt.size());
        for (std::size_t i = 0; i < wrt.size(); ++i) res.push_back(constant(0.0));
        return res;
    };
    if (!relevant_[top]) return zeros();

    // seed: one-hot adjoint for the output component
    {
        std::vector<double> seed(static_cast<std::size_t>(nodes_[top].len), 0.0);
        seed[static_cast<std::size_t>(out.slot)] = 1.0;
        adj[top] = constant_vec(seed).node;
    }

    for (std::int32_t n = top; n >= 0; --n) {
        if (adj[n] < 0 || !relevant_[n]) continue;
        const Node nd = nodes_[n];  // copy: nodes_ may reallocate while emitting
        VecVar g{this, adj[n]};
        Var g0{this, adj[n], 0};

        auto want = [&](std::int32_t o) { return o >= 0 && relevant_[o]; };
        // elementwise operand style: whole-node when shapes line up, else slot
        auto ew_whole = [&](std::int32_t o, std::int32_t s) {
            return nodes_[o].len == nd.len && s == 0;
        };

        switch (nd.op) {
            case Op::Const:
            case Op::Input:
                break;
            case Op::Add:
                if (want(nd.a)) {
                    if (ew_whole(nd.a, nd.a_slot)) acc_node(adj, nd.a, g);
                    else acc_slot(adj, nd.a, nd.a_slot, g0);
                }
                if (want(nd.b)) {
                    if (ew_whole(nd.b, nd.b_slot)) acc_node(adj, nd.b, g);
                    else acc_slot(adj, nd.b, nd.b_slot, g0);
                }
                break;
            case Op::Sub:
                if (want(nd.a)) {
                    if (ew_whole(nd.a, nd.a_slot)) acc_node(adj, nd.a, g);
                    else acc_slot(adj, nd.a, nd.a_slot, g0);
                }
                if (want(nd.b)) {
                    if (ew_whole(nd.b, nd.b_slot)) acc_node(adj, nd.b, neg(g));
                    else acc_slot(adj, nd.b, nd.b_slot, neg(g0));
                }
                break;
            case Op::Mul:
                if (want(nd.a)) {
                    if (ew_whole(nd.a, nd.a_slot)) acc_node(adj, nd.a, mul(g, VecVar{this, nd.b}));
                    else acc_slot(adj, nd.a, nd.a_slot, mul(g0, Var{this, nd.b, nd.b_slot}));
                }
                if (want(nd.b)) {
                    if (ew_whole(nd.b, nd.b_slot)) acc_node(adj, nd.b, mul(g, VecVar{this, nd.a}));
                    else acc_slot(adj, nd.b, nd.b_slot, mul(g0, Var{this, nd.a, nd.a_slot}));
                }
                break;
            case Op::Div: {
                // div nodes are always scalar
                Var outv{this, n, 0};
                Var bv{this, nd.b, nd.b_slot};
                if (want(nd.a)) acc_slot(adj, nd.a, nd.a_slot, div(g0, bv));
                if (want(nd.b)) acc_slot(adj, nd.b, nd.b_slot, neg(mul(g0, div(outv, bv))));
                break;
            }
            case Op::Neg:
                if (want(nd.a)) {
                    if (ew_whole(nd.a, nd.a_slot)) acc_node(adj, nd.a, neg(g));
                    else acc_slot(adj, nd.a, nd.a_slot, neg(g0));
                }
                break;
            case Op::Tanh:
                if (want(nd.a)) {
                    if (ew_whole(nd.a, nd.a_slot)) {
                        acc_node(adj, nd.a, tanh_bwd(VecVar{this, n}, g));
                    } else {
                        Var outv{this, n, 0};
                        acc_slot(adj, nd.a, nd.a_slot,
                                 mul(g0, sub(constant(1.0), square(outv))));
                    }
                }
                break;
            case Op::Sin:
                if (want(nd.a)) {
                    acc_slot(adj, nd.a, nd.a_slot, mul(g0, cos(Var{this, nd.a, nd.a_slot})));
                }
                break;
            case Op::Cos:
                if (want(nd.a)) {
                    acc_slot(adj, nd.a, nd.a_slot, neg(mul(g0, sin(Var{this, nd.a, nd.a_slot}))));
                }
                break;
            case Op::Square:
                if (want(nd.a)) {
                    if (ew_whole(nd.a, nd.a_slot)) {
                        acc_node(adj, nd.a, mul(g, scale(VecVar{this, nd.a}, 2.0)));
                    } else {
                        acc_slot(adj, nd.a, nd.a_slot,
                                 mul(g0, scale(Var{this, nd.a, nd.a_slot}, 2.0)));
                    }
                }
                break;
            case Op::Scale:
                if (want(nd.a)) {
                    if (ew_whole(nd.a, nd.a_slot)) acc_node(adj, nd.a, scale(g, nd.c));
                    else acc_slot(adj, nd.a, nd.a_slot, scale(g0, nd.c));
                }
                break;
            case Op::Sum:
                if (want(nd.a)) acc_node(adj, nd.a, broadcast(g0, nodes_[nd.a].len));
                break;
            case Op::Bcast:
                if (want(nd.a)) acc_slot(adj, nd.a, nd.a_slot, sum(g));
                break;
            case Op::Scatter:
                if (want(nd.a)) acc_slot(adj, nd.a, nd.a_slot, Var{this, adj[n], nd.aux});
                break;
            case Op::Affine:
            case Op::Matvec:
                if (want(nd.a)) acc_node(adj, nd.a, matvec_t(layers_[nd.aux].w, g));
                break;
            case Op::MatvecT:
                if (want(nd.a)) acc_node(adj, nd.a, matvec(layers_[nd.aux].w, g));
                break;
            case Op::TanhBwd: {
                VecVar y{this, nd.a};
                VecVar u{this, nd.b};
                if (want(nd.a)) acc_node(adj, nd.a, mul(g, mul(scale(y, -2.0), u)));
                if (want(nd.b)) acc_node(adj, nd.b, tanh_bwd(y, g));
                break;
            }
        }
    }

    std::vector<Var> res;
    res.reserve(wrt.size());
    for (const Var& w : wrt) {
        if (w.node <= top && adj[w.node] >= 0) {
            res.push_back(Var{this, adj[w.node], w.slot});
        } else {
            res.push_back(constant(0.0));
        }
    }
    return res;
}

std::vector<Var> Tape::gradient_as_nodes(Var out, std::span<const Var> wrt) {
    return sweep_emit(out, wrt);
}

std::vector<double> Tape::gradient(Var out, std::span<const Var> wrt) {
    std::size_t n_nodes = nodes_.size();
    std::size_t n_vals = val_.size();
    std::size_t n_layers = layers_.size();
    std::vector<Var> g = sweep_emit(out, wrt);
    std::vector<double> res(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) res[i] = value(g[i]);
    nodes_.resize(n_nodes);
    val_.resize(n_vals);
    layers_.resize(n_layers);
    return res;
}

// ---------------------------------------------------------------------------
// plain reverse sweep with parameter-gradient accumulation

double* Tape::adj_block(std::int32_t n) {
    if (adj_epoch_[n] != epoch_) {
        adj_epoch_[n] = epoch_;
        std::memset(adj_.data() + nodes_[n].ofs, 0,
                    static_cast<std::size_t>(nodes_[n].len) * sizeof(double));
    }
    return adj_.data() + nodes_[n].ofs;
}

double* Tape::adj_peek(std::int32_t n) {
    if (adj_epoch_[n] != epoch_) return nullptr;
    return adj_.data() + nodes_[n].ofs;
}

void Tape::backward(Var out) {
    check_owned(out, "backward output");
    adj_.resize(val_.size());
    adj_epoch_.resize(nodes_.size(), epoch_);
    ++epoch_;
    if (epoch_ == 0) {  // wrapped; stamps are stale but all != 0
        std::fill(adj_epoch_.begin(), adj_epoch_.end(), 0u);
        epoch_ = 1;
    }

    adj_block(out.node)[out.slot] = 1.0;

    for (std::int32_t n = out.node; n >= 0; --n) {
        const double* g = adj_peek(n);
        if (g == nullptr) continue;
        const Node& nd = nodes_[n];
        const std::int32_t len = nd.len;

        auto ew_whole = [&](std::int32_t o, std::int32_t s) {
            return nodes_[o].len == len && s == 0;
        };

        switch (nd.op) {
            case Op::Const:
            case Op::Input:
                break;
            case Op::Add: {
                if (ew_whole(nd.a, nd.a_slot)) {
                    double* aa = adj_block(nd.a);
                    for (std::int32_t i = 0; i < len; ++i) aa[i] += g[i];
                } else {
                    adj_block(nd.a)[nd.a_slot] += g[0];
                }
                if (ew_whole(nd.b, nd.b_slot)) {
                    double* ab = adj_block(nd.b);
                    for (std::int32_t i = 0; i < len; ++i) ab[i] += g[i];
                } else {
                    adj_block(nd.b)[nd.b_slot] += g[0];
                }
                break;
            }
            case Op::Sub: {
                if (ew_whole(nd.a, nd.a_slot)) {
                    double* aa = adj_block(nd.a);
                    for (std::int32_t i = 0; i < len; ++i) aa[i] += g[i];
                } else {
                    adj_block(nd.a)[nd.a_slot] += g[0];
                }
                if (ew_whole(nd.b, nd.b_slot)) {
                    double* ab = adj_block(nd.b);
                    for (std::int32_t i = 0; i < len; ++i) ab[i] -= g[i];
                } else {
                    adj_block(nd.b)[nd.b_slot] -= g[0];
                }
                break;
            }
            case Op::Mul: {
                if (ew_whole(nd.a, nd.a_slot)) {
                    const double* pb = slots(nd.b);
                    const double* pa = slots(nd.a);
                    double* aa = adj_block(nd.a);
                    for (std::int32_t i = 0; i < len; ++i) aa[i] += g[i] * pb[i];
                    double* ab = adj_block(nd.b);
                    for (std::int32_t i = 0; i < len; ++i) ab[i] += g[i] * pa[i];
                } else {
                    double va = slots(nd.a)[nd.a_slot];
                    double vb = slots(nd.b)[nd.b_slot];
                    adj_block(nd.a)[nd.a_slot] += g[0] * vb;
                    adj_block(nd.b)[nd.b_slot] += g[0] * va;
                }
                break;
            }
            case Op::Div: {
                double va = slots(nd.a)[nd.a_slot];
                (void)va;
                double vb = slots(nd.b)[nd.b_slot];
                double vo = slots(n)[0];
                adj_block(nd.a)[nd.a_slot] += g[0] / vb;
                adj_block(nd.b)[nd.b_slot] -= g[0] * (vo / vb);
                break;
            }
            case Op::Neg: {
                if (ew_whole(nd.a, nd.a_slot)) {
                    double* aa = adj_block(nd.a);
                    for (std::int32_t i = 0; i < len; ++i) aa[i] -= g[i];
                } else {
                    adj_block(nd.a)[nd.a_slot] -= g[0];
                }
                break;
            }
            case Op::Tanh: {
                const double* po = slots(n);
                if (ew_whole(nd.a, nd.a_slot)) {
                    double* aa = adj_block(nd.a);
                    for (std::int32_t i = 0; i < len; ++i) aa[i] += g[i] * (1.0 - po[i] * po[i]);
                } else {
                    adj_block(nd.a)[nd.a_slot] += g[0] * (1.0 - po[0] * po[0]);
                }
                break;
            }
            case Op::Sin: {
                double va = slots(nd.a)[nd.a_slot];
                adj_block(nd.a)[nd.a_slot] += g[0] * std::cos(va);
                break;
            }
            case Op::Cos: {
                double va = slots(nd.a)[nd.a_slot];
                adj_block(nd.a)[nd.a_slot] -= g[0] * std::sin(va);
                break;
            }
            case Op::Square: {
                if (ew_whole(nd.a, nd.a_slot)) {
                    const double* pa = slots(nd.a);
                    double* aa = adj_block(nd.a);
                    for (std::int32_t i = 0; i < len; ++i) aa[i] += g[i] * (2.0 * pa[i]);
                } else {
                    double va = slots(nd.a)[nd.a_slot];
                    adj_block(nd.a)[nd.a_slot] += g[0] * (2.0 * va);
                }
                break;
            }
            case Op::Scale: {
                if (ew_whole(nd.a, nd.a_slot)) {
                    double* aa = adj_block(nd.a);
                    for (std::int32_t i = 0; i < len; ++i) aa[i] += g[i] * nd.c;
                } else {
                    adj_block(nd.a)[nd.a_slot] += g[0] * nd.c;
                }
                break;
            }
            case Op::Sum: {
                double g0 = g[0];
                double* aa = adj_block(nd.a);
                for (std::int32_t i = 0; i < nodes_[nd.a].len; ++i) aa[i] += g0;
                break;
            }
            case Op::Bcast: {
                double s = 0.0;
                for (std::int32_t i = 0; i < len; ++i) s += g[i];
                adj_block(nd.a)[nd.a_slot] += s;
                break;
            }
            case Op::Scatter: {
                adj_block(nd.a)[nd.a_slot] += g[nd.aux];
                break;
            }
            case Op::Affine:
            case Op::Matvec: {
                const LayerRef& lr = layers_[nd.aux];
                const double* px = slots(nd.a);
                double* ax = adj_block(nd.a);
                const std::int32_t rows = lr.w.rows, cols = lr.w.cols;
                for (std::int32_t i = 0; i < rows; ++i) {
                    double gi = g[i];
                    if (gi == 0.0) continue;
                    const double* row = lr.w.w + static_cast<std::size_t>(i) * cols;
                    for (std::int32_t j = 0; j < cols; ++j) ax[j] += gi * row[j];
                    if (lr.w.grad != nullptr) {
                        double* grow = lr.w.grad + static_cast<std::size_t>(i) * cols;
                        for (std::int32_t j = 0; j < cols; ++j) grow[j] += gi * px[j];
                    }
                    if (lr.b.grad != nullptr) lr.b.grad[i] += gi;
                }
                break;
            }
            case Op::MatvecT: {
                const LayerRef& lr = layers_[nd.aux];
                const double* pv = slots(nd.a);
                double* av = adj_block(nd.a);
                const std::int32_t rows = lr.w.rows, cols = lr.w.cols;
                for (std::int32_t i = 0; i < rows; ++i) {
                    const double* row = lr.w.w + static_cast<std::size_t>(i) * cols;
                    double s = 0.0;
                    for (std::int32_t j = 0; j < cols; ++j) s += row[j] * g[j];
                    av[i] += s;
                    if (lr.w.grad != nullptr) {
                        double vi = pv[i];
                        if (vi != 0.0) {
                            double* grow = lr.w.grad + static_cast<std::size_t>(i) * cols;
                            for (std::int32_t j = 0; j < cols; ++j) grow[j] += vi * g[j];
                        }
                    }
                }
                break;
            }
            case Op::TanhBwd: {
                const double* py = slots(nd.a);
                const double* pu = slots(nd.b);
                double* ay = adj_block(nd.a);
                for (std::int32_t i = 0; i < len; ++i) ay[i] += g[i] * (-2.0 * py[i] * pu[i]);
                double* au = adj_block(nd.b);
                for (std::int32_t i = 0; i < len; ++i) au[i] += g[i] * (1.0 - py[i] * py[i]);
                break;
            }
        }
    }
}

// ---------------------------------------------------------------------------

Var operator+(Var a, Var b) { return a.tape->add(a, b); }
Var operator-(Var a, Var b) { return a.tape->sub(a, b); }
Var operator*(Var a, Var b) { return a.tape->mul(a, b); }
Var operator/(Var a, Var b) { return a.tape->div(a, b); }
Var operator-(Var a) { return a.tape->neg(a); }
Var operator+(Var a, double b) { return a.tape->add(a, a.tape->constant(b)); }
Var operator+(double a, Var b) { return b.tape->add(b.tape->constant(a), b); }
Var operator-(Var a, double b) { return a.tape->sub(a, a.tape->constant(b)); }
Var operator-(double a, Var b) { return b.tape->sub(b.tape->constant(a), b); }
Var operator*(Var a, double b) { return a.tape->scale(a, b); }
Var operator*(double a, Var b) { return b.tape->scale(b, a); }
Var operator/(Var a, double b) { return a.tape->div(a, a.tape->constant(b)); }
Var operator/(double a, Var b) { return b.tape->div(b.tape->constant(a), b); }
Var tanh(Var a) { return a.tape->tanh(a); }
Var sin(Var a) { return a.tape->sin(a); }
Var cos(Var a) { return a.tape->cos(a); }
Var square(Var a) { return a.tape->square(a); }

double finite_difference_check(const TapeFn& f, std::span<const double> point, double step) {
    if (step <= 0.0) throw std::invalid_argument("finite_difference_check: step must be positive");
    const std::size_t n = point.size();

    Tape t;
    std::vector<Var> xs;
    xs.reserve(n);
    for (double p : point) xs.push_back(t.input(p));
    Var out = f(t, xs);
    std::vector<double> ad = t.gradient(out, xs);

    auto eval_at = [&](std::span<const double> pt) {
        Tape s;
        std::vector<Var> ys;
        ys.reserve(n);
        for (double p : pt) ys.push_back(s.input(p));
        return s.value(f(s, ys));
    };

    double worst = 0.0;
    std::vector<double> shifted(point.begin(), point.end());
    for (std::size_t i = 0; i < n; ++i) {
        double orig = shifted[i];
        shifted[i] = orig + step;
        double fp = eval_at(shifted);
        shifted[i] = orig - step;
        double fm = eval_at(shifted);
        shifted[i] = orig;
        double fd = (fp - fm) / (2.0 * step);
        double denom = std::max({std::fabs(fd), std::fabs(ad[i]), 1.0});
        worst = std::max(worst, std::fabs(ad[i] - fd) / denom);
    }
    return worst;
}

}  // namespace dhnn::ad
