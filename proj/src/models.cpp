#include "dhnn/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "dhnn/errors.hpp"
#include "dhnn/rng.hpp"

namespace dhnn {

const char* model_type_name(ModelType t) {
    switch (t) {
        case ModelType::baseline: return "baseline";
        case ModelType::hnn: return "hnn";
        case ModelType::dhnn: return "dhnn";
    }
    return "?";
}

ModelType model_type_from_name(const std::string& s) {
    if (s == "baseline" || s == "mlp") return ModelType::baseline;
    if (s == "hnn") return ModelType::hnn;
    if (s == "dhnn") return ModelType::dhnn;
    throw UsageError("unknown model kind: " + s);
}

namespace {

DenseLayer init_layer(std::int32_t in, std::int32_t out, Rng& rng) {
    DenseLayer l;
    l.in = in;
    l.out = out;
    l.w.resize(static_cast<std::size_t>(in) * out);
    l.b.assign(static_cast<std::size_t>(out), 0.0);
    double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : l.w) v = s * rng.gaussian();
    return l;
}

PotentialNet init_potential(std::int32_t input_dim, std::int32_t hidden, Rng& rng) {
    PotentialNet n;
    n.input_dim = input_dim;
    n.hidden = hidden;
    n.l1 = init_layer(input_dim, hidden, rng);
    n.l2 = init_layer(hidden, hidden, rng);
    n.head = init_layer(hidden, 1, rng);
    return n;
}

DirectNet init_direct(std::int32_t input_dim, std::int32_t hidden, Rng& rng) {
    DirectNet n;
    n.input_dim = input_dim;
    n.hidden = hidden;
    n.l1 = init_layer(input_dim, hidden, rng);
    n.l2 = init_layer(hidden, hidden, rng);
    n.head = init_layer(hidden, 2, rng);
    return n;
}

}  // namespace

Model init_model(ModelType kind, std::int32_t input_dim, std::uint64_t seed, std::int32_t hidden) {
    if (input_dim != 2 && input_dim != 3) {
        throw UsageError("input_dim must be 2 or 3, got " + std::to_string(input_dim));
    }
    if (hidden < 1) throw UsageError("hidden width must be positive");
    Rng rng(seed);
    Model m;
    m.kind = kind;
    m.input_dim = input_dim;
    switch (kind) {
        case ModelType::baseline:
            m.direct = init_direct(input_dim, hidden, rng);
            break;
        case ModelType::hnn:
            m.hamiltonian = init_potential(input_dim, hidden, rng);
            break;
        case ModelType::dhnn:
            m.hamiltonian = init_potential(input_dim, hidden, rng);
            m.dissipation = init_potential(input_dim, hidden, rng);
            break;
    }
    return m;
}

std::size_t param_count(const PotentialNet& net) {
    return net.l1.w.size() + net.l1.b.size() + net.l2.w.size() + net.l2.b.size() +
           net.head.w.size() + net.head.b.size();
}

std::size_t param_count(const DirectNet& net) {
    return net.l1.w.size() + net.l1.b.size() + net.l2.w.size() + net.l2.b.size() +
           net.head.w.size() + net.head.b.size();
}

std::size_t param_count(const Model& m) {
    switch (m.kind) {
        case ModelType::baseline: return param_count(m.direct);
        case ModelType::hnn: return param_count(m.hamiltonian);
        case ModelType::dhnn: return param_count(m.hamiltonian) + param_count(m.dissipation);
    }
    return 0;
}

ModelGrads::ModelGrads(const Model& m) {
    auto size_net = [](NetGrads& g, const auto& net) {
        g.l1.w.assign(net.l1.w.size(), 0.0);
        g.l1.b.assign(net.l1.b.size(), 0.0);
        g.l2.w.assign(net.l2.w.size(), 0.0);
        g.l2.b.assign(net.l2.b.size(), 0.0);
        g.head.w.assign(net.head.w.size(), 0.0);
        g.head.b.assign(net.head.b.size(), 0.0);
    };
    switch (m.kind) {
        case ModelType::baseline: size_net(direct, m.direct); break;
        case ModelType::hnn: size_net(hamiltonian, m.hamiltonian); break;
        case ModelType::dhnn:
            size_net(hamiltonian, m.hamiltonian);
            size_net(dissipation, m.dissipation);
            break;
    }
}

void ModelGrads::zero() {
    auto z = [](NetGrads& g) {
        std::fill(g.l1.w.begin(), g.l1.w.end(), 0.0);
        std::fill(g.l1.b.begin(), g.l1.b.end(), 0.0);
        std::fill(g.l2.w.begin(), g.l2.w.end(), 0.0);
        std::fill(g.l2.b.begin(), g.l2.b.end(), 0.0);
        std::fill(g.head.w.begin(), g.head.w.end(), 0.0);
        std::fill(g.head.b.begin(), g.head.b.end(), 0.0);
    };
    z(direct);
    z(hamiltonian);
    z(dissipation);
}

namespace {

template <class Span, class Net>
void collect_net(std::vector<Span>& out, Net& net) {
    out.emplace_back(net.l1.w);
    out.emplace_back(net.l1.b);
    out.emplace_back(net.l2.w);
    out.emplace_back(net.l2.b);
    out.emplace_back(net.head.w);
    out.emplace_back(net.head.b);
}

}  // namespace

std::vector<std::span<double>> param_views(Model& m) {
    std::vector<std::span<double>> v;
    switch (m.kind) {
        case ModelType::baseline: collect_net(v, m.direct); break;
        case ModelType::hnn: collect_net(v, m.hamiltonian); break;
        case ModelType::dhnn:
            collect_net(v, m.hamiltonian);
            collect_net(v, m.dissipation);
            break;
    }
    return v;
}

std::vector<std::span<const double>> param_views(const Model& m) {
    std::vector<std::span<const double>> v;
    switch (m.kind) {
        case ModelType::baseline: collect_net(v, m.direct); break;
        case ModelType::hnn: collect_net(v, m.hamiltonian); break;
        case ModelType::dhnn:
            collect_net(v, m.hamiltonian);
            collect_net(v, m.dissipation);
            break;
    }
    return v;
}

std::vector<std::span<double>> grad_views(const Model& m, ModelGrads& g) {
    std::vector<std::span<double>> v;
    switch (m.kind) {
        case ModelType::baseline: collect_net(v, g.direct); break;
        case ModelType::hnn: collect_net(v, g.hamiltonian); break;
        case ModelType::dhnn:
            collect_net(v, g.hamiltonian);
            collect_net(v, g.dissipation);
            break;
    }
    return v;
}

namespace {

ad::MatRef mat_ref(const DenseLayer& l, LayerGrads* g) {
    return ad::MatRef{l.w.data(), l.out, l.in, g ? g->w.data() : nullptr};
}

ad::VecRef bias_ref(const DenseLayer& l, LayerGrads* g) {
    return ad::VecRef{l.b.data(), l.out, g ? g->b.data() : nullptr};
}

}  // namespace

ad::Var potential_value(ad::Tape& tape, const PotentialNet& net, ad::VecVar x, NetGrads* grads) {
    if (x.size() != net.input_dim) {
        throw DataError("potential_value: input has dimension " + std::to_string(x.size()) +
                        ", network expects " + std::to_string(net.input_dim));
    }
    ad::VecVar a1 = tape.affine(mat_ref(net.l1, grads ? &grads->l1 : nullptr),
                                bias_ref(net.l1, grads ? &grads->l1 : nullptr), x);
    ad::VecVar h1 = tape.tanh(a1);
    ad::VecVar a2 = tape.affine(mat_ref(net.l2, grads ? &grads->l2 : nullptr),
                                bias_ref(net.l2, grads ? &grads->l2 : nullptr), h1);
    ad::VecVar h2 = tape.add(tape.tanh(a2), h1);  // residual skip
    ad::VecVar out = tape.affine(mat_ref(net.head, grads ? &grads->head : nullptr),
                                 bias_ref(net.head, grads ? &grads->head : nullptr), h2);
    return out[0];
}

ad::VecVar direct_value(ad::Tape& tape, const DirectNet& net, ad::VecVar x, NetGrads* grads) {
    if (x.size() != net.input_dim) {
        throw DataError("direct_value: input has dimension " + std::to_string(x.size()) +
                        ", network expects " + std::to_string(net.input_dim));
    }
    ad::VecVar h1 = tape.tanh(tape.affine(mat_ref(net.l1, grads ? &grads->l1 : nullptr),
                                          bias_ref(net.l1, grads ? &grads->l1 : nullptr), x));
    ad::VecVar h2 = tape.tanh(tape.affine(mat_ref(net.l2, grads ? &grads->l2 : nullptr),
                                          bias_ref(net.l2, grads ? &grads->l2 : nullptr), h1));
    return tape.affine(mat_ref(net.head, grads ? &grads->head : nullptr),
                       bias_ref(net.head, grads ? &grads->head : nullptr), h2);
}

// ---------------------------------------------------------------------------
// checkpoint serialization

namespace {

constexpr char kMagic[8] = {'D', 'H', 'N', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 24));
}

void put_f64(std::vector<std::uint8_t>& out, double d) {
    std::uint64_t v = 0;
    std::memcpy(&v, &d, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    std::span<const std::uint8_t> data;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > data.size()) {
            throw CheckpointError(CheckpointError::Kind::truncated,
                                  "checkpoint truncated at byte " + std::to_string(pos));
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = data[pos] | (data[pos + 1] << 8) | (data[pos + 2] << 16) |
                          (static_cast<std::uint32_t>(data[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    double f64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data[pos + i]) << (8 * i);
        pos += 8;
        double d = 0;
        std::memcpy(&d, &v, 8);
        return d;
    }
};

void put_layer(std::vector<std::uint8_t>& out, const DenseLayer& l) {
    put_u32(out, static_cast<std::uint32_t>(l.out));
    put_u32(out, static_cast<std::uint32_t>(l.in));
    for (double v : l.w) put_f64(out, v);
    for (double v : l.b) put_f64(out, v);
}

DenseLayer get_layer(Reader& r) {
    DenseLayer l;
    l.out = static_cast<std::int32_t>(r.u32());
    l.in = static_cast<std::int32_t>(r.u32());
    if (l.out < 1 || l.in < 1 || static_cast<std::uint64_t>(l.out) * l.in > (1u << 28)) {
        throw CheckpointError(CheckpointError::Kind::bad_shape,
                              "checkpoint layer shape out of range: " + std::to_string(l.out) +
                                  "x" + std::to_string(l.in));
    }
    l.w.resize(static_cast<std::size_t>(l.out) * l.in);
    for (double& v : l.w) v = r.f64();
    l.b.resize(static_cast<std::size_t>(l.out));
    for (double& v : l.b) v = r.f64();
    return l;
}

void check_potential_shape(const PotentialNet& n, std::int32_t input_dim) {
    if (n.l1.in != input_dim || n.l2.in != n.l1.out || n.l2.out != n.l1.out ||
        n.head.in != n.l2.out || n.head.out != 1) {
        throw CheckpointError(CheckpointError::Kind::bad_shape,
                              "checkpoint potential-net layer shapes are inconsistent");
    }
}

}  // namespace

std::vector<std::uint8_t> serialize(const Model& m) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(m.kind));
    put_u32(out, static_cast<std::uint32_t>(m.input_dim));
    switch (m.kind) {
        case ModelType::baseline:
            put_layer(out, m.direct.l1);
            put_layer(out, m.direct.l2);
            put_layer(out, m.direct.head);
            break;
        case ModelType::hnn:
            put_layer(out, m.hamiltonian.l1);
            put_layer(out, m.hamiltonian.l2);
            put_layer(out, m.hamiltonian.head);
            break;
        case ModelType::dhnn:
            put_layer(out, m.hamiltonian.l1);
            put_layer(out, m.hamiltonian.l2);
            put_layer(out, m.hamiltonian.head);
            put_layer(out, m.dissipation.l1);
            put_layer(out, m.dissipation.l2);
            put_layer(out, m.dissipation.head);
            break;
    }
    return out;
}

Model deserialize(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    r.need(8);
    if (std::memcmp(bytes.data(), kMagic, 8) != 0) {
        throw CheckpointError(CheckpointError::Kind::bad_magic,
                              "not a checkpoint file (bad magic)");
    }
    r.pos = 8;
    std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw CheckpointError(CheckpointError::Kind::bad_version,
                              "unsupported checkpoint version " + std::to_string(version));
    }
    std::uint32_t kind_tag = r.u32();
    if (kind_tag > 2) {
        throw CheckpointError(CheckpointError::Kind::bad_shape,
                              "unknown model kind tag " + std::to_string(kind_tag));
    }
    Model m;
    m.kind = static_cast<ModelType>(kind_tag);
    m.input_dim = static_cast<std::int32_t>(r.u32());
    if (m.input_dim != 2 && m.input_dim != 3) {
        throw CheckpointError(CheckpointError::Kind::bad_shape,
                              "checkpoint input dimension must be 2 or 3");
    }

    auto read_potential = [&]() {
        PotentialNet n;
        n.l1 = get_layer(r);
        n.l2 = get_layer(r);
        n.head = get_layer(r);
        n.input_dim = m.input_dim;
        n.hidden = n.l1.out;
        check_potential_shape(n, m.input_dim);
        return n;
    };

    switch (m.kind) {
        case ModelType::baseline: {
            m.direct.l1 = get_layer(r);
            m.direct.l2 = get_layer(r);
            m.direct.head = get_layer(r);
            m.direct.input_dim = m.input_dim;
            m.direct.hidden = m.direct.l1.out;
            if (m.direct.l1.in != m.input_dim || m.direct.l2.in != m.direct.l1.out ||
                m.direct.head.in != m.direct.l2.out || m.direct.head.out != 2) {
                throw CheckpointError(CheckpointError::Kind::bad_shape,
                                      "checkpoint direct-net layer shapes are inconsistent");
            }
            break;
        }
        case ModelType::hnn:
            m.hamiltonian = read_potential();
            break;
        case ModelType::dhnn:
            m.hamiltonian = read_potential();
            m.dissipation = read_potential();
            break;
    }
    if (r.pos != bytes.size()) {
        throw CheckpointError(CheckpointError::Kind::bad_shape,
                              "checkpoint has trailing bytes");
    }
    return m;
}

void save_checkpoint(const std::filesystem::path& path, const Model& m) {
    std::vector<std::uint8_t> bytes = serialize(m);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("failed writing checkpoint: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open checkpoint: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace dhnn
