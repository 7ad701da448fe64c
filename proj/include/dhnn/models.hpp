#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dhnn/autodiff.hpp"

namespace dhnn {

struct DenseLayer {
    std::int32_t in = 0, out = 0;
    std::vector<double> w;  // row-major out x in
    std::vector<double> b;
};

// Scalar potential head: h1 = tanh(W1 x); h2 = tanh(W2 h1) + h1; out = Wh h2.
struct PotentialNet {
    std::int32_t input_dim = 0;
    std::int32_t hidden = 0;
    DenseLayer l1, l2, head;
};

// Direct map (q, p[, t]) -> (dq/dt, dp/dt): tanh - tanh - linear.
struct DirectNet {
    std::int32_t input_dim = 0;
    std::int32_t hidden = 0;
    DenseLayer l1, l2, head;
};

enum class ModelType { baseline, hnn, dhnn };

struct Model {
    ModelType kind = ModelType::baseline;
    std::int32_t input_dim = 0;
    DirectNet direct;            // baseline
    PotentialNet hamiltonian;    // hnn, dhnn
    PotentialNet dissipation;    // dhnn
};

const char* model_type_name(ModelType t);
ModelType model_type_from_name(const std::string& s);

// Deterministic init: weights ~ N(0, 1/fan_in), biases zero.
Model init_model(ModelType kind, std::int32_t input_dim, std::uint64_t seed,
                 std::int32_t hidden = 256);

std::size_t param_count(const PotentialNet& net);
std::size_t param_count(const DirectNet& net);
std::size_t param_count(const Model& m);

// Gradient buffers mirroring a model's layers.
struct LayerGrads {
    std::vector<double> w, b;
};
struct NetGrads {
    LayerGrads l1, l2, head;
};
struct ModelGrads {
    NetGrads direct, hamiltonian, dissipation;
    explicit ModelGrads(const Model& m);
    void zero();
};

// Uniform parameter/gradient views in a fixed canonical order.
std::vector<std::span<double>> param_views(Model& m);
std::vector<std::span<const double>> param_views(const Model& m);
std::vector<std::span<double>> grad_views(const Model& m, ModelGrads& g);

// Forward passes on a tape. Gradient buffers are optional; when given, a
// later Tape::backward accumulates into them.
ad::Var potential_value(ad::Tape& tape, const PotentialNet& net, ad::VecVar x,
                        NetGrads* grads = nullptr);
ad::VecVar direct_value(ad::Tape& tape, const DirectNet& net, ad::VecVar x,
                        NetGrads* grads = nullptr);

// Checkpoint bytes: magic, format version, kind tag, input dim, then per
// layer rows, cols, row-major weights, biases. Little-endian throughout.
std::vector<std::uint8_t> serialize(const Model& m);
Model deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Model& m);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace dhnn
