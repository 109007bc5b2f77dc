#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

#include "nerfba/se3.hpp"

namespace nerfba {

// Coordinate MLP mapping an encoded position to (RGB, density). Hidden
// layers are ReLU; the head applies sigmoid to the three color channels and
// softplus to the density channel.
struct FieldModel {
    std::vector<Eigen::MatrixXd> weights;  // layer l: (out x in)
    std::vector<Eigen::VectorXd> biases;
    std::vector<int> widths;               // [input, hidden..., 4]
    uint64_t seed = 0;
    // Bumped on every parameter update; tapes remember the revision they
    // were recorded against.
    uint64_t revision = 0;

    int input_dim() const { return widths.front(); }
    size_t layer_count() const { return weights.size(); }
    size_t parameter_count() const;
};

// widths = [input_dim, hidden..., 4]; uniform fan-in (He-style) init.
FieldModel init_field_model(const std::vector<int>& widths, uint64_t seed);

struct SampleOutput {
    Vec3 rgb = Vec3::Zero();
    double sigma = 0.0;
};

struct ForwardTape {
    // activations[0] = input features (in x S); activations[l>0] = post-ReLU
    // hidden activations. outputs = head values (4 x S) after activations.
    std::vector<Eigen::MatrixXd> activations;
    Eigen::MatrixXd outputs;
    uint64_t model_revision = 0;
};

struct ParamGrads {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;

    static ParamGrads zeros_like(const FieldModel& model);
    void set_zero();
    void add(const ParamGrads& other);
    bool all_finite() const;
};

// Batched forward: features is (input_dim x S); outputs resized to (4 x S).
// Rows 0..2 are RGB in [0,1], row 3 is sigma >= 0.
void mlp_forward(const FieldModel& model, const Eigen::MatrixXd& features,
                 Eigen::MatrixXd& outputs, ForwardTape* tape);

// Batched reverse pass. upstream is dLoss/doutputs (4 x S). Parameter
// gradients are *accumulated* into grads; input_grads (if non-null) is
// resized to (input_dim x S) and overwritten.
void mlp_backward(const FieldModel& model, const ForwardTape& tape,
                  const Eigen::MatrixXd& upstream, ParamGrads& grads,
                  Eigen::MatrixXd* input_grads);

// Single-sample convenience wrappers.
std::pair<SampleOutput, ForwardTape> forward(const FieldModel& model,
                                             const Eigen::VectorXd& feature);
std::pair<ParamGrads, Eigen::VectorXd> backward(const FieldModel& model, const ForwardTape& tape,
                                                const Eigen::Vector4d& upstream);

// Versioned binary model container (byte layout documented in the README).
void save_model(const FieldModel& model, const std::string& path);
FieldModel load_model(const std::string& path);

}  // namespace nerfba
