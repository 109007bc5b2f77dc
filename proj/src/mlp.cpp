#include "nerfba/mlp.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "nerfba/errors.hpp"
#include "nerfba/rng.hpp"

namespace nerfba {

namespace {

inline double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }
inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_widths(const std::vector<int>& widths) {
    if (widths.size() < 2) throw ValidationError("field model: need at least input and output widths");
    if (widths.back() != 4) throw ValidationError("field model: output width must be 4 (RGB + sigma)");
    for (int w : widths) {
        if (w < 1) throw ValidationError("field model: widths must be positive");
    }
}

}  // namespace

size_t FieldModel::parameter_count() const {
    size_t n = 0;
    for (size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
}

FieldModel init_field_model(const std::vector<int>& widths, uint64_t seed) {
    check_widths(widths);
    FieldModel model;
    model.widths = widths;
    model.seed = seed;
    Rng rng(seed ^ 0x6d6c70696e697400ULL);
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        int in = widths[l], out = widths[l + 1];
        double bound = std::sqrt(6.0 / in);
        Eigen::MatrixXd w(out, in);
        for (int r = 0; r < out; ++r) {
            for (int c = 0; c < in; ++c) w(r, c) = rng.uniform(-bound, bound);
        }
        model.weights.push_back(std::move(w));
        model.biases.push_back(Eigen::VectorXd::Zero(out));
    }
    return model;
}

ParamGrads ParamGrads::zeros_like(const FieldModel& model) {
    ParamGrads g;
    for (size_t l = 0; l < model.weights.size(); ++l) {
        g.weights.emplace_back(Eigen::MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols()));
        g.biases.emplace_back(Eigen::VectorXd::Zero(model.biases[l].size()));
    }
    return g;
}

void ParamGrads::set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
}

void ParamGrads::add(const ParamGrads& other) {
    for (size_t l = 0; l < weights.size(); ++l) {
        weights[l] += other.weights[l];
        biases[l] += other.biases[l];
    }
}

bool ParamGrads::all_finite() const {
    for (const auto& w : weights) {
        if (!w.allFinite()) return false;
    }
    for (const auto& b : biases) {
        if (!b.allFinite()) return false;
    }
    return true;
}

void mlp_forward(const FieldModel& model, const Eigen::MatrixXd& features,
                 Eigen::MatrixXd& outputs, ForwardTape* tape) {
    if (features.rows() != model.input_dim()) {
        throw ValidationError("mlp_forward: feature dimension does not match model input width");
    }
    const Eigen::Index s = features.cols();
    const size_t layers = model.weights.size();

    if (tape) {
        tape->activations.resize(layers);  // activations[0..layers-1], head output separate
        tape->model_revision = model.revision;
    }

    const Eigen::MatrixXd* prev = &features;
    if (tape) tape->activations[0] = features;
    Eigen::MatrixXd buf_a, buf_b;
    for (size_t l = 0; l + 1 < layers; ++l) {
        Eigen::MatrixXd& dst = tape ? tape->activations[l + 1] : (prev == &buf_a ? buf_b : buf_a);
        dst.resize(model.weights[l].rows(), s);
        dst.noalias() = model.weights[l] * (*prev);
        dst.colwise() += model.biases[l];
        dst = dst.cwiseMax(0.0);
        prev = &dst;
    }

    outputs.resize(4, s);
    outputs.noalias() = model.weights.back() * (*prev);
    outputs.colwise() += model.biases.back();
    for (Eigen::Index i = 0; i < s; ++i) {
        outputs(0, i) = sigmoid(outputs(0, i));
        outputs(1, i) = sigmoid(outputs(1, i));
        outputs(2, i) = sigmoid(outputs(2, i));
        outputs(3, i) = softplus(outputs(3, i));
    }
    if (tape) tape->outputs = outputs;
}

void mlp_backward(const FieldModel& model, const ForwardTape& tape,
                  const Eigen::MatrixXd& upstream, ParamGrads& grads,
                  Eigen::MatrixXd* input_grads) {
    const size_t layers = model.weights.size();
    if (tape.model_revision != model.revision) {
        throw ValidationError("mlp_backward: tape was recorded against a different model revision");
    }
    if (tape.activations.size() != layers || tape.activations[0].rows() != model.input_dim()) {
        throw ValidationError("mlp_backward: tape does not match model shape");
    }
    if (upstream.rows() != 4 || upstream.cols() != tape.outputs.cols()) {
        throw ValidationError("mlp_backward: upstream shape mismatch");
    }
    if (grads.weights.size() != layers) {
        throw ValidationError("mlp_backward: gradient accumulator shape mismatch");
    }

    // Head activations: sigmoid' = y(1-y); softplus'(z) = 1 - exp(-softplus(z)).
    const Eigen::Index s = upstream.cols();
    Eigen::MatrixXd g(4, s);
    for (Eigen::Index i = 0; i < s; ++i) {
        for (int c = 0; c < 3; ++c) {
            double y = tape.outputs(c, i);
            g(c, i) = upstream(c, i) * y * (1.0 - y);
        }
        g(3, i) = upstream(3, i) * (1.0 - std::exp(-tape.outputs(3, i)));
    }

    Eigen::MatrixXd next;
    for (size_t l = layers; l-- > 0;) {
        grads.weights[l].noalias() += g * tape.activations[l].transpose();
        grads.biases[l] += g.rowwise().sum();
        if (l == 0) {
            if (input_grads) input_grads->noalias() = model.weights[0].transpose() * g;
            break;
        }
        next.noalias() = model.weights[l].transpose() * g;
        // ReLU mask from the post-activation values.
        next = (tape.activations[l].array() > 0.0).select(next, 0.0);
        g.swap(next);
    }
}

std::pair<SampleOutput, ForwardTape> forward(const FieldModel& model, const Eigen::VectorXd& feature) {
    ForwardTape tape;
    Eigen::MatrixXd out;
    mlp_forward(model, feature, out, &tape);
    SampleOutput y;
    y.rgb = out.col(0).head<3>();
    y.sigma = out(3, 0);
    return {y, std::move(tape)};
}

std::pair<ParamGrads, Eigen::VectorXd> backward(const FieldModel& model, const ForwardTape& tape,
                                                const Eigen::Vector4d& upstream) {
    ParamGrads grads = ParamGrads::zeros_like(model);
    Eigen::MatrixXd input_grads;
    mlp_backward(model, tape, upstream, grads, &input_grads);
    return {std::move(grads), Eigen::VectorXd(input_grads.col(0))};
}

// ---- checkpoint io ------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'N', 'B', 'M', 'C'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("truncated model file: " + path);
    return v;
}

}  // namespace

void save_model(const FieldModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kModelMagic, 4);
    write_pod<uint32_t>(out, 1);  // version
    write_pod<uint64_t>(out, model.seed);
    write_pod<uint32_t>(out, static_cast<uint32_t>(model.widths.size()));
    for (int w : model.widths) write_pod<uint32_t>(out, static_cast<uint32_t>(w));
    for (size_t l = 0; l < model.weights.size(); ++l) {
        const auto& w = model.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) write_pod<double>(out, w(r, c));
        }
        for (Eigen::Index r = 0; r < model.biases[l].size(); ++r) write_pod<double>(out, model.biases[l](r));
    }
    if (!out) throw IoError("short write: " + path);
}

FieldModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kModelMagic, 4) != 0) throw ParseError("not a model file: " + path);
    uint32_t version = read_pod<uint32_t>(in, path);
    if (version != 1) throw ParseError("unsupported model version: " + path);
    uint64_t seed = read_pod<uint64_t>(in, path);
    uint32_t n_widths = read_pod<uint32_t>(in, path);
    if (n_widths < 2 || n_widths > 64) throw ParseError("implausible width count: " + path);
    std::vector<int> widths(n_widths);
    for (auto& w : widths) w = static_cast<int>(read_pod<uint32_t>(in, path));
    check_widths(widths);
    FieldModel model;
    model.widths = widths;
    model.seed = seed;
    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        Eigen::MatrixXd w(widths[l + 1], widths[l]);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = read_pod<double>(in, path);
        }
        Eigen::VectorXd b(widths[l + 1]);
        for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = read_pod<double>(in, path);
        model.weights.push_back(std::move(w));
        model.biases.push_back(std::move(b));
    }
    return model;
}

}  // namespace nerfba
