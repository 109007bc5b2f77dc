#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nerfba/encoding.hpp"
#include "nerfba/metrics.hpp"
#include "nerfba/renderer.hpp"
#include "nerfba/scene.hpp"

namespace nerfba {

struct LrSchedule {
    double start = 1e-3;
    double end = 1e-5;
};

// Geometric interpolation start * (end/start)^(iter/total).
double lr_at(int iter, double start, double end, int total);

struct AdamBuf {
    Eigen::VectorXd m, v;
    int64_t t = 0;
};

// Standard Adam with beta = (0.9, 0.999), eps = 1e-8, bias correction.
// Throws NanAbort on non-finite gradients.
void adam_step(double* params, const double* grads, size_t n, AdamBuf& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

enum class PoseUpdateRule { additive, multiplicative };

// A camera pose as an optimizable parameter: either the stored twist itself
// (additive, the default) or a local correction composed onto a fixed base.
struct PoseParam {
    Vec6 value = Vec6::Zero();
    PoseSE3 base;  // identity / unused for additive
    PoseUpdateRule rule = PoseUpdateRule::additive;

    static PoseParam from_pose(const PoseSE3& pose, PoseUpdateRule rule);
    PoseSE3 pose() const;
    ViewContext context() const;
};

struct TrainConfig {
    int iterations = 20000;
    int rays_per_batch = 1024;
    int samples_per_ray = 48;
    EncodingMode mode = EncodingMode::integrated_pe;
    int bands = 10;
    LrSchedule lr_field{5e-4, 1e-4};
    LrSchedule lr_pose{1e-3, 1e-5};
    // Annealing window as fractions of the total iteration budget; active
    // only in annealed_pe mode.
    double anneal_start_frac = 0.1;
    double anneal_end_frac = 0.5;
    std::vector<int> hidden{64, 64, 64};
    uint64_t seed = 1;
    int eval_every = 500;
    int eval_train_views = 4;
    double near = -1.0;  // < 0: take from the dataset
    double far = -1.0;
    int workers = 0;  // 0: hardware concurrency
    bool deterministic = false;
    PoseUpdateRule pose_update = PoseUpdateRule::additive;
    // Covariance path of the IPE pose Jacobian during training (the method
    // under study drops it).
    bool full_chain_ipe = false;
    int checkpoint_every = 0;  // 0: no periodic checkpoints
    std::string mode_tag;      // defaults to the encoding mode name
};

struct OptimState {
    std::vector<AdamBuf> theta;  // one per weight/bias tensor
    std::vector<AdamBuf> poses;  // one per view
    int iteration = 0;
};

struct TrainResult {
    FieldModel model;
    std::vector<PoseSE3> poses;
    std::vector<ExperimentRecord> records;
};

struct TrainCallbacks {
    std::function<void(const ExperimentRecord&)> on_record;
    // Called at the checkpoint cadence, at the end, and right before a
    // NanAbort is raised.
    std::function<void(const FieldModel&, const std::vector<PoseParam>&, const OptimState&, int iter)>
        on_checkpoint;
};

// Convenience wrapper: photometric loss and gradients for an explicit batch.
BatchGradResult loss_and_grads(RenderEngine& engine, const FieldModel& model,
                               std::span<const PoseParam> poses, std::span<const RayJob> jobs,
                               const RenderOptions& options);

// Joint optimization of the field and all training-view poses.
TrainResult train(const Dataset& dataset, std::span<const PoseSE3> init_poses,
                  const TrainConfig& config, const TrainCallbacks& callbacks = {});

// Full training checkpoint: model, pose parameters (with resolved poses),
// optimizer state. Byte layout documented in the README.
void save_checkpoint(const std::string& path, const FieldModel& model,
                     std::span<const PoseParam> poses, const OptimState& state, int iteration,
                     const std::string& mode_tag);

struct Checkpoint {
    FieldModel model;
    std::vector<PoseParam> pose_params;
    std::vector<PoseSE3> poses;
    OptimState state;
    int iteration = 0;
    std::string mode_tag;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace nerfba
