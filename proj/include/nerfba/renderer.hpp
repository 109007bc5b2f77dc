#pragma once

#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include "nerfba/encoding.hpp"
#include "nerfba/mlp.hpp"
#include "nerfba/sampling.hpp"
#include "nerfba/threadpool.hpp"

namespace nerfba {

struct RenderResult {
    Vec3 color = Vec3::Zero();
    double expected_depth = 0.0;
    Eigen::VectorXd weights;        // w_i = T_i * (1 - exp(-sigma_i delta_i))
    Eigen::VectorXd transmittance;  // T_i before sample i
};

// Everything composite() needs to replay its reverse pass.
struct CompositeTape {
    std::vector<double> delta;
    std::vector<double> alpha;
    std::vector<double> trans;  // T_i, length N
    std::vector<double> mid;    // bin midpoints (expected depth)
    std::vector<SampleOutput> samples;
    double tail_trans = 1.0;    // T after the last sample
    Vec3 background = Vec3::Zero();
};

// Quadrature compositing over one ray; delta_i is the bin width (the last
// sample uses the final bin's width). Allocation-free variant for the hot
// path plus a spec-shaped wrapper.
void composite_into(std::span<const SampleOutput> samples, const DepthSamples& depths,
                    const Vec3& background, CompositeTape& tape, Vec3& color,
                    double& expected_depth);
RenderResult composite(std::span<const SampleOutput> samples, const DepthSamples& depths,
                       const Vec3& background, CompositeTape* tape = nullptr);

// Gradients of (dloss_dcolor . color) with respect to each sample's
// (rgb, sigma). upstream must hold 4 * N doubles, written column-wise.
void composite_backward_into(const CompositeTape& tape, const Vec3& dloss_dcolor,
                             double* upstream, int stride);
std::vector<Eigen::Vector4d> composite_backward(const CompositeTape& tape,
                                                const Vec3& dloss_dcolor);

struct RenderOptions {
    EncodingConfig encoding;
    int samples_per_ray = 48;
    double near = 2.0;
    double far = 6.0;
    Vec3 background = Vec3::Ones();
    // Include the covariance path of the integrated-encoding Jacobian in
    // pose gradients (the approximate form drops it).
    bool full_chain_ipe = false;
};

// Partial derivatives of the active pose parameterization: column/entry i
// is the derivative with respect to parameter component i.
struct PoseChain {
    Mat3 dR[3];
    Mat3 dt_dphi;
    Mat3 dt_drho;
};

PoseChain additive_chain(const Vec6& twist);
PoseChain local_chain(const Vec6& xi, const PoseSE3& base);

struct ViewContext {
    PoseSE3 pose;
    PoseChain chain;
};

// One ray's work order. Depth bins are frozen by the caller so that
// gradients and finite differences see the same quadrature.
struct RayJob {
    int view = 0;
    Vec3 d_c = Vec3::UnitZ();  // camera-space direction (unnormalized)
    double footprint_radius = 0.0;
    Vec3 target = Vec3::Zero();
    DepthSamples depths;
};

struct BatchGradResult {
    double loss = 0.0;  // mean over rays of |color - target|^2
    ParamGrads theta;
    std::vector<Vec6> pose_grads;  // per view, [d rho | d phi]
    std::vector<Vec3> colors;
};

// Data-parallel ray renderer. Work is split into fixed-size ray chunks;
// all reductions happen in chunk order, so results do not depend on the
// worker count or scheduling.
class RenderEngine {
public:
    explicit RenderEngine(int workers);

    void render_rays(const FieldModel& model, std::span<const ViewContext> views,
                     std::span<const RayJob> jobs, const RenderOptions& options,
                     std::vector<Vec3>& colors, std::vector<double>* depths);

    BatchGradResult loss_and_grads(const FieldModel& model, std::span<const ViewContext> views,
                                   std::span<const RayJob> jobs, const RenderOptions& options);

    ThreadPool& pool() { return pool_; }

private:
    struct Workspace {
        Eigen::MatrixXd features;     // D x S
        Eigen::MatrixXd outputs;      // 4 x S
        Eigen::MatrixXd upstream;     // 4 x S
        Eigen::MatrixXd input_grads;  // D x S
        ForwardTape tape;
        CompositeTape ctape;
        std::vector<SampleOutput> samples;
        std::vector<double> mu;         // per-sample distance along the ray
        std::vector<double> cov_coeff;  // per-sample sigma_t^2 - sigma_r^2
        std::vector<Vec3> dirs;         // per-ray unit direction
        std::vector<double> dir_norms;  // per-ray |R d_c|
    };

    std::unique_ptr<Workspace> acquire_workspace();
    void release_workspace(std::unique_ptr<Workspace> ws);

    ThreadPool pool_;
    std::mutex ws_mutex_;
    std::vector<std::unique_ptr<Workspace>> free_ws_;
};

// Full per-pixel render (spec surface): unprojects the pixel, samples
// depths, encodes, evaluates the field, composites.
RenderResult render_pixel(const PoseSE3& pose, const Intrinsics& intrinsics,
                          const Eigen::Vector2d& pixel, const FieldModel& model,
                          const RenderOptions& options, Rng* jitter = nullptr);

enum class PoseGradMethod { analytic, finite_difference };

struct PixelPoseGrad {
    double loss = 0.0;
    Vec6 d_twist = Vec6::Zero();
    Vec3 color = Vec3::Zero();
};

// Gradient of |render(pixel) - target|^2 with respect to the 6-vector twist,
// either through the analytic encoding Jacobians or central differences on
// the full render (depth bins and footprint statistics held fixed).
PixelPoseGrad pixel_loss_pose_grad(const Vec6& twist, const Intrinsics& intrinsics,
                                   const Eigen::Vector2d& pixel, const Vec3& target,
                                   const FieldModel& model, const RenderOptions& options,
                                   const DepthSamples& depths, PoseGradMethod method);

}  // namespace nerfba
