#include "nerfba/renderer.hpp"

#include <cmath>

#include "nerfba/errors.hpp"

namespace nerfba {

namespace {

constexpr int kChunkRays = 64;
constexpr double kDepthEps = 1e-10;

}  // namespace

void composite_into(std::span<const SampleOutput> samples, const DepthSamples& depths,
                    const Vec3& background, CompositeTape& tape, Vec3& color,
                    double& expected_depth) {
    const int n = depths.count();
    if (static_cast<int>(samples.size()) != n) {
        throw ValidationError("composite: sample count does not match depth bin count");
    }
    tape.delta.resize(n);
    tape.alpha.resize(n);
    tape.trans.resize(n);
    tape.mid.resize(n);
    tape.samples.assign(samples.begin(), samples.end());
    tape.background = background;

    color.setZero();
    double t = 1.0;
    double weight_sum = 0.0;
    double depth_acc = 0.0;
    for (int i = 0; i < n; ++i) {
        double delta = depths.width(i);
        double a = 1.0 - std::exp(-samples[i].sigma * delta);
        double w = t * a;
        color += w * samples[i].rgb;
        weight_sum += w;
        depth_acc += w * depths.midpoint(i);
        tape.delta[i] = delta;
        tape.alpha[i] = a;
        tape.trans[i] = t;
        tape.mid[i] = depths.midpoint(i);
        t *= 1.0 - a;
    }
    tape.tail_trans = t;
    color += t * background;
    expected_depth = depth_acc / std::max(weight_sum, kDepthEps);
}

RenderResult composite(std::span<const SampleOutput> samples, const DepthSamples& depths,
                       const Vec3& background, CompositeTape* tape) {
    CompositeTape local;
    CompositeTape& t = tape ? *tape : local;
    RenderResult result;
    composite_into(samples, depths, background, t, result.color, result.expected_depth);
    const int n = depths.count();
    result.weights.resize(n);
    result.transmittance.resize(n);
    for (int i = 0; i < n; ++i) {
        result.weights(i) = t.trans[i] * t.alpha[i];
        result.transmittance(i) = t.trans[i];
    }
    return result;
}

void composite_backward_into(const CompositeTape& tape, const Vec3& dloss_dcolor,
                             double* upstream, int stride) {
    const int n = static_cast<int>(tape.alpha.size());
    // d color / d sigma_i = delta_i * (T_{i+1} c_i - sum_{j>i} w_j c_j - T_bg bg).
    double suffix = tape.tail_trans * tape.background.dot(dloss_dcolor);
    for (int i = n - 1; i >= 0; --i) {
        double* col = upstream + static_cast<size_t>(stride) * i;
        double w = tape.trans[i] * tape.alpha[i];
        double c_dot = tape.samples[i].rgb.dot(dloss_dcolor);
        double t_next = tape.trans[i] * (1.0 - tape.alpha[i]);
        col[0] = w * dloss_dcolor(0);
        col[1] = w * dloss_dcolor(1);
        col[2] = w * dloss_dcolor(2);
        col[3] = tape.delta[i] * (t_next * c_dot - suffix);
        suffix += w * c_dot;
    }
}

std::vector<Eigen::Vector4d> composite_backward(const CompositeTape& tape,
                                                const Vec3& dloss_dcolor) {
    const int n = static_cast<int>(tape.alpha.size());
    std::vector<Eigen::Vector4d> out(n);
    std::vector<double> buf(static_cast<size_t>(4) * n);
    composite_backward_into(tape, dloss_dcolor, buf.data(), 4);
    for (int i = 0; i < n; ++i) {
        out[i] = Eigen::Vector4d(buf[4 * i], buf[4 * i + 1], buf[4 * i + 2], buf[4 * i + 3]);
    }
    return out;
}

PoseChain additive_chain(const Vec6& twist) {
    ExpJacobians j = exp_map_jacobians(twist);
    PoseChain c;
    for (int i = 0; i < 3; ++i) c.dR[i] = j.dR[i];
    c.dt_dphi = j.dt_dphi;
    c.dt_drho = j.dt_drho;
    return c;
}

PoseChain local_chain(const Vec6& xi, const PoseSE3& base) {
    ExpJacobians j = exp_map_jacobians(xi);
    PoseChain c;
    for (int i = 0; i < 3; ++i) {
        c.dR[i] = j.dR[i] * base.rotation;
        c.dt_dphi.col(i) = j.dt_dphi.col(i) + j.dR[i] * base.translation;
    }
    c.dt_drho = j.dt_drho;
    return c;
}

RenderEngine::RenderEngine(int workers) : pool_(workers > 0 ? workers : 1) {}

std::unique_ptr<RenderEngine::Workspace> RenderEngine::acquire_workspace() {
    std::lock_guard<std::mutex> lock(ws_mutex_);
    if (free_ws_.empty()) return std::make_unique<Workspace>();
    auto ws = std::move(free_ws_.back());
    free_ws_.pop_back();
    return ws;
}

void RenderEngine::release_workspace(std::unique_ptr<Workspace> ws) {
    std::lock_guard<std::mutex> lock(ws_mutex_);
    free_ws_.push_back(std::move(ws));
}

namespace {

// Sample positions/frustums for one chunk and write encoded features into
// the workspace. Per-sample metadata (distances, covariance coefficients)
// is kept for the encoding pullback.
void encode_chunk(std::span<const ViewContext> views, std::span<const RayJob> jobs,
                  size_t ray_begin, size_t ray_end, const RenderOptions& options,
                  Eigen::MatrixXd& features, std::vector<double>& mu,
                  std::vector<double>& cov_coeff, std::vector<Vec3>& dirs,
                  std::vector<double>& dir_norms) {
    const int n = options.samples_per_ray;
    const int dim = options.encoding.dim();
    const size_t rays = ray_end - ray_begin;
    features.resize(dim, static_cast<Eigen::Index>(rays) * n);
    mu.resize(rays * n);
    cov_coeff.assign(rays * n, 0.0);
    dirs.resize(rays);
    dir_norms.resize(rays);
    const bool integrated = options.encoding.mode == EncodingMode::integrated_pe;

    for (size_t r = 0; r < rays; ++r) {
        const RayJob& job = jobs[ray_begin + r];
        const ViewContext& vc = views[job.view];
        if (job.depths.count() != n) {
            throw ValidationError("render: ray depth bin count does not match samples_per_ray");
        }
        Vec3 dt = vc.pose.rotation * job.d_c;
        double norm = dt.norm();
        if (norm < 1e-300) throw ValidationError("render: zero ray direction");
        Vec3 d_w = dt / norm;
        dirs[r] = d_w;
        dir_norms[r] = norm;

        Ray ray;
        ray.origin = vc.pose.translation;
        ray.direction = d_w;
        ray.footprint_radius = job.footprint_radius;

        for (int i = 0; i < n; ++i) {
            size_t s = r * n + i;
            double* col = features.col(static_cast<Eigen::Index>(s)).data();
            if (integrated) {
                FrustumGaussian f = frustum_gaussian(ray, job.depths.bounds[i], job.depths.bounds[i + 1]);
                encode_frustum_into(col, f, options.encoding);
                mu[s] = f.mu_t;
                cov_coeff[s] = f.sigma_t2 - f.sigma_r2;
            } else {
                double t = job.depths.midpoint(i);
                encode_point_into(col, ray.origin + t * d_w, options.encoding);
                mu[s] = t;
            }
        }
    }
}

}  // namespace

void RenderEngine::render_rays(const FieldModel& model, std::span<const ViewContext> views,
                               std::span<const RayJob> jobs, const RenderOptions& options,
                               std::vector<Vec3>& colors, std::vector<double>* depths) {
    const size_t b = jobs.size();
    const int n = options.samples_per_ray;
    colors.resize(b);
    if (depths) depths->resize(b);
    const int chunks = static_cast<int>((b + kChunkRays - 1) / kChunkRays);

    pool_.run(chunks, [&](int c) {
        auto ws = acquire_workspace();
        size_t begin = static_cast<size_t>(c) * kChunkRays;
        size_t end = std::min(b, begin + kChunkRays);
        encode_chunk(views, jobs, begin, end, options, ws->features, ws->mu, ws->cov_coeff,
                     ws->dirs, ws->dir_norms);
        mlp_forward(model, ws->features, ws->outputs, nullptr);
        ws->samples.resize(n);
        for (size_t r = begin; r < end; ++r) {
            size_t base = (r - begin) * n;
            for (int i = 0; i < n; ++i) {
                ws->samples[i].rgb = ws->outputs.col(static_cast<Eigen::Index>(base + i)).head<3>();
                ws->samples[i].sigma = ws->outputs(3, static_cast<Eigen::Index>(base + i));
            }
            Vec3 color;
            double depth;
            composite_into(ws->samples, jobs[r].depths, options.background, ws->ctape, color, depth);
            colors[r] = color;
            if (depths) (*depths)[r] = depth;
        }
        release_workspace(std::move(ws));
    });
}

BatchGradResult RenderEngine::loss_and_grads(const FieldModel& model,
                                             std::span<const ViewContext> views,
                                             std::span<const RayJob> jobs,
                                             const RenderOptions& options) {
    const size_t b = jobs.size();
    if (b == 0) throw ValidationError("loss_and_grads: empty ray batch");
    const int n = options.samples_per_ray;
    const size_t n_views = views.size();
    const int chunks = static_cast<int>((b + kChunkRays - 1) / kChunkRays);
    const bool integrated = options.encoding.mode == EncodingMode::integrated_pe;

    // Per-chunk accumulators, reduced in chunk order below.
    std::vector<ParamGrads> chunk_theta(chunks);
    std::vector<std::vector<Mat3>> chunk_m(chunks);
    std::vector<std::vector<Vec3>> chunk_t(chunks);
    std::vector<double> ray_loss(b, 0.0);
    BatchGradResult result;
    result.colors.resize(b);

    pool_.run(chunks, [&](int c) {
        auto ws = acquire_workspace();
        size_t begin = static_cast<size_t>(c) * kChunkRays;
        size_t end = std::min(b, begin + kChunkRays);
        encode_chunk(views, jobs, begin, end, options, ws->features, ws->mu, ws->cov_coeff,
                     ws->dirs, ws->dir_norms);
        mlp_forward(model, ws->features, ws->outputs, &ws->tape);

        const Eigen::Index s_total = ws->outputs.cols();
        ws->upstream.resize(4, s_total);
        ws->samples.resize(n);
        for (size_t r = begin; r < end; ++r) {
            size_t base = (r - begin) * n;
            for (int i = 0; i < n; ++i) {
                ws->samples[i].rgb = ws->outputs.col(static_cast<Eigen::Index>(base + i)).head<3>();
                ws->samples[i].sigma = ws->outputs(3, static_cast<Eigen::Index>(base + i));
            }
            Vec3 color;
            double depth;
            composite_into(ws->samples, jobs[r].depths, options.background, ws->ctape, color, depth);
            result.colors[r] = color;
            Vec3 residual = color - jobs[r].target;
            ray_loss[r] = residual.squaredNorm();
            Vec3 dcolor = (2.0 / static_cast<double>(b)) * residual;
            composite_backward_into(ws->ctape, dcolor,
                                    ws->upstream.col(static_cast<Eigen::Index>(base)).data(),
                                    4);
        }

        chunk_theta[c] = ParamGrads::zeros_like(model);
        mlp_backward(model, ws->tape, ws->upstream, chunk_theta[c], &ws->input_grads);

        chunk_m[c].assign(n_views, Mat3::Zero());
        chunk_t[c].assign(n_views, Vec3::Zero());
        for (size_t r = begin; r < end; ++r) {
            size_t base = (r - begin) * n;
            const Vec3& d_w = ws->dirs[r - begin];
            Vec3 g_dw = Vec3::Zero();
            Vec3 g_t = Vec3::Zero();
            for (int i = 0; i < n; ++i) {
                size_t s = base + i;
                const double* col = ws->features.col(static_cast<Eigen::Index>(s)).data();
                const double* up = ws->input_grads.col(static_cast<Eigen::Index>(s)).data();
                if (integrated) {
                    pullback_frustum(col, up, ws->mu[s], ws->cov_coeff[s], d_w,
                                     options.full_chain_ipe, options.encoding, g_dw, g_t);
                } else {
                    pullback_point(col, up, ws->mu[s], options.encoding, g_dw, g_t);
                }
            }
            // Through the normalization d_w = R d_c / |R d_c|.
            Vec3 g_dtilde = (g_dw - d_w * d_w.dot(g_dw)) / ws->dir_norms[r - begin];
            chunk_m[c][jobs[r].view] += g_dtilde * jobs[r].d_c.transpose();
            chunk_t[c][jobs[r].view] += g_t;
        }
        release_workspace(std::move(ws));
    });

    result.theta = ParamGrads::zeros_like(model);
    std::vector<Mat3> m_view(n_views, Mat3::Zero());
    std::vector<Vec3> t_view(n_views, Vec3::Zero());
    for (int c = 0; c < chunks; ++c) {
        result.theta.add(chunk_theta[c]);
        for (size_t v = 0; v < n_views; ++v) {
            m_view[v] += chunk_m[c][v];
            t_view[v] += chunk_t[c][v];
        }
    }
    for (double l : ray_loss) result.loss += l;
    result.loss /= static_cast<double>(b);

    result.pose_grads.assign(n_views, Vec6::Zero());
    for (size_t v = 0; v < n_views; ++v) {
        const PoseChain& chain = views[v].chain;
        Vec6 g;
        g.head<3>() = chain.dt_drho.transpose() * t_view[v];
        for (int i = 0; i < 3; ++i) {
            g(3 + i) = chain.dR[i].cwiseProduct(m_view[v]).sum() + chain.dt_dphi.col(i).dot(t_view[v]);
        }
        result.pose_grads[v] = g;
    }
    return result;
}

RenderResult render_pixel(const PoseSE3& pose, const Intrinsics& intrinsics,
                          const Eigen::Vector2d& pixel, const FieldModel& model,
                          const RenderOptions& options, Rng* jitter) {
    Ray ray = make_ray(pose, intrinsics, pixel);
    DepthSamples depths = stratified_depths(options.near, options.far, options.samples_per_ray, jitter);
    const int n = options.samples_per_ray;
    Eigen::MatrixXd features(options.encoding.dim(), n);
    for (int i = 0; i < n; ++i) {
        if (options.encoding.mode == EncodingMode::integrated_pe) {
            FrustumGaussian f = frustum_gaussian(ray, depths.bounds[i], depths.bounds[i + 1]);
            encode_frustum_into(features.col(i).data(), f, options.encoding);
        } else {
            encode_point_into(features.col(i).data(), ray.origin + depths.midpoint(i) * ray.direction,
                              options.encoding);
        }
    }
    Eigen::MatrixXd outputs;
    mlp_forward(model, features, outputs, nullptr);
    std::vector<SampleOutput> samples(n);
    for (int i = 0; i < n; ++i) {
        samples[i].rgb = outputs.col(i).head<3>();
        samples[i].sigma = outputs(3, i);
    }
    return composite(samples, depths, options.background, nullptr);
}

PixelPoseGrad pixel_loss_pose_grad(const Vec6& twist, const Intrinsics& intrinsics,
                                   const Eigen::Vector2d& pixel, const Vec3& target,
                                   const FieldModel& model, const RenderOptions& options,
                                   const DepthSamples& depths, PoseGradMethod method) {
    RayJob job;
    job.view = 0;
    job.d_c = camera_dir(intrinsics, pixel);
    job.footprint_radius = (1.0 / std::abs(intrinsics.fx)) * 2.0 / std::sqrt(12.0);
    job.target = target;
    job.depths = depths;

    auto render_color = [&](const Vec6& tw) {
        ViewContext vc;
        vc.pose = exp_map(tw);
        vc.chain = additive_chain(tw);
        RenderEngine engine(1);
        std::vector<Vec3> colors;
        engine.render_rays(model, std::span<const ViewContext>(&vc, 1),
                           std::span<const RayJob>(&job, 1), options, colors, nullptr);
        return colors[0];
    };

    PixelPoseGrad out;
    if (method == PoseGradMethod::analytic) {
        ViewContext vc;
        vc.pose = exp_map(twist);
        vc.chain = additive_chain(twist);
        RenderEngine engine(1);
        BatchGradResult g = engine.loss_and_grads(model, std::span<const ViewContext>(&vc, 1),
                                                  std::span<const RayJob>(&job, 1), options);
        out.loss = g.loss;
        out.d_twist = g.pose_grads[0];
        out.color = g.colors[0];
        return out;
    }

    Vec3 color = render_color(twist);
    out.color = color;
    out.loss = (color - target).squaredNorm();
    const double h = 1e-6;
    for (int i = 0; i < 6; ++i) {
        Vec6 tp = twist, tm = twist;
        tp(i) += h;
        tm(i) -= h;
        double lp = (render_color(tp) - target).squaredNorm();
        double lm = (render_color(tm) - target).squaredNorm();
        out.d_twist(i) = (lp - lm) / (2.0 * h);
    }
    return out;
}

}  // namespace nerfba
