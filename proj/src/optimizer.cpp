#include "nerfba/optimizer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "nerfba/errors.hpp"

namespace nerfba {

double lr_at(int iter, double start, double end, int total) {
    if (!(start > 0.0) || !(end > 0.0)) throw ValidationError("lr_at: learning rates must be positive");
    if (iter < 0 || iter > total) throw ValidationError("lr_at: iter outside [0, total]");
    if (total == 0) return start;
    return start * std::pow(end / start, static_cast<double>(iter) / total);
}

void adam_step(double* params, const double* grads, size_t n, AdamBuf& state, double lr,
               double beta1, double beta2, double eps) {
    if (state.m.size() != static_cast<Eigen::Index>(n)) {
        state.m = Eigen::VectorXd::Zero(n);
        state.v = Eigen::VectorXd::Zero(n);
        state.t = 0;
    }
    for (size_t i = 0; i < n; ++i) {
        if (!std::isfinite(grads[i])) {
            throw NanAbort("adam_step: non-finite gradient at component " + std::to_string(i));
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < n; ++i) {
        double g = grads[i];
        state.m(i) = beta1 * state.m(i) + (1.0 - beta1) * g;
        state.v(i) = beta2 * state.v(i) + (1.0 - beta2) * g * g;
        double mhat = state.m(i) / bc1;
        double vhat = state.v(i) / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

PoseParam PoseParam::from_pose(const PoseSE3& pose, PoseUpdateRule rule) {
    PoseParam p;
    p.rule = rule;
    if (rule == PoseUpdateRule::additive) {
        if (!pose.twist_valid) {
            throw ValidationError("PoseParam: additive rule needs a valid twist (rotation too close to pi)");
        }
        p.value = pose.twist;
        p.base = PoseSE3{};
    } else {
        p.value = Vec6::Zero();
        p.base = pose;
    }
    return p;
}

PoseSE3 PoseParam::pose() const {
    if (rule == PoseUpdateRule::additive) return exp_map(value);
    return compose(exp_map(value), base);
}

ViewContext PoseParam::context() const {
    ViewContext vc;
    vc.pose = pose();
    vc.chain = rule == PoseUpdateRule::additive ? additive_chain(value) : local_chain(value, base);
    return vc;
}

BatchGradResult loss_and_grads(RenderEngine& engine, const FieldModel& model,
                               std::span<const PoseParam> poses, std::span<const RayJob> jobs,
                               const RenderOptions& options) {
    std::vector<ViewContext> views;
    views.reserve(poses.size());
    for (const auto& p : poses) views.push_back(p.context());
    return engine.loss_and_grads(model, views, jobs, options);
}

namespace {

struct EvalViews {
    std::vector<int> train;  // evenly spaced subset used for train PSNR
    std::vector<int> test;
};

Image render_view(RenderEngine& engine, const FieldModel& model, const PoseSE3& pose,
                  const Intrinsics& k, const RenderOptions& options) {
    std::vector<ViewContext> vc(1);
    vc[0].pose = pose;
    std::vector<RayJob> jobs;
    jobs.reserve(static_cast<size_t>(k.width) * k.height);
    const double footprint = (1.0 / std::abs(k.fx)) * 2.0 / std::sqrt(12.0);
    DepthSamples depths = stratified_depths(options.near, options.far, options.samples_per_ray, nullptr);
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            RayJob job;
            job.view = 0;
            job.d_c = camera_dir(k, Eigen::Vector2d(x, y));
            job.footprint_radius = footprint;
            job.depths = depths;
            jobs.push_back(std::move(job));
        }
    }
    std::vector<Vec3> colors;
    engine.render_rays(model, vc, jobs, options, colors, nullptr);
    Image img(k.width, k.height);
    size_t i = 0;
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x, ++i) {
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = colors[i](c);
        }
    }
    return img;
}

SimilarityTransform invert(const SimilarityTransform& s) {
    SimilarityTransform inv;
    inv.scale = 1.0 / s.scale;
    inv.rotation = s.rotation.transpose();
    inv.translation = -(inv.scale) * (inv.rotation * s.translation);
    return inv;
}

}  // namespace

TrainResult train(const Dataset& dataset, std::span<const PoseSE3> init_poses,
                  const TrainConfig& config, const TrainCallbacks& callbacks) {
    const std::vector<int> train_idx = dataset.train_indices();
    const std::vector<int> test_idx = dataset.test_indices();
    const size_t n_train = train_idx.size();
    if (n_train == 0) throw ValidationError("train: dataset has no training views");
    if (init_poses.size() != n_train) throw ValidationError("train: need one initial pose per training view");
    if (config.iterations < 0 || config.rays_per_batch < 1) throw ValidationError("train: bad budget");
    if (!(config.lr_field.end <= config.lr_field.start) || !(config.lr_pose.end <= config.lr_pose.start)) {
        throw ValidationError("train: schedule end must not exceed start");
    }

    const Intrinsics& k = dataset.intrinsics;
    RenderOptions options;
    options.encoding.bands = config.bands;
    options.encoding.mode = config.mode;
    options.encoding.include_identity = true;
    options.samples_per_ray = config.samples_per_ray;
    options.near = config.near > 0.0 ? config.near : dataset.near;
    options.far = config.far > 0.0 ? config.far : dataset.far;
    options.background = dataset.background;
    options.full_chain_ipe = config.full_chain_ipe;

    FieldModel model = [&] {
        std::vector<int> widths;
        widths.push_back(options.encoding.dim());
        for (int h : config.hidden) widths.push_back(h);
        widths.push_back(4);
        return init_field_model(widths, config.seed);
    }();

    std::vector<PoseParam> poses;
    poses.reserve(n_train);
    for (const auto& p : init_poses) poses.push_back(PoseParam::from_pose(p, config.pose_update));

    int workers = config.workers > 0 ? config.workers
                                     : static_cast<int>(std::thread::hardware_concurrency());
    RenderEngine engine(workers);

    OptimState state;
    state.theta.resize(2 * model.layer_count());
    state.poses.resize(n_train);

    const std::string mode_tag = config.mode_tag.empty() ? encoding_mode_name(config.mode) : config.mode_tag;
    const int anneal_start = static_cast<int>(std::llround(config.anneal_start_frac * config.iterations));
    const int anneal_end = static_cast<int>(std::llround(config.anneal_end_frac * config.iterations));

    const double footprint = (1.0 / std::abs(k.fx)) * 2.0 / std::sqrt(12.0);
    Rng rng(config.seed ^ 0x747261696e000000ULL);

    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();

    EvalViews eval_views;
    {
        int n_eval = std::min<int>(config.eval_train_views, static_cast<int>(n_train));
        if (n_eval < 1) n_eval = 1;
        for (int v = 0; v < n_eval; ++v) {
            eval_views.train.push_back(train_idx[v * n_train / n_eval]);
        }
        eval_views.test = test_idx;
    }

    auto emit_record = [&](int iter) {
        ExperimentRecord rec;
        rec.iter = iter;
        rec.mode = mode_tag;
        rec.wall_seconds =
            config.deterministic
                ? 0.0
                : std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        std::vector<PoseSE3> current;
        std::vector<PoseSE3> gt;
        current.reserve(n_train);
        gt.reserve(n_train);
        for (size_t i = 0; i < n_train; ++i) {
            current.push_back(poses[i].pose());
            gt.push_back(dataset.poses_gt[train_idx[i]]);
        }
        SimilarityTransform sim;  // identity when alignment is not possible
        if (n_train >= 3) {
            sim = procrustes_align(current, gt);
        }
        std::vector<PoseSE3> aligned;
        aligned.reserve(n_train);
        for (const auto& p : current) aligned.push_back(apply_similarity(sim, p));
        PoseErrors err = pose_errors(aligned, gt);
        rec.rot_err_deg = err.rotation_deg;
        rec.trans_err = err.translation;

        RenderOptions eval_options = options;
        if (config.mode == EncodingMode::annealed_pe) {
            eval_options.encoding.alpha = anneal_at(iter, anneal_start, anneal_end, config.bands).alpha;
        }
        double train_psnr = 0.0;
        for (size_t i = 0; i < eval_views.train.size(); ++i) {
            // Map dataset view index back to its slot in the pose array.
            size_t slot = std::find(train_idx.begin(), train_idx.end(), eval_views.train[i]) -
                          train_idx.begin();
            Image img = render_view(engine, model, poses[slot].pose(), k, eval_options);
            train_psnr += psnr(img, dataset.images[eval_views.train[i]]);
        }
        rec.train_psnr = train_psnr / std::max<size_t>(1, eval_views.train.size());

        if (!eval_views.test.empty()) {
            SimilarityTransform to_model = invert(sim);
            double tp = 0.0, ts = 0.0;
            for (int view : eval_views.test) {
                PoseSE3 test_pose = apply_similarity(to_model, dataset.poses_gt[view]);
                Image img = render_view(engine, model, test_pose, k, eval_options);
                tp += psnr(img, dataset.images[view]);
                ts += ssim(img, dataset.images[view]);
            }
            rec.test_psnr = tp / eval_views.test.size();
            rec.test_ssim = ts / eval_views.test.size();
        }

        result.records.push_back(rec);
        if (callbacks.on_record) callbacks.on_record(rec);
    };

    auto checkpoint = [&](int iter) {
        if (callbacks.on_checkpoint) callbacks.on_checkpoint(model, poses, state, iter);
    };

    emit_record(0);

    std::vector<RayJob> jobs(config.rays_per_batch);
    std::vector<ViewContext> views(n_train);
    for (int iter = 0; iter < config.iterations; ++iter) {
        if (config.mode == EncodingMode::annealed_pe) {
            options.encoding.alpha = anneal_at(iter, anneal_start, anneal_end, config.bands).alpha;
        }
        for (size_t v = 0; v < n_train; ++v) views[v] = poses[v].context();

        for (int r = 0; r < config.rays_per_batch; ++r) {
            int slot = static_cast<int>(rng.uniform_index(n_train));
            int view = train_idx[slot];
            int px = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(k.width)));
            int py = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(k.height)));
            RayJob& job = jobs[r];
            job.view = slot;
            job.d_c = camera_dir(k, Eigen::Vector2d(px, py));
            job.footprint_radius = footprint;
            job.target = Vec3(dataset.images[view].at(px, py, 0), dataset.images[view].at(px, py, 1),
                              dataset.images[view].at(px, py, 2));
            job.depths = stratified_depths(options.near, options.far, config.samples_per_ray, &rng);
        }

        BatchGradResult grads = engine.loss_and_grads(model, views, jobs, options);
        if (!std::isfinite(grads.loss)) {
            checkpoint(iter);
            throw NanAbort("train: non-finite loss at iteration " + std::to_string(iter));
        }

        const double lr_field = lr_at(iter, config.lr_field.start, config.lr_field.end, config.iterations);
        const double lr_pose = lr_at(iter, config.lr_pose.start, config.lr_pose.end, config.iterations);
        for (size_t l = 0; l < model.layer_count(); ++l) {
            adam_step(model.weights[l].data(), grads.theta.weights[l].data(),
                      static_cast<size_t>(model.weights[l].size()), state.theta[2 * l], lr_field);
            adam_step(model.biases[l].data(), grads.theta.biases[l].data(),
                      static_cast<size_t>(model.biases[l].size()), state.theta[2 * l + 1], lr_field);
        }
        model.revision += 1;
        for (size_t v = 0; v < n_train; ++v) {
            adam_step(poses[v].value.data(), grads.pose_grads[v].data(), 6, state.poses[v], lr_pose);
        }
        state.iteration = iter + 1;

        const int done = iter + 1;
        if (done % config.eval_every == 0 || done == config.iterations) emit_record(done);
        if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0) checkpoint(done);
    }

    checkpoint(config.iterations);
    result.model = std::move(model);
    result.poses.reserve(n_train);
    for (const auto& p : poses) result.poses.push_back(p.pose());
    return result;
}

// ---- checkpoint io ------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[4] = {'N', 'B', 'C', 'K'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T v;
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw ParseError("truncated checkpoint: " + path);
    return v;
}

void write_adam(std::ostream& out, const AdamBuf& buf) {
    write_pod<int64_t>(out, buf.t);
    write_pod<uint64_t>(out, static_cast<uint64_t>(buf.m.size()));
    for (Eigen::Index i = 0; i < buf.m.size(); ++i) write_pod<double>(out, buf.m(i));
    for (Eigen::Index i = 0; i < buf.v.size(); ++i) write_pod<double>(out, buf.v(i));
}

AdamBuf read_adam(std::istream& in, const std::string& path) {
    AdamBuf buf;
    buf.t = read_pod<int64_t>(in, path);
    uint64_t n = read_pod<uint64_t>(in, path);
    if (n > (1ULL << 32)) throw ParseError("implausible optimizer buffer size: " + path);
    buf.m.resize(static_cast<Eigen::Index>(n));
    buf.v.resize(static_cast<Eigen::Index>(n));
    for (uint64_t i = 0; i < n; ++i) buf.m(static_cast<Eigen::Index>(i)) = read_pod<double>(in, path);
    for (uint64_t i = 0; i < n; ++i) buf.v(static_cast<Eigen::Index>(i)) = read_pod<double>(in, path);
    return buf;
}

void write_mat3(std::ostream& out, const Mat3& m) {
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) write_pod<double>(out, m(r, c));
    }
}

Mat3 read_mat3(std::istream& in, const std::string& path) {
    Mat3 m;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m(r, c) = read_pod<double>(in, path);
    }
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const FieldModel& model,
                     std::span<const PoseParam> poses, const OptimState& state, int iteration,
                     const std::string& mode_tag) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(kCheckpointMagic, 4);
    write_pod<uint32_t>(out, 1);
    write_pod<uint64_t>(out, static_cast<uint64_t>(iteration));
    write_pod<uint32_t>(out, static_cast<uint32_t>(mode_tag.size()));
    out.write(mode_tag.data(), static_cast<std::streamsize>(mode_tag.size()));

    write_pod<uint64_t>(out, model.seed);
    write_pod<uint32_t>(out, static_cast<uint32_t>(model.widths.size()));
    for (int w : model.widths) write_pod<uint32_t>(out, static_cast<uint32_t>(w));
    for (size_t l = 0; l < model.weights.size(); ++l) {
        const auto& w = model.weights[l];
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) write_pod<double>(out, w(r, c));
        }
        for (Eigen::Index r = 0; r < model.biases[l].size(); ++r) {
            write_pod<double>(out, model.biases[l](r));
        }
    }

    write_pod<uint32_t>(out, static_cast<uint32_t>(poses.size()));
    for (const auto& p : poses) {
        write_pod<uint8_t>(out, p.rule == PoseUpdateRule::additive ? 0 : 1);
        for (int i = 0; i < 6; ++i) write_pod<double>(out, p.value(i));
        write_mat3(out, p.base.rotation);
        for (int i = 0; i < 3; ++i) write_pod<double>(out, p.base.translation(i));
        PoseSE3 resolved = p.pose();
        write_mat3(out, resolved.rotation);
        for (int i = 0; i < 3; ++i) write_pod<double>(out, resolved.translation(i));
    }

    write_pod<uint32_t>(out, static_cast<uint32_t>(state.theta.size()));
    for (const auto& b : state.theta) write_adam(out, b);
    write_pod<uint32_t>(out, static_cast<uint32_t>(state.poses.size()));
    for (const auto& b : state.poses) write_adam(out, b);
    if (!out) throw IoError("short write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw ParseError("not a checkpoint file: " + path);
    }
    uint32_t version = read_pod<uint32_t>(in, path);
    if (version != 1) throw ParseError("unsupported checkpoint version: " + path);
    Checkpoint ck;
    ck.iteration = static_cast<int>(read_pod<uint64_t>(in, path));
    uint32_t tag_len = read_pod<uint32_t>(in, path);
    if (tag_len > 256) throw ParseError("implausible mode tag: " + path);
    ck.mode_tag.resize(tag_len);
    in.read(ck.mode_tag.data(), tag_len);
    if (!in) throw ParseError("truncated checkpoint: " + path);

    ck.model.seed = read_pod<uint64_t>(in, path);
    uint32_t n_widths = read_pod<uint32_t>(in, path);
    if (n_widths < 2 || n_widths > 64) throw ParseError("implausible width count: " + path);
    ck.model.widths.resize(n_widths);
    for (auto& w : ck.model.widths) w = static_cast<int>(read_pod<uint32_t>(in, path));
    for (size_t l = 0; l + 1 < ck.model.widths.size(); ++l) {
        Eigen::MatrixXd w(ck.model.widths[l + 1], ck.model.widths[l]);
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = read_pod<double>(in, path);
        }
        Eigen::VectorXd b(ck.model.widths[l + 1]);
        for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = read_pod<double>(in, path);
        ck.model.weights.push_back(std::move(w));
        ck.model.biases.push_back(std::move(b));
    }

    uint32_t n_poses = read_pod<uint32_t>(in, path);
    if (n_poses > (1u << 20)) throw ParseError("implausible pose count: " + path);
    for (uint32_t i = 0; i < n_poses; ++i) {
        PoseParam p;
        p.rule = read_pod<uint8_t>(in, path) == 0 ? PoseUpdateRule::additive
                                                  : PoseUpdateRule::multiplicative;
        for (int j = 0; j < 6; ++j) p.value(j) = read_pod<double>(in, path);
        Mat3 base_r = read_mat3(in, path);
        Vec3 base_t;
        for (int j = 0; j < 3; ++j) base_t(j) = read_pod<double>(in, path);
        p.base = pose_from_rt(base_r, base_t);
        Mat3 res_r = read_mat3(in, path);
        Vec3 res_t;
        for (int j = 0; j < 3; ++j) res_t(j) = read_pod<double>(in, path);
        ck.pose_params.push_back(p);
        ck.poses.push_back(pose_from_rt(res_r, res_t));
    }

    uint32_t n_theta = read_pod<uint32_t>(in, path);
    for (uint32_t i = 0; i < n_theta; ++i) ck.state.theta.push_back(read_adam(in, path));
    uint32_t n_pose_bufs = read_pod<uint32_t>(in, path);
    for (uint32_t i = 0; i < n_pose_bufs; ++i) ck.state.poses.push_back(read_adam(in, path));
    ck.state.iteration = ck.iteration;
    return ck;
}

}  // namespace nerfba
