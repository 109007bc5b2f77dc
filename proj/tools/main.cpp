#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "nerfba/config.hpp"
#include "nerfba/errors.hpp"
#include "nerfba/gradcheck.hpp"
#include "nerfba/metrics.hpp"
#include "nerfba/optimizer.hpp"

namespace fs = std::filesystem;
using namespace nerfba;
using nlohmann::json;

namespace {

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool needs_out) {
    cmd->add_option("--config", flags.config_path, "JSON config file (defaults to the desk preset)");
    cmd->add_option("--set", flags.overrides, "dotted-path override, e.g. train.mode=plain_pe");
    auto* out = cmd->add_option("--out", flags.out_dir, "output directory");
    if (needs_out && !std::getenv("NERFBA_OUT_DIR")) out->required();
}

AppConfig resolve_config(const CommonFlags& flags) {
    json j;
    if (!flags.config_path.empty()) {
        std::ifstream in(flags.config_path);
        if (!in) throw IoError("cannot open config: " + flags.config_path);
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ParseError("config " + flags.config_path + ": " + e.what());
        }
    } else {
        j = config_to_json(default_config());
    }
    for (const auto& o : flags.overrides) apply_override(j, o);
    return config_from_json(j);
}

std::string resolve_out(const CommonFlags& flags, const std::string& fallback_name) {
    if (!flags.out_dir.empty()) return flags.out_dir;
    const char* base = std::getenv("NERFBA_OUT_DIR");
    if (!base) throw ValidationError("--out is required (or set NERFBA_OUT_DIR)");
    return (fs::path(base) / fallback_name).string();
}

void write_effective_config(const AppConfig& cfg, const std::string& dir) {
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "effective_config.json");
    if (!out) throw IoError("cannot write effective_config.json in " + dir);
    out << config_to_json(cfg).dump(2) << "\n";
}

int bands_from_model(const FieldModel& model) {
    int dim = model.input_dim();
    if ((dim - 3) % 6 != 0) throw ValidationError("checkpoint model has unexpected input width");
    return (dim - 3) / 6;
}

std::vector<PoseSE3> checkpoint_train_poses(const Checkpoint& ck, const Dataset& dataset) {
    auto train_idx = dataset.train_indices();
    if (ck.poses.size() != train_idx.size()) {
        throw ValidationError("checkpoint pose count does not match the dataset's training split");
    }
    return ck.poses;
}

SimilarityTransform invert_similarity(const SimilarityTransform& s) {
    SimilarityTransform inv;
    inv.scale = 1.0 / s.scale;
    inv.rotation = s.rotation.transpose();
    inv.translation = -(inv.scale) * (inv.rotation * s.translation);
    return inv;
}

int cmd_gen_scene(const CommonFlags& flags, uint64_t seed_flag, bool has_seed, int workers) {
    AppConfig cfg = resolve_config(flags);
    if (has_seed) cfg.scene.seed = seed_flag;
    std::string out = resolve_out(flags, "dataset");
    AnalyticScene scene = build_scene(cfg.scene);
    std::vector<bool> split = scene_split(cfg.scene);
    Dataset ds = bake_dataset(scene, split, cfg.scene.bake_samples,
                              workers > 0 ? workers : std::thread::hardware_concurrency());
    save_dataset(ds, out);
    write_effective_config(cfg, out);
    std::cout << (fs::path(out) / "manifest.json").string() << "\n";
    return 0;
}

int cmd_train(const CommonFlags& flags, const std::string& data_dir, const std::string& mode,
              int iters, uint64_t seed_flag, bool has_seed, int workers, bool deterministic) {
    AppConfig cfg = resolve_config(flags);
    if (!mode.empty()) cfg.train.mode = encoding_mode_from_name(mode);
    if (iters >= 0) cfg.train.iterations = iters;
    if (has_seed) cfg.train.seed = seed_flag;
    if (workers > 0) cfg.train.workers = workers;
    if (deterministic) cfg.train.deterministic = true;

    Dataset dataset = load_dataset(data_dir);
    auto train_idx = dataset.train_indices();
    std::vector<PoseSE3> gt_train;
    for (int i : train_idx) gt_train.push_back(dataset.poses_gt[i]);
    std::vector<PoseSE3> init = perturb_poses(gt_train, cfg.perturb.rot_std_deg,
                                              cfg.perturb.trans_std, cfg.perturb.seed);

    std::string out = resolve_out(flags, "run");
    write_effective_config(cfg, out);

    std::ofstream csv(fs::path(out) / "records.csv");
    if (!csv) throw IoError("cannot write records.csv in " + out);
    csv << kRecordsCsvHeader << "\n";

    TrainCallbacks callbacks;
    callbacks.on_record = [&](const ExperimentRecord& r) {
        csv << record_to_csv_row(r) << "\n";
        csv.flush();
        std::fprintf(stderr, "[%s] iter %d rot %.4f deg trans %.5f train_psnr %.2f test_psnr %.2f\n",
                     r.mode.c_str(), r.iter, r.rot_err_deg, r.trans_err, r.train_psnr, r.test_psnr);
    };
    callbacks.on_checkpoint = [&](const FieldModel& model, const std::vector<PoseParam>& poses,
                                  const OptimState& state, int iter) {
        std::string name = iter == cfg.train.iterations ? "checkpoint_final.bin" : "checkpoint.bin";
        save_checkpoint((fs::path(out) / name).string(), model, poses, state, iter,
                        encoding_mode_name(cfg.train.mode));
    };

    TrainResult result;
    try {
        result = train(dataset, init, cfg.train, callbacks);
    } catch (const NanAbort&) {
        std::fprintf(stderr, "aborted on non-finite loss; last checkpoint kept in %s\n", out.c_str());
        throw;
    }
    emit_report(result.records, out);
    std::cout << out << "\n";
    return 0;
}

RenderOptions eval_render_options(const AppConfig& cfg, const Checkpoint& ck, const Dataset& dataset) {
    RenderOptions options;
    options.encoding.bands = bands_from_model(ck.model);
    options.encoding.mode = encoding_mode_from_name(ck.mode_tag);
    options.encoding.alpha = -1.0;  // all bands active after training
    options.samples_per_ray = cfg.train.samples_per_ray;
    options.near = cfg.train.near > 0.0 ? cfg.train.near : dataset.near;
    options.far = cfg.train.far > 0.0 ? cfg.train.far : dataset.far;
    options.background = dataset.background;
    return options;
}

int cmd_eval(const CommonFlags& flags, const std::string& checkpoint_path, const std::string& data_dir,
             int refine_steps_flag, int workers) {
    AppConfig cfg = resolve_config(flags);
    if (refine_steps_flag >= 0) cfg.eval.refine_steps = refine_steps_flag;
    Checkpoint ck = load_checkpoint(checkpoint_path);
    Dataset dataset = load_dataset(data_dir);
    std::string out = resolve_out(flags, "eval");
    fs::create_directories(out);

    auto train_idx = dataset.train_indices();
    auto test_idx = dataset.test_indices();
    std::vector<PoseSE3> est = checkpoint_train_poses(ck, dataset);
    std::vector<PoseSE3> gt;
    for (int i : train_idx) gt.push_back(dataset.poses_gt[i]);

    SimilarityTransform sim;
    if (est.size() >= 3) sim = procrustes_align(est, gt);
    std::vector<PoseSE3> aligned;
    for (const auto& p : est) aligned.push_back(apply_similarity(sim, p));
    PoseErrors err = pose_errors(aligned, gt);

    RenderOptions options = eval_render_options(cfg, ck, dataset);
    int n_workers = workers > 0 ? workers : static_cast<int>(std::thread::hardware_concurrency());
    RenderEngine engine(n_workers);
    SimilarityTransform to_model = invert_similarity(sim);

    double test_psnr = 0.0, test_ssim_acc = 0.0;
    for (int view : test_idx) {
        PoseSE3 pose = apply_similarity(to_model, dataset.poses_gt[view]);
        if (cfg.eval.refine_steps > 0) {
            RefinePoseOptions refine;
            refine.steps = cfg.eval.refine_steps;
            refine.lr = cfg.eval.refine_lr;
            refine.render = options;
            refine.workers = n_workers;
            pose = testtime_pose_refine(ck.model, dataset.images[view], dataset.intrinsics, pose, refine);
        }
        std::vector<ViewContext> vc(1);
        vc[0].pose = pose;
        std::vector<RayJob> jobs;
        const Intrinsics& k = dataset.intrinsics;
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
        engine.render_rays(ck.model, vc, jobs, options, colors, nullptr);
        Image img(k.width, k.height);
        size_t i = 0;
        for (int y = 0; y < k.height; ++y) {
            for (int x = 0; x < k.width; ++x, ++i) {
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = colors[i](c);
            }
        }
        test_psnr += psnr(img, dataset.images[view]);
        test_ssim_acc += ssim(img, dataset.images[view]);
    }
    if (!test_idx.empty()) {
        test_psnr /= test_idx.size();
        test_ssim_acc /= test_idx.size();
    }

    ExperimentRecord rec;
    rec.iter = ck.iteration;
    rec.rot_err_deg = err.rotation_deg;
    rec.trans_err = err.translation;
    rec.test_psnr = test_psnr;
    rec.test_ssim = test_ssim_acc;
    rec.mode = ck.mode_tag;
    emit_report(std::vector<ExperimentRecord>{rec}, out);
    std::printf("rot_err_deg %.6f trans_err %.6f (x100: %.4f) test_psnr %.3f test_ssim %.4f\n",
                err.rotation_deg, err.translation, 100.0 * err.translation, test_psnr, test_ssim_acc);
    return 0;
}

int cmd_render(const CommonFlags& flags, const std::string& checkpoint_path,
               const std::string& data_dir, int view, int workers) {
    AppConfig cfg = resolve_config(flags);
    Checkpoint ck = load_checkpoint(checkpoint_path);
    Dataset dataset = load_dataset(data_dir);
    if (view < 0 || view >= static_cast<int>(dataset.images.size())) {
        throw ValidationError("render: view index out of range");
    }
    std::string out = resolve_out(flags, "render");
    fs::create_directories(out);

    auto train_idx = dataset.train_indices();
    std::vector<PoseSE3> est = checkpoint_train_poses(ck, dataset);
    std::vector<PoseSE3> gt;
    for (int i : train_idx) gt.push_back(dataset.poses_gt[i]);
    SimilarityTransform sim;
    if (est.size() >= 3) sim = procrustes_align(est, gt);

    PoseSE3 pose;
    auto slot = std::find(train_idx.begin(), train_idx.end(), view);
    if (slot != train_idx.end()) {
        pose = est[slot - train_idx.begin()];
    } else {
        pose = apply_similarity(invert_similarity(sim), dataset.poses_gt[view]);
    }

    RenderOptions options = eval_render_options(cfg, ck, dataset);
    RenderEngine engine(workers > 0 ? workers : std::thread::hardware_concurrency());
    const Intrinsics& k = dataset.intrinsics;
    std::vector<ViewContext> vc(1);
    vc[0].pose = pose;
    std::vector<RayJob> jobs;
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
    std::vector<double> depth_values;
    engine.render_rays(ck.model, vc, jobs, options, colors, &depth_values);
    Image img(k.width, k.height);
    std::vector<double> depth_norm(colors.size());
    size_t i = 0;
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x, ++i) {
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = colors[i](c);
            depth_norm[i] = std::clamp((depth_values[i] - options.near) / (options.far - options.near),
                                       0.0, 1.0);
        }
    }
    char name[64];
    std::snprintf(name, sizeof(name), "view_%03d.ppm", view);
    write_ppm(img, (fs::path(out) / name).string());
    std::snprintf(name, sizeof(name), "depth_%03d.pgm", view);
    write_pgm(depth_norm, k.width, k.height, (fs::path(out) / name).string());
    std::cout << out << "\n";
    return 0;
}

int cmd_gradcheck(uint64_t seed, int trials) {
    GradcheckOptions options;
    options.seed = seed;
    options.trials = trials;
    if (trials == 0) std::fprintf(stderr, "warning: trials = 0, all oracles pass vacuously\n");
    auto reports = run_gradcheck(options);
    std::printf("%-32s %8s %12s %9s  %s\n", "oracle", "trials", "worst rel", "tol", "status");
    for (const auto& r : reports) {
        std::printf("%-32s %8d %12.3e %9.0e  %s\n", r.name.c_str(), r.trials, r.worst_rel, r.tol,
                    r.pass ? "ok" : "FAIL");
    }
    if (!gradcheck_passed(reports)) {
        std::fprintf(stderr, "failing oracles:");
        for (const auto& r : reports) {
            if (!r.pass) std::fprintf(stderr, " %s", r.name.c_str());
        }
        std::fprintf(stderr, "\n");
        return 1;
    }
    return 0;
}

int cmd_freq_response(const std::string& out_path, int bands) {
    std::ofstream out(out_path);
    if (!out) throw IoError("cannot open for writing: " + out_path);
    out << "sweep,param,k,gain_plain,gain_annealed,gain_ipe\n";
    char row[160];
    EncodingConfig plain{bands, EncodingMode::plain_pe, true, -1.0};
    EncodingConfig annealed{bands, EncodingMode::annealed_pe, true, -1.0};
    EncodingConfig integrated{bands, EncodingMode::integrated_pe, true, -1.0};

    const double sigmas[] = {0.0, 1e-4, 1e-3, 1e-2, 1e-1};
    for (double s : sigmas) {
        Vec3 diag = Vec3::Constant(s);
        AnnealState all_on{static_cast<double>(bands), 0, 0};
        auto gp = frequency_response(plain, diag, nullptr);
        auto ga = frequency_response(annealed, diag, &all_on);
        auto gi = frequency_response(integrated, diag, nullptr);
        for (int k = 0; k < bands; ++k) {
            std::snprintf(row, sizeof(row), "sigma,%.17g,%d,%.17g,%.17g,%.17g\n", s, k, gp(k), ga(k), gi(k));
            out << row;
        }
    }
    const double alphas[] = {0.0, 0.25, 0.5, 0.75, 1.0};
    for (double frac : alphas) {
        AnnealState st{frac * bands, 0, 0};
        Vec3 diag = Vec3::Constant(1e-3);
        auto gp = frequency_response(plain, diag, nullptr);
        auto ga = frequency_response(annealed, diag, &st);
        auto gi = frequency_response(integrated, diag, nullptr);
        for (int k = 0; k < bands; ++k) {
            std::snprintf(row, sizeof(row), "alpha,%.17g,%d,%.17g,%.17g,%.17g\n", st.alpha, k, gp(k),
                          ga(k), gi(k));
            out << row;
        }
    }
    if (!out) throw IoError("short write: " + out_path);
    std::cout << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"joint camera-pose and neural-radiance-field optimization toolkit"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, eval_flags, render_flags;
    uint64_t seed = 0;
    int workers = 0;
    int iters = -1;
    int refine_steps = -1;
    int view = 0;
    int trials = 120;
    uint64_t gc_seed = 4242;
    int fr_bands = 10;
    std::string mode, data_dir, checkpoint_path, fr_out = "freq_response.csv";
    bool deterministic = false;

    auto* gen = app.add_subcommand("gen-scene", "bake an analytic dataset to disk");
    add_common(gen, gen_flags, true);
    auto* gen_seed_opt = gen->add_option("--seed", seed, "scene seed override");
    gen->add_option("--workers", workers, "worker threads (default: hardware)");

    auto* tr = app.add_subcommand("train", "jointly optimize poses and the field");
    add_common(tr, train_flags, true);
    tr->add_option("--data", data_dir, "dataset directory")->required();
    tr->add_option("--mode", mode, "encoding mode: plain_pe | annealed_pe | integrated_pe");
    tr->add_option("--iters", iters, "iteration count override");
    auto* tr_seed_opt = tr->add_option("--seed", seed, "training seed override");
    tr->add_option("--workers", workers, "worker threads (default: hardware)");
    tr->add_flag("--deterministic", deterministic, "fixed-order reduction and zeroed wall clock");

    auto* ev = app.add_subcommand("eval", "pose errors and view-synthesis metrics for a checkpoint");
    add_common(ev, eval_flags, true);
    ev->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--refine-steps", refine_steps, "test-time pose refinement steps");
    ev->add_option("--workers", workers, "worker threads");

    auto* rd = app.add_subcommand("render", "render one view (image + depth map)");
    add_common(rd, render_flags, true);
    rd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    rd->add_option("--data", data_dir, "dataset directory")->required();
    rd->add_option("--view", view, "dataset frame index")->required();
    rd->add_option("--workers", workers, "worker threads");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of all gradients");
    gc->add_option("--seed", gc_seed, "rng seed");
    gc->add_option("--trials", trials, "trials per oracle");

    auto* fr = app.add_subcommand("freq-response", "per-band gains of the three encoding regimes");
    fr->add_option("--out", fr_out, "output csv path");
    fr->add_option("--bands", fr_bands, "number of frequency bands");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_scene(gen_flags, seed, gen_seed_opt->count() > 0, workers);
        if (tr->parsed()) {
            return cmd_train(train_flags, data_dir, mode, iters, seed, tr_seed_opt->count() > 0,
                             workers, deterministic);
        }
        if (ev->parsed()) return cmd_eval(eval_flags, checkpoint_path, data_dir, refine_steps, workers);
        if (rd->parsed()) return cmd_render(render_flags, checkpoint_path, data_dir, view, workers);
        if (gc->parsed()) return cmd_gradcheck(gc_seed, trials);
        if (fr->parsed()) return cmd_freq_response(fr_out, fr_bands);
    } catch (const NanAbort& e) {
        std::fprintf(stderr, "runtime abort: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 3;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
