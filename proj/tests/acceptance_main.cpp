// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 6 and 7 drive the command-line binary end to end; the
// rest exercise the library directly.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nerfba/config.hpp"
#include "nerfba/encoding.hpp"
#include "nerfba/gradcheck.hpp"
#include "nerfba/metrics.hpp"
#include "nerfba/optimizer.hpp"
#include "nerfba/renderer.hpp"
#include "nerfba/rng.hpp"
#include "support/reference_impls.hpp"

using namespace nerfba;
namespace fs = std::filesystem;

namespace {

struct CriterionResult {
    int id = 0;
    bool pass = false;
    std::string detail;
};

std::vector<CriterionResult> g_results;

void report(int id, bool pass, const std::string& detail) {
    g_results.push_back({id, pass, detail});
    std::fprintf(stderr, "criterion %d %s: %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
}

int run_cmd(const std::string& cmd) {
    std::fprintf(stderr, "+ %s\n", cmd.c_str());
    return std::system(cmd.c_str());
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// --- criterion 1: gradcheck ------------------------------------------------

void criterion_1() {
    GradcheckOptions options;
    options.trials = 120;
    auto t0 = std::chrono::steady_clock::now();
    auto reports = run_gradcheck(options);
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = gradcheck_passed(reports) && secs < 120.0;
    double worst = 0.0;
    std::string failing;
    for (const auto& r : reports) {
        worst = std::max(worst, r.worst_rel / r.tol);
        if (!r.pass) failing += " " + r.name;
    }
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "all Jacobian/gradient oracles vs central differences (120 trials, %.1f s, worst "
                  "rel/tol %.2e)%s",
                  secs, worst, failing.empty() ? "" : (" failing:" + failing).c_str());
    report(1, pass, buf);
}

// --- criterion 2: algebraic identities --------------------------------------

void criterion_2() {
    Rng rng(902);
    bool pass = true;
    for (int bands = 1; bands <= 12 && pass; ++bands) {
        EncodingConfig pe_cfg{bands, EncodingMode::plain_pe, true, -1.0};
        EncodingConfig ipe_cfg{bands, EncodingMode::integrated_pe, true, -1.0};
        for (int i = 0; i < 1000 / bands; ++i) {
            Vec3 mu(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
            FrustumGaussian f;
            f.mean = mu;
            f.diag_cov = Vec3::Zero();
            f.mu_t = 1.0;
            if ((ipe(f, ipe_cfg) - pe(mu, pe_cfg)).cwiseAbs().maxCoeff() >= 1e-12) pass = false;
        }
    }

    EncodingConfig cfg{10, EncodingMode::integrated_pe, true, -1.0};
    for (int i = 0; i < 200 && pass; ++i) {
        Vec3 d = Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized();
        FrustumGaussian f;
        f.mu_t = rng.uniform(0.5, 4.0);
        f.sigma_t2 = rng.uniform(1e-5, 5e-3);
        f.sigma_r2 = rng.uniform(1e-5, 5e-3);
        f.mean = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
        Vec3 dd = d.cwiseProduct(d);
        f.diag_cov = f.sigma_t2 * dd + f.sigma_r2 * (Vec3::Ones() - dd);
        EncodedFeature approx = ipe_jacobians(f, d, cfg, false);
        EncodedFeature full = ipe_jacobians(f, d, cfg, true);
        Eigen::MatrixXd cov = ipe_covariance_term(f, d, cfg);
        if ((full.d_by_dw - cov - approx.d_by_dw).cwiseAbs().maxCoeff() >= 1e-12) pass = false;

        FrustumGaussian eq = f;
        eq.sigma_r2 = eq.sigma_t2;
        eq.diag_cov = Vec3::Constant(eq.sigma_t2);
        if (ipe_covariance_term(eq, d, cfg).cwiseAbs().maxCoeff() != 0.0) pass = false;
    }
    report(2, pass,
           "ipe(Sigma=0) = pe(mu) within 1e-12; full-chain minus covariance term = approximate "
           "within 1e-12; covariance path vanishes at sigma_t = sigma_r");
}

// --- criterion 3: low-pass property -----------------------------------------

void criterion_3() {
    bool pass = true;
    EncodingConfig integrated{10, EncodingMode::integrated_pe, true, -1.0};
    EncodingConfig annealed{10, EncodingMode::annealed_pe, true, -1.0};
    // s values chosen below the k=9 exp underflow so strict ordering is
    // expressible in doubles.
    for (double s : {1e-6, 1e-5, 1e-4, 1e-3, 2e-3}) {
        auto g = frequency_response(integrated, Vec3::Constant(s), nullptr);
        for (int k = 1; k < 10; ++k) {
            if (!(g(k) < g(k - 1))) pass = false;
        }
        // Constant across iterations: the gain does not read any schedule.
        AnnealState early = anneal_at(0, 0, 100, 10);
        AnnealState late = anneal_at(100, 0, 100, 10);
        if (frequency_response(integrated, Vec3::Constant(s), &early) !=
            frequency_response(integrated, Vec3::Constant(s), &late)) {
            pass = false;
        }
    }
    AnnealState zero{0.0, 0, 0};
    AnnealState full{10.0, 0, 0};
    auto w0 = frequency_response(annealed, Vec3::Zero(), &zero);
    auto w1 = frequency_response(annealed, Vec3::Zero(), &full);
    for (int k = 0; k < 10; ++k) {
        if (w0(k) != 0.0 || w1(k) != 1.0) pass = false;
    }
    AnnealState mid{3.5, 0, 0};
    auto wm = frequency_response(annealed, Vec3::Zero(), &mid);
    for (int k = 0; k < 10; ++k) {
        double expected = 0.5 * (1.0 - std::cos(M_PI * std::clamp(3.5 - k, 0.0, 1.0)));
        if (wm(k) != expected) pass = false;
    }
    report(3, pass,
           "integrated gains exp(-4^k s/2) strictly decreasing in k and iteration-constant; "
           "annealed gains follow the raised-cosine window exactly (0 at alpha=0, 1 at alpha=L)");
}

// --- criterion 4: renderer correctness --------------------------------------

void criterion_4() {
    bool pass = true;
    const double sigma = 0.9, span = 3.0;
    const Vec3 c(0.25, 0.55, 0.85), bg(1.0, 1.0, 1.0);
    DepthSamples depths = stratified_depths(1.0, 1.0 + span, 1024, nullptr);
    std::vector<SampleOutput> samples(1024);
    for (auto& s : samples) {
        s.rgb = c;
        s.sigma = sigma;
    }
    RenderResult r = composite(samples, depths, bg);
    double tbg = std::exp(-sigma * span);
    Vec3 expected = c * (1.0 - tbg) + tbg * bg;
    if ((r.color - expected).cwiseAbs().maxCoeff() / expected.norm() >= 1e-3) pass = false;

    for (auto& s : samples) s.sigma = 0.0;
    RenderResult r0 = composite(samples, depths, bg);
    if (r0.color != bg) pass = false;
    report(4, pass,
           "constant-density ray matches analytic transmittance within rel 1e-3 at N=1024; zero "
           "density renders the background exactly");
}

// --- criterion 5: procrustes + perturbation statistics ----------------------

void criterion_5() {
    bool pass = true;
    Rng rng(905);
    std::vector<PoseSE3> reference;
    for (int i = 0; i < 10; ++i) {
        Vec6 t;
        for (int j = 0; j < 3; ++j) t(j) = rng.uniform(-2, 2);
        Vec3 axis = Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized();
        t.tail<3>() = rng.uniform(0.1, 2.5) * axis;
        reference.push_back(exp_map(t));
    }
    SimilarityTransform g;
    g.scale = 1.6;
    Vec3 axis = Vec3(0.2, -0.5, 0.9).normalized();
    Vec6 rot = Vec6::Zero();
    rot.tail<3>() = 1.1 * axis;
    g.rotation = exp_map(rot).rotation;
    g.translation = Vec3(0.7, -0.9, 1.3);
    std::vector<PoseSE3> estimated;
    for (const auto& p : reference) estimated.push_back(apply_similarity(g, p));
    SimilarityTransform s = procrustes_align(estimated, reference);
    double residual = 0.0;
    for (size_t i = 0; i < reference.size(); ++i) {
        residual = std::max(residual,
                            (s.apply(estimated[i].translation) - reference[i].translation).norm());
    }
    if (residual >= 1e-9) pass = false;

    const int n = 10000;
    std::vector<PoseSE3> identities(n);
    auto perturbed = perturb_poses(identities, 14.9, 0.26, 906);
    double rot_sq = 0.0, trans_sq = 0.0;
    for (const auto& p : perturbed) {
        double a = rotation_angle(p.rotation);
        rot_sq += a * a;
        trans_sq += p.translation.squaredNorm();
    }
    double rot_rms_deg = std::sqrt(rot_sq / n) * 180.0 / M_PI;
    double trans_rms = std::sqrt(trans_sq / n);
    if (std::abs(rot_rms_deg - 14.9) / 14.9 >= 0.03) pass = false;
    if (std::abs(trans_rms - 0.26) / 0.26 >= 0.03) pass = false;

    char buf[192];
    std::snprintf(buf, sizeof(buf),
                  "similarity recovered with residual %.2e; perturbation RMS %.3f deg / %.4f vs "
                  "(14.9, 0.26) over 10^4 draws",
                  residual, rot_rms_deg, trans_rms);
    report(5, pass, buf);
}

// --- criterion 8: metric correctness ----------------------------------------

void criterion_8() {
    bool pass = true;
    Image u(16, 16), v(16, 16);
    for (auto& x : u.rgb) x = 0.2;
    for (auto& x : v.rgb) x = 0.3;
    if (std::abs(psnr(u, v) - 20.0) >= 1e-12) pass = false;

    Rng rng(908);
    Image a(24, 24);
    for (auto& x : a.rgb) x = rng.uniform();
    if (ssim(a, a) != 1.0) pass = false;
    Image b(24, 24);
    for (auto& x : b.rgb) x = rng.uniform();
    if (std::abs(ssim(a, b) - reference::ssim_naive(a, b)) >= 1e-8) pass = false;
    report(8, pass,
           "PSNR 20 dB at MSE 0.01; SSIM exactly 1 on identical images; SSIM matches the naive "
           "sliding-window oracle within 1e-8");
}

// --- criteria 6 and 7: CLI-driven runs --------------------------------------

struct CliEnv {
    std::string cli;
    std::string desk_config;
    fs::path work;
};

bool prepare_dataset(const CliEnv& env, const fs::path& dataset_dir) {
    if (fs::exists(dataset_dir / "manifest.json")) return true;
    std::string cmd = env.cli + " gen-scene --config " + env.desk_config + " --out " +
                      dataset_dir.string() + " > /dev/null";
    return run_cmd(cmd) == 0;
}

void criterion_7(const CliEnv& env) {
    fs::path dataset = env.work / "dataset";
    if (!prepare_dataset(env, dataset)) {
        report(7, false, "dataset generation failed");
        return;
    }
    bool pass = true;
    for (int run = 0; run < 2; ++run) {
        fs::path out = env.work / ("det_run_" + std::to_string(run));
        fs::remove_all(out);
        std::string cmd = env.cli + " train --config " + env.desk_config + " --data " +
                          dataset.string() + " --out " + out.string() +
                          " --mode integrated_pe --iters 600 --seed 11 --deterministic" +
                          " --set train.eval_every=200 --set train.checkpoint_every=0" +
                          " > /dev/null 2> /dev/null";
        if (run_cmd(cmd) != 0) pass = false;
    }
    if (pass) {
        std::string a = slurp(env.work / "det_run_0" / "records.csv");
        std::string b = slurp(env.work / "det_run_1" / "records.csv");
        pass = !a.empty() && a == b;
    }
    report(7, pass, "two --deterministic runs with equal seeds produce byte-equal record CSVs");
}

void criterion_6(const CliEnv& env) {
    fs::path dataset = env.work / "dataset";
    if (!prepare_dataset(env, dataset)) {
        report(6, false, "dataset generation failed");
        return;
    }
    struct Run {
        const char* mode;
        std::vector<ExperimentRecord> records;
    };
    std::vector<Run> runs = {{"integrated_pe", {}}, {"plain_pe", {}}, {"annealed_pe", {}}};
    bool ran = true;
    for (auto& run : runs) {
        fs::path out = env.work / (std::string("run_") + run.mode);
        if (!fs::exists(out / "records.csv")) {
            std::string cmd = env.cli + " train --config " + env.desk_config + " --data " +
                              dataset.string() + " --out " + out.string() + " --mode " + run.mode +
                              " --deterministic > /dev/null";
            if (run_cmd(cmd) != 0) {
                ran = false;
                break;
            }
        }
        run.records = load_records_csv((out / "records.csv").string());
    }
    if (!ran) {
        report(6, false, "training run failed");
        return;
    }

    const auto& ipe_records = runs[0].records;
    const auto& plain_records = runs[1].records;
    const auto& annealed_records = runs[2].records;
    double ipe_rot = ipe_records.back().rot_err_deg;
    double ipe_trans = ipe_records.back().trans_err;
    double plain_rot = plain_records.back().rot_err_deg;
    bool a = ipe_rot < 1.0 && ipe_trans < 0.02;
    bool b = plain_rot >= 3.0 * ipe_rot;

    auto ipe_hit = time_to_threshold(ipe_records, RecordMetric::trans_err, 0.02);
    auto annealed_hit = time_to_threshold(annealed_records, RecordMetric::trans_err, 0.02);
    bool c = ipe_hit.has_value() && annealed_hit.has_value() &&
             ipe_hit->first <= 0.8 * annealed_hit->first;

    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "(a) integrated rot %.3f deg trans %.4f [%s]; (b) plain rot %.3f >= 3x [%s]; (c) "
                  "trans<0.02 at iter %d vs %d annealed [%s]",
                  ipe_rot, ipe_trans, a ? "ok" : "no", plain_rot, b ? "ok" : "no",
                  ipe_hit ? ipe_hit->first : -1, annealed_hit ? annealed_hit->first : -1,
                  c ? "ok" : "no");
    report(6, a && b && c, buf);
}

}  // namespace

int main(int argc, char** argv) {
    CliEnv env;
    int only = -1;
    for (int i = 1; i + 1 < argc; i += 2) {
        std::string flag = argv[i];
        if (flag == "--cli") env.cli = argv[i + 1];
        if (flag == "--desk-config") env.desk_config = argv[i + 1];
        if (flag == "--work-dir") env.work = argv[i + 1];
        if (flag == "--only") only = std::atoi(argv[i + 1]);
    }
    if (env.cli.empty() || env.desk_config.empty() || env.work.empty()) {
        std::fprintf(stderr,
                     "usage: acceptance_tests --cli <nerfba> --desk-config <desk.json> --work-dir "
                     "<dir> [--only N]\n");
        return 2;
    }
    fs::create_directories(env.work);

    auto want = [&](int id) { return only < 0 || only == id; };
    if (want(1)) criterion_1();
    if (want(2)) criterion_2();
    if (want(3)) criterion_3();
    if (want(4)) criterion_4();
    if (want(5)) criterion_5();
    if (want(8)) criterion_8();
    if (want(7)) criterion_7(env);
    if (want(6)) criterion_6(env);

    std::sort(g_results.begin(), g_results.end(),
              [](const CriterionResult& x, const CriterionResult& y) { return x.id < y.id; });
    bool all = true;
    for (const auto& r : g_results) {
        std::printf("[%s] criterion %d: %s\n", r.pass ? "PASS" : "FAIL", r.id, r.detail.c_str());
        all = all && r.pass;
    }
    return all ? 0 : 1;
}
