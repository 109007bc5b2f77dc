#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "nerfba/errors.hpp"
#include "nerfba/metrics.hpp"
#include "nerfba/optimizer.hpp"
#include "nerfba/rng.hpp"
#include "support/reference_impls.hpp"

using namespace nerfba;
namespace fs = std::filesystem;

namespace {

Image random_image(int w, int h, uint64_t seed) {
    Rng rng(seed);
    Image img(w, h);
    for (auto& v : img.rgb) v = rng.uniform();
    return img;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("psnr basics") {
    Image a = random_image(16, 16, 1);
    CHECK(std::isinf(psnr(a, a)));

    Image u(16, 16), v(16, 16);
    for (auto& x : u.rgb) x = 0.2;
    for (auto& x : v.rgb) x = 0.3;
    CHECK(psnr(u, v) == doctest::Approx(20.0).epsilon(1e-12));

    Image b = random_image(16, 16, 2);
    CHECK(psnr(a, b) == doctest::Approx(reference::psnr_naive(a, b)).epsilon(1e-10));
    CHECK(psnr(a, b) == psnr(b, a));

    Image c(8, 8);
    CHECK_THROWS_AS(psnr(a, c), ValidationError);
}

TEST_CASE("ssim basics") {
    Image a = random_image(24, 24, 3);
    CHECK(ssim(a, a) == 1.0);

    Image neg = a;
    for (auto& v : neg.rgb) v = 1.0 - v;
    CHECK(ssim(a, neg) < 0.0);

    Image b = random_image(24, 24, 4);
    CHECK(std::abs(ssim(a, b) - reference::ssim_naive(a, b)) < 1e-8);
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));

    Image small(8, 8);
    CHECK_THROWS_AS(ssim(small, small), ValidationError);
}

TEST_CASE("time_to_threshold scans records in order") {
    std::vector<ExperimentRecord> records;
    for (int i = 0; i <= 4; ++i) {
        ExperimentRecord r;
        r.iter = i * 250;
        r.wall_seconds = i * 1.5;
        r.rot_err_deg = 10.0 / (i + 1);
        r.trans_err = 0.4 / (i + 1);
        r.mode = "integrated_pe";
        records.push_back(r);
    }
    auto first = time_to_threshold(records, RecordMetric::rot_err_deg, 100.0);
    REQUIRE(first.has_value());
    CHECK(first->first == 0);

    auto never = time_to_threshold(records, RecordMetric::trans_err, 1e-9);
    CHECK(!never.has_value());

    auto crossing = time_to_threshold(records, RecordMetric::trans_err, 0.15);
    REQUIRE(crossing.has_value());
    CHECK(crossing->first == 500);  // 0.4/3 = 0.1333 is the first value below 0.15

    auto extended = records;
    ExperimentRecord tail = records.back();
    tail.iter = 2000;
    tail.trans_err = 1e-12;
    extended.push_back(tail);
    auto crossing2 = time_to_threshold(extended, RecordMetric::trans_err, 0.15);
    CHECK(crossing2->first == crossing->first);
}

TEST_CASE("records csv round-trip") {
    std::vector<ExperimentRecord> records(3);
    Rng rng(5);
    for (int i = 0; i < 3; ++i) {
        records[i].iter = i * 500;
        records[i].wall_seconds = rng.uniform(0, 100);
        records[i].rot_err_deg = rng.uniform(0, 20);
        records[i].trans_err = rng.uniform(0, 1);
        records[i].train_psnr = rng.uniform(10, 40);
        records[i].test_psnr = rng.uniform(10, 40);
        records[i].test_ssim = rng.uniform(-1, 1);
        records[i].mode = i == 0 ? "plain_pe" : (i == 1 ? "annealed_pe" : "integrated_pe");
    }
    records[2].train_psnr = std::numeric_limits<double>::infinity();

    auto parsed = parse_records_csv(records_to_csv(records));
    REQUIRE(parsed.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(parsed[i].iter == records[i].iter);
        CHECK(parsed[i].wall_seconds == records[i].wall_seconds);
        CHECK(parsed[i].rot_err_deg == records[i].rot_err_deg);
        CHECK(parsed[i].trans_err == records[i].trans_err);
        CHECK(parsed[i].train_psnr == records[i].train_psnr);
        CHECK(parsed[i].test_psnr == records[i].test_psnr);
        CHECK(parsed[i].test_ssim == records[i].test_ssim);
        CHECK(parsed[i].mode == records[i].mode);
    }
}

TEST_CASE("emit_report writes csv and a summary with all mode tags") {
    std::vector<ExperimentRecord> records(1);
    records[0].iter = 100;
    records[0].mode = "integrated_pe";

    fs::path dir = fs::temp_directory_path() / "nerfba_report_test";
    fs::remove_all(dir);
    emit_report(records, dir.string());
    auto loaded = load_records_csv((dir / "records.csv").string());
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].iter == 100);

    std::vector<ExperimentRecord> three(3);
    three[0].mode = "plain_pe";
    three[1].mode = "annealed_pe";
    three[2].mode = "integrated_pe";
    emit_report(three, dir.string());
    std::ifstream in(dir / "summary.txt");
    std::stringstream buf;
    buf << in.rdbuf();
    std::string summary = buf.str();
    CHECK(summary.find("plain_pe") != std::string::npos);
    CHECK(summary.find("annealed_pe") != std::string::npos);
    CHECK(summary.find("integrated_pe") != std::string::npos);
    fs::remove_all(dir);

    CHECK_THROWS_AS(emit_report(std::vector<ExperimentRecord>{}, dir.string()), ValidationError);
    CHECK_THROWS_AS(emit_report(records, "/proc/definitely/not/writable"), std::exception);
}

TEST_CASE("test-time pose refinement") {
    // A target rendered at the ground-truth pose makes that pose a global
    // minimum: starting there must be (exactly) a fixed point, and starting
    // slightly off must not end further than it began.
    RenderOptions options;
    options.encoding.bands = 4;
    options.encoding.mode = EncodingMode::integrated_pe;
    options.samples_per_ray = 8;
    options.near = 2.0;
    options.far = 5.5;
    options.background = Vec3::Ones();
    FieldModel model = init_field_model({options.encoding.dim(), 16, 4}, 17);
    Intrinsics k{20.0, 20.0, 8.0, 8.0, 16, 16};

    Vec6 twist;
    twist << 0.1, -0.2, -3.6, 0.4, 0.3, -0.1;
    PoseSE3 gt = exp_map(twist);

    Image target(k.width, k.height);
    for (int y = 0; y < k.height; ++y) {
        for (int x = 0; x < k.width; ++x) {
            RenderResult r = render_pixel(gt, k, Eigen::Vector2d(x, y), model, options);
            for (int c = 0; c < 3; ++c) target.at(x, y, c) = r.color(c);
        }
    }

    RefinePoseOptions refine;
    refine.steps = 10;
    refine.lr = 3e-3;
    refine.render = options;
    refine.workers = 2;

    FieldModel before = model;
    PoseSE3 fixed = testtime_pose_refine(model, target, k, gt, refine);
    CHECK((fixed.rotation - gt.rotation).cwiseAbs().maxCoeff() < 1e-3);
    CHECK((fixed.translation - gt.translation).cwiseAbs().maxCoeff() < 1e-3);
    for (size_t l = 0; l < model.weights.size(); ++l) {
        CHECK(model.weights[l] == before.weights[l]);  // frozen model untouched
        CHECK(model.biases[l] == before.biases[l]);
    }

    Vec6 off = twist;
    off(3) += 0.03;
    off(0) += 0.02;
    PoseSE3 init = exp_map(off);
    refine.steps = 40;
    PoseSE3 refined = testtime_pose_refine(model, target, k, init, refine);

    auto image_loss = [&](const PoseSE3& pose) {
        double loss = 0.0;
        for (int y = 0; y < k.height; ++y) {
            for (int x = 0; x < k.width; ++x) {
                RenderResult r = render_pixel(pose, k, Eigen::Vector2d(x, y), model, options);
                Vec3 t(target.at(x, y, 0), target.at(x, y, 1), target.at(x, y, 2));
                loss += (r.color - t).squaredNorm();
            }
        }
        return loss / (k.width * k.height);
    };
    CHECK(image_loss(refined) <= image_loss(init) + 1e-15);

    refine.steps = 0;
    PoseSE3 untouched = testtime_pose_refine(model, target, k, init, refine);
    CHECK(untouched.rotation == init.rotation);
    CHECK(untouched.translation == init.translation);
}

}  // TEST_SUITE
