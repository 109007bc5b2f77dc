#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "nerfba/errors.hpp"
#include "nerfba/scene.hpp"

using namespace nerfba;
namespace fs = std::filesystem;

namespace {

AnalyticScene tiny_scene(int image_size = 16) {
    AnalyticScene scene;
    scene.blobs = {
        {Vec3(0.4, 0.0, 0.1), Vec3(0.35, 0.3, 0.3), 6.0, Vec3(0.9, 0.2, 0.2)},
        {Vec3(-0.4, 0.3, -0.2), Vec3(0.3, 0.3, 0.25), 5.0, Vec3(0.2, 0.4, 0.9)},
    };
    scene.near = 2.0;
    scene.far = 6.0;
    scene.background = Vec3::Ones();
    scene.intrinsics = Intrinsics{18.0, 18.0, image_size / 2.0, image_size / 2.0, image_size, image_size};
    scene.rig = sphere_rig(8, 4.0, -10.0, 35.0, 5);
    return scene;
}

}  // namespace

TEST_SUITE("scene") {

TEST_CASE("density field at a blob center and far away") {
    AnalyticScene scene = tiny_scene();
    auto [sigma, color] = density_field(scene, scene.blobs[0].center);
    CHECK(sigma >= scene.blobs[0].peak);  // second blob adds a whisker of density
    auto [sigma_far, color_far] = density_field(scene, Vec3(50, 50, 50));
    CHECK(sigma_far < 1e-12);

    AnalyticScene one = scene;
    one.blobs.resize(1);
    auto [s1, c1] = density_field(one, one.blobs[0].center);
    CHECK(s1 == doctest::Approx(one.blobs[0].peak).epsilon(1e-12));
    CHECK((c1 - one.blobs[0].color).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("two-blob blend is density weighted") {
    AnalyticScene scene = tiny_scene();
    Vec3 mid = 0.5 * (scene.blobs[0].center + scene.blobs[1].center);
    auto [sigma, color] = density_field(scene, mid);
    double w0 = scene.blobs[0].peak *
                std::exp(-0.5 * ((mid - scene.blobs[0].center).cwiseQuotient(scene.blobs[0].scales)).squaredNorm());
    double w1 = scene.blobs[1].peak *
                std::exp(-0.5 * ((mid - scene.blobs[1].center).cwiseQuotient(scene.blobs[1].scales)).squaredNorm());
    Vec3 expected = (w0 * scene.blobs[0].color + w1 * scene.blobs[1].color) / (w0 + w1);
    CHECK(sigma == doctest::Approx(w0 + w1).epsilon(1e-12));
    CHECK((color - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sphere rig geometry") {
    auto single = sphere_rig(1, 4.0, 0.0, 0.0, 9);
    REQUIRE(single.size() == 1);
    CHECK((single[0].translation - Vec3(4, 0, 0)).cwiseAbs().maxCoeff() < 1e-12);
    Vec3 forward = single[0].rotation.col(2);
    CHECK((forward - Vec3(-1, 0, 0)).cwiseAbs().maxCoeff() < 1e-12);

    auto rig = sphere_rig(12, 3.0, -20.0, 45.0, 10);
    for (const auto& pose : rig) {
        CHECK(pose.translation.norm() == doctest::Approx(3.0).epsilon(1e-12));
        Vec3 f = pose.rotation.col(2);
        Vec3 to_origin = (-pose.translation).normalized();
        CHECK(std::atan2(f.cross(to_origin).norm(), f.dot(to_origin)) < 1e-9);
        CHECK((pose.rotation * pose.rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-10);
    }

    auto rig2 = sphere_rig(12, 3.0, -20.0, 45.0, 10);
    for (size_t i = 0; i < rig.size(); ++i) {
        CHECK(rig[i].rotation == rig2[i].rotation);
        CHECK(rig[i].translation == rig2[i].translation);
    }
}

TEST_CASE("zero perturbation leaves poses unchanged") {
    auto rig = sphere_rig(6, 4.0, -10.0, 30.0, 11);
    auto perturbed = perturb_poses(rig, 0.0, 0.0, 77);
    for (size_t i = 0; i < rig.size(); ++i) {
        CHECK((perturbed[i].rotation - rig[i].rotation).cwiseAbs().maxCoeff() == 0.0);
        CHECK((perturbed[i].translation - rig[i].translation).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("perturbation magnitudes match the requested stds within 3 percent") {
    const int n = 10000;
    std::vector<PoseSE3> identities(n);
    auto perturbed = perturb_poses(identities, 14.9, 0.26, 2024);

    double rot_sq = 0.0, trans_sq = 0.0;
    for (const auto& p : perturbed) {
        rot_sq += rotation_angle(p.rotation) * rotation_angle(p.rotation);
        trans_sq += p.translation.squaredNorm();
    }
    double rot_rms_deg = std::sqrt(rot_sq / n) * 180.0 / M_PI;
    double trans_rms = std::sqrt(trans_sq / n);
    CHECK(std::abs(rot_rms_deg - 14.9) / 14.9 < 0.03);
    CHECK(std::abs(trans_rms - 0.26) / 0.26 < 0.03);
}

TEST_CASE("perturbation noise is independent across axes") {
    const int n = 10000;
    std::vector<PoseSE3> identities(n);
    auto perturbed = perturb_poses(identities, 14.9, 0.26, 31337);
    // With identity bases the pose twist is the raw noise draw.
    Eigen::MatrixXd samples(n, 6);
    for (int i = 0; i < n; ++i) samples.row(i) = perturbed[i].twist.transpose();
    Eigen::RowVectorXd mean = samples.colwise().mean();
    Eigen::MatrixXd centered = samples.rowwise() - mean;
    Eigen::MatrixXd cov = centered.transpose() * centered / n;
    for (int a = 0; a < 6; ++a) {
        for (int b = 0; b < 6; ++b) {
            if (a == b) continue;
            CHECK(std::abs(cov(a, b)) < 0.05 * std::sqrt(cov(a, a) * cov(b, b)));
        }
    }
}

TEST_CASE("perturbed trajectories have positive finite errors") {
    auto rig = sphere_rig(8, 4.0, -10.0, 30.0, 3);
    auto perturbed = perturb_poses(rig, 5.0, 0.1, 8);
    PoseErrors e = pose_errors(perturbed, rig);
    CHECK(e.rotation_deg > 0.0);
    CHECK(e.translation > 0.0);
    CHECK(std::isfinite(e.rotation_deg));
    CHECK(std::isfinite(e.translation));
}

TEST_CASE("baking an empty scene yields pure background") {
    AnalyticScene scene = tiny_scene();
    scene.blobs.clear();
    std::vector<bool> split(scene.rig.size(), false);
    Dataset ds = bake_dataset(scene, split, 32, 2);
    for (const auto& img : ds.images) {
        for (int c = 0; c < 3; ++c) CHECK(img.at(3, 5, c) == scene.background(c));
    }
}

TEST_CASE("baking is deterministic and converges with sample count") {
    AnalyticScene scene = tiny_scene();
    std::vector<bool> split(scene.rig.size(), false);
    split.back() = true;

    Dataset a = bake_dataset(scene, split, 128, 2);
    Dataset b = bake_dataset(scene, split, 128, 1);
    REQUIRE(a.images.size() == scene.rig.size());
    for (size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].rgb == b.images[i].rgb);

    Dataset fine = bake_dataset(scene, split, 256, 2);
    double worst = 0.0;
    for (size_t i = 0; i < a.images.size(); ++i) {
        for (size_t j = 0; j < a.images[i].rgb.size(); ++j) {
            worst = std::max(worst, std::abs(a.images[i].rgb[j] - fine.images[i].rgb[j]));
        }
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("dataset round-trip through disk") {
    AnalyticScene scene = tiny_scene();
    std::vector<bool> split(scene.rig.size(), false);
    split[2] = split[5] = true;
    Dataset ds = bake_dataset(scene, split, 64, 2);

    fs::path dir = fs::temp_directory_path() / "nerfba_dataset_test";
    fs::remove_all(dir);
    save_dataset(ds, dir.string());
    Dataset back = load_dataset(dir.string());

    REQUIRE(back.images.size() == ds.images.size());
    CHECK(back.near == ds.near);
    CHECK(back.far == ds.far);
    CHECK(back.intrinsics.fx == ds.intrinsics.fx);
    CHECK(back.is_test == ds.is_test);
    for (size_t i = 0; i < ds.images.size(); ++i) {
        CHECK(back.poses_gt[i].rotation == ds.poses_gt[i].rotation);
        CHECK(back.poses_gt[i].translation == ds.poses_gt[i].translation);
        double worst = 0.0;
        for (size_t j = 0; j < ds.images[i].rgb.size(); ++j) {
            worst = std::max(worst, std::abs(back.images[i].rgb[j] - ds.images[i].rgb[j]));
        }
        CHECK(worst <= 0.5 / 255.0 + 1e-12);
    }
    fs::remove_all(dir);
}

TEST_CASE("loader reports malformed datasets") {
    fs::path dir = fs::temp_directory_path() / "nerfba_badset_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    CHECK_THROWS_AS(load_dataset(dir.string()), IoError);  // missing manifest

    auto write_manifest = [&](const std::string& body) {
        std::ofstream out(dir / "manifest.json");
        out << body;
    };
    write_manifest("{ not json");
    CHECK_THROWS_AS(load_dataset(dir.string()), ParseError);

    write_manifest(R"({"camera_intrinsics":{"fx":10,"fy":10,"cx":4,"cy":4,"width":8,"height":8},)"
                   R"("near":1.0,"far":2.0,"frames":[]})");
    CHECK_THROWS_AS(load_dataset(dir.string()), ParseError);

    // Wrong matrix arity must name the frame.
    write_manifest(R"({"camera_intrinsics":{"fx":10,"fy":10,"cx":4,"cy":4,"width":8,"height":8},)"
                   R"("near":1.0,"far":2.0,)"
                   R"("frames":[{"file":"r_000.ppm","split":"train","camera_to_world":[1,0,0]}]})");
    try {
        load_dataset(dir.string());
        CHECK(false);
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("r_000.ppm") != std::string::npos);
    }

    // Dimension mismatch between manifest and the image file.
    Image img(4, 4);
    write_ppm(img, (dir / "r_000.ppm").string());
    write_manifest(R"({"camera_intrinsics":{"fx":10,"fy":10,"cx":4,"cy":4,"width":8,"height":8},)"
                   R"("near":1.0,"far":2.0,)"
                   R"("frames":[{"file":"r_000.ppm","split":"train",)"
                   R"("camera_to_world":[1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}]})");
    CHECK_THROWS_AS(load_dataset(dir.string()), ParseError);
    fs::remove_all(dir);
}

}  // TEST_SUITE
