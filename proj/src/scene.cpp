#include "nerfba/scene.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "nerfba/errors.hpp"
#include "nerfba/renderer.hpp"
#include "nerfba/threadpool.hpp"

namespace nerfba {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> Dataset::train_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < is_test.size(); ++i) {
        if (!is_test[i]) idx.push_back(static_cast<int>(i));
    }
    return idx;
}

std::vector<int> Dataset::test_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < is_test.size(); ++i) {
        if (is_test[i]) idx.push_back(static_cast<int>(i));
    }
    return idx;
}

std::pair<double, Vec3> density_field(const AnalyticScene& scene, const Vec3& x) {
    double sigma = 0.0;
    Vec3 color_acc = Vec3::Zero();
    for (const auto& b : scene.blobs) {
        Vec3 d = (x - b.center).cwiseQuotient(b.scales);
        double w = b.peak * std::exp(-0.5 * d.squaredNorm());
        sigma += w;
        color_acc += w * b.color;
    }
    if (sigma < 1e-300) {
        Vec3 mean = Vec3::Zero();
        if (!scene.blobs.empty()) {
            for (const auto& b : scene.blobs) mean += b.color;
            mean /= static_cast<double>(scene.blobs.size());
        }
        return {sigma, mean};
    }
    return {sigma, color_acc / sigma};
}

std::vector<PoseSE3> sphere_rig(int count, double radius, double elev_min_deg,
                                double elev_max_deg, uint64_t seed) {
    if (count < 1) throw ValidationError("sphere_rig: need at least one camera");
    if (!(radius > 0.0)) throw ValidationError("sphere_rig: radius must be positive");
    constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
    Rng rng(seed ^ 0x7269672d736565ULL);
    std::vector<PoseSE3> rig;
    rig.reserve(count);
    const Vec3 up(0.0, 0.0, 1.0);
    for (int i = 0; i < count; ++i) {
        double azim = 2.0 * 3.14159265358979323846 * i / count;
        double elev = rng.uniform(elev_min_deg * kDegToRad, elev_max_deg * kDegToRad);
        Vec3 pos(radius * std::cos(elev) * std::cos(azim), radius * std::cos(elev) * std::sin(azim),
                 radius * std::sin(elev));
        Vec3 forward = (-pos).normalized();
        Vec3 right = forward.cross(up);
        if (right.norm() < 1e-9) {
            // Camera at a pole; fall back to the x axis for the horizon.
            right = Vec3(1.0, 0.0, 0.0);
        }
        right.normalize();
        Vec3 down = forward.cross(right);
        Mat3 r;
        r.col(0) = right;
        r.col(1) = down;
        r.col(2) = forward;
        rig.push_back(pose_from_rt(r, pos));
    }
    return rig;
}

std::vector<PoseSE3> perturb_poses(std::span<const PoseSE3> poses, double rot_std_deg,
                                   double trans_std, uint64_t seed, bool left_compose) {
    if (rot_std_deg < 0.0 || trans_std < 0.0) throw ValidationError("perturb_poses: stds must be >= 0");
    constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
    const double rot_axis_std = rot_std_deg * kDegToRad / std::sqrt(3.0);
    const double trans_axis_std = trans_std / std::sqrt(3.0);
    Rng rng(seed ^ 0x70657274757262ULL);
    std::vector<PoseSE3> out;
    out.reserve(poses.size());
    for (const auto& pose : poses) {
        // Retry if the composed rotation lands within the degenerate band
        // around pi (probability ~ (1e-6 / rot_std)^2).
        for (int attempt = 0;; ++attempt) {
            Vec6 noise;
            for (int i = 0; i < 3; ++i) noise(i) = trans_axis_std * rng.gaussian();
            for (int i = 0; i < 3; ++i) noise(3 + i) = rot_axis_std * rng.gaussian();
            PoseSE3 delta = exp_map(noise);
            PoseSE3 perturbed = left_compose ? compose(delta, pose) : compose(pose, delta);
            if (perturbed.twist_valid) {
                out.push_back(perturbed);
                break;
            }
            if (attempt > 100) throw ValidationError("perturb_poses: cannot leave degenerate rotation");
        }
    }
    return out;
}

Dataset bake_dataset(const AnalyticScene& scene, const std::vector<bool>& is_test,
                     int samples_per_ray, int workers) {
    if (scene.rig.empty()) throw ValidationError("bake_dataset: empty rig");
    if (is_test.size() != scene.rig.size()) throw ValidationError("bake_dataset: split size mismatch");
    if (samples_per_ray < 1) throw ValidationError("bake_dataset: need at least one sample per ray");
    if (!(scene.near > 0.0) || !(scene.near < scene.far)) {
        throw ValidationError("bake_dataset: need 0 < near < far");
    }
    const Intrinsics& k = scene.intrinsics;
    if (k.width < 1 || k.height < 1) throw ValidationError("bake_dataset: empty image size");

    Dataset ds;
    ds.intrinsics = k;
    ds.poses_gt = scene.rig;
    ds.is_test = is_test;
    ds.near = scene.near;
    ds.far = scene.far;
    ds.background = scene.background;
    ds.images.assign(scene.rig.size(), Image(k.width, k.height));

    const DepthSamples depths = stratified_depths(scene.near, scene.far, samples_per_ray, nullptr);

    ThreadPool pool(workers > 0 ? workers : 1);
    pool.run(static_cast<int>(scene.rig.size()), [&](int view) {
        Image& img = ds.images[view];
        std::vector<SampleOutput> samples(samples_per_ray);
        CompositeTape tape;
        for (int y = 0; y < k.height; ++y) {
            for (int x = 0; x < k.width; ++x) {
                Ray ray = make_ray(scene.rig[view], k, Eigen::Vector2d(x, y));
                for (int i = 0; i < samples_per_ray; ++i) {
                    Vec3 p = ray.origin + depths.midpoint(i) * ray.direction;
                    auto [sigma, rgb] = density_field(scene, p);
                    samples[i].sigma = sigma;
                    samples[i].rgb = rgb;
                }
                Vec3 color;
                double depth;
                composite_into(samples, depths, scene.background, tape, color, depth);
                for (int c = 0; c < 3; ++c) img.at(x, y, c) = color(c);
            }
        }
    });
    return ds;
}

namespace {

json pose_to_matrix_json(const PoseSE3& pose) {
    json m = json::array();
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) {
            if (r < 3 && c < 3) {
                m.push_back(pose.rotation(r, c));
            } else if (r < 3) {
                m.push_back(pose.translation(r));
            } else {
                m.push_back(c == 3 ? 1.0 : 0.0);
            }
        }
    }
    return m;
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::string& dir) {
    if (dataset.images.size() != dataset.poses_gt.size() ||
        dataset.images.size() != dataset.is_test.size()) {
        throw ValidationError("save_dataset: inconsistent frame counts");
    }
    fs::create_directories(dir);
    json manifest;
    manifest["camera_intrinsics"] = {
        {"fx", dataset.intrinsics.fx}, {"fy", dataset.intrinsics.fy},
        {"cx", dataset.intrinsics.cx}, {"cy", dataset.intrinsics.cy},
        {"width", dataset.intrinsics.width}, {"height", dataset.intrinsics.height},
    };
    manifest["near"] = dataset.near;
    manifest["far"] = dataset.far;
    manifest["background"] = {dataset.background(0), dataset.background(1), dataset.background(2)};
    json frames = json::array();
    for (size_t i = 0; i < dataset.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "r_%03zu.ppm", i);
        write_ppm(dataset.images[i], (fs::path(dir) / name).string());
        json frame;
        frame["file"] = name;
        frame["split"] = dataset.is_test[i] ? "test" : "train";
        frame["camera_to_world"] = pose_to_matrix_json(dataset.poses_gt[i]);
        frames.push_back(frame);
    }
    manifest["frames"] = frames;
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw IoError("cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    fs::path manifest_path = fs::path(dir) / "manifest.json";
    std::ifstream in(manifest_path);
    if (!in) throw IoError("missing manifest: " + manifest_path.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw ParseError("malformed manifest " + manifest_path.string() + ": " + e.what());
    }

    Dataset ds;
    try {
        const json& k = manifest.at("camera_intrinsics");
        ds.intrinsics.fx = k.at("fx").get<double>();
        ds.intrinsics.fy = k.at("fy").get<double>();
        ds.intrinsics.cx = k.at("cx").get<double>();
        ds.intrinsics.cy = k.at("cy").get<double>();
        ds.intrinsics.width = k.at("width").get<int>();
        ds.intrinsics.height = k.at("height").get<int>();
        ds.near = manifest.at("near").get<double>();
        ds.far = manifest.at("far").get<double>();
        if (manifest.contains("background")) {
            const json& bg = manifest.at("background");
            if (!bg.is_array() || bg.size() != 3) throw ParseError("background must have 3 entries");
            for (int c = 0; c < 3; ++c) ds.background(c) = bg.at(c).get<double>();
        }
    } catch (const json::exception& e) {
        throw ParseError("manifest " + manifest_path.string() + ": " + e.what());
    }

    if (!manifest.contains("frames") || !manifest["frames"].is_array() || manifest["frames"].empty()) {
        throw ParseError("manifest has no frames: " + manifest_path.string());
    }
    for (const json& frame : manifest["frames"]) {
        std::string file;
        try {
            file = frame.at("file").get<std::string>();
            std::string split = frame.at("split").get<std::string>();
            if (split != "train" && split != "test") {
                throw ParseError("frame " + file + ": split must be train or test");
            }
            const json& m = frame.at("camera_to_world");
            if (!m.is_array() || m.size() != 16) {
                throw ParseError("frame " + file + ": camera_to_world must hold 16 numbers (4x4 row-major)");
            }
            Mat3 r;
            Vec3 t;
            for (int row = 0; row < 3; ++row) {
                for (int col = 0; col < 3; ++col) r(row, col) = m.at(row * 4 + col).get<double>();
                t(row) = m.at(row * 4 + 3).get<double>();
            }
            Image img = read_ppm((fs::path(dir) / file).string());
            if (img.width != ds.intrinsics.width || img.height != ds.intrinsics.height) {
                throw ParseError("frame " + file + ": image dimensions do not match intrinsics");
            }
            ds.images.push_back(std::move(img));
            ds.poses_gt.push_back(pose_from_rt(r, t));
            ds.is_test.push_back(split == "test");
        } catch (const json::exception& e) {
            throw ParseError("frame " + (file.empty() ? std::string("<unnamed>") : file) + ": " + e.what());
        }
    }
    return ds;
}

}  // namespace nerfba
