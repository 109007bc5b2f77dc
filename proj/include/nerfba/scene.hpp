#pragma once

#include <string>
#include <vector>

#include "nerfba/image.hpp"
#include "nerfba/rng.hpp"
#include "nerfba/sampling.hpp"
#include "nerfba/se3.hpp"

namespace nerfba {

struct Blob {
    Vec3 center = Vec3::Zero();
    Vec3 scales = Vec3::Ones();   // per-axis Gaussian scales
    double peak = 1.0;            // density at the center
    Vec3 color = Vec3::Ones();
};

// Analytic ground-truth radiance field: a sum of colored Gaussian density
// blobs observed by a camera rig, rendered with the same compositing code
// as training.
struct AnalyticScene {
    std::vector<Blob> blobs;
    double near = 2.0;
    double far = 6.0;
    std::vector<PoseSE3> rig;  // ground-truth camera-to-world poses
    Intrinsics intrinsics;
    Vec3 background = Vec3::Ones();
};

struct Dataset {
    std::vector<Image> images;
    std::vector<PoseSE3> poses_gt;
    Intrinsics intrinsics;
    std::vector<bool> is_test;
    double near = 0.0;
    double far = 0.0;
    Vec3 background = Vec3::Ones();

    std::vector<int> train_indices() const;
    std::vector<int> test_indices() const;
};

// Density and color at a point: sigma = sum of blob Gaussians, color the
// density-weighted blend of blob colors (uniform blend where sigma ~ 0).
std::pair<double, Vec3> density_field(const AnalyticScene& scene, const Vec3& x);

// Cameras on a sphere of the given radius looking at the origin (z-up
// world, camera +z forward / +x right / +y down). Azimuths are uniform
// steps from zero; elevations are drawn from the given range with the seed.
std::vector<PoseSE3> sphere_rig(int count, double radius, double elev_min_deg,
                                double elev_max_deg, uint64_t seed);

// Left-composes each pose with exp of a Gaussian twist. rot_std_deg /
// trans_std are the RMS magnitudes of the rotational and translational
// noise (per-axis std = magnitude / sqrt(3)).
std::vector<PoseSE3> perturb_poses(std::span<const PoseSE3> poses, double rot_std_deg,
                                   double trans_std, uint64_t seed, bool left_compose = true);

// Renders every rig view by midpoint quadrature of the analytic field
// (deterministic; use >= 4x the training sample count).
Dataset bake_dataset(const AnalyticScene& scene, const std::vector<bool>& is_test,
                     int samples_per_ray, int workers);

// Dataset directory: manifest.json plus one binary PPM per frame.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace nerfba
