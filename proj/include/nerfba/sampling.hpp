#pragma once

#include <span>
#include <vector>

#include "nerfba/rng.hpp"
#include "nerfba/se3.hpp"

namespace nerfba {

struct Intrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
    int width = 0, height = 0;
};

struct Ray {
    Vec3 origin = Vec3::Zero();              // camera center, world
    Vec3 direction = Vec3::Zero();           // unit, world
    Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
    double footprint_radius = 0.0;           // cone radius at unit depth
};

// N+1 strictly increasing bin edges in [near, far].
struct DepthSamples {
    std::vector<double> bounds;

    int count() const { return static_cast<int>(bounds.size()) - 1; }
    double width(int bin) const { return bounds[bin + 1] - bounds[bin]; }
    double midpoint(int bin) const { return 0.5 * (bounds[bin] + bounds[bin + 1]); }
};

// Gaussian moments of one conical frustum segment. diag_cov is the diagonal
// of sigma_t^2 d d^T + sigma_r^2 (I - d d^T) for unit d.
struct FrustumGaussian {
    Vec3 mean = Vec3::Zero();
    Vec3 diag_cov = Vec3::Zero();
    double mu_t = 0.0;
    double sigma_t2 = 0.0;
    double sigma_r2 = 0.0;
};

// Camera-space direction of the center of pixel (u, v): the ray pierces
// ((u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1).
Vec3 camera_dir(const Intrinsics& k, const Eigen::Vector2d& pixel);

Ray make_ray(const PoseSE3& pose, const Intrinsics& k, const Eigen::Vector2d& pixel);
std::vector<Ray> make_rays(const PoseSE3& pose, const Intrinsics& k,
                           std::span<const Eigen::Vector2d> pixels);

// Uniform bin edges; with a jitter stream, each interior edge is drawn
// uniformly within +-(half bin) of its nominal position, which keeps the
// edges strictly increasing.
DepthSamples stratified_depths(double near, double far, int n, Rng* jitter);

FrustumGaussian frustum_gaussian(const Ray& ray, double t0, double t1);

}  // namespace nerfba
