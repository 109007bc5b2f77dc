#include "nerfba/sampling.hpp"

#include <cmath>

#include "nerfba/errors.hpp"

namespace nerfba {

Vec3 camera_dir(const Intrinsics& k, const Eigen::Vector2d& pixel) {
    return Vec3((pixel.x() + 0.5 - k.cx) / k.fx, (pixel.y() + 0.5 - k.cy) / k.fy, 1.0);
}

Ray make_ray(const PoseSE3& pose, const Intrinsics& k, const Eigen::Vector2d& pixel) {
    if (!(std::abs(k.fx) > 0.0) || !(std::abs(k.fy) > 0.0)) {
        throw ValidationError("make_ray: singular intrinsics (fx or fy is zero)");
    }
    if (pixel.x() < 0 || pixel.x() >= k.width || pixel.y() < 0 || pixel.y() >= k.height) {
        throw ValidationError("make_ray: pixel outside image bounds");
    }
    Ray ray;
    ray.pixel = pixel;
    ray.origin = pose.translation;
    ray.direction = ray_direction_world(pose, camera_dir(k, pixel));
    // Radius matching the variance of a uniform pixel footprint of width 1/fx.
    ray.footprint_radius = (1.0 / std::abs(k.fx)) * 2.0 / std::sqrt(12.0);
    return ray;
}

std::vector<Ray> make_rays(const PoseSE3& pose, const Intrinsics& k,
                           std::span<const Eigen::Vector2d> pixels) {
    std::vector<Ray> rays;
    rays.reserve(pixels.size());
    for (const auto& p : pixels) rays.push_back(make_ray(pose, k, p));
    return rays;
}

DepthSamples stratified_depths(double near, double far, int n, Rng* jitter) {
    if (!(near > 0.0) || !(near < far)) throw ValidationError("stratified_depths: need 0 < near < far");
    if (n < 1) throw ValidationError("stratified_depths: need at least one sample");
    DepthSamples d;
    d.bounds.resize(static_cast<size_t>(n) + 1);
    double w = (far - near) / n;
    d.bounds.front() = near;
    d.bounds.back() = far;
    for (int i = 1; i < n; ++i) {
        if (jitter) {
            d.bounds[i] = near + (i - 0.5 + jitter->uniform()) * w;
        } else {
            d.bounds[i] = near + i * w;
        }
    }
    return d;
}

FrustumGaussian frustum_gaussian(const Ray& ray, double t0, double t1) {
    if (!(t0 > 0.0) || !(t1 > t0)) throw ValidationError("frustum_gaussian: need 0 < t0 < t1");
    FrustumGaussian f;
    f.mu_t = 0.5 * (t0 + t1);
    double w = t1 - t0;
    f.sigma_t2 = w * w / 12.0;
    double rr = ray.footprint_radius * f.mu_t;
    f.sigma_r2 = rr * rr / 4.0;
    f.mean = ray.origin + f.mu_t * ray.direction;
    Vec3 dd = ray.direction.cwiseProduct(ray.direction);
    f.diag_cov = f.sigma_t2 * dd + f.sigma_r2 * (Vec3::Ones() - dd);
    return f;
}

}  // namespace nerfba
