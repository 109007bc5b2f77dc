#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace nerfba {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;

// Rigid camera-to-world pose. Twist convention: components [0..2] are the
// translational part rho, components [3..5] the rotational part phi
// (radians). exp: R = exp([phi]x), t = J_l(phi) * rho, with J_l the SO(3)
// left Jacobian. `translation` is the camera center in world coordinates.
struct PoseSE3 {
    Vec6 twist = Vec6::Zero();
    Mat3 rotation = Mat3::Identity();     // R_c2w
    Vec3 translation = Vec3::Zero();      // t_c2w
    // pose_from_rt leaves the twist unset when the rotation angle is within
    // 1e-6 of pi (axis extraction is singular there); log_map then refuses.
    bool twist_valid = true;
};

struct SimilarityTransform {
    double scale = 1.0;
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

struct PoseErrors {
    double rotation_deg = 0.0;
    double translation = 0.0;
};

// Partial derivatives of exp_map outputs with respect to the twist,
// evaluated at a given twist. Used to chain image-space gradients back to
// the 6-vector parameterization.
struct ExpJacobians {
    Mat3 dR[3];      // dR/dphi_i
    Mat3 dt_dphi;    // column i = d t / d phi_i
    Mat3 dt_drho;    // = J_l(phi)
};

PoseSE3 exp_map(const Vec6& twist);
Vec6 log_map(const PoseSE3& pose);
PoseSE3 pose_from_rt(const Mat3& rotation, const Vec3& translation);
PoseSE3 compose(const PoseSE3& a, const PoseSE3& b);  // a * b

ExpJacobians exp_map_jacobians(const Vec6& twist);

// SO(3) helpers shared with the pose-gradient chain.
Mat3 skew(const Vec3& v);
Mat3 so3_exp(const Vec3& phi);
Mat3 so3_left_jacobian(const Vec3& phi);
double rotation_angle(const Mat3& rotation);   // geodesic distance to identity
double rotation_geodesic_deg(const Mat3& a, const Mat3& b);

// World-space unit ray direction for a camera-space direction d_c.
Vec3 ray_direction_world(const PoseSE3& pose, const Vec3& pixel_dir_cam);

// Closed-form similarity (scale, rotation, translation) minimizing the sum
// of squared distances between transformed estimated camera centers and the
// reference centers. Requires >= 3 poses with non-collinear centers.
SimilarityTransform procrustes_align(std::span<const PoseSE3> estimated,
                                     std::span<const PoseSE3> reference);

PoseSE3 apply_similarity(const SimilarityTransform& t, const PoseSE3& pose);

// Mean geodesic rotation error (degrees) and mean camera-center distance.
// Inputs are expected to be already aligned (see procrustes_align).
PoseErrors pose_errors(std::span<const PoseSE3> aligned, std::span<const PoseSE3> reference);

}  // namespace nerfba
