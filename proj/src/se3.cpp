#include "nerfba/se3.hpp"

#include <cmath>

#include "nerfba/errors.hpp"

namespace nerfba {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTaylorSwitch = 1e-2;

// Series coefficients of the Rodrigues/left-Jacobian family, written so the
// small-angle branch avoids the catastrophic cancellations of the closed
// forms. c1 = sin(t)/t, c2 = (1-cos(t))/t^2, c3 = (t-sin(t))/t^3.
struct SinCoeffs {
    double c1, c2, c3;
};

SinCoeffs sin_coeffs(double theta) {
    SinCoeffs c;
    double t2 = theta * theta;
    if (theta < kTaylorSwitch) {
        c.c1 = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        c.c2 = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        c.c3 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0;
    } else {
        double s = std::sin(theta);
        double half = std::sin(0.5 * theta);
        c.c1 = s / theta;
        c.c2 = 2.0 * half * half / t2;
        c.c3 = (theta - s) / (t2 * theta);
    }
    return c;
}

// Derivatives of c2, c3 with respect to theta.
void sin_coeff_derivs(double theta, double& dc2, double& dc3) {
    double t2 = theta * theta;
    if (theta < kTaylorSwitch) {
        dc2 = -theta / 12.0 + theta * t2 / 180.0;
        dc3 = -theta / 60.0 + theta * t2 / 1260.0;
    } else {
        double s = std::sin(theta);
        double half = std::sin(0.5 * theta);
        double one_minus_cos = 2.0 * half * half;
        dc2 = (theta * s - 2.0 * one_minus_cos) / (t2 * theta);
        dc3 = (theta * one_minus_cos - 3.0 * (theta - s)) / (t2 * t2);
    }
}

}  // namespace

Mat3 skew(const Vec3& v) {
    Mat3 m;
    m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
    return m;
}

Mat3 so3_exp(const Vec3& phi) {
    double theta = phi.norm();
    SinCoeffs c = sin_coeffs(theta);
    Mat3 k = skew(phi);
    return Mat3::Identity() + c.c1 * k + c.c2 * k * k;
}

Mat3 so3_left_jacobian(const Vec3& phi) {
    double theta = phi.norm();
    SinCoeffs c = sin_coeffs(theta);
    Mat3 k = skew(phi);
    return Mat3::Identity() + c.c2 * k + c.c3 * k * k;
}

PoseSE3 exp_map(const Vec6& twist) {
    PoseSE3 pose;
    pose.twist = twist;
    Vec3 rho = twist.head<3>();
    Vec3 phi = twist.tail<3>();
    pose.rotation = so3_exp(phi);
    pose.translation = so3_left_jacobian(phi) * rho;
    pose.twist_valid = true;
    return pose;
}

Vec6 log_map(const PoseSE3& pose) {
    const Mat3& r = pose.rotation;
    double cos_theta = std::clamp(0.5 * (r.trace() - 1.0), -1.0, 1.0);
    Vec3 vee(0.5 * (r(2, 1) - r(1, 2)), 0.5 * (r(0, 2) - r(2, 0)), 0.5 * (r(1, 0) - r(0, 1)));
    double sin_theta = vee.norm();
    double theta = std::atan2(sin_theta, cos_theta);
    if (theta >= kPi - 1e-6) {
        throw ValidationError("log_map: rotation angle within 1e-6 of pi (degenerate axis)");
    }

    Vec3 phi;
    if (theta < 1e-12) {
        phi = vee;  // sin(t)/t -> 1
    } else if (sin_theta < 1e-12) {
        phi = Vec3::Zero();
    } else {
        phi = vee * (theta / sin_theta);
    }

    // Invert the left Jacobian: J_l^{-1} = I - K/2 + c * K^2.
    double c;
    double t2 = theta * theta;
    if (theta < kTaylorSwitch) {
        c = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
    } else {
        double cot_half = std::cos(0.5 * theta) / std::sin(0.5 * theta);
        c = (1.0 - 0.5 * theta * cot_half) / t2;
    }
    Mat3 k = skew(phi);
    Mat3 jl_inv = Mat3::Identity() - 0.5 * k + c * k * k;

    Vec6 twist;
    twist.head<3>() = jl_inv * pose.translation;
    twist.tail<3>() = phi;
    return twist;
}

PoseSE3 pose_from_rt(const Mat3& rotation, const Vec3& translation) {
    PoseSE3 pose;
    pose.rotation = rotation;
    pose.translation = translation;
    double angle = rotation_angle(rotation);
    if (angle >= kPi - 1e-6) {
        pose.twist_valid = false;
        pose.twist.setZero();
    } else {
        pose.twist = log_map(pose);
        pose.twist_valid = true;
    }
    return pose;
}

PoseSE3 compose(const PoseSE3& a, const PoseSE3& b) {
    return pose_from_rt(a.rotation * b.rotation, a.rotation * b.translation + a.translation);
}

ExpJacobians exp_map_jacobians(const Vec6& twist) {
    ExpJacobians out;
    Vec3 rho = twist.head<3>();
    Vec3 phi = twist.tail<3>();
    double theta = phi.norm();
    Mat3 k = skew(phi);
    Mat3 r = so3_exp(phi);
    out.dt_drho = so3_left_jacobian(phi);

    SinCoeffs c = sin_coeffs(theta);
    double dc2, dc3;
    sin_coeff_derivs(theta, dc2, dc3);

    for (int i = 0; i < 3; ++i) {
        Vec3 e = Vec3::Unit(i);
        Mat3 ei = skew(e);
        if (theta < 1e-12) {
            out.dR[i] = ei;
        } else {
            // Gallego & Yezzi closed form for d exp([phi]x) / d phi_i.
            Vec3 w = phi.cross((Mat3::Identity() - r) * e);
            out.dR[i] = ((phi(i) * k + skew(w)) / (theta * theta)) * r;
        }
        // d theta / d phi_i = phi_i / theta (0 at the origin).
        double dtheta = theta < 1e-12 ? 0.0 : phi(i) / theta;
        Mat3 dJl = dc2 * dtheta * k + c.c2 * ei + dc3 * dtheta * k * k + c.c3 * (ei * k + k * ei);
        out.dt_dphi.col(i) = dJl * rho;
    }
    return out;
}

double rotation_angle(const Mat3& rotation) {
    double cos_theta = std::clamp(0.5 * (rotation.trace() - 1.0), -1.0, 1.0);
    Vec3 vee(0.5 * (rotation(2, 1) - rotation(1, 2)), 0.5 * (rotation(0, 2) - rotation(2, 0)),
             0.5 * (rotation(1, 0) - rotation(0, 1)));
    return std::atan2(vee.norm(), cos_theta);
}

double rotation_geodesic_deg(const Mat3& a, const Mat3& b) {
    return rotation_angle(a.transpose() * b) * 180.0 / kPi;
}

Vec3 ray_direction_world(const PoseSE3& pose, const Vec3& pixel_dir_cam) {
    double n = pixel_dir_cam.norm();
    if (n < 1e-300) throw ValidationError("ray_direction_world: zero camera-space direction");
    Vec3 d = pose.rotation * pixel_dir_cam;
    return d / d.norm();
}

SimilarityTransform procrustes_align(std::span<const PoseSE3> estimated,
                                     std::span<const PoseSE3> reference) {
    size_t n = estimated.size();
    if (n != reference.size()) throw ValidationError("procrustes_align: list length mismatch");
    if (n < 3) throw ValidationError("procrustes_align: need at least 3 poses");

    Vec3 mean_est = Vec3::Zero(), mean_ref = Vec3::Zero();
    for (size_t i = 0; i < n; ++i) {
        mean_est += estimated[i].translation;
        mean_ref += reference[i].translation;
    }
    mean_est /= static_cast<double>(n);
    mean_ref /= static_cast<double>(n);

    Mat3 cov = Mat3::Zero();
    double var_est = 0.0;
    for (size_t i = 0; i < n; ++i) {
        Vec3 de = estimated[i].translation - mean_est;
        Vec3 dr = reference[i].translation - mean_ref;
        cov += dr * de.transpose();
        var_est += de.squaredNorm();
    }
    cov /= static_cast<double>(n);
    var_est /= static_cast<double>(n);
    if (var_est < 1e-24) throw ValidationError("procrustes_align: estimated centers are coincident");

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3 d = svd.singularValues();
    if (d(1) <= 1e-12 * d(0)) {
        throw ValidationError("procrustes_align: camera centers are (near-)collinear");
    }
    Vec3 sgn = Vec3::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) sgn(2) = -1.0;

    SimilarityTransform t;
    t.rotation = svd.matrixU() * sgn.asDiagonal() * svd.matrixV().transpose();
    t.scale = d.dot(sgn) / var_est;
    if (t.scale <= 0.0) throw ValidationError("procrustes_align: non-positive scale");
    t.translation = mean_ref - t.scale * (t.rotation * mean_est);
    return t;
}

PoseSE3 apply_similarity(const SimilarityTransform& t, const PoseSE3& pose) {
    return pose_from_rt(t.rotation * pose.rotation, t.apply(pose.translation));
}

PoseErrors pose_errors(std::span<const PoseSE3> aligned, std::span<const PoseSE3> reference) {
    if (aligned.size() != reference.size()) throw ValidationError("pose_errors: list length mismatch");
    if (aligned.empty()) throw ValidationError("pose_errors: empty trajectories");
    PoseErrors e;
    for (size_t i = 0; i < aligned.size(); ++i) {
        e.rotation_deg += rotation_geodesic_deg(aligned[i].rotation, reference[i].rotation);
        e.translation += (aligned[i].translation - reference[i].translation).norm();
    }
    e.rotation_deg /= static_cast<double>(aligned.size());
    e.translation /= static_cast<double>(aligned.size());
    return e;
}

}  // namespace nerfba
