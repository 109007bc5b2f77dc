#include "nerfba/encoding.hpp"

#include <cmath>

#include "nerfba/errors.hpp"

namespace nerfba {

namespace {

constexpr int kMaxBands = 16;
constexpr double kPi = 3.14159265358979323846;
// Attenuation floor; keeps high-band factors out of the denormal range.
constexpr double kGainFloor = 1e-300;

void check_cfg(const EncodingConfig& cfg) {
    if (cfg.bands < 1 || cfg.bands > kMaxBands) {
        throw ValidationError("encoding: bands must be in [1, 16]");
    }
}

double band_weight(double alpha, int k) {
    double a = std::clamp(alpha - k, 0.0, 1.0);
    return 0.5 * (1.0 - std::cos(kPi * a));
}

// Per-band scale factors. weights are the annealing window in annealed mode
// and 1 otherwise; pow2 is the 2^k frequency ladder.
struct BandScales {
    double pow2[kMaxBands];
    double weight[kMaxBands];
};

BandScales band_scales(const EncodingConfig& cfg) {
    BandScales s;
    bool annealed = cfg.mode == EncodingMode::annealed_pe && cfg.alpha >= 0.0;
    for (int k = 0; k < cfg.bands; ++k) {
        s.pow2[k] = std::ldexp(1.0, k);
        s.weight[k] = annealed ? band_weight(cfg.alpha, k) : 1.0;
    }
    return s;
}

inline double attenuation(double pow2k, double cov) {
    // exp(-4^k * cov / 2), floored.
    return std::max(std::exp(-0.5 * pow2k * pow2k * cov), kGainFloor);
}

}  // namespace

const char* encoding_mode_name(EncodingMode mode) {
    switch (mode) {
        case EncodingMode::plain_pe: return "plain_pe";
        case EncodingMode::annealed_pe: return "annealed_pe";
        case EncodingMode::integrated_pe: return "integrated_pe";
    }
    return "?";
}

EncodingMode encoding_mode_from_name(const std::string& name) {
    if (name == "plain_pe") return EncodingMode::plain_pe;
    if (name == "annealed_pe") return EncodingMode::annealed_pe;
    if (name == "integrated_pe") return EncodingMode::integrated_pe;
    throw ValidationError("unknown encoding mode: " + name);
}

AnnealState anneal_at(int iter, int start_iter, int end_iter, int bands) {
    AnnealState s;
    s.start_iter = start_iter;
    s.end_iter = end_iter;
    if (iter < start_iter) {
        s.alpha = 0.0;
    } else if (iter >= end_iter) {
        s.alpha = static_cast<double>(bands);
    } else {
        s.alpha = bands * static_cast<double>(iter - start_iter) / (end_iter - start_iter);
    }
    return s;
}

Eigen::VectorXd anneal_weights(double alpha, int bands) {
    if (alpha < 0.0 || alpha > bands) throw ValidationError("anneal_weights: alpha outside [0, L]");
    Eigen::VectorXd w(bands);
    for (int k = 0; k < bands; ++k) w(k) = band_weight(alpha, k);
    return w;
}

void encode_point_into(double* col, const Vec3& x, const EncodingConfig& cfg) {
    BandScales s = band_scales(cfg);
    int off = 0;
    if (cfg.include_identity) {
        col[0] = x(0);
        col[1] = x(1);
        col[2] = x(2);
        off = 3;
    }
    for (int k = 0; k < cfg.bands; ++k) {
        double f = s.pow2[k], w = s.weight[k];
        for (int c = 0; c < 3; ++c) {
            double a = f * x(c);
            col[off + c] = w * std::sin(a);
            col[off + 3 + c] = w * std::cos(a);
        }
        off += 6;
    }
}

void encode_frustum_into(double* col, const FrustumGaussian& frustum, const EncodingConfig& cfg) {
    BandScales s = band_scales(cfg);
    int off = 0;
    if (cfg.include_identity) {
        col[0] = frustum.mean(0);
        col[1] = frustum.mean(1);
        col[2] = frustum.mean(2);
        off = 3;
    }
    for (int k = 0; k < cfg.bands; ++k) {
        double f = s.pow2[k];
        for (int c = 0; c < 3; ++c) {
            double gain = attenuation(f, frustum.diag_cov(c));
            double a = f * frustum.mean(c);
            col[off + c] = gain * std::sin(a);
            col[off + 3 + c] = gain * std::cos(a);
        }
        off += 6;
    }
}

Eigen::VectorXd pe(const Vec3& x, const EncodingConfig& cfg) {
    check_cfg(cfg);
    if (cfg.mode == EncodingMode::integrated_pe) {
        throw ValidationError("pe: config is in integrated_pe mode");
    }
    Eigen::VectorXd out(cfg.dim());
    encode_point_into(out.data(), x, cfg);
    return out;
}

Eigen::VectorXd ipe(const FrustumGaussian& frustum, const EncodingConfig& cfg) {
    check_cfg(cfg);
    if (cfg.mode != EncodingMode::integrated_pe) {
        throw ValidationError("ipe: config is not in integrated_pe mode");
    }
    if ((frustum.diag_cov.array() < 0.0).any()) {
        throw ValidationError("ipe: negative covariance diagonal");
    }
    Eigen::VectorXd out(cfg.dim());
    encode_frustum_into(out.data(), frustum, cfg);
    return out;
}

EncodedFeature pe_jacobians(const Vec3& x, double x_t, const EncodingConfig& cfg) {
    check_cfg(cfg);
    if (cfg.mode == EncodingMode::integrated_pe) {
        throw ValidationError("pe_jacobians: config is in integrated_pe mode");
    }
    BandScales s = band_scales(cfg);
    EncodedFeature out;
    out.value.resize(cfg.dim());
    encode_point_into(out.value.data(), x, cfg);
    out.d_by_t = Eigen::MatrixXd::Zero(cfg.dim(), 3);
    int off = 0;
    if (cfg.include_identity) {
        out.d_by_t.topLeftCorner<3, 3>().setIdentity();
        off = 3;
    }
    for (int k = 0; k < cfg.bands; ++k) {
        double f = s.pow2[k], w = s.weight[k];
        for (int c = 0; c < 3; ++c) {
            double a = f * x(c);
            out.d_by_t(off + c, c) = w * f * std::cos(a);
            out.d_by_t(off + 3 + c, c) = -w * f * std::sin(a);
        }
        off += 6;
    }
    out.d_by_dw = x_t * out.d_by_t;
    return out;
}

EncodedFeature ipe_jacobians(const FrustumGaussian& frustum, const Vec3& d_w,
                             const EncodingConfig& cfg, bool full_chain) {
    check_cfg(cfg);
    if (cfg.mode != EncodingMode::integrated_pe) {
        throw ValidationError("ipe_jacobians: config is not in integrated_pe mode");
    }
    if (std::abs(d_w.norm() - 1.0) > 1e-6) {
        throw ValidationError("ipe_jacobians: d_w is not unit length");
    }
    EncodedFeature out;
    out.value.resize(cfg.dim());
    encode_frustum_into(out.value.data(), frustum, cfg);

    // Mean path: d gamma / d mu, then d mu / d t = I and d mu / d d_w = mu_t I.
    BandScales s = band_scales(cfg);
    out.d_by_t = Eigen::MatrixXd::Zero(cfg.dim(), 3);
    int off = 0;
    if (cfg.include_identity) {
        out.d_by_t.topLeftCorner<3, 3>().setIdentity();
        off = 3;
    }
    for (int k = 0; k < cfg.bands; ++k) {
        double f = s.pow2[k];
        for (int c = 0; c < 3; ++c) {
            // gain * sin / cos are exactly the stored feature values.
            out.d_by_t(off + c, c) = f * out.value(off + 3 + c);
            out.d_by_t(off + 3 + c, c) = -f * out.value(off + c);
        }
        off += 6;
    }
    out.d_by_dw = frustum.mu_t * out.d_by_t;
    if (full_chain) out.d_by_dw += ipe_covariance_term(frustum, d_w, cfg);
    return out;
}

Eigen::MatrixXd ipe_covariance_term(const FrustumGaussian& frustum, const Vec3& d_w,
                                    const EncodingConfig& cfg) {
    check_cfg(cfg);
    Eigen::VectorXd value(cfg.dim());
    encode_frustum_into(value.data(), frustum, cfg);
    Eigen::MatrixXd term = Eigen::MatrixXd::Zero(cfg.dim(), 3);
    // d diag(Sigma) / d d_w = (sigma_t^2 - sigma_r^2) * 2 d_w (diagonal);
    // d gamma_k / d diag(Sigma) = -2^(2k-1) * gamma_k (both rows).
    double coeff = 2.0 * (frustum.sigma_t2 - frustum.sigma_r2);
    BandScales s = band_scales(cfg);
    int off = cfg.include_identity ? 3 : 0;
    for (int k = 0; k < cfg.bands; ++k) {
        double c4 = 0.5 * s.pow2[k] * s.pow2[k];  // 2^(2k-1)
        for (int c = 0; c < 3; ++c) {
            term(off + c, c) = -c4 * value(off + c) * coeff * d_w(c);
            term(off + 3 + c, c) = -c4 * value(off + 3 + c) * coeff * d_w(c);
        }
        off += 6;
    }
    return term;
}

Eigen::VectorXd frequency_response(const EncodingConfig& cfg, const Vec3& diag_sigma,
                                   const AnnealState* anneal) {
    check_cfg(cfg);
    if ((diag_sigma.array() < 0.0).any()) throw ValidationError("frequency_response: negative sigma");
    Eigen::VectorXd gains(cfg.bands);
    switch (cfg.mode) {
        case EncodingMode::plain_pe:
            gains.setOnes();
            break;
        case EncodingMode::annealed_pe: {
            double alpha = anneal ? anneal->alpha : static_cast<double>(cfg.bands);
            for (int k = 0; k < cfg.bands; ++k) gains(k) = band_weight(alpha, k);
            break;
        }
        case EncodingMode::integrated_pe: {
            // Reporting path: the bare closed form, without the feature
            // pipeline's denormal floor.
            double mean_sigma = diag_sigma.mean();
            for (int k = 0; k < cfg.bands; ++k) {
                double p = std::ldexp(1.0, k);
                gains(k) = std::exp(-0.5 * p * p * mean_sigma);
            }
            break;
        }
    }
    return gains;
}

void pullback_point(const double* col, const double* upstream, double x_t,
                    const EncodingConfig& cfg, Vec3& grad_dw, Vec3& grad_t) {
    BandScales s = band_scales(cfg);
    Vec3 gx = Vec3::Zero();
    int off = 0;
    if (cfg.include_identity) {
        gx += Vec3(upstream[0], upstream[1], upstream[2]);
        off = 3;
    }
    for (int k = 0; k < cfg.bands; ++k) {
        double f = s.pow2[k];
        for (int c = 0; c < 3; ++c) {
            // d sin-row / d x_c = f * (stored cos value); d cos-row = -f * sin.
            gx(c) += f * (upstream[off + c] * col[off + 3 + c] - upstream[off + 3 + c] * col[off + c]);
        }
        off += 6;
    }
    grad_dw += x_t * gx;
    grad_t += gx;
}

void pullback_frustum(const double* col, const double* upstream, double mu_t,
                      double sigma_t2_minus_r2, const Vec3& d_w, bool full_chain,
                      const EncodingConfig& cfg, Vec3& grad_dw, Vec3& grad_t) {
    BandScales s = band_scales(cfg);
    Vec3 gmu = Vec3::Zero();
    Vec3 gcov = Vec3::Zero();
    int off = 0;
    if (cfg.include_identity) {
        gmu += Vec3(upstream[0], upstream[1], upstream[2]);
        off = 3;
    }
    for (int k = 0; k < cfg.bands; ++k) {
        double f = s.pow2[k];
        double c4 = 0.5 * f * f;
        for (int c = 0; c < 3; ++c) {
            gmu(c) += f * (upstream[off + c] * col[off + 3 + c] - upstream[off + 3 + c] * col[off + c]);
            if (full_chain) {
                gcov(c) -= c4 * (upstream[off + c] * col[off + c] + upstream[off + 3 + c] * col[off + 3 + c]);
            }
        }
        off += 6;
    }
    grad_t += gmu;
    grad_dw += mu_t * gmu;
    if (full_chain) {
        grad_dw += (2.0 * sigma_t2_minus_r2) * d_w.cwiseProduct(gcov);
    }
}

}  // namespace nerfba
