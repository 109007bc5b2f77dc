#pragma once

#include <Eigen/Dense>

#include "nerfba/sampling.hpp"
#include "nerfba/se3.hpp"

namespace nerfba {

enum class EncodingMode { plain_pe, annealed_pe, integrated_pe };

const char* encoding_mode_name(EncodingMode mode);
EncodingMode encoding_mode_from_name(const std::string& name);

// Sinusoidal positional encoding configuration. Output layout with the
// identity prefix: [x0 x1 x2 | band 0 | ... | band L-1], where band k holds
// sin(2^k x) for the three coordinates followed by cos(2^k x).
struct EncodingConfig {
    int bands = 10;  // L
    EncodingMode mode = EncodingMode::plain_pe;
    bool include_identity = true;
    // Effective annealing position in [0, L]; negative means all bands
    // active. Only read in annealed_pe mode.
    double alpha = -1.0;

    int dim() const { return (include_identity ? 3 : 0) + 6 * bands; }
    int band_offset(int k) const { return (include_identity ? 3 : 0) + 6 * k; }
};

// Coarse-to-fine annealing position: alpha = L * clamp((iter-start)/(end-start)).
struct AnnealState {
    double alpha = 0.0;
    int start_iter = 0;
    int end_iter = 0;
};

AnnealState anneal_at(int iter, int start_iter, int end_iter, int bands);

// Raised-cosine band window: w_k = (1 - cos(pi * clamp(alpha - k, 0, 1))) / 2.
Eigen::VectorXd anneal_weights(double alpha, int bands);

// Encoding value plus its Jacobians with respect to the ray direction d_w
// (treated as a free R^3 variable) and the camera translation t_c2w.
struct EncodedFeature {
    Eigen::VectorXd value;
    Eigen::MatrixXd d_by_dw;  // dim x 3
    Eigen::MatrixXd d_by_t;   // dim x 3
};

Eigen::VectorXd pe(const Vec3& x, const EncodingConfig& cfg);
Eigen::VectorXd ipe(const FrustumGaussian& frustum, const EncodingConfig& cfg);

// Jacobians of the (weighted) point encoding at x = o + x_t * d_w:
// d_by_t holds the per-band diagonal blocks, d_by_dw = x_t * d_by_t.
EncodedFeature pe_jacobians(const Vec3& x, double x_t, const EncodingConfig& cfg);

// Jacobians of the integrated encoding. With full_chain the covariance path
// d gamma / d diag(Sigma) * d diag(Sigma) / d d_w is added to d_by_dw;
// without it only the mean path (the approximate form) is kept.
EncodedFeature ipe_jacobians(const FrustumGaussian& frustum, const Vec3& d_w,
                             const EncodingConfig& cfg, bool full_chain);

// The covariance-path term alone (what full_chain adds to d_by_dw).
Eigen::MatrixXd ipe_covariance_term(const FrustumGaussian& frustum, const Vec3& d_w,
                                    const EncodingConfig& cfg);

// Per-band gains of the three regimes: plain 1, annealed w_k(alpha),
// integrated exp(-4^k * mean(diag_sigma) / 2).
Eigen::VectorXd frequency_response(const EncodingConfig& cfg, const Vec3& diag_sigma,
                                   const AnnealState* anneal);

// ---- Batched fast path (used by the renderer) --------------------------
//
// These write/read one feature vector as a raw column of a dim x S matrix
// and must stay consistent with pe()/ipe() and the *_jacobians ops above;
// the unit tests assert the agreement.

void encode_point_into(double* col, const Vec3& x, const EncodingConfig& cfg);
void encode_frustum_into(double* col, const FrustumGaussian& frustum, const EncodingConfig& cfg);

// Accumulate dL/d d_w and dL/d t_c2w from an upstream feature gradient,
// using only the stored feature values (the trigonometric factors are
// recovered from the encoding itself).
void pullback_point(const double* col, const double* upstream, double x_t,
                    const EncodingConfig& cfg, Vec3& grad_dw, Vec3& grad_t);
void pullback_frustum(const double* col, const double* upstream, double mu_t,
                      double sigma_t2_minus_r2, const Vec3& d_w, bool full_chain,
                      const EncodingConfig& cfg, Vec3& grad_dw, Vec3& grad_t);

}  // namespace nerfba
