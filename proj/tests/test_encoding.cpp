#include <doctest.h>

#include "nerfba/encoding.hpp"
#include "nerfba/errors.hpp"
#include "nerfba/rng.hpp"

using namespace nerfba;

namespace {

EncodingConfig cfg_of(EncodingMode mode, int bands, double alpha = -1.0) {
    EncodingConfig cfg;
    cfg.mode = mode;
    cfg.bands = bands;
    cfg.alpha = alpha;
    return cfg;
}

FrustumGaussian frustum_at(const Vec3& mean, const Vec3& diag, double mu_t = 2.0,
                           double sigma_t2 = 1e-3, double sigma_r2 = 1e-4) {
    FrustumGaussian f;
    f.mean = mean;
    f.diag_cov = diag;
    f.mu_t = mu_t;
    f.sigma_t2 = sigma_t2;
    f.sigma_r2 = sigma_r2;
    return f;
}

}  // namespace

TEST_SUITE("encoding") {

TEST_CASE("pe at the origin") {
    auto v = pe(Vec3::Zero(), cfg_of(EncodingMode::plain_pe, 2));
    REQUIRE(v.size() == 15);
    Eigen::VectorXd expected(15);
    expected << 0, 0, 0, 0, 0, 0, 1, 1, 1, 0, 0, 0, 1, 1, 1;
    CHECK((v - expected).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pe output dimension at L = 10") {
    CHECK(pe(Vec3(0.1, 0.2, 0.3), cfg_of(EncodingMode::plain_pe, 10)).size() == 63);
}

TEST_CASE("band-k sine peaks at x0 = pi / 2^(k+1)") {
    for (int k : {0, 3, 7}) {
        Vec3 x(M_PI / std::ldexp(1.0, k + 1), 0.0, 0.0);
        auto v = pe(x, cfg_of(EncodingMode::plain_pe, 10));
        CHECK(v(3 + 6 * k) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("anneal weights endpoints and midpoint") {
    auto w0 = anneal_weights(0.0, 8);
    CHECK(w0.cwiseAbs().maxCoeff() == 0.0);
    auto w1 = anneal_weights(8.0, 8);
    CHECK((w1 - Eigen::VectorXd::Ones(8)).cwiseAbs().maxCoeff() == 0.0);
    auto w = anneal_weights(1.5, 4);
    CHECK(w(0) == 1.0);
    CHECK(w(1) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(w(2) == 0.0);
    CHECK(w(3) == 0.0);
    for (int k = 1; k < 4; ++k) CHECK(w(k) <= w(k - 1));
    CHECK_THROWS_AS(anneal_weights(-0.1, 4), ValidationError);
}

TEST_CASE("anneal position over a schedule") {
    CHECK(anneal_at(0, 100, 200, 10).alpha == 0.0);
    CHECK(anneal_at(150, 100, 200, 10).alpha == doctest::Approx(5.0));
    CHECK(anneal_at(200, 100, 200, 10).alpha == 10.0);
    CHECK(anneal_at(5000, 100, 200, 10).alpha == 10.0);
}

TEST_CASE("ipe with zero covariance equals pe of the mean") {
    Rng rng(41);
    for (int bands : {1, 4, 12}) {
        auto pe_cfg = cfg_of(EncodingMode::plain_pe, bands);
        auto ipe_cfg = cfg_of(EncodingMode::integrated_pe, bands);
        for (int i = 0; i < 1000 / bands; ++i) {
            Vec3 mu(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
            auto a = ipe(frustum_at(mu, Vec3::Zero()), ipe_cfg);
            auto b = pe(mu, pe_cfg);
            CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("ipe bands vanish for large covariance") {
    auto v = ipe(frustum_at(Vec3(0.3, -0.7, 1.1), Vec3::Constant(1e4)), cfg_of(EncodingMode::integrated_pe, 6));
    CHECK(v.segment(3, 36).cwiseAbs().maxCoeff() < 1e-200);
}

TEST_CASE("ipe at zero mean with isotropic covariance") {
    double s = 0.37;
    auto v = ipe(frustum_at(Vec3::Zero(), Vec3::Constant(s)), cfg_of(EncodingMode::integrated_pe, 5));
    for (int k = 0; k < 5; ++k) {
        double gain = std::exp(-0.5 * std::ldexp(1.0, 2 * k) * s);
        for (int c = 0; c < 3; ++c) {
            CHECK(v(3 + 6 * k + c) == 0.0);
            CHECK(v(3 + 6 * k + 3 + c) == doctest::Approx(gain).epsilon(1e-14));
        }
    }
}

TEST_CASE("pe_jacobians at the origin and the shared-bracket identity") {
    auto cfg = cfg_of(EncodingMode::plain_pe, 4);
    double x_t = 2.3;
    EncodedFeature f = pe_jacobians(Vec3::Zero(), x_t, cfg);
    for (int k = 0; k < 4; ++k) {
        for (int c = 0; c < 3; ++c) {
            CHECK(f.d_by_t(3 + 6 * k + c, c) == std::ldexp(1.0, k));
            CHECK(f.d_by_t(3 + 6 * k + 3 + c, c) == 0.0);
        }
    }
    Eigen::MatrixXd scaled = x_t * f.d_by_t;
    CHECK((f.d_by_dw - scaled).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pe_jacobians match finite differences") {
    Rng rng(42);
    const double h = 1e-6;
    for (bool annealed : {false, true}) {
        auto cfg = cfg_of(annealed ? EncodingMode::annealed_pe : EncodingMode::plain_pe, 8,
                          annealed ? 3.7 : -1.0);
        for (int trial = 0; trial < 20; ++trial) {
            Vec3 o(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
            Vec3 d = Vec3(rng.gaussian(), rng.gaussian(), rng.gaussian()).normalized();
            double x_t = rng.uniform(0.5, 4.0);
            Vec3 x = o + x_t * d;
            EncodedFeature f = pe_jacobians(x, x_t, cfg);
            for (int i = 0; i < 3; ++i) {
                Vec3 e = Vec3::Unit(i);
                Eigen::VectorXd fd_dw =
                    (pe(o + x_t * (d + h * e), cfg) - pe(o + x_t * (d - h * e), cfg)) / (2 * h);
                Eigen::VectorXd fd_t = (pe(x + h * e, cfg) - pe(x - h * e, cfg)) / (2 * h);
                double scale = std::max(fd_dw.cwiseAbs().maxCoeff(), 1.0);
                CHECK((f.d_by_dw.col(i) - fd_dw).cwiseAbs().maxCoeff() / scale < 1e-6);
                CHECK((f.d_by_t.col(i) - fd_t).cwiseAbs().maxCoeff() /
                          std::max(fd_t.cwiseAbs().maxCoeff(), 1.0) <
                      1e-6);
            }
        }
    }
}

TEST_CASE("ipe_jacobians: decomposition and degenerate covariance path") {
    auto cfg = cfg_of(EncodingMode::integrated_pe, 8);
    Vec3 d = Vec3(0.3, -0.5, 0.81).normalized();
    FrustumGaussian f = frustum_at(Vec3(0.4, 0.9, -1.2), Vec3::Zero(), 2.1, 2e-3, 5e-4);
    Vec3 dd = d.cwiseProduct(d);
    f.diag_cov = f.sigma_t2 * dd + f.sigma_r2 * (Vec3::Ones() - dd);

    EncodedFeature approx = ipe_jacobians(f, d, cfg, false);
    EncodedFeature full = ipe_jacobians(f, d, cfg, true);
    Eigen::MatrixXd cov = ipe_covariance_term(f, d, cfg);
    CHECK((full.d_by_dw - cov - approx.d_by_dw).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((full.d_by_t - approx.d_by_t).cwiseAbs().maxCoeff() == 0.0);
    // Approximate form shares the bracket: d_by_dw = mu_t * d_by_t.
    Eigen::MatrixXd scaled = f.mu_t * approx.d_by_t;
    CHECK((approx.d_by_dw - scaled).cwiseAbs().maxCoeff() == 0.0);

    FrustumGaussian equal = f;
    equal.sigma_r2 = equal.sigma_t2;
    equal.diag_cov = Vec3::Constant(equal.sigma_t2);
    CHECK(ipe_covariance_term(equal, d, cfg).cwiseAbs().maxCoeff() == 0.0);
    EncodedFeature a2 = ipe_jacobians(equal, d, cfg, false);
    EncodedFeature f2 = ipe_jacobians(equal, d, cfg, true);
    CHECK((a2.d_by_dw - f2.d_by_dw).cwiseAbs().maxCoeff() == 0.0);

    CHECK_THROWS_AS(ipe_jacobians(f, Vec3(0.5, 0.5, 0.5), cfg, true), ValidationError);
}

TEST_CASE("frequency response of the three regimes") {
    auto plain = cfg_of(EncodingMode::plain_pe, 10);
    auto annealed = cfg_of(EncodingMode::annealed_pe, 10);
    auto integrated = cfg_of(EncodingMode::integrated_pe, 10);

    CHECK((frequency_response(integrated, Vec3::Zero(), nullptr) -
           Eigen::VectorXd::Ones(10)).cwiseAbs().maxCoeff() == 0.0);

    auto g = frequency_response(integrated, Vec3::Constant(0.1), nullptr);
    for (int k = 0; k < 10; ++k) {
        CHECK(g(k) == doctest::Approx(std::exp(-std::ldexp(1.0, 2 * k) * 0.05)).epsilon(1e-12));
    }
    // Strict decrease checked away from exp underflow (4^9 * s / 2 < 745).
    auto gs = frequency_response(integrated, Vec3::Constant(1e-3), nullptr);
    for (int k = 1; k < 10; ++k) CHECK(gs(k) < gs(k - 1));

    AnnealState full{10.0, 0, 0};
    CHECK((frequency_response(annealed, Vec3::Zero(), &full) - Eigen::VectorXd::Ones(10))
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK((frequency_response(plain, Vec3::Constant(5.0), nullptr) - Eigen::VectorXd::Ones(10))
              .cwiseAbs()
              .maxCoeff() == 0.0);

    // Spatial gain falls with the footprint for every band k >= 1.
    for (int k = 1; k < 10; ++k) {
        double prev = 2.0;
        for (double s : {1e-4, 1e-3, 1e-2}) {
            auto gs = frequency_response(integrated, Vec3::Constant(s), nullptr);
            CHECK(gs(k) < prev);
            prev = gs(k);
        }
    }

    // Temporal vs spatial: annealed gains grow with the iteration, the
    // integrated gains for a fixed frustum do not change.
    double prev_w = -1.0;
    for (int iter : {0, 50, 100, 150, 200}) {
        AnnealState st = anneal_at(iter, 0, 200, 10);
        auto gw = frequency_response(annealed, Vec3::Zero(), &st);
        CHECK(gw(3) >= prev_w);
        prev_w = gw(3);
        auto gi = frequency_response(integrated, Vec3::Constant(1e-3), nullptr);
        CHECK(gi == frequency_response(integrated, Vec3::Constant(1e-3), nullptr));
    }
}

TEST_CASE("fast-path encode and pullback agree with the op surface") {
    Rng rng(43);
    for (auto mode : {EncodingMode::plain_pe, EncodingMode::annealed_pe, EncodingMode::integrated_pe}) {
        auto cfg = cfg_of(mode, 6, mode == EncodingMode::annealed_pe ? 2.4 : -1.0);
        Vec3 o(0.2, -0.4, 0.6);
        Vec3 d = Vec3(0.1, 0.7, -0.7).normalized();
        double x_t = 1.9;
        Eigen::VectorXd upstream(cfg.dim());
        for (int i = 0; i < cfg.dim(); ++i) upstream(i) = rng.uniform(-1, 1);

        Vec3 g_dw = Vec3::Zero(), g_t = Vec3::Zero();
        if (mode == EncodingMode::integrated_pe) {
            FrustumGaussian f = frustum_at(o + x_t * d, Vec3::Zero(), x_t, 3e-3, 8e-4);
            Vec3 dd = d.cwiseProduct(d);
            f.diag_cov = f.sigma_t2 * dd + f.sigma_r2 * (Vec3::Ones() - dd);
            Eigen::VectorXd col(cfg.dim());
            encode_frustum_into(col.data(), f, cfg);
            CHECK((col - ipe(f, cfg)).cwiseAbs().maxCoeff() == 0.0);
            pullback_frustum(col.data(), upstream.data(), f.mu_t, f.sigma_t2 - f.sigma_r2, d, true,
                             cfg, g_dw, g_t);
            EncodedFeature feat = ipe_jacobians(f, d, cfg, true);
            CHECK((g_dw - feat.d_by_dw.transpose() * upstream).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((g_t - feat.d_by_t.transpose() * upstream).cwiseAbs().maxCoeff() < 1e-12);
        } else {
            Vec3 x = o + x_t * d;
            Eigen::VectorXd col(cfg.dim());
            encode_point_into(col.data(), x, cfg);
            CHECK((col - pe(x, cfg)).cwiseAbs().maxCoeff() == 0.0);
            pullback_point(col.data(), upstream.data(), x_t, cfg, g_dw, g_t);
            EncodedFeature feat = pe_jacobians(x, x_t, cfg);
            CHECK((g_dw - feat.d_by_dw.transpose() * upstream).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((g_t - feat.d_by_t.transpose() * upstream).cwiseAbs().maxCoeff() < 1e-12);
        }
    }
}

TEST_CASE("mode preconditions") {
    CHECK_THROWS_AS(pe(Vec3::Zero(), cfg_of(EncodingMode::integrated_pe, 4)), ValidationError);
    CHECK_THROWS_AS(ipe(frustum_at(Vec3::Zero(), Vec3::Zero()), cfg_of(EncodingMode::plain_pe, 4)),
                    ValidationError);
    CHECK_THROWS_AS(pe(Vec3::Zero(), cfg_of(EncodingMode::plain_pe, 0)), ValidationError);
}

}  // TEST_SUITE
