#include <cmath>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "panelqr/kernel_covariance.hpp"

using namespace panelqr;

namespace {

double max_abs(const Eigen::MatrixXd& m) { return m.size() ? m.cwiseAbs().maxCoeff() : 0.0; }

QuantileFit fit_with(const Eigen::VectorXd& beta, const Eigen::MatrixXd& residuals) {
    QuantileFit f;
    f.beta = beta;
    f.residuals = residuals;
    return f;
}

} // namespace

TEST(Bandwidth, MedianExampleAtTenPercent) {
    const double phi0 = oracle::normal_pdf(0.0);
    for (std::size_t m : {100u, 1000u, 10000u}) {
        const double expected = std::pow(static_cast<double>(m), -1.0 / 3.0) * std::pow(1.6448536269514722, 2.0 / 3.0) *
                                std::cbrt(1.5 * phi0 * phi0);
        EXPECT_NEAR(hall_sheather_bandwidth(QuantileLevel(0.5), m, 0.10), expected, 1e-12);
        EXPECT_NEAR(std::cbrt(1.5 * phi0 * phi0), std::cbrt(1.5 / (2.0 * std::numbers::pi)), 1e-15);
    }
}

TEST(Bandwidth, DefaultLevelUsesFivePercentCriticalValue) {
    const double z = oracle::normal_quantile(0.975);
    const double tau = 0.3, zt = oracle::normal_quantile(tau), phi = oracle::normal_pdf(zt);
    const double expected = std::pow(400.0, -1.0 / 3.0) * std::pow(z, 2.0 / 3.0) * std::cbrt(1.5 * phi * phi / (2 * zt * zt + 1));
    EXPECT_NEAR(hall_sheather_bandwidth(QuantileLevel(tau), 400), expected, 1e-10);
}

TEST(Bandwidth, DecreasingInMAndSymmetricInTau) {
    EXPECT_LT(hall_sheather_bandwidth(QuantileLevel(0.5), 1000), hall_sheather_bandwidth(QuantileLevel(0.5), 100));
    for (double tau : {0.05, 0.2, 0.35, 0.49})
        EXPECT_NEAR(hall_sheather_bandwidth(QuantileLevel(tau), 500), hall_sheather_bandwidth(QuantileLevel(1.0 - tau), 500),
                    1e-12);
    EXPECT_THROW(hall_sheather_bandwidth(QuantileLevel(0.5), 1), Error);
}

TEST(Bandwidth, ResidualScaleConversion) {
    Eigen::MatrixXd e(1, 9);
    e << -4, -3, -2, -1, 0, 1, 2, 3, 4;
    const double sd = std::sqrt(60.0 / 8.0), iqr = 4.0;
    const double spread = std::min(sd, iqr / 1.34);
    const double h = 0.1;
    const double expected = (oracle::normal_quantile(0.6) - oracle::normal_quantile(0.4)) * spread;
    EXPECT_NEAR(residual_scale_bandwidth(QuantileLevel(0.5), h, e), expected, 1e-9);
    // tau + h outside (0, 1) is shrunk rather than rejected.
    EXPECT_GT(residual_scale_bandwidth(QuantileLevel(0.05), 0.2, e), 0.0);
    EXPECT_THROW(residual_scale_bandwidth(QuantileLevel(0.5), 0.1, Eigen::MatrixXd::Zero(2, 3)), Error);
}

TEST(Components, ConstantCovariate) {
    const std::size_t n = 4, T = 5;
    const PanelDataset d(n, T, Eigen::VectorXd::LinSpaced(20, -1, 1), Eigen::MatrixXd::Constant(20, 1, 2.5));
    RandomStream rng(1);
    Eigen::MatrixXd resid(4, 5);
    for (Eigen::Index k = 0; k < resid.size(); ++k) resid.data()[k] = rng.normal();
    const auto c = estimate_components(d, fit_with(Eigen::VectorXd::Zero(1), resid), QuantileLevel(0.5), 0.7);
    EXPECT_LT((c.g.array() - 2.5).abs().maxCoeff(), 1e-14);
    EXPECT_LT(std::abs(c.gamma(0, 0)), 1e-14);
    EXPECT_LT(std::abs(c.v(0, 0)), 1e-14);
}

TEST(Components, MatchNaiveDoubleLoop) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const std::size_t n = 2 + seed % 4, T = 4 + seed % 5, p = 1 + seed % 3;
        const PanelDataset d = fixtures::random_panel(n, T, p, 300 + seed);
        const double tau = 0.2 + 0.03 * static_cast<double>(seed);
        const QuantileFit fit = fit_feqr(d, QuantileLevel(tau));
        const double h = default_bandwidth(d, fit, QuantileLevel(tau));
        for (bool long_run : {false, true}) {
            const auto mode = long_run ? VarianceMode::WithinUnitLongRun : VarianceMode::Independent;
            const auto c = estimate_components(d, fit, QuantileLevel(tau), h, mode);
            const auto ref = oracle::naive_components(d, fit.residuals, tau, h, long_run);
            EXPECT_LT(max_abs(c.g - ref.g), 1e-12) << seed;
            EXPECT_LT(max_abs(c.gamma - ref.gamma), 1e-12) << seed;
            EXPECT_LT(max_abs(c.v - ref.v), 1e-12) << seed;
            EXPECT_EQ(c.bandwidth, h);
        }
    }
}

TEST(Components, ConvexHullAndPositiveWeights) {
    const PanelDataset d = fixtures::random_panel(6, 12, 2, 8);
    const QuantileFit fit = fit_feqr(d, QuantileLevel(0.5));
    const auto c = estimate_components(d, fit, QuantileLevel(0.5), 0.3);
    for (std::size_t i = 0; i < d.n(); ++i)
        for (std::size_t j = 0; j < d.p(); ++j) {
            double lo = 1e300, hi = -1e300;
            for (std::size_t t = 0; t < d.T(); ++t) {
                lo = std::min(lo, d.x(i, t, j));
                hi = std::max(hi, d.x(i, t, j));
            }
            const double g = c.g(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            EXPECT_GE(g, lo);
            EXPECT_LE(g, hi);
        }
}

TEST(Components, IndependentModeReducesToSecondMoment) {
    // Equal kernel weights make g_i the unit mean, so V is tau(1 - tau) times
    // the within-unit second moment.
    const std::size_t n = 50, T = 40;
    RandomStream rng(4);
    Eigen::MatrixXd X(n * T, 1);
    for (Eigen::Index k = 0; k < X.rows(); ++k) X(k, 0) = rng.normal();
    const PanelDataset d(n, T, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n * T)), X);
    const auto c = estimate_components(d, fit_with(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(50, 40)),
                                       QuantileLevel(0.3), 2.0);
    double second = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t t = 0; t < T; ++t) mean += d.x(i, t, 0) / static_cast<double>(T);
        for (std::size_t t = 0; t < T; ++t) second += (d.x(i, t, 0) - mean) * (d.x(i, t, 0) - mean);
    }
    second /= static_cast<double>(n * T);
    EXPECT_NEAR(c.v(0, 0), 0.21 * second, 1e-12);
    EXPECT_NEAR(c.gamma(0, 0), oracle::normal_pdf(0.0) / 2.0 * second, 1e-12);
}

TEST(Components, ZeroKernelMass) {
    const PanelDataset d = fixtures::random_panel(2, 4, 1, 3);
    Eigen::MatrixXd resid = Eigen::MatrixXd::Constant(2, 4, 1.0);
    try {
        estimate_components(d, fit_with(Eigen::VectorXd::Zero(1), resid), QuantileLevel(0.5), 1e-3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ZeroKernelMass);
    }
}

TEST(Sandwich, Examples) {
    SandwichComponents c;
    c.gamma = Eigen::MatrixXd::Identity(2, 2);
    c.v = Eigen::MatrixXd::Identity(2, 2);
    c.bandwidth = 1.0;
    EXPECT_LT(max_abs(sandwich(c).sigma - Eigen::MatrixXd::Identity(2, 2)), 1e-15);
    c.gamma *= 2.0;
    EXPECT_LT(max_abs(sandwich(c).sigma - 0.25 * Eigen::MatrixXd::Identity(2, 2)), 1e-15);
    EXPECT_EQ(sandwich(c).source, CovarianceSource::KernelSandwich);

    RandomStream rng(12);
    for (int rep = 0; rep < 20; ++rep) {
        Eigen::MatrixXd G(2, 2), A(2, 2);
        for (Eigen::Index k = 0; k < 4; ++k) {
            G.data()[k] = rng.normal();
            A.data()[k] = rng.normal();
        }
        G += 3.0 * Eigen::MatrixXd::Identity(2, 2);
        c.gamma = G;
        c.v = A * A.transpose();
        const Eigen::MatrixXd ref = oracle::naive_sandwich(G, c.v);
        const Eigen::MatrixXd sigma = sandwich(c).sigma;
        EXPECT_LT(max_abs(sigma - 0.5 * (ref + ref.transpose())), 1e-12);
        EXPECT_EQ((sigma - sigma.transpose()).norm(), 0.0);
    }
}

TEST(Sandwich, SingularGamma) {
    SandwichComponents c;
    c.gamma = Eigen::MatrixXd::Zero(2, 2);
    c.gamma(0, 0) = 1.0;
    c.v = Eigen::MatrixXd::Identity(2, 2);
    try {
        sandwich(c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::SingularGamma);
    }
    c.gamma(1, 1) = 1e-13;
    EXPECT_THROW(sandwich(c), Error);
    EXPECT_NO_THROW(sandwich(c, 1e14));
}

TEST(Sandwich, IndependentModeIsPositiveSemidefinite) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const PanelDataset d = fixtures::random_panel(8, 10, 3, 700 + seed);
        const QuantileLevel tau(0.25 + 0.025 * static_cast<double>(seed));
        const QuantileFit fit = fit_feqr(d, tau);
        const auto sigma = kernel_sandwich_covariance(d, fit, tau).sigma;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
        EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12 * std::max(1.0, sigma.trace()));
    }
}

TEST(AtCi, Examples) {
    QuantileFit f;
    f.beta = Eigen::VectorXd::Zero(1);
    const CovarianceEstimate one{Eigen::MatrixXd::Identity(1, 1), CovarianceSource::KernelSandwich, ""};
    const auto ci = at_ci(f, one, 100, 0.90);
    EXPECT_NEAR(ci.upper[0], 0.16449, 1e-5);
    EXPECT_NEAR(ci.upper[0], oracle::normal_quantile(0.95) / 10.0, 1e-10);
    EXPECT_NEAR(ci.lower[0], -ci.upper[0], 1e-15);
    EXPECT_EQ(ci.method, CiMethod::Asymptotic);
    EXPECT_NEAR(at_ci(f, one, 200, 0.9).width(0), ci.width(0) / std::sqrt(2.0), 1e-12);
    const CovarianceEstimate zero{Eigen::MatrixXd::Zero(1, 1), CovarianceSource::KernelSandwich, ""};
    EXPECT_EQ(at_ci(f, zero, 100, 0.9).width(0), 0.0);
}

TEST(PowellSe, MatchesSandwichDiagonal) {
    const PanelDataset d = fixtures::random_panel(10, 12, 2, 19);
    const QuantileLevel tau(0.6);
    const QuantileFit fit = fit_feqr(d, tau);
    const auto sigma = kernel_sandwich_covariance(d, fit, tau).sigma;
    const auto se = powell_standard_errors(d, fit, tau);
    for (Eigen::Index j = 0; j < 2; ++j) EXPECT_NEAR(se[j], std::sqrt(sigma(j, j) / 120.0), 1e-15);
    EXPECT_EQ((powell_replicate_se(tau)(d, fit) - se).norm(), 0.0);
}

TEST(PowellSe, LongRunModeUsesCubeRootLag) {
    const PanelDataset d = fixtures::random_panel(5, 30, 1, 2);
    const QuantileFit fit = fit_feqr(d, QuantileLevel(0.5));
    const auto c = estimate_components(d, fit, QuantileLevel(0.5), 0.5, VarianceMode::WithinUnitLongRun);
    EXPECT_EQ(c.lag, 3u);
    const auto c27 = estimate_components(fixtures::random_panel(2, 27, 1, 2),
                                         fit_feqr(fixtures::random_panel(2, 27, 1, 2), QuantileLevel(0.5)),
                                         QuantileLevel(0.5), 0.5, VarianceMode::WithinUnitLongRun);
    EXPECT_EQ(c27.lag, 3u);
    EXPECT_NE(sandwich(c).metadata.find("lag=3"), std::string::npos);
}
