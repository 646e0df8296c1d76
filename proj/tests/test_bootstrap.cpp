#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "panelqr/bootstrap.hpp"
#include "panelqr/kernel_covariance.hpp"

using namespace panelqr;

namespace {

/// A result with a hand-made replicate matrix around beta-hat.
BootstrapResult synthetic(const Eigen::VectorXd& beta, const Eigen::MatrixXd& replicates) {
    BootstrapResult r;
    r.point_fit.beta = beta;
    r.replicates = replicates;
    r.B = static_cast<std::size_t>(replicates.rows());
    r.replicate_converged.assign(r.B, 1);
    return r;
}

QuantileFit fit_with_beta(const Eigen::VectorXd& beta) {
    QuantileFit f;
    f.beta = beta;
    return f;
}

std::pair<double, double> moments(std::size_t count, const WeightScheme& scheme, std::uint64_t seed) {
    RandomStream rng(seed);
    const WeightVector w = draw_weights(count, scheme, rng);
    double mean = 0.0;
    for (double v : w.values()) mean += v;
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (double v : w.values()) var += (v - mean) * (v - mean);
    return {mean, var / static_cast<double>(count - 1)};
}

} // namespace

TEST(Weights, AllOnes) {
    RandomStream rng(1);
    const WeightVector w = draw_weights(5, WeightScheme{WeightKind::AllOnes}, rng);
    for (double v : w.values()) EXPECT_EQ(v, 1.0);
}

TEST(Weights, ExponentialMoments) {
    const auto [mean, var] = moments(1'000'000, WeightScheme{WeightKind::ExponentialUnit}, 2024);
    EXPECT_NEAR(mean, 1.0, 0.01);
    EXPECT_NEAR(var, 1.0, 0.01);
}

TEST(Weights, LognormalMoments) {
    const auto [mean, var] = moments(1'000'000, WeightScheme{WeightKind::LognormalUnit}, 2024);
    EXPECT_NEAR(mean, 1.0, 0.01);
    EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Weights, ParseNames) {
    EXPECT_EQ(WeightScheme::parse("exp").kind, WeightKind::ExponentialUnit);
    EXPECT_EQ(WeightScheme::parse("lognormal").kind, WeightKind::LognormalUnit);
    EXPECT_EQ(WeightScheme::parse("all-ones").kind, WeightKind::AllOnes);
    EXPECT_THROW(WeightScheme::parse("poisson"), Error);
}

TEST(Seeds, DerivationIsOrderFree) {
    EXPECT_EQ(derive_seed(42, 7), derive_seed(42, 7));
    EXPECT_NE(derive_seed(42, 7), derive_seed(42, 8));
    EXPECT_NE(derive_seed(42, StreamPurpose::BootstrapWeights, 0), derive_seed(42, StreamPurpose::DataGeneration, 0));
}

TEST(EmpiricalQuantile, CeilConvention) {
    std::vector<double> v(999);
    std::iota(v.begin(), v.end(), 1.0);
    EXPECT_EQ(empirical_quantile(v, 0.05), 50.0);
    EXPECT_EQ(empirical_quantile(v, 0.95), 950.0);
    std::vector<double> k(1000);
    std::iota(k.begin(), k.end(), 1.0);
    const double lambda = 1.0 - 0.9;
    EXPECT_EQ(empirical_quantile(k, lambda / 2.0), 50.0);
    EXPECT_EQ(empirical_quantile(k, 1.0 - lambda / 2.0), 950.0);
}

TEST(PercentileCi, OrderStatisticExample) {
    Eigen::MatrixXd reps(999, 1);
    for (int b = 0; b < 999; ++b) reps(b, 0) = (b + 1) / 1000.0 - 0.5;
    const auto r = synthetic(Eigen::VectorXd::Zero(1), reps);
    const auto ci = percentile_ci(r, 0.90);
    EXPECT_NEAR(ci.lower[0], -0.45, 1e-15);
    EXPECT_NEAR(ci.upper[0], 0.45, 1e-15);
    EXPECT_EQ(ci.method, CiMethod::Percentile);
}

TEST(PercentileCi, SymmetricNestedAndEquivariant) {
    RandomStream rng(3);
    Eigen::VectorXd beta(2);
    beta << 1.0, -2.0;
    // 390 draws: order statistics 20 and 371 mirror each other.
    Eigen::MatrixXd reps(390, 2);
    for (int b = 0; b < 195; ++b)
        for (int j = 0; j < 2; ++j) {
            const double d = rng.normal();
            reps(2 * b, j) = beta[j] + d;
            reps(2 * b + 1, j) = beta[j] - d;
        }
    const auto r = synthetic(beta, reps);
    const auto wide = percentile_ci(r, 0.9), narrow = percentile_ci(r, 0.5);
    for (int j = 0; j < 2; ++j) {
        EXPECT_NEAR(beta[j] - wide.lower[j], wide.upper[j] - beta[j], 1e-12);
        EXPECT_LE(wide.lower[j], narrow.lower[j]);
        EXPECT_GE(wide.upper[j], narrow.upper[j]);
    }
    const double a = 3.0, c = -1.0;
    const auto moved = percentile_ci(synthetic(a * beta.array() + c, a * reps.array() + c), 0.9);
    for (int j = 0; j < 2; ++j) {
        EXPECT_NEAR(moved.lower[j], a * wide.lower[j] + c, 1e-12);
        EXPECT_NEAR(moved.upper[j], a * wide.upper[j] + c, 1e-12);
    }
}

TEST(PercentileCi, InsufficientReplicates) {
    const auto r = synthetic(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(10, 1));
    EXPECT_THROW(percentile_ci(r, 0.9), Error);
    EXPECT_NO_THROW(percentile_ci(r, 0.8));
}

TEST(BootstrapCovariance, Examples) {
    Eigen::VectorXd beta(2), d(2);
    beta << 0.5, 1.0;
    d << 0.2, -0.3;
    Eigen::MatrixXd reps(2, 2);
    reps.row(0) = (beta + d).transpose();
    reps.row(1) = (beta - d).transpose();
    const auto cov = bootstrap_covariance(synthetic(beta, reps));
    EXPECT_LT((cov.sigma - d * d.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_EQ(cov.source, CovarianceSource::Bootstrap);

    Eigen::MatrixXd three(3, 1);
    three << 0.1, -0.2, 0.3;
    EXPECT_NEAR(bootstrap_covariance(synthetic(Eigen::VectorXd::Zero(1), three)).sigma(0, 0), 0.14 / 3.0, 1e-15);

    const auto zero = bootstrap_covariance(synthetic(beta, beta.transpose().replicate(5, 1)));
    EXPECT_EQ(zero.sigma.norm(), 0.0);
}

TEST(BootstrapCovariance, CenteredAtPointEstimateAndOrderFree) {
    RandomStream rng(8);
    Eigen::MatrixXd reps(50, 3);
    for (Eigen::Index k = 0; k < reps.size(); ++k) reps.data()[k] = 1.0 + rng.normal();
    const Eigen::VectorXd beta = Eigen::VectorXd::Zero(3);
    const auto cov = bootstrap_covariance(synthetic(beta, reps));
    const Eigen::MatrixXd naive = reps.transpose() * reps / 50.0;
    EXPECT_LT((cov.sigma - naive).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ((cov.sigma - cov.sigma.transpose()).norm(), 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.sigma);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10 * cov.sigma.trace());
    Eigen::MatrixXd reversed = reps.colwise().reverse();
    EXPECT_LT((bootstrap_covariance(synthetic(beta, reversed)).sigma - cov.sigma).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SeCi, Examples) {
    const QuantileFit f = fit_with_beta(Eigen::VectorXd::Zero(1));
    CovarianceEstimate one{Eigen::MatrixXd::Identity(1, 1), CovarianceSource::Bootstrap, ""};
    const auto ci = se_ci(f, one, 0.90);
    const double z = oracle::normal_quantile(0.95);
    EXPECT_NEAR(ci.upper[0], 1.6449, 1e-4);
    EXPECT_NEAR(ci.upper[0], z, 1e-9);
    EXPECT_NEAR(ci.lower[0], -z, 1e-9);
    EXPECT_NEAR(ci.width(0), 2.0 * z, 1e-12);
    EXPECT_GT(se_ci(f, one, 0.95).width(0), ci.width(0));
    CovarianceEstimate zero{Eigen::MatrixXd::Zero(1, 1), CovarianceSource::Bootstrap, ""};
    EXPECT_EQ(se_ci(f, zero, 0.9).width(0), 0.0);
    CovarianceEstimate negative{-Eigen::MatrixXd::Identity(1, 1), CovarianceSource::Bootstrap, ""};
    EXPECT_THROW(se_ci(f, negative, 0.9), Error);
}

TEST(TRefCi, Examples) {
    const Eigen::VectorXd beta = Eigen::VectorXd::Zero(1);
    Eigen::MatrixXd reps(999, 1), ses = Eigen::MatrixXd::Ones(999, 1);
    for (int b = 0; b < 999; ++b) reps(b, 0) = -4.99 + 0.01 * b;  // t-draws = grid, since se = 1
    const auto r = synthetic(beta, reps);
    const auto ci = t_ref_ci(fit_with_beta(beta), r, ses, Eigen::VectorXd::Ones(1), 0.9);
    // Order statistics 50 and 950 of the grid.
    EXPECT_NEAR(ci.lower[0], -(-4.99 + 0.01 * 949), 1e-12);
    EXPECT_NEAR(ci.upper[0], -(-4.99 + 0.01 * 49), 1e-12);

    const auto flat = t_ref_ci(fit_with_beta(beta), synthetic(beta, Eigen::MatrixXd::Zero(50, 1)),
                               Eigen::MatrixXd::Ones(50, 1), Eigen::VectorXd::Ones(1), 0.9);
    EXPECT_EQ(flat.lower[0], 0.0);
    EXPECT_EQ(flat.upper[0], 0.0);

    Eigen::MatrixXd sym(100, 1);
    for (int b = 0; b < 100; ++b) sym(b, 0) = (b % 2 ? 1.5 : -1.5);
    const auto s = t_ref_ci(fit_with_beta(Eigen::VectorXd::Constant(1, 2.0)),
                            synthetic(Eigen::VectorXd::Constant(1, 2.0), sym.array() + 2.0), Eigen::MatrixXd::Ones(100, 1),
                            Eigen::VectorXd::Constant(1, 0.5), 0.9);
    EXPECT_NEAR(s.lower[0], 2.0 - 1.5 * 0.5, 1e-12);
    EXPECT_NEAR(s.upper[0], 2.0 + 1.5 * 0.5, 1e-12);
}

TEST(TRefCi, RejectsNonPositiveSe) {
    const auto r = synthetic(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Zero(50, 1));
    Eigen::MatrixXd ses = Eigen::MatrixXd::Ones(50, 1);
    ses(3, 0) = 0.0;
    try {
        t_ref_ci(fit_with_beta(Eigen::VectorXd::Zero(1)), r, ses, Eigen::VectorXd::Ones(1), 0.9);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::NonpositiveSE);
    }
    EXPECT_THROW(t_ref_ci(fit_with_beta(Eigen::VectorXd::Zero(1)), r, Eigen::MatrixXd::Ones(50, 1),
                          Eigen::VectorXd::Zero(1), 0.9),
                 Error);
}

TEST(Wald, Examples) {
    Eigen::VectorXd beta(2);
    beta << 0.7, -0.2;
    Eigen::MatrixXd S(2, 2);
    S << 0.04, 0.01, 0.01, 0.09;
    const CovarianceEstimate cov{S, CovarianceSource::Bootstrap, ""};
    const QuantileFit f = fit_with_beta(beta);

    Eigen::MatrixXd R(1, 2);
    R << 1.0, 0.0;
    const auto zero = wald_test(R, Eigen::VectorXd::Constant(1, 0.7), f, cov);
    EXPECT_EQ(zero.statistic, 0.0);
    EXPECT_EQ(zero.p_value, 1.0);

    const auto one = wald_test(R, Eigen::VectorXd::Zero(1), f, cov);
    EXPECT_NEAR(one.statistic, 0.49 / 0.04, 1e-12);
    EXPECT_NEAR(one.p_value, oracle::chi_squared1_upper_tail(0.49 / 0.04), 1e-12);

    // W = 2.7055 with q = 1 sits at the 10% point.
    CovarianceEstimate unit{Eigen::MatrixXd::Identity(2, 2), CovarianceSource::Bootstrap, ""};
    const auto ten = wald_test(R, Eigen::VectorXd::Constant(1, 0.7 - std::sqrt(2.7055)), f, unit);
    EXPECT_NEAR(ten.statistic, 2.7055, 1e-12);
    EXPECT_NEAR(ten.p_value, 0.10, 1e-4);
    EXPECT_NEAR(ten.p_value, oracle::chi_squared1_upper_tail(2.7055), 1e-10);

    // Invariance to nonsingular recombination of the restrictions.
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd r(2);
    r << 0.5, 0.1;
    Eigen::MatrixXd M(2, 2);
    M << 2.0, 1.0, -1.0, 3.0;
    EXPECT_NEAR(wald_test(I, r, f, cov).statistic, wald_test(M * I, M * r, f, cov).statistic, 1e-10);

    // Explicit scale divides R Sigma R'.
    EXPECT_NEAR(wald_test(R, Eigen::VectorXd::Zero(1), f, cov, 4.0).statistic, 4.0 * one.statistic, 1e-10);
}

TEST(Wald, SingularRestriction) {
    const QuantileFit f = fit_with_beta(Eigen::VectorXd::Zero(2));
    const CovarianceEstimate cov{Eigen::MatrixXd::Identity(2, 2), CovarianceSource::Bootstrap, ""};
    Eigen::MatrixXd R(2, 2);
    R << 1, 2, 2, 4;
    EXPECT_THROW(wald_test(R, Eigen::VectorXd::Zero(2), f, cov), Error);
    const CovarianceEstimate zero{Eigen::MatrixXd::Zero(2, 2), CovarianceSource::Bootstrap, ""};
    EXPECT_THROW(wald_test(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2), f, zero), Error);
}

TEST(RunBootstrap, AllOnesReproducesPointFit) {
    const PanelDataset d = fixtures::random_panel(10, 15, 2, 1);
    const auto r = run_bootstrap(d, QuantileLevel(0.4), 20, WeightScheme{WeightKind::AllOnes}, 5);
    for (Eigen::Index b = 0; b < 20; ++b) EXPECT_EQ((r.replicates.row(b).transpose() - r.point_fit.beta).norm(), 0.0);
    EXPECT_EQ(bootstrap_covariance(r).sigma.norm(), 0.0);
    const auto ci = percentile_ci(r, 0.5);
    EXPECT_EQ(ci.lower, r.point_fit.beta);
    EXPECT_EQ(ci.upper, r.point_fit.beta);
}

TEST(RunBootstrap, DeterministicAcrossThreadCounts) {
    const PanelDataset d = fixtures::random_panel(12, 10, 1, 2);
    BootstrapOptions a;
    a.B = 40;
    a.seed = 99;
    a.threads = 1;
    BootstrapOptions b = a;
    b.threads = 4;
    const auto r1 = run_bootstrap(d, QuantileLevel(0.5), a);
    const auto r2 = run_bootstrap(d, QuantileLevel(0.5), b);
    EXPECT_EQ((r1.replicates - r2.replicates).norm(), 0.0);
    BootstrapOptions c = a;
    c.seed = 100;
    EXPECT_GT((run_bootstrap(d, QuantileLevel(0.5), c).replicates - r1.replicates).norm(), 0.0);
}

TEST(RunBootstrap, ReplicatesAreWeightedFits) {
    const PanelDataset d = fixtures::random_panel(6, 8, 1, 3);
    BootstrapOptions o;
    o.B = 5;
    o.seed = 17;
    o.store_alphas = true;
    const auto r = run_bootstrap(d, QuantileLevel(0.6), o);
    for (std::size_t b = 0; b < 5; ++b) {
        RandomStream rng(derive_seed(17, StreamPurpose::BootstrapWeights, b));
        const WeightVector w = draw_weights(6, WeightScheme{}, rng);
        const QuantileFit f = fit_weighted_feqr(d, QuantileLevel(0.6), w);
        EXPECT_EQ(f.beta[0], r.replicates(static_cast<Eigen::Index>(b), 0));
        EXPECT_EQ((f.alpha.transpose() - r.replicate_alphas.row(static_cast<Eigen::Index>(b))).norm(), 0.0);
    }
    EXPECT_TRUE(r.replicate_alphas_stored);
    EXPECT_EQ(r.failed_count, 0u);
}

TEST(RunBootstrap, FailedReplicatesAbortAboveOnePercent) {
    const PanelDataset d = fixtures::random_panel(10, 10, 1, 5);
    BootstrapOptions o;
    o.B = 20;
    o.solver.max_iterations = 1;
    o.solver.purify = false;
    try {
        run_bootstrap(d, QuantileLevel(0.5), o);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::TooManyFailedReplicates);
    }
    o.max_failure_fraction = 1.0;
    EXPECT_THROW(run_bootstrap(d, QuantileLevel(0.5), o), Error);  // none usable
}

TEST(RunBootstrap, CovarianceComparableToKernelSandwich) {
    // Per panel both estimators are noisy at this size; their log-ratio
    // averaged over ten panels is not.
    const QuantileLevel tau(0.5);
    double log_ratio = 0.0;
    for (std::uint64_t s = 0; s < 10; ++s) {
        const PanelDataset d = fixtures::random_panel(30, 30, 1, 21 + s);
        BootstrapOptions o;
        o.B = 200;
        o.seed = 4;
        const auto r = run_bootstrap(d, tau, o);
        const double boot = bootstrap_covariance(r).sigma(0, 0);
        const double kernel =
            kernel_sandwich_covariance(d, r.point_fit, tau).sigma(0, 0) / static_cast<double>(d.observations());
        log_ratio += std::log(boot / kernel) / 10.0;
    }
    EXPECT_GE(std::exp(log_ratio), 0.5);
    EXPECT_LE(std::exp(log_ratio), 2.0);
}
