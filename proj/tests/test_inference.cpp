#include "test_helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace proxyfactor;
using testing_support::gaussian;

namespace {

// Hand-built fit with given loadings and residual factor parts.
FactorFit synthetic_fit(const Matrix& loadings, const Matrix& gamma) {
    FactorFit fit;
    fit.loadings = loadings;
    fit.residual_components = gamma;
    fit.explained = Matrix::Zero(gamma.rows(), gamma.cols());
    fit.factors = gamma;
    return fit;
}

Matrix scaled_loadings(Index n, Index k, std::mt19937_64& rng) {
    Eigen::HouseholderQR<Matrix> qr(gaussian(n, k, rng));
    return Matrix(qr.householderQ() * Matrix::Identity(n, k)) * std::sqrt(static_cast<double>(n));
}

}  // namespace

TEST(DiagSigmaU, MeanSquaresAndFloor) {
    Matrix r(2, 4);
    r << 1.0, -1.0, 1.0, -1.0, 0.0, 0.0, 0.0, 0.0;
    const auto s = diag_sigma_u(r);
    EXPECT_DOUBLE_EQ(s.matrix(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(s.matrix(1, 1), variance_floor);
    EXPECT_EQ(s.matrix(0, 1), 0.0);
    ASSERT_EQ(s.floored.size(), 1u);
    EXPECT_EQ(s.floored[0], 1);
}

TEST(DiagSigmaU, UnitVarianceNoise) {
    std::mt19937_64 rng(3);
    const auto s = diag_sigma_u(gaussian(2, 10000, rng));
    EXPECT_NEAR(s.matrix(0, 0), 1.0, 0.05);
    EXPECT_NEAR(s.matrix(1, 1), 1.0, 0.05);
}

TEST(SoftThreshold, PointValuesAndShrinkage) {
    EXPECT_NEAR(soft_threshold(0.5, 0.2), 0.3, 1e-15);
    EXPECT_EQ(soft_threshold(-0.1, 0.2), 0.0);
    EXPECT_NEAR(soft_threshold(-0.7, 0.2), -0.5, 1e-15);
    for (double x = -2.0; x <= 2.0; x += 0.05) EXPECT_LE(std::abs(soft_threshold(x, 0.3)), std::abs(x));
}

TEST(SoftThresholdSigmaU, IndependentNoiseIsMostlySparse) {
    std::mt19937_64 rng(21);
    const Index n = 50;
    const auto s = soft_threshold_sigma_u(gaussian(n, 100, rng), tuning_alpha(2.0, 100, n, 26));
    int zeros = 0;
    for (Index i = 0; i < n; ++i)
        for (Index j = i + 1; j < n; ++j) zeros += s.matrix(i, j) == 0.0;
    EXPECT_GE(zeros, static_cast<int>(0.95 * n * (n - 1) / 2));
    EXPECT_EQ(s.mode, CovarianceMode::soft_threshold);
    EXPECT_TRUE(s.matrix.isApprox(s.matrix.transpose()));
}

TEST(TestStatistic, ZeroResidualFactorsGiveZero) {
    std::mt19937_64 rng(5);
    const Index n = 30, k = 3, t = 80;
    const auto fit = synthetic_fit(scaled_loadings(n, k, rng), Matrix::Zero(t, k));
    IdiosyncraticCovariance su;
    su.matrix = Matrix::Identity(n, n);
    const auto r = test_statistic(fit, su);
    EXPECT_EQ(r.statistic, 0.0);
    EXPECT_NEAR(r.z, -std::sqrt(t * k / 2.0), 1e-12);
    EXPECT_NEAR(r.p_value, 1.0, 1e-12);
    EXPECT_FALSE(r.reject_at.at(0.05));
}

TEST(TestStatistic, ExactFitFromProxiesIsNotRejected) {
    std::mt19937_64 rng(6);
    const Index n = 40, k = 2, t = 120;
    const auto design = build_design(gaussian(2, t, rng), SieveSpec{SieveFamily::linear, 1, true});
    const Matrix loadings = gaussian(n, k, rng);
    const Matrix x = loadings * (gaussian(k, 3, rng) * design.phi);
    const auto fit = extract_fit(sieve_ls_sigma(x, design.phi), x, k, Estimator::sieve_ls);
    const auto r = test_statistic(fit, diag_sigma_u(fit));
    EXPECT_LT(r.statistic, 1e-6);
    EXPECT_GT(r.p_value, 0.999);
}

TEST(TestStatistic, RotationInvariant) {
    std::mt19937_64 rng(7);
    const Index n = 25, k = 3, t = 60;
    const Matrix loadings = scaled_loadings(n, k, rng);
    const Matrix gamma = gaussian(t, k, rng);
    Matrix a = gaussian(n, n, rng);
    IdiosyncraticCovariance su;
    su.matrix = a * a.transpose() / n + Matrix::Identity(n, n);
    Eigen::HouseholderQR<Matrix> qr(gaussian(k, k, rng));
    const Matrix rot = qr.householderQ();
    const double s0 = test_statistic(synthetic_fit(loadings, gamma), su).statistic;
    const double s1 = test_statistic(synthetic_fit(loadings * rot, gamma * rot), su).statistic;
    EXPECT_NEAR(s1, s0, 1e-8 * std::abs(s0));
}

TEST(TestStatistic, MonotoneInResidualScale) {
    std::mt19937_64 rng(8);
    const Index n = 20, k = 2, t = 50;
    const Matrix loadings = scaled_loadings(n, k, rng);
    const Matrix gamma = gaussian(t, k, rng) * 0.1;
    IdiosyncraticCovariance su;
    su.matrix = Matrix::Identity(n, n);
    double previous = -1.0;
    for (double c : {0.5, 1.0, 2.0, 4.0}) {
        const double s = test_statistic(synthetic_fit(loadings, gamma * c), su).statistic;
        EXPECT_GT(s, previous);
        EXPECT_NEAR(s, c * c * test_statistic(synthetic_fit(loadings, gamma), su).statistic, 1e-9 * s);
        previous = s;
    }
}

TEST(TestStatistic, PValueDecreasesInStatistic) {
    // Strict decrease where the p-value is not saturated in double precision.
    double previous = 2.0;
    for (double s = 3.0; s < 8.0; s += 0.25) {
        const auto r = report_from_statistic(s, 5, 100, CovarianceMode::diagonal);
        EXPECT_LT(r.p_value, previous);
        EXPECT_GE(r.p_value, 0.0);
        previous = r.p_value;
    }
    EXPECT_EQ(report_from_statistic(0.0, 5, 100, CovarianceMode::diagonal).p_value, 1.0);
    EXPECT_NEAR(report_from_statistic(5.0, 5, 100, CovarianceMode::diagonal).p_value, 0.5, 1e-15);
    EXPECT_NEAR(upper_normal_quantile(0.05), 1.6448536269514722, 1e-12);
}

TEST(GammaInference, CovarianceSymmetricPositiveDefinite) {
    std::mt19937_64 rng(9);
    const Index n = 30, k = 2, t = 100;
    const auto design = build_design(gaussian(2, t, rng), SieveSpec{SieveFamily::linear, 1, true});
    const Matrix x = gaussian(n, k, rng) * (gaussian(k, 3, rng) * design.phi + gaussian(k, t, rng) * 0.5) +
                     gaussian(n, t, rng) * 0.3;
    const auto fit = extract_fit(sieve_ls_sigma(x, design.phi), x, k, Estimator::sieve_ls);
    for (Index period : {0, 10, 99}) {
        const auto gi = gamma_inference(fit, design.phi, diag_sigma_u(fit), period);
        EXPECT_TRUE(gi.v_t.isApprox(gi.v_t.transpose(), 1e-14));
        EXPECT_EQ(Eigen::LLT<Matrix>(gi.v_t).info(), Eigen::Success);
        EXPECT_FALSE(gi.regularized);
        EXPECT_TRUE(gi.covers(gi.gamma));
    }
    EXPECT_THROW(gamma_inference(fit, design.phi, diag_sigma_u(fit), t), config_error);
    EXPECT_THROW(gamma_inference(fit, design.phi, diag_sigma_u(fit), 0, 1.0), config_error);
}

TEST(GammaInference, ProxiesExplainEverything) {
    std::mt19937_64 rng(10);
    const Index n = 30, k = 2, t = 100;
    const auto design = build_design(gaussian(2, t, rng), SieveSpec{SieveFamily::linear, 1, true});
    const Matrix x = gaussian(n, k, rng) * (gaussian(k, 3, rng) * design.phi);
    const auto fit = extract_fit(sieve_ls_sigma(x, design.phi), x, k, Estimator::sieve_ls);
    const auto gi = gamma_inference(fit, design.phi, diag_sigma_u(fit), 10);
    EXPECT_LT(gi.gamma.norm(), 1e-10);
    EXPECT_TRUE(gi.covers(Vector::Zero(k)));
    EXPECT_NEAR(gi.radius_squared, -2.0 * std::log(0.1), 1e-10);  // chi-square(2) quantile
}

// Monte Carlo oracle: the 90% ellipsoid around the estimate covers the true
// residual factor mapped into the estimated loading basis.
TEST(GammaInferenceMonteCarlo, CoverageNearNominal) {
    SimConfig c;
    c.model = LinkShape::sine;
    c.sigma_gamma = 0.3;
    c.horizon = 0;
    HuberConfig h;
    h.constant = 2.0;
    const int reps = 500;
    int covered = 0;
    for (int rep = 0; rep < reps; ++rep) {
        auto rng = substream(5, static_cast<std::uint64_t>(rep));
        const auto draw = generate(c, rng);
        const auto design = build_design(draw.proxies, c.sieve);
        const auto fit = extract_fit(robust_sigma(draw.panel, design.phi, h, 1), draw.panel, c.k);
        const Matrix rotation =
            (draw.loadings.transpose() * draw.loadings).ldlt().solve(draw.loadings.transpose() * fit.loadings);
        const Index period = c.t / 2;
        const auto gi = gamma_inference(fit, design.phi, diag_sigma_u(fit), period, 0.9);
        const Vector truth = rotation.inverse() * draw.gamma.row(period).transpose();
        covered += gi.covers(truth);
    }
    const double rate = static_cast<double>(covered) / reps;
    EXPECT_GE(rate, 0.85);
    EXPECT_LE(rate, 0.95);
}
