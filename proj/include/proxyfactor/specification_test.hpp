#pragma once

#include "core.hpp"
#include "factor_estimation.hpp"
#include "robust_regression.hpp"
#include "sieve_basis.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace proxyfactor {

enum class CovarianceMode { diagonal, soft_threshold };

inline const char* to_string(CovarianceMode m) {
    return m == CovarianceMode::diagonal ? "diagonal" : "soft-threshold";
}

struct IdiosyncraticCovariance {
    Matrix matrix;  // N x N
    CovarianceMode mode = CovarianceMode::diagonal;
    Matrix thresholds;                // empty for the diagonal mode
    std::vector<Index> floored;       // series whose variance hit the floor
};

inline constexpr double variance_floor = 1e-12;

inline IdiosyncraticCovariance diag_sigma_u(const Matrix& residuals) {
    const Index n = residuals.rows();
    const double t = static_cast<double>(residuals.cols());
    IdiosyncraticCovariance out;
    out.matrix = Matrix::Zero(n, n);
    for (Index i = 0; i < n; ++i) {
        double v = residuals.row(i).squaredNorm() / t;
        if (!(v > variance_floor)) {
            v = variance_floor;
            out.floored.push_back(i);
        }
        out.matrix(i, i) = v;
    }
    return out;
}

inline IdiosyncraticCovariance diag_sigma_u(const FactorFit& fit) { return diag_sigma_u(fit.residuals); }

// sgn(x) (|x| - tau)_+
inline double soft_threshold(double x, double tau) {
    const double shrunk = std::abs(x) - tau;
    if (shrunk <= 0.0) return 0.0;
    return x > 0.0 ? shrunk : -shrunk;
}

// Robust entries from the Huber location of u_it u_jt; off-diagonals are
// soft-thresholded at c sqrt(ln N / T) sqrt(s_ii s_jj).
inline IdiosyncraticCovariance soft_threshold_sigma_u(const Matrix& residuals, double alpha, double c = 2.0) {
    const Index n = residuals.rows();
    const Index t = residuals.cols();
    IdiosyncraticCovariance out;
    out.mode = CovarianceMode::soft_threshold;
    out.matrix = Matrix::Zero(n, n);
    out.thresholds = Matrix::Zero(n, n);
    Vector diag(n);
    for (Index i = 0; i < n; ++i) {
        double v = robust_location(residuals.row(i).array().square().matrix().transpose(), alpha);
        if (!(v > variance_floor)) {
            v = variance_floor;
            out.floored.push_back(i);
        }
        diag(i) = v;
        out.matrix(i, i) = v;
    }
    const double rate = c * std::sqrt(std::log(static_cast<double>(n)) / static_cast<double>(t));
    for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
            const Vector products = residuals.row(i).cwiseProduct(residuals.row(j)).transpose();
            const double raw = robust_location(products, alpha);
            const double tau = rate * std::sqrt(diag(i) * diag(j));
            out.thresholds(i, j) = out.thresholds(j, i) = tau;
            out.matrix(i, j) = out.matrix(j, i) = soft_threshold(raw, tau);
        }
    }
    return out;
}

inline IdiosyncraticCovariance soft_threshold_sigma_u(const FactorFit& fit, double alpha, double c = 2.0) {
    return soft_threshold_sigma_u(fit.residuals, alpha, c);
}

struct TestReport {
    double statistic = 0.0;  // S
    Index factors = 0;
    Index periods = 0;
    double z = 0.0;
    double p_value = 1.0;
    std::map<double, bool> reject_at;
    CovarianceMode mode = CovarianceMode::diagonal;
};

inline double upper_normal_quantile(double level) {
    return boost::math::quantile(boost::math::complement(boost::math::normal_distribution<double>(), level));
}

inline TestReport report_from_statistic(double s, Index k, Index t, CovarianceMode mode) {
    TestReport r;
    r.statistic = s;
    r.factors = k;
    r.periods = t;
    r.mode = mode;
    r.z = std::sqrt(static_cast<double>(t) / (2.0 * static_cast<double>(k))) * (s - static_cast<double>(k));
    r.p_value = std::clamp(0.5 * std::erfc(r.z / std::sqrt(2.0)), 0.0, 1.0);
    for (double level : {0.01, 0.05, 0.10}) r.reject_at[level] = r.z > upper_normal_quantile(level);
    return r;
}

// S = (N / T) sum_t g_t' W g_t with W = ((1/N) L' Su L)^{-1}, where g_t are
// the factor parts left unexplained by the proxies.
inline TestReport test_statistic(const FactorFit& fit, const IdiosyncraticCovariance& sigma_u) {
    const Index n = fit.loadings.rows();
    const Index k = fit.loadings.cols();
    const Index t = fit.residual_components.rows();
    const double nd = static_cast<double>(n);
    const Matrix middle = fit.loadings.transpose() * sigma_u.matrix * fit.loadings / nd;
    const Matrix weight = spd_inverse(middle, "loading-weighted idiosyncratic covariance");
    const Matrix& g = fit.residual_components;  // T x K
    const double quad = (g * weight).cwiseProduct(g).sum();
    const double s = nd / static_cast<double>(t) * quad;
    return report_from_statistic(s, k, t, sigma_u.mode);
}

struct GammaInference {
    Matrix sigma_f;         // (1/T) sum g g'
    Matrix sigma_lambda;    // (1/N) L'L
    Matrix g_cross;         // K x J, (1/T) sum f_t phi_t'
    Matrix s_inverse_gram;  // J x J, ((1/T) sum phi phi')^{-1}
    Matrix cov_gamma;       // (1/T) sum gamma gamma'
    Matrix q;               // (1/N) L' Su L
    Index period = 0;
    Vector gamma;           // estimate at `period`
    Vector alpha_t;         // J
    Vector beta_t;          // K
    Matrix m_t;             // K x K
    Matrix v_t;             // K x K total covariance of the estimate
    bool regularized = false;
    double level = 0.9;
    double radius_squared = 0.0;  // chi-square quantile at `level`

    // True when `candidate` lies in the confidence ellipsoid.
    bool covers(const Eigen::Ref<const Vector>& candidate) const {
        const Vector d = gamma - candidate;
        return d.dot(v_t.ldlt().solve(d)) <= radius_squared;
    }
};

inline GammaInference gamma_inference(const FactorFit& fit, const Matrix& phi, const IdiosyncraticCovariance& sigma_u,
                                      Index period, double level = 0.9) {
    const Index n = fit.loadings.rows();
    const Index k = fit.loadings.cols();
    const Index t = fit.factors.rows();
    if (phi.cols() != t) throw config_error("sieve design and factors cover different periods");
    if (period < 0 || period >= t) throw config_error("period outside the sample");
    if (!(level > 0.0 && level < 1.0)) throw config_error("confidence level must lie in (0, 1)");
    const double nd = static_cast<double>(n);
    const double td = static_cast<double>(t);

    GammaInference out;
    out.period = period;
    out.level = level;
    out.sigma_f = fit.explained.transpose() * fit.explained / td;
    out.sigma_lambda = fit.loadings.transpose() * fit.loadings / nd;
    out.g_cross = fit.factors.transpose() * phi.transpose() / td;
    out.s_inverse_gram = spd_inverse(phi * phi.transpose() / td, "sieve gram matrix");
    out.cov_gamma = fit.residual_components.transpose() * fit.residual_components / td;
    out.q = fit.loadings.transpose() * sigma_u.matrix * fit.loadings / nd;

    const Matrix sigma_f_inv = spd_inverse(out.sigma_f, "explained factor second moment");
    out.gamma = fit.residual_components.row(period).transpose();
    out.beta_t = sigma_f_inv * out.gamma;
    out.alpha_t = phi.col(period) - out.g_cross.transpose() * out.beta_t;

    const Matrix& s = out.s_inverse_gram;
    const double a_s_a = out.alpha_t.dot(s * out.alpha_t);
    const Matrix cross = out.cov_gamma * out.beta_t * out.alpha_t.transpose() * s * out.g_cross.transpose();
    const double b_c_b = out.beta_t.dot(out.cov_gamma * out.beta_t);
    out.m_t = out.cov_gamma * a_s_a - cross - cross.transpose() +
              out.g_cross * s * out.g_cross.transpose() * b_c_b;
    out.v_t = out.sigma_lambda * out.m_t * out.sigma_lambda / td + out.q / nd;
    out.v_t = 0.5 * (out.v_t + out.v_t.transpose());

    Eigen::LLT<Matrix> llt(out.v_t);
    if (llt.info() != Eigen::Success) {
        out.v_t += Matrix::Identity(k, k) * (1e-10 * out.v_t.trace());
        out.regularized = true;
        Eigen::LLT<Matrix> retry(out.v_t);
        if (retry.info() != Eigen::Success) throw numerical_error("covariance of the residual factor estimate is not positive definite");
    }
    out.radius_squared = boost::math::quantile(boost::math::chi_squared_distribution<double>(static_cast<double>(k)), level);
    return out;
}

}  // namespace proxyfactor
