#pragma once

#include "core.hpp"
#include "sieve_basis.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace proxyfactor {

// rho(z) = z^2 inside the unit interval, 2|z| - 1 outside.
inline double huber_loss(double z) {
    const double a = std::abs(z);
    return a < 1.0 ? z * z : 2.0 * a - 1.0;
}

inline double huber_derivative(double z) {
    if (std::abs(z) < 1.0) return 2.0 * z;
    return z > 0.0 ? 2.0 : -2.0;
}

// Robustification threshold C * sqrt(T / ln(N J)).
inline double tuning_alpha(double c, Index t, Index n, Index j) {
    const double nj = static_cast<double>(n) * static_cast<double>(j);
    if (c <= 0.0 || t < 1 || nj <= 1.0) throw config_error("tuning constant needs C > 0, T >= 1 and N J > 1");
    return c * std::sqrt(static_cast<double>(t) / std::log(nj));
}

struct HuberConfig {
    std::optional<double> constant;  // empty: choose by cross-validation
    int cv_folds = 5;
    std::vector<double> grid{0.5, 1.0, 2.0, 4.0, 8.0};
    int max_iter = 200;
    double tol = 1e-8;
};

struct HuberFit {
    Vector coef;
    int iterations = 0;
    bool converged = false;
    bool monotone = true;  // objective never increased between iterations
    double objective = 0.0;
};

inline double huber_objective(const Eigen::Ref<const Vector>& residuals, double alpha) {
    double total = 0.0;
    for (Index t = 0; t < residuals.size(); ++t) total += huber_loss(residuals(t) / alpha);
    return total;
}

// Iteratively reweighted least squares started from the OLS solution.
// Weight is 1 for |r| < alpha and alpha / |r| otherwise.
inline HuberFit huber_regress(const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Matrix>& phi, double alpha,
                              int max_iter = 200, double tol = 1e-8) {
    if (phi.cols() != y.size()) throw config_error("design and response lengths differ");
    if (!(alpha > 0.0)) throw config_error("huber threshold must be positive");
    const Matrix gram = phi * phi.transpose();
    Eigen::LLT<Matrix> ols(gram);
    if (ols.info() != Eigen::Success) throw numerical_error("design gram matrix is singular");

    HuberFit fit;
    fit.coef = ols.solve(phi * y);
    Vector residuals = y - phi.transpose() * fit.coef;
    fit.objective = huber_objective(residuals, alpha);
    Vector weights(y.size());
    Matrix scaled(phi.rows(), phi.cols());
    Matrix weighted_gram(phi.rows(), phi.rows());
    for (int iter = 1; iter <= max_iter; ++iter) {
        bool all_inside = true;
        for (Index t = 0; t < y.size(); ++t) {
            const double a = std::abs(residuals(t));
            weights(t) = a < alpha ? 1.0 : alpha / a;
            all_inside = all_inside && a < alpha;
        }
        if (all_inside && iter == 1) {
            fit.converged = true;
            fit.iterations = iter - 1;
            return fit;
        }
        scaled.noalias() = phi * weights.cwiseSqrt().asDiagonal();
        weighted_gram.setZero();
        weighted_gram.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
        Eigen::LLT<Matrix, Eigen::Lower> llt(weighted_gram);
        if (llt.info() != Eigen::Success) throw numerical_error("weighted gram matrix is singular");
        const Vector next = llt.solve(phi * weights.cwiseProduct(y));
        const double change = (next - fit.coef).cwiseAbs().maxCoeff();
        fit.coef = next;
        residuals = y - phi.transpose() * fit.coef;
        const double objective = huber_objective(residuals, alpha);
        if (objective > fit.objective * (1.0 + 1e-12) + 1e-300) fit.monotone = false;
        fit.objective = objective;
        fit.iterations = iter;
        if (change < tol) {
            fit.converged = true;
            break;
        }
    }
    return fit;
}

// Huber M-estimate of location, used for robust covariance entries.
inline double robust_location(const Eigen::Ref<const Vector>& v, double alpha, int max_iter = 200,
                              double tol = 1e-10) {
    if (v.size() == 0) throw config_error("robust location of an empty sample");
    if (!(alpha > 0.0)) throw config_error("huber threshold must be positive");
    double m = v.mean();
    for (int iter = 0; iter < max_iter; ++iter) {
        double num = 0.0;
        double den = 0.0;
        for (Index t = 0; t < v.size(); ++t) {
            const double a = std::abs(v(t) - m);
            const double w = a < alpha ? 1.0 : alpha / a;
            num += w * v(t);
            den += w;
        }
        const double next = num / den;
        const double change = std::abs(next - m);
        m = next;
        if (change < tol * (1.0 + std::abs(m))) break;
    }
    return m;
}

struct CrossValidation {
    double chosen = 0.0;
    std::vector<double> grid;
    std::vector<double> scores;  // mean absolute held-out residual per grid value
};

// Contiguous-block K-fold selection of C. The score is the mean absolute
// held-out residual over all series; ties favour the larger C.
inline CrossValidation cross_validate_constant(const Matrix& x, const Matrix& phi, const HuberConfig& config,
                                               unsigned threads = 0) {
    if (config.grid.empty()) throw config_error("huber grid is empty");
    CrossValidation cv;
    cv.grid = config.grid;
    if (config.grid.size() == 1) {
        cv.chosen = config.grid.front();
        cv.scores.assign(1, 0.0);
        return cv;
    }
    const Index n = x.rows();
    const Index t = x.cols();
    const Index j = phi.rows();
    const int folds = config.cv_folds;
    if (folds < 2) throw config_error("cross-validation needs at least 2 folds");
    if (t / folds < 1) throw config_error("cross-validation folds are empty");
    const Index min_train = t - (t + folds - 1) / folds;
    if (2 * j > min_train)
        throw config_error("cross-validation folds too small: training block of " + std::to_string(min_train) +
                           " periods for sieve dimension " + std::to_string(j));

    const std::size_t g = config.grid.size();
    // abs_error(series, grid) accumulated over folds
    Matrix abs_error = Matrix::Zero(n, static_cast<Index>(g));
    for (int k = 0; k < folds; ++k) {
        const Index start = k * t / folds;
        const Index stop = (k + 1) * t / folds;
        const Index held = stop - start;
        const Index train = t - held;
        Matrix phi_train(j, train);
        phi_train << phi.leftCols(start), phi.rightCols(t - stop);
        const auto phi_held = phi.middleCols(start, held);
        parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
            const auto row = static_cast<Index>(i);
            Vector y_train(train);
            y_train << x.row(row).head(start).transpose(), x.row(row).tail(t - stop).transpose();
            const Vector y_held = x.row(row).segment(start, held).transpose();
            for (std::size_t c = 0; c < g; ++c) {
                const double alpha = tuning_alpha(config.grid[c], train, n, j);
                const HuberFit fit = huber_regress(y_train, phi_train, alpha, config.max_iter, config.tol);
                abs_error(row, static_cast<Index>(c)) +=
                    (y_held - phi_held.transpose() * fit.coef).cwiseAbs().sum();
            }
        });
    }
    const double count = static_cast<double>(n) * static_cast<double>(t);
    cv.scores.resize(g);
    for (std::size_t c = 0; c < g; ++c) cv.scores[c] = abs_error.col(static_cast<Index>(c)).sum() / count;
    std::size_t best = 0;
    for (std::size_t c = 1; c < g; ++c) {
        const double tie = 1e-12 * std::abs(cv.scores[best]);
        const bool better = cv.scores[c] < cv.scores[best] - tie;
        const bool tied = std::abs(cv.scores[c] - cv.scores[best]) <= tie;
        if (better || (tied && config.grid[c] > config.grid[best])) best = c;
    }
    cv.chosen = config.grid[best];
    return cv;
}

struct CoefficientMatrix {
    Matrix coef;  // N x J
    double constant = 0.0;
    double alpha = 0.0;
    std::vector<bool> converged;
    std::vector<bool> monotone;
    std::vector<int> iterations;
    std::optional<CrossValidation> cv;

    std::size_t unconverged() const {
        std::size_t c = 0;
        for (bool ok : converged) c += ok ? 0 : 1;
        return c;
    }
};

// Robust regression of every series on the sieve basis.
inline CoefficientMatrix fit_coefficients(const Matrix& x, const Matrix& phi, const HuberConfig& config,
                                          unsigned threads = 0) {
    if (x.cols() != phi.cols()) throw config_error("panel and sieve design have different sample sizes");
    CoefficientMatrix out;
    if (config.constant) {
        out.constant = *config.constant;
    } else {
        out.cv = cross_validate_constant(x, phi, config, threads);
        out.constant = out.cv->chosen;
    }
    const Index n = x.rows();
    out.alpha = tuning_alpha(out.constant, x.cols(), n, phi.rows());
    out.coef.resize(n, phi.rows());
    out.converged.assign(static_cast<std::size_t>(n), false);
    out.monotone.assign(static_cast<std::size_t>(n), true);
    out.iterations.assign(static_cast<std::size_t>(n), 0);
    std::vector<HuberFit> fits(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t i) {
        fits[i] = huber_regress(x.row(static_cast<Index>(i)).transpose(), phi, out.alpha, config.max_iter, config.tol);
    });
    for (std::size_t i = 0; i < fits.size(); ++i) {
        out.coef.row(static_cast<Index>(i)) = fits[i].coef.transpose();
        out.converged[i] = fits[i].converged;
        out.monotone[i] = fits[i].monotone;
        out.iterations[i] = fits[i].iterations;
    }
    return out;
}

}  // namespace proxyfactor
