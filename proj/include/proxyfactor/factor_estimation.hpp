#pragma once

#include "core.hpp"
#include "data_io.hpp"
#include "robust_regression.hpp"
#include "sieve_basis.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace proxyfactor {

enum class Estimator { robust, sieve_ls, pca, interactive };

inline Estimator parse_estimator(const std::string& name) {
    if (name == "rpr") return Estimator::robust;
    if (name == "sievels") return Estimator::sieve_ls;
    if (name == "pca") return Estimator::pca;
    if (name == "int") return Estimator::interactive;
    throw config_error("unknown estimator '" + name + "' (expected rpr, sievels, pca or int)");
}

inline const char* to_string(Estimator e) {
    switch (e) {
        case Estimator::robust: return "rpr";
        case Estimator::sieve_ls: return "sievels";
        case Estimator::pca: return "pca";
        case Estimator::interactive: return "int";
    }
    return "?";
}

// Estimated E(x_t | w_t) on the sample and its second moment (1/T) sum fitted fitted'.
struct ConditionalMoment {
    Matrix sigma;   // N x N
    Matrix fitted;  // N x T
    std::optional<CoefficientMatrix> coefficients;
};

struct FactorFit {
    Estimator estimator = Estimator::robust;
    Matrix loadings;             // N x K, (1/N) L'L = I
    Matrix factors;              // T x K
    Matrix explained;            // T x K, part of the factors explained by the proxies
    Matrix residual_components;  // T x K, factors - explained
    Vector eigenvalues;          // all eigenvalues of the decomposed matrix, descending
    Matrix residuals;            // N x T idiosyncratic residuals x - L f
    std::optional<CoefficientMatrix> coefficients;
    int iterations = 0;                   // alternating iterations for the interactive estimator
    std::vector<double> objective_trace;  // interactive estimator: ||x - h - L g||^2 after each iteration

    Index n_factors() const { return loadings.cols(); }
    Matrix common_component() const { return loadings * factors.transpose(); }
};

inline ConditionalMoment moment_from_fitted(Matrix fitted) {
    ConditionalMoment m;
    m.sigma = fitted * fitted.transpose() / static_cast<double>(fitted.cols());
    m.fitted = std::move(fitted);
    return m;
}

inline ConditionalMoment robust_sigma(const Matrix& x, const Matrix& phi, const HuberConfig& config,
                                      unsigned threads = 0) {
    CoefficientMatrix coef = fit_coefficients(x, phi, config, threads);
    ConditionalMoment m = moment_from_fitted(coef.coef * phi);
    m.coefficients = std::move(coef);
    return m;
}

// Least-squares projection of each series on the sieve space.
inline Matrix sieve_projection(const Matrix& x, const Matrix& phi) {
    if (x.cols() != phi.cols()) throw config_error("panel and sieve design have different sample sizes");
    Eigen::LLT<Matrix> llt(phi * phi.transpose());
    if (llt.info() != Eigen::Success) throw numerical_error("design gram matrix is singular");
    const Matrix coef = llt.solve(phi * x.transpose());  // J x N
    return coef.transpose() * phi;
}

inline ConditionalMoment sieve_ls_sigma(const Matrix& x, const Matrix& phi) {
    return moment_from_fitted(sieve_projection(x, phi));
}

namespace detail {

inline Matrix top_loadings(const EigenPairs& eig, Index k) {
    const Index n = eig.vectors.rows();
    if (k < 1 || k > n) throw config_error("number of factors must lie in [1, N]");
    const double lead = eig.values(0);
    if (!(lead > 0.0) || eig.values(k - 1) <= 1e-10 * lead)
        throw numerical_error("second-moment matrix has rank below the requested number of factors");
    return std::sqrt(static_cast<double>(n)) * eig.vectors.leftCols(k);
}

}  // namespace detail

// Loadings from the leading eigenvectors of `sigma`; factors regress the raw
// panel on the loadings and the explained part regresses the fitted values.
inline FactorFit extract_fit(const Matrix& sigma, const Matrix& fitted, const Matrix& x, Index k,
                             Estimator estimator = Estimator::robust) {
    if (sigma.rows() != x.rows() || fitted.rows() != x.rows() || fitted.cols() != x.cols())
        throw config_error("second moment, fitted values and panel have inconsistent shapes");
    const auto eig = symmetric_eigen(sigma);
    FactorFit fit;
    fit.estimator = estimator;
    fit.eigenvalues = eig.values;
    fit.loadings = detail::top_loadings(eig, k);
    const double n = static_cast<double>(x.rows());
    fit.explained = fitted.transpose() * fit.loadings / n;
    fit.factors = x.transpose() * fit.loadings / n;
    fit.residual_components = fit.factors - fit.explained;
    fit.residuals = x - fit.loadings * fit.factors.transpose();
    return fit;
}

inline FactorFit extract_fit(const ConditionalMoment& moment, const Matrix& x, Index k,
                             Estimator estimator = Estimator::robust) {
    FactorFit fit = extract_fit(moment.sigma, moment.fitted, x, k, estimator);
    fit.coefficients = moment.coefficients;
    return fit;
}

inline FactorFit pca_fit(const Matrix& x, Index k) {
    const Matrix sigma = x * x.transpose() / static_cast<double>(x.cols());
    return extract_fit(sigma, x, x, k, Estimator::pca);
}

struct InteractiveOptions {
    int max_iter = 100;
    double tol = 1e-8;
};

// Alternating least squares for x_t = h(w_t) + L g_t + u_t with h in the
// sieve space. Loadings are then taken from the leading eigenvectors of the
// fitted common component h + L g.
inline FactorFit int_fit(const Matrix& x, const Matrix& phi, Index k, const InteractiveOptions& options = {}) {
    const Index n = x.rows();
    const Index t = x.cols();
    const double nd = static_cast<double>(n);
    Matrix h = sieve_projection(x, phi);
    Matrix gamma_loadings;
    Matrix gamma_scores;  // K x T
    std::vector<double> trace;
    int iterations = 0;
    for (int iter = 1; iter <= options.max_iter; ++iter) {
        iterations = iter;
        const Matrix resid = x - h;
        const auto eig = symmetric_eigen(resid * resid.transpose() / static_cast<double>(t));
        gamma_loadings = detail::top_loadings(eig, k);
        gamma_scores = gamma_loadings.transpose() * resid / nd;
        const Matrix interactive = gamma_loadings * gamma_scores;
        const Matrix next = sieve_projection(x - interactive, phi);
        const double objective = (x - next - interactive).squaredNorm();
        if (!trace.empty() && objective > trace.back() * (1.0 + 1e-10) + 1e-12)
            throw numerical_error("alternating least squares objective increased at iteration " +
                                  std::to_string(iter));
        trace.push_back(objective);
        const double change = (next - h).norm() / std::max(h.norm(), 1e-300);
        h = next;
        if (change < options.tol) break;
    }
    const Matrix common = h + gamma_loadings * gamma_scores;
    FactorFit fit = extract_fit(common * common.transpose() / static_cast<double>(t), h, x, k,
                                Estimator::interactive);
    fit.factors = common.transpose() * fit.loadings / nd;
    fit.residual_components = fit.factors - fit.explained;
    fit.residuals = x - fit.loadings * fit.factors.transpose();
    fit.iterations = iterations;
    fit.objective_trace = std::move(trace);
    return fit;
}

struct FactorCountSelection {
    Index chosen = 1;
    std::vector<double> criterion;  // criterion[k - 1]
};

// Information criterion ln V(k) + k ((N + T) / (N T)) ln min(N, T) using
// principal components residual variance V(k).
inline FactorCountSelection select_factor_count(const Matrix& x, Index k_max) {
    const Index n = x.rows();
    const Index t = x.cols();
    if (k_max < 1 || 2 * k_max > std::min(n, t))
        throw config_error("maximum number of factors must lie in [1, min(N, T) / 2]");
    const auto eig = symmetric_eigen(x * x.transpose());
    const double nt = static_cast<double>(n) * static_cast<double>(t);
    const double penalty = (static_cast<double>(n + t) / nt) * std::log(static_cast<double>(std::min(n, t)));
    const double total = x.squaredNorm();
    FactorCountSelection out;
    double explained = 0.0;
    double best = 0.0;
    for (Index k = 1; k <= k_max; ++k) {
        explained += eig.values(k - 1);
        const double v = std::max(total - explained, 0.0) / nt;
        if (!(v > 0.0)) throw numerical_error("panel is fitted exactly by " + std::to_string(k) + " factors");
        const double ic = std::log(v) + static_cast<double>(k) * penalty;
        out.criterion.push_back(ic);
        if (k == 1 || ic < best) {
            best = ic;
            out.chosen = k;
        }
    }
    return out;
}

// Cosines of the principal angles between the column spaces of a and b,
// descending and clipped to [0, 1].
inline Vector canonical_correlations(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows()) throw config_error("canonical correlations need the same number of rows");
    auto basis = [](const Matrix& m, const char* what) {
        Eigen::ColPivHouseholderQR<Matrix> qr(m);
        qr.setThreshold(1e-10);
        if (qr.rank() < m.cols()) throw numerical_error(std::string(what) + " is rank deficient");
        return Matrix(qr.householderQ() * Matrix::Identity(m.rows(), m.cols()));
    };
    const Matrix qa = basis(a, "first matrix");
    const Matrix qb = basis(b, "second matrix");
    Eigen::JacobiSVD<Matrix> svd(qa.transpose() * qb);
    Vector s = svd.singularValues();
    for (Index i = 0; i < s.size(); ++i) s(i) = std::clamp(s(i), 0.0, 1.0);
    return s;
}

inline double median_canonical_correlation(const Matrix& a, const Matrix& b) {
    const Vector s = canonical_correlations(a, b);
    return median(std::vector<double>(s.data(), s.data() + s.size()));
}

// Squared Frobenius error of a common component relative to a baseline.
inline double relative_estimation_error(const FactorFit& fit, const FactorFit& baseline, const Matrix& truth) {
    const double num = (fit.common_component() - truth).squaredNorm();
    const double den = (baseline.common_component() - truth).squaredNorm();
    if (!(den > 0.0)) throw numerical_error("baseline reproduces the true common component exactly");
    return num / den;
}

inline void write_fit_bundle(const FactorFit& fit, const std::string& dir, const std::vector<std::string>& series_ids,
                             const std::vector<std::string>& time_ids) {
    std::filesystem::create_directories(dir);
    const auto cols = csv::numbered("factor_", fit.n_factors());
    const auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };
    csv::write(path("loadings.csv"), "series", series_ids, cols, fit.loadings);
    csv::write(path("factors.csv"), "time", time_ids, cols, fit.factors);
    csv::write(path("explained.csv"), "time", time_ids, cols, fit.explained);
    csv::write(path("gamma.csv"), "time", time_ids, cols, fit.residual_components);
    csv::write(path("eigenvalues.csv"), "index", csv::numbered("", fit.eigenvalues.size()), {"eigenvalue"},
               fit.eigenvalues);
}

}  // namespace proxyfactor
