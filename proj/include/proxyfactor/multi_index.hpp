#pragma once

#include "core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace proxyfactor {

struct WhitenedPredictors {
    Matrix transform;          // M, symmetric square root of the second moment
    Matrix inverse_transform;  // M^{-1}
    Vector center;             // zero unless centering was requested
    Matrix z_tilde;            // p x T

    Vector apply(const Eigen::Ref<const Vector>& z) const { return inverse_transform * (z - center); }
    Matrix apply_columns(const Matrix& z) const { return inverse_transform * (z.colwise() - center); }
};

// z_tilde = M^{-1} z with M the square root of (1/T) sum z z'. With
// `center`, the sample mean is removed first and M uses the covariance.
inline WhitenedPredictors whiten(const Matrix& z, bool center = false) {
    const Index p = z.rows();
    const Index t = z.cols();
    if (p < 1 || t < 1) throw config_error("whitening needs a non-empty predictor matrix");
    WhitenedPredictors out;
    out.center = center ? Vector(z.rowwise().mean()) : Vector::Zero(p);
    const Matrix zc = z.colwise() - out.center;
    const Matrix moment = zc * zc.transpose() / static_cast<double>(t);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(moment);
    if (solver.info() != Eigen::Success) throw numerical_error("predictor second moment: eigendecomposition failed");
    const Vector& ev = solver.eigenvalues();
    if (!(ev.maxCoeff() > 0.0) || ev.minCoeff() < 1e-10 * ev.maxCoeff())
        throw numerical_error("predictor second moment is singular");
    const Matrix& v = solver.eigenvectors();
    out.transform = v * ev.cwiseSqrt().asDiagonal() * v.transpose();
    out.inverse_transform = v * ev.cwiseSqrt().cwiseInverse().asDiagonal() * v.transpose();
    out.z_tilde = out.inverse_transform * zc;
    return out;
}

struct SlicedMoment {
    Matrix sigma;  // p x p
    Vector eigenvalues;
    Matrix eigenvectors;
    int slices = 0;  // slices actually used
    std::vector<int> assignment;
    std::vector<std::string> warnings;
};

// Equal-probability slices of y: cut points are empirical quantiles, ties go
// to the lower slice and empty slices are dropped.
inline std::vector<int> slice_response(const Eigen::Ref<const Vector>& y, int slices, int& used) {
    const Index n = y.size();
    std::vector<double> sorted(y.data(), y.data() + n);
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> cuts;
    for (int h = 1; h < slices; ++h) {
        const auto pos = static_cast<std::size_t>(std::ceil(static_cast<double>(h) * static_cast<double>(n) /
                                                            static_cast<double>(slices))) - 1;
        cuts.push_back(sorted[std::min<std::size_t>(pos, sorted.size() - 1)]);
    }
    std::vector<int> raw(static_cast<std::size_t>(n));
    std::vector<int> count(static_cast<std::size_t>(slices), 0);
    for (Index t = 0; t < n; ++t) {
        const auto it = std::lower_bound(cuts.begin(), cuts.end(), y(t));
        raw[static_cast<std::size_t>(t)] = static_cast<int>(it - cuts.begin());
        ++count[static_cast<std::size_t>(raw[static_cast<std::size_t>(t)])];
    }
    std::vector<int> relabel(static_cast<std::size_t>(slices), -1);
    used = 0;
    for (int h = 0; h < slices; ++h)
        if (count[static_cast<std::size_t>(h)] > 0) relabel[static_cast<std::size_t>(h)] = used++;
    for (auto& r : raw) r = relabel[static_cast<std::size_t>(r)];
    return raw;
}

inline SlicedMoment sliced_moment(const Matrix& z_tilde, const Eigen::Ref<const Vector>& y, int slices = 10) {
    const Index p = z_tilde.rows();
    const Index n = z_tilde.cols();
    if (y.size() != n) throw config_error("response and predictors have different lengths");
    if (slices < 2) throw config_error("need at least 2 slices");
    if (n < 2 * slices) throw config_error("need at least two observations per slice");
    SlicedMoment out;
    out.assignment = slice_response(y, slices, out.slices);
    if (out.slices < 2) throw numerical_error("response takes a single value; slicing is degenerate");
    if (out.slices < slices)
        out.warnings.push_back("tied responses left " + std::to_string(slices - out.slices) +
                               " slices empty; using " + std::to_string(out.slices) + " slices");
    Matrix sums = Matrix::Zero(p, out.slices);
    std::vector<int> count(static_cast<std::size_t>(out.slices), 0);
    for (Index t = 0; t < n; ++t) {
        const int h = out.assignment[static_cast<std::size_t>(t)];
        sums.col(h) += z_tilde.col(t);
        ++count[static_cast<std::size_t>(h)];
    }
    out.sigma = Matrix::Zero(p, p);
    for (int h = 0; h < out.slices; ++h) {
        const Vector mean = sums.col(h) / static_cast<double>(count[static_cast<std::size_t>(h)]);
        out.sigma += mean * mean.transpose();
    }
    out.sigma /= static_cast<double>(out.slices);
    const auto eig = symmetric_eigen(out.sigma);
    out.eigenvalues = eig.values;
    out.eigenvectors = eig.vectors;
    return out;
}

// Ratio rule: argmax over l <= max_l of lambda_l / lambda_{l+1}; smallest l on ties.
inline int select_index_count(const Eigen::Ref<const Vector>& eigenvalues, int max_l) {
    if (max_l < 1) throw config_error("maximum number of indices must be positive");
    if (eigenvalues.size() < max_l + 1) throw config_error("need at least max_l + 1 eigenvalues");
    int best = 1;
    double best_ratio = -1.0;
    for (int l = 1; l <= max_l; ++l) {
        const double num = std::max(eigenvalues(l - 1), 1e-12);
        const double den = std::max(eigenvalues(l), 1e-12);
        const double ratio = num / den;
        if (ratio > best_ratio) {
            best_ratio = ratio;
            best = l;
        }
    }
    return best;
}

namespace detail {

struct LocalLinear {
    double value = 0.0;
    double slope = 0.0;
};

inline LocalLinear local_linear_at(double x0, const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y,
                                   double h) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
    const double inv_h = 1.0 / h;
    for (Index j = 0; j < x.size(); ++j) {
        const double d = x(j) - x0;
        const double u = d * inv_h;
        const double w = std::exp(-0.5 * u * u);
        s0 += w;
        s1 += w * d;
        s2 += w * d * d;
        t0 += w * y(j);
        t1 += w * d * y(j);
    }
    const double det = s0 * s2 - s1 * s1;
    LocalLinear out;
    if (det <= 1e-12 * s0 * s2 || s0 <= 0.0) {
        out.value = s0 > 0.0 ? t0 / s0 : 0.0;
        return out;
    }
    out.value = (s2 * t0 - s1 * t1) / det;
    out.slope = (s0 * t1 - s1 * t0) / det;
    return out;
}

inline Vector smooth(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y, double h) {
    Vector out(x.size());
    for (Index i = 0; i < x.size(); ++i) out(i) = local_linear_at(x(i), x, y, h).value;
    return out;
}

// Leave-one-out squared error of the local-linear smoother.
inline double loo_score(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y, double h) {
    double total = 0.0;
    const double inv_h = 1.0 / h;
    for (Index i = 0; i < x.size(); ++i) {
        double s0 = 0.0, s1 = 0.0, s2 = 0.0, t0 = 0.0, t1 = 0.0;
        for (Index j = 0; j < x.size(); ++j) {
            const double d = x(j) - x(i);
            const double u = d * inv_h;
            const double w = std::exp(-0.5 * u * u);
            s0 += w;
            s1 += w * d;
            s2 += w * d * d;
            t0 += w * y(j);
            t1 += w * d * y(j);
        }
        const double det = s0 * s2 - s1 * s1;
        if (det <= 1e-12 * s0 * s2) return std::numeric_limits<double>::infinity();
        const double fit = (s2 * t0 - s1 * t1) / det;
        const double leverage = s2 / det;
        if (leverage >= 1.0 - 1e-8) return std::numeric_limits<double>::infinity();
        const double r = (y(i) - fit) / (1.0 - leverage);
        total += r * r;
    }
    return total;
}

inline double sample_sd(const Eigen::Ref<const Vector>& x) {
    const double m = x.mean();
    return std::sqrt((x.array() - m).square().sum() / static_cast<double>(x.size()));
}

}  // namespace detail

inline std::vector<double> bandwidth_grid(double sd, int points = 10) {
    std::vector<double> grid;
    const double lo = std::log(0.1 * sd);
    const double hi = std::log(2.0 * sd);
    for (int i = 0; i < points; ++i) grid.push_back(std::exp(lo + (hi - lo) * i / (points - 1)));
    return grid;
}

inline double select_bandwidth(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) {
    const double sd = detail::sample_sd(x);
    if (!(sd > 0.0)) throw numerical_error("index values are all equal; bandwidth is degenerate");
    double best_h = 2.0 * sd;
    double best = std::numeric_limits<double>::infinity();
    for (double h : bandwidth_grid(sd)) {
        const double score = detail::loo_score(x, y, h);
        if (score < best) {
            best = score;
            best_h = h;
        }
    }
    return best_h;
}

// One additive component g, stored on the sorted training index values.
struct LinkComponent {
    Vector grid;
    Vector values;
    double bandwidth = 1.0;
    double slope_low = 0.0;
    double slope_high = 0.0;

    double operator()(double v) const {
        const Index n = grid.size();
        if (n == 0) return 0.0;
        if (v <= grid(0)) return values(0) + slope_low * (v - grid(0));
        if (v >= grid(n - 1)) return values(n - 1) + slope_high * (v - grid(n - 1));
        const auto* begin = grid.data();
        const auto* it = std::upper_bound(begin, begin + n, v);
        const Index hi = it - begin;
        const Index lo = hi - 1;
        const double span = grid(hi) - grid(lo);
        if (span <= 0.0) return values(lo);
        const double w = (v - grid(lo)) / span;
        return (1.0 - w) * values(lo) + w * values(hi);
    }
};

struct LinkModel {
    double intercept = 0.0;
    Vector theta;
    std::vector<LinkComponent> components;
    std::vector<double> rss_trace;  // after each backfitting cycle
    int cycles = 0;
    bool converged = false;

    double operator()(const Eigen::Ref<const Vector>& v) const {
        double out = intercept;
        for (std::size_t l = 0; l < components.size(); ++l)
            out += theta(static_cast<Index>(l)) * components[l](v(static_cast<Index>(l)));
        return out;
    }
};

struct LinkOptions {
    int max_cycles = 50;
    double tol = 1e-6;
};

// Additive local-linear fit y ~ a + sum_l theta_l g_l(v_l) by backfitting.
// A component update that would raise the residual sum of squares is
// shortened by step halving, so the recorded RSS never increases.
inline LinkModel fit_link(const Matrix& indices, const Eigen::Ref<const Vector>& y, const LinkOptions& options = {}) {
    const Index l_count = indices.rows();
    const Index n = indices.cols();
    if (l_count < 1) throw config_error("link needs at least one index");
    if (y.size() != n) throw config_error("indices and response have different lengths");
    if (n <= 20 * l_count) throw config_error("link fitting needs more than 20 observations per index");

    LinkModel model;
    model.intercept = y.mean();
    model.theta = Vector::Zero(l_count);
    if (detail::sample_sd(y) == 0.0) {
        for (Index l = 0; l < l_count; ++l) {
            LinkComponent c;
            c.grid = Vector::Zero(1);
            c.values = Vector::Zero(1);
            model.components.push_back(c);
        }
        model.converged = true;
        return model;
    }

    Matrix contrib = Matrix::Zero(l_count, n);  // theta_l g_l(v_lt)
    std::vector<double> bandwidth(static_cast<std::size_t>(l_count), 0.0);
    auto fitted_of = [&](double a, const Matrix& c) -> Vector {
        return Vector::Constant(n, a) + c.colwise().sum().transpose();
    };
    auto rss_of = [&](const Vector& f) { return (y - f).squaredNorm(); };

    Vector fitted = fitted_of(model.intercept, contrib);
    double rss = rss_of(fitted);
    for (int cycle = 1; cycle <= options.max_cycles; ++cycle) {
        const Vector previous = fitted;
        for (Index l = 0; l < l_count; ++l) {
            const Vector v = indices.row(l).transpose();
            const Vector partial = y - fitted + contrib.row(l).transpose();
            Vector target = partial.array() - model.intercept;
            auto& h = bandwidth[static_cast<std::size_t>(l)];
            if (h == 0.0) h = select_bandwidth(v, target);
            Vector proposal = detail::smooth(v, target, h);
            proposal.array() -= proposal.mean();
            const Vector old = contrib.row(l).transpose();
            double step = 1.0;
            for (int halving = 0; halving <= 20; ++halving, step *= 0.5) {
                const Vector candidate = old + step * (proposal - old);
                const Vector f = fitted + candidate - old;
                const double r = rss_of(f);
                if (r <= rss) {
                    contrib.row(l) = candidate.transpose();
                    fitted = f;
                    rss = r;
                    break;
                }
            }
        }
        // Refresh intercept and weights by OLS on the current components.
        Matrix design(n, l_count + 1);
        design.col(0).setOnes();
        design.rightCols(l_count) = contrib.transpose();
        const Eigen::ColPivHouseholderQR<Matrix> qr(design);
        if (qr.rank() == l_count + 1) {
            const Vector coef = qr.solve(y);
            Matrix refreshed = contrib;
            for (Index l = 0; l < l_count; ++l) refreshed.row(l) *= coef(l + 1);
            const Vector f = fitted_of(coef(0), refreshed);
            const double r = rss_of(f);
            if (r <= rss) {
                contrib = refreshed;
                model.intercept = coef(0);
                fitted = f;
                rss = r;
            }
        }
        model.rss_trace.push_back(rss);
        model.cycles = cycle;
        if ((fitted - previous).cwiseAbs().maxCoeff() < options.tol) {
            model.converged = true;
            break;
        }
    }

    for (Index l = 0; l < l_count; ++l) {
        const Vector c = contrib.row(l).transpose();
        const double scale = detail::sample_sd(c);
        const double theta = scale > 0.0 ? scale : 0.0;
        model.theta(l) = theta;
        std::vector<Index> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), Index{0});
        std::sort(order.begin(), order.end(), [&](Index a, Index b) { return indices(l, a) < indices(l, b); });
        LinkComponent comp;
        comp.bandwidth = bandwidth[static_cast<std::size_t>(l)];
        comp.grid.resize(n);
        comp.values.resize(n);
        for (Index i = 0; i < n; ++i) {
            comp.grid(i) = indices(l, order[static_cast<std::size_t>(i)]);
            comp.values(i) = theta > 0.0 ? c(order[static_cast<std::size_t>(i)]) / theta : 0.0;
        }
        comp.slope_low = detail::local_linear_at(comp.grid(0), comp.grid, comp.values, comp.bandwidth).slope;
        comp.slope_high = detail::local_linear_at(comp.grid(n - 1), comp.grid, comp.values, comp.bandwidth).slope;
        model.components.push_back(std::move(comp));
    }
    return model;
}

struct IndexModel {
    WhitenedPredictors whitening;
    SlicedMoment slicing;
    Matrix directions;  // p x L in whitened coordinates, orthonormal
    int index_count = 0;
    LinkModel link;

    Vector index_values(const Eigen::Ref<const Vector>& z) const {
        return directions.transpose() * whitening.apply(z);
    }
    double predict(const Eigen::Ref<const Vector>& z) const { return link(index_values(z)); }
};

struct IndexModelOptions {
    int slices = 10;
    int max_indices = 1;
    bool center = false;
    LinkOptions link;
};

// Whitening, sliced inverse regression, index count selection and link fit.
inline IndexModel fit_index_model(const Matrix& z, const Eigen::Ref<const Vector>& y, const IndexModelOptions& options) {
    IndexModel model;
    model.whitening = whiten(z, options.center);
    model.slicing = sliced_moment(model.whitening.z_tilde, y, options.slices);
    const Index p = z.rows();
    const int max_l = static_cast<int>(std::min<Index>(options.max_indices, std::max<Index>(p - 1, 1)));
    model.index_count = p == 1 ? 1 : select_index_count(model.slicing.eigenvalues, max_l);
    model.directions = model.slicing.eigenvectors.leftCols(model.index_count);
    const Matrix indices = model.directions.transpose() * model.whitening.z_tilde;
    model.link = fit_link(indices, y, options.link);
    return model;
}

}  // namespace proxyfactor
