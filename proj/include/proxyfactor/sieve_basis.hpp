#pragma once

#include "core.hpp"

#include <numbers>
#include <string>
#include <utility>
#include <vector>

namespace proxyfactor {

enum class SieveFamily { fourier, polynomial, linear };

struct SieveSpec {
    SieveFamily family = SieveFamily::fourier;
    int terms_per_covariate = 5;
    bool intercept = true;
};

inline SieveFamily parse_sieve_family(const std::string& name) {
    if (name == "fourier") return SieveFamily::fourier;
    if (name == "poly" || name == "polynomial") return SieveFamily::polynomial;
    if (name == "linear") return SieveFamily::linear;
    throw config_error("unknown basis family '" + name + "' (expected fourier, poly or linear)");
}

inline const char* to_string(SieveFamily f) {
    switch (f) {
        case SieveFamily::fourier: return "fourier";
        case SieveFamily::polynomial: return "poly";
        case SieveFamily::linear: return "linear";
    }
    return "?";
}

// Additive basis evaluated on a d x T covariate sample. Ranges are kept so
// that new points map onto the same scale.
struct SieveDesign {
    Matrix phi;  // J x T
    SieveSpec spec;
    std::vector<std::pair<double, double>> ranges;

    Index dimension() const { return phi.rows(); }
    Index n_periods() const { return phi.cols(); }
};

inline int terms_for(const SieveSpec& spec) {
    return spec.family == SieveFamily::linear ? 1 : spec.terms_per_covariate;
}

inline Index sieve_dimension(const SieveSpec& spec, Index covariates) {
    return (spec.intercept ? 1 : 0) + covariates * terms_for(spec);
}

namespace detail {

inline void fill_terms(const SieveSpec& spec, const std::vector<std::pair<double, double>>& ranges,
                       const Eigen::Ref<const Vector>& w, Eigen::Ref<Vector> out) {
    Index row = 0;
    if (spec.intercept) out(row++) = 1.0;
    const int terms = terms_for(spec);
    for (Index c = 0; c < w.size(); ++c) {
        const auto [lo, hi] = ranges[static_cast<std::size_t>(c)];
        const double clamped = std::clamp(w(c), lo, hi);
        const double unit = (clamped - lo) / (hi - lo);
        switch (spec.family) {
            case SieveFamily::linear:
                out(row++) = clamped;
                break;
            case SieveFamily::polynomial: {
                double p = 1.0;
                for (int k = 1; k <= terms; ++k) {
                    p *= unit;
                    out(row++) = p;
                }
                break;
            }
            case SieveFamily::fourier:
                for (int k = 0; k < terms; ++k) {
                    const double freq = static_cast<double>(k / 2 + 1) * std::numbers::pi;
                    out(row++) = (k % 2 == 0) ? std::sin(freq * unit) : std::cos(freq * unit);
                }
                break;
        }
    }
}

}  // namespace detail

inline SieveDesign build_design(const Matrix& covariates, const SieveSpec& spec) {
    const Index d = covariates.rows();
    const Index t = covariates.cols();
    if (d < 1) throw config_error("sieve basis needs at least one covariate");
    if (spec.family != SieveFamily::linear && spec.terms_per_covariate < 1)
        throw config_error("terms per covariate must be positive");
    const Index j = sieve_dimension(spec, d);
    if (2 * j > t)
        throw config_error("sieve dimension " + std::to_string(j) + " exceeds half the sample size " +
                           std::to_string(t));
    if (!covariates.allFinite()) throw input_error("covariates contain non-finite values");

    SieveDesign design;
    design.spec = spec;
    for (Index c = 0; c < d; ++c) {
        const double lo = covariates.row(c).minCoeff();
        const double hi = covariates.row(c).maxCoeff();
        if (!(hi > lo)) throw numerical_error("covariate " + std::to_string(c + 1) + " is constant");
        design.ranges.emplace_back(lo, hi);
    }
    design.phi.resize(j, t);
    for (Index s = 0; s < t; ++s) {
        Vector col(j);
        detail::fill_terms(spec, design.ranges, covariates.col(s), col);
        design.phi.col(s) = col;
    }
    const Matrix gram = design.phi * design.phi.transpose() / static_cast<double>(t);
    Eigen::SelfAdjointEigenSolver<Matrix> solver(gram, Eigen::EigenvaluesOnly);
    if (solver.eigenvalues().minCoeff() <= 1e-10)
        throw numerical_error("sieve design is rank deficient (smallest gram eigenvalue " +
                              std::to_string(solver.eigenvalues().minCoeff()) + ")");
    return design;
}

// Basis vector at a new covariate point; values are clamped to the sample range.
inline Vector evaluate(const SieveDesign& design, const Eigen::Ref<const Vector>& w) {
    if (w.size() != static_cast<Index>(design.ranges.size()))
        throw config_error("covariate dimension does not match the sieve design");
    Vector out(design.dimension());
    detail::fill_terms(design.spec, design.ranges, w, out);
    return out;
}

inline Matrix evaluate_columns(const SieveDesign& design, const Matrix& w) {
    Matrix out(design.dimension(), w.cols());
    for (Index s = 0; s < w.cols(); ++s) out.col(s) = evaluate(design, w.col(s));
    return out;
}

}  // namespace proxyfactor
