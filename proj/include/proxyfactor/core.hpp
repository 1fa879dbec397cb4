#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace proxyfactor {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Malformed or missing input data. The CLI maps this to exit code 2.
struct input_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Singular or ill-conditioned computation. Exit code 3.
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Inconsistent options or dimensions. Exit code 4.
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline unsigned resolve_threads(unsigned requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

// Runs body(i) for i in [0, n). Each index writes its own output slot, so
// results do not depend on scheduling. The first exception is rethrown.
template <class Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
    const std::size_t workers = std::min<std::size_t>(resolve_threads(threads), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

struct EigenPairs {
    Vector values;   // descending
    Matrix vectors;  // unit columns, largest-magnitude entry positive
};

// Flips each column so that its largest-magnitude entry is positive.
inline void fix_signs(Matrix& vectors) {
    for (Index j = 0; j < vectors.cols(); ++j) {
        Index arg = 0;
        vectors.col(j).cwiseAbs().maxCoeff(&arg);
        if (vectors(arg, j) < 0.0) vectors.col(j) *= -1.0;
    }
}

inline EigenPairs symmetric_eigen(const Matrix& s) {
    if (s.rows() != s.cols()) throw config_error("eigendecomposition needs a square matrix");
    if (!s.allFinite()) throw numerical_error("matrix contains non-finite entries");
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s);
    if (solver.info() != Eigen::Success) throw numerical_error("eigendecomposition failed");
    EigenPairs out;
    out.values = solver.eigenvalues().reverse();
    out.vectors = solver.eigenvectors().rowwise().reverse();
    fix_signs(out.vectors);
    return out;
}

// Inverse of a symmetric positive definite matrix; throws when it is not.
inline Matrix spd_inverse(const Matrix& s, const char* what) {
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success) throw numerical_error(std::string(what) + " is not positive definite");
    return llt.solve(Matrix::Identity(s.rows(), s.cols()));
}

// Symmetric square root (power = 0.5) or inverse square root (power = -0.5).
inline Matrix spd_power(const Matrix& s, double power, const char* what) {
    Eigen::SelfAdjointEigenSolver<Matrix> solver(s);
    if (solver.info() != Eigen::Success) throw numerical_error(std::string(what) + ": eigendecomposition failed");
    const Vector& ev = solver.eigenvalues();
    if (ev.size() == 0) return s;
    if (ev.minCoeff() <= 1e-12 * std::max(1.0, ev.maxCoeff()))
        throw numerical_error(std::string(what) + " is singular or not positive definite");
    const Vector scaled = ev.array().pow(power).matrix();
    return solver.eigenvectors() * scaled.asDiagonal() * solver.eigenvectors().transpose();
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::nan("");
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

}  // namespace proxyfactor
