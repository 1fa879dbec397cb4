#pragma once

#include "core.hpp"
#include "data_io.hpp"
#include "factor_estimation.hpp"
#include "multi_index.hpp"
#include "robust_regression.hpp"
#include "sieve_basis.hpp"

#include <optional>
#include <string>
#include <vector>

namespace proxyfactor {

enum class ForecastModel { linear, multi_index };

enum class FactorSource { robust, sieve_ls, pca, pca_with_proxies, interactive };

struct PredictorForm {
    enum class Kind { factors, factors_and_proxies, factors_and_one_proxy, proxies } kind = Kind::factors;
    Index proxy = 0;  // zero-based, for factors_and_one_proxy

    bool uses_factors() const { return kind != Kind::proxies; }
};

inline ForecastModel parse_forecast_model(const std::string& name) {
    if (name == "linear") return ForecastModel::linear;
    if (name == "mindex") return ForecastModel::multi_index;
    throw config_error("unknown forecast model '" + name + "' (expected linear or mindex)");
}

inline FactorSource parse_factor_source(const std::string& name) {
    if (name == "rpr") return FactorSource::robust;
    if (name == "sievels") return FactorSource::sieve_ls;
    if (name == "pca") return FactorSource::pca;
    if (name == "pca2") return FactorSource::pca_with_proxies;
    if (name == "int") return FactorSource::interactive;
    throw config_error("unknown estimator '" + name + "' (expected rpr, sievels, pca or pca2)");
}

inline const char* to_string(FactorSource s) {
    switch (s) {
        case FactorSource::robust: return "rpr";
        case FactorSource::sieve_ls: return "sievels";
        case FactorSource::pca: return "pca";
        case FactorSource::pca_with_proxies: return "pca2";
        case FactorSource::interactive: return "int";
    }
    return "?";
}

// "f", "fw", "fwi:<i>" (one-based proxy index) or "w".
inline PredictorForm parse_predictor_form(const std::string& text) {
    PredictorForm form;
    if (text == "f") return form;
    if (text == "fw") {
        form.kind = PredictorForm::Kind::factors_and_proxies;
        return form;
    }
    if (text == "w") {
        form.kind = PredictorForm::Kind::proxies;
        return form;
    }
    if (text.rfind("fwi:", 0) == 0) {
        form.kind = PredictorForm::Kind::factors_and_one_proxy;
        try {
            const long i = std::stol(text.substr(4));
            if (i < 1) throw config_error("proxy index in fwi:<i> is one-based");
            form.proxy = static_cast<Index>(i - 1);
        } catch (const std::logic_error&) {
            throw config_error("cannot parse proxy index in '" + text + "'");
        }
        return form;
    }
    throw config_error("unknown predictor form '" + text + "' (expected f, fw, fwi:<i> or w)");
}

struct ForecastOptions {
    Index window = 100;
    Index factors = 5;
    ForecastModel model = ForecastModel::linear;
    PredictorForm predictors;
    FactorSource source = FactorSource::robust;
    SieveSpec sieve;
    HuberConfig huber;
    IndexModelOptions index;  // max_indices is replaced by the factor count
    bool standardize = false;  // z-score each series within every window
    unsigned threads = 0;
};

struct ForecastReport {
    std::vector<Index> target_index;  // period of each forecast target
    Vector y;
    Vector yhat;
    Vector window_mean;  // in-window mean of y at each origin
    double oos_r2 = 0.0;
    double sse = 0.0;
    Index window = 0;
    std::optional<double> huber_constant;
    std::vector<int> index_counts;  // selected number of indices per origin (multi-index)
    std::vector<std::string> warnings;
};

// Factors estimated on one window of the panel, T x K.
inline Matrix window_factors(const Matrix& x, const Matrix& w, const ForecastOptions& options,
                             const HuberConfig& huber) {
    switch (options.source) {
        case FactorSource::pca:
            return pca_fit(x, options.factors).factors;
        case FactorSource::pca_with_proxies: {
            Matrix stacked(x.rows() + w.rows(), x.cols());
            stacked << x, standardize_rows(w);
            return pca_fit(stacked, options.factors).factors;
        }
        case FactorSource::sieve_ls: {
            const auto design = build_design(w, options.sieve);
            return extract_fit(sieve_ls_sigma(x, design.phi), x, options.factors, Estimator::sieve_ls).factors;
        }
        case FactorSource::robust: {
            const auto design = build_design(w, options.sieve);
            return extract_fit(robust_sigma(x, design.phi, huber, 1), x, options.factors).factors;
        }
        case FactorSource::interactive: {
            const auto design = build_design(w, options.sieve);
            return int_fit(x, design.phi, options.factors).factors;
        }
    }
    throw config_error("unknown factor source");
}

inline Matrix build_predictors(const Matrix& factors, const Matrix& w, const PredictorForm& form) {
    using Kind = PredictorForm::Kind;
    switch (form.kind) {
        case Kind::factors:
            return factors.transpose();
        case Kind::proxies:
            return w;
        case Kind::factors_and_proxies: {
            Matrix z(factors.cols() + w.rows(), w.cols());
            z << factors.transpose(), w;
            return z;
        }
        case Kind::factors_and_one_proxy: {
            if (form.proxy >= w.rows()) throw config_error("proxy index in fwi:<i> exceeds the number of proxies");
            Matrix z(factors.cols() + 1, w.cols());
            z << factors.transpose(), w.row(form.proxy);
            return z;
        }
    }
    throw config_error("unknown predictor form");
}

// One-step forecasts from rolling windows. The window ending at period e
// uses panel, proxies and y up to e only and predicts y at e + 1. When
// the Huber constant is left to cross-validation it is chosen on the first
// window and reused at later origins.
inline ForecastReport rolling_forecast(const Matrix& x, const Matrix& w, const Vector& y,
                                       const ForecastOptions& options) {
    const Index total = y.size();
    const Index win = options.window;
    if (options.predictors.uses_factors() && x.cols() != total)
        throw config_error("panel and target have different lengths");
    const bool proxies_optional =
        options.source == FactorSource::pca && options.predictors.kind == PredictorForm::Kind::factors;
    if (w.cols() != total && !proxies_optional) throw config_error("proxies and target have different lengths");
    const bool needs_sieve = options.source == FactorSource::robust || options.source == FactorSource::sieve_ls ||
                             options.source == FactorSource::interactive;
    const Index j = needs_sieve ? sieve_dimension(options.sieve, w.rows()) : 0;
    if (win < j + options.factors + 5)
        throw config_error("window of " + std::to_string(win) + " is shorter than J + K + 5 = " +
                           std::to_string(j + options.factors + 5));
    if (total <= win) throw config_error("series too short for a single forecast");

    auto window_panel = [&](Index start) -> Matrix {
        return options.standardize ? standardize_rows(x.middleCols(start, win)) : Matrix(x.middleCols(start, win));
    };
    HuberConfig huber = options.huber;
    ForecastReport report;
    report.window = win;
    if (options.predictors.uses_factors() && options.source == FactorSource::robust && !huber.constant) {
        const auto design = build_design(w.leftCols(win), options.sieve);
        huber.constant = cross_validate_constant(window_panel(0), design.phi, huber, options.threads).chosen;
    }
    if (options.source == FactorSource::robust) report.huber_constant = huber.constant;

    const Index origins = total - win;
    report.y.resize(origins);
    report.yhat.resize(origins);
    report.window_mean.resize(origins);
    report.target_index.resize(static_cast<std::size_t>(origins));
    report.index_counts.assign(static_cast<std::size_t>(origins), 0);
    std::vector<std::vector<std::string>> warnings(static_cast<std::size_t>(origins));

    parallel_for(static_cast<std::size_t>(origins), options.threads, [&](std::size_t o) {
        const Index start = static_cast<Index>(o);
        const Index end = start + win - 1;  // last period in the window
        const Matrix w_win = w.cols() == total ? Matrix(w.middleCols(start, win)) : Matrix();
        Matrix factors;
        if (options.predictors.uses_factors())
            factors = window_factors(window_panel(start), w_win, options, huber);
        const Matrix z = build_predictors(factors, w_win, options.predictors);
        // Pairs (z_t, y_{t+1}) for t in [start, end - 1]; z at end predicts y_{end+1}.
        const Matrix z_train = z.leftCols(win - 1);
        const Vector y_train = y.segment(start + 1, win - 1);
        const Vector z_last = z.col(win - 1);
        double prediction = 0.0;
        if (options.model == ForecastModel::linear) {
            Matrix design(win - 1, z.rows() + 1);
            design.col(0).setOnes();
            design.rightCols(z.rows()) = z_train.transpose();
            const Eigen::ColPivHouseholderQR<Matrix> qr(design);
            if (qr.rank() < design.cols()) throw numerical_error("forecast regression design is rank deficient");
            const Vector coef = qr.solve(y_train);
            prediction = coef(0) + coef.tail(z.rows()).dot(z_last);
        } else {
            IndexModelOptions index = options.index;
            index.max_indices = static_cast<int>(options.factors);
            const IndexModel model = fit_index_model(z_train, y_train, index);
            prediction = model.predict(z_last);
            report.index_counts[o] = model.index_count;
            warnings[o] = model.slicing.warnings;
        }
        report.y(start) = y(end + 1);
        report.yhat(start) = prediction;
        report.window_mean(start) = y.segment(start, win).mean();
        report.target_index[o] = end + 1;
    });

    report.sse = (report.y - report.yhat).squaredNorm();
    const double sst = (report.y - report.window_mean).squaredNorm();
    report.oos_r2 = sst > 0.0 ? 1.0 - report.sse / sst : -std::numeric_limits<double>::infinity();
    for (std::size_t o = 0; o < warnings.size(); ++o)
        for (const auto& msg : warnings[o])
            report.warnings.push_back("origin " + std::to_string(o + 1) + ": " + msg);
    return report;
}

inline void write_predictions(const ForecastReport& report, const std::vector<std::string>& time_ids,
                              const std::string& path) {
    std::vector<std::string> labels;
    Matrix values(report.y.size(), 2);
    for (Index i = 0; i < report.y.size(); ++i) {
        labels.push_back(time_ids[static_cast<std::size_t>(report.target_index[static_cast<std::size_t>(i)])]);
        values(i, 0) = report.y(i);
        values(i, 1) = report.yhat(i);
    }
    csv::write(path, "time", labels, {"y", "yhat"}, values);
}

}  // namespace proxyfactor
