#pragma once

#include "core.hpp"
#include "data_io.hpp"
#include "factor_estimation.hpp"
#include "forecast.hpp"
#include "robust_regression.hpp"
#include "sieve_basis.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace proxyfactor {

enum class LinkShape { linear, sine, none };         // g(w) = D w, sin(pi w / 2), 0
enum class ErrorLaw { gaussian8, mixn, t3x2, logn };  // idiosyncratic error distributions

inline LinkShape parse_link_shape(const std::string& s) {
    if (s == "I" || s == "1") return LinkShape::linear;
    if (s == "II" || s == "2") return LinkShape::sine;
    if (s == "III" || s == "3") return LinkShape::none;
    throw config_error("unknown model '" + s + "' (expected I, II or III)");
}

inline const char* to_string(LinkShape m) {
    switch (m) {
        case LinkShape::linear: return "I";
        case LinkShape::sine: return "II";
        case LinkShape::none: return "III";
    }
    return "?";
}

inline ErrorLaw parse_error_law(const std::string& s) {
    if (s == "gaussian8") return ErrorLaw::gaussian8;
    if (s == "mixn") return ErrorLaw::mixn;
    if (s == "t3x2") return ErrorLaw::t3x2;
    if (s == "logn") return ErrorLaw::logn;
    throw config_error("unknown error law '" + s + "' (expected gaussian8, mixn, t3x2 or logn)");
}

inline const char* to_string(ErrorLaw e) {
    switch (e) {
        case ErrorLaw::gaussian8: return "gaussian8";
        case ErrorLaw::mixn: return "mixn";
        case ErrorLaw::t3x2: return "t3x2";
        case ErrorLaw::logn: return "logn";
    }
    return "?";
}

struct SimConfig {
    Index n = 50;
    Index t = 100;
    Index k = 5;
    Index d = 5;
    LinkShape model = LinkShape::linear;
    ErrorLaw errors = ErrorLaw::gaussian8;
    double sigma_gamma = 0.01;  // variance of each residual factor component
    int replications = 200;
    std::uint64_t seed = 20240601;
    Index horizon = 50;  // rolling one-step forecasts after the estimation sample
    SieveSpec sieve;
    HuberConfig huber;

    void validate() const {
        if (n < 2 || t < 2 || k < 1 || d < 1) throw config_error("simulation dimensions must be positive");
        if (!(sigma_gamma >= 0.0)) throw config_error("residual factor variance must be non-negative");
        if (replications < 1) throw config_error("need at least one replication");
        if (horizon < 0) throw config_error("forecast horizon must be non-negative");
        if (model == LinkShape::linear && k != d) throw config_error("model I needs as many proxies as factors");
        if (model == LinkShape::sine && k != d) throw config_error("model II needs as many proxies as factors");
    }
};

// Truth and observables for one replication. Periods 0..T-1 form the
// estimation sample; the remaining `horizon` periods extend it for forecasting.
struct SimDraw {
    Matrix loadings;   // N x K
    Matrix proxies;    // d x (T + horizon)
    Matrix factors;    // (T + horizon) x K
    Matrix gamma;      // (T + horizon) x K
    Matrix panel;      // N x (T + horizon)
    Vector beta;       // K
    Vector y;          // y(t) = beta' f(t-1) + e(t)
    Matrix common() const { return loadings * factors.transpose(); }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

// Independent generator for replication `rep` of a run seeded with `seed`.
inline std::mt19937_64 substream(std::uint64_t seed, std::uint64_t rep) {
    std::seed_seq seq{splitmix64(seed), splitmix64(seed ^ splitmix64(rep + 1)), rep};
    return std::mt19937_64(seq);
}

// Draws one error with its population mean removed.
inline double draw_error(ErrorLaw law, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0.0, 1.0);
    switch (law) {
        case ErrorLaw::gaussian8:
            return std::sqrt(8.0) * z(rng);
        case ErrorLaw::mixn: {
            std::bernoulli_distribution coin(0.5);
            const double v = coin(rng) ? -1.0 + 2.0 * z(rng) : 8.0 + z(rng);
            return v - 3.5;
        }
        case ErrorLaw::t3x2: {
            std::student_t_distribution<double> t3(3.0);
            return 2.0 * t3(rng);
        }
        case ErrorLaw::logn:
            return std::exp(1.0 + 2.0 * z(rng)) - std::exp(3.0);
    }
    return 0.0;
}

inline SimDraw generate(const SimConfig& config, std::mt19937_64& rng) {
    config.validate();
    const Index total = config.t + config.horizon;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit12(1.0, 2.0);
    std::uniform_real_distribution<double> beta_law(0.5, 1.5);
    SimDraw draw;
    draw.loadings.resize(config.n, config.k);
    for (Index j = 0; j < config.k; ++j)
        for (Index i = 0; i < config.n; ++i) draw.loadings(i, j) = normal(rng);
    Matrix mixing;
    if (config.model == LinkShape::linear) {
        mixing.resize(config.k, config.d);
        for (Index j = 0; j < config.d; ++j)
            for (Index i = 0; i < config.k; ++i) mixing(i, j) = unit12(rng);
    }
    draw.beta.resize(config.k);
    for (Index j = 0; j < config.k; ++j) draw.beta(j) = beta_law(rng);

    const double gamma_sd = std::sqrt(config.sigma_gamma);
    auto draw_factor = [&](Vector& w, Vector& g) {
        for (Index c = 0; c < config.d; ++c) w(c) = normal(rng);
        Vector f(config.k);
        switch (config.model) {
            case LinkShape::linear: f = mixing * w; break;
            case LinkShape::sine: f = (0.5 * std::numbers::pi * w.array()).sin().matrix(); break;
            case LinkShape::none: f.setZero(); break;
        }
        for (Index j = 0; j < config.k; ++j) g(j) = gamma_sd * normal(rng);
        return Vector(f + g);
    };

    Vector w(config.d);
    Vector g(config.k);
    Vector previous = draw_factor(w, g);  // pre-sample factor driving y(0)
    draw.proxies.resize(config.d, total);
    draw.factors.resize(total, config.k);
    draw.gamma.resize(total, config.k);
    draw.panel.resize(config.n, total);
    draw.y.resize(total);
    for (Index t = 0; t < total; ++t) {
        const Vector f = draw_factor(w, g);
        draw.proxies.col(t) = w;
        draw.factors.row(t) = f.transpose();
        draw.gamma.row(t) = g.transpose();
        Vector u(config.n);
        for (Index i = 0; i < config.n; ++i) u(i) = draw_error(config.errors, rng);
        draw.panel.col(t) = draw.loadings * f + u;
        draw.y(t) = draw.beta.dot(previous) + normal(rng);
        previous = f;
    }
    return draw;
}

inline const std::vector<Estimator>& all_estimators() {
    static const std::vector<Estimator> list{Estimator::robust, Estimator::sieve_ls, Estimator::pca,
                                             Estimator::interactive};
    return list;
}

struct ReplicationMetrics {
    bool ok = false;
    std::string failure;
    std::map<Estimator, double> relative_error;
    std::map<Estimator, double> loading_correlation;
    std::map<Estimator, double> factor_correlation;
    std::map<Estimator, double> forecast_ratio;
    double huber_constant = 0.0;
};

struct MetricSummary {
    double mean = 0.0;
    double std_error = 0.0;
    int count = 0;
};

struct CellResult {
    SimConfig config;
    std::vector<Estimator> estimators;
    std::vector<ReplicationMetrics> replications;
    std::map<Estimator, MetricSummary> relative_error;
    std::map<Estimator, MetricSummary> loading_correlation;
    std::map<Estimator, MetricSummary> factor_correlation;
    std::map<Estimator, MetricSummary> forecast_ratio;
    int failures = 0;
    bool partial = false;
};

struct SimReport {
    std::vector<CellResult> cells;
};

inline FactorFit fit_estimator(Estimator e, const Matrix& x, const Matrix& phi, Index k, const HuberConfig& huber) {
    switch (e) {
        case Estimator::robust: return extract_fit(robust_sigma(x, phi, huber, 1), x, k);
        case Estimator::sieve_ls: return extract_fit(sieve_ls_sigma(x, phi), x, k, Estimator::sieve_ls);
        case Estimator::pca: return pca_fit(x, k);
        case Estimator::interactive: return int_fit(x, phi, k);
    }
    throw config_error("unknown estimator");
}

inline FactorSource forecast_source(Estimator e) {
    switch (e) {
        case Estimator::robust: return FactorSource::robust;
        case Estimator::sieve_ls: return FactorSource::sieve_ls;
        case Estimator::pca: return FactorSource::pca;
        case Estimator::interactive: return FactorSource::interactive;
    }
    return FactorSource::pca;
}

// All estimators see the same draw. PCA is always fitted because it is the
// baseline of the relative error and the forecast ratio.
inline ReplicationMetrics run_replication(const SimConfig& config, const std::vector<Estimator>& estimators,
                                          int rep) {
    ReplicationMetrics out;
    auto rng = substream(config.seed, static_cast<std::uint64_t>(rep));
    const SimDraw draw = generate(config, rng);
    const Index t = config.t;
    const Matrix x = draw.panel.leftCols(t);
    const Matrix w = draw.proxies.leftCols(t);
    const Matrix truth = draw.loadings * draw.factors.topRows(t).transpose();
    const auto design = build_design(w, config.sieve);

    HuberConfig huber = config.huber;
    if (!huber.constant) huber.constant = cross_validate_constant(x, design.phi, huber, 1).chosen;
    out.huber_constant = *huber.constant;

    const FactorFit baseline = pca_fit(x, config.k);
    for (Estimator e : estimators) {
        const FactorFit fit = e == Estimator::pca ? baseline : fit_estimator(e, x, design.phi, config.k, huber);
        out.relative_error[e] = relative_estimation_error(fit, baseline, truth);
        out.loading_correlation[e] = median_canonical_correlation(draw.loadings, fit.loadings);
        out.factor_correlation[e] = median_canonical_correlation(draw.factors.topRows(t), fit.factors);
    }

    if (config.horizon > 0) {
        ForecastOptions options;
        options.window = t;
        options.factors = config.k;
        options.sieve = config.sieve;
        options.huber = huber;
        options.threads = 1;
        options.source = FactorSource::pca;
        const double pca_sse = rolling_forecast(draw.panel, draw.proxies, draw.y, options).sse;
        for (Estimator e : estimators) {
            if (e == Estimator::pca) {
                out.forecast_ratio[e] = 1.0;
                continue;
            }
            options.source = forecast_source(e);
            out.forecast_ratio[e] = rolling_forecast(draw.panel, draw.proxies, draw.y, options).sse / pca_sse;
        }
    }
    out.ok = true;
    return out;
}

inline MetricSummary summarize(const std::vector<double>& values) {
    MetricSummary s;
    s.count = static_cast<int>(values.size());
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / s.count;
    if (s.count > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std_error = std::sqrt(ss / (s.count - 1) / s.count);
    }
    return s;
}

inline CellResult run_cell(const SimConfig& config, const std::vector<Estimator>& estimators, unsigned threads = 0) {
    config.validate();
    CellResult cell;
    cell.config = config;
    cell.estimators = estimators;
    cell.replications.resize(static_cast<std::size_t>(config.replications));
    parallel_for(cell.replications.size(), threads, [&](std::size_t r) {
        try {
            cell.replications[r] = run_replication(config, estimators, static_cast<int>(r));
        } catch (const std::exception& ex) {
            cell.replications[r].ok = false;
            cell.replications[r].failure = ex.what();
        }
    });
    for (const auto& rep : cell.replications) cell.failures += rep.ok ? 0 : 1;
    cell.partial = cell.failures * 20 > config.replications;
    auto collect = [&](auto member, Estimator e) {
        std::vector<double> values;
        for (const auto& rep : cell.replications) {
            if (!rep.ok) continue;
            const auto& m = rep.*member;
            const auto it = m.find(e);
            if (it != m.end() && std::isfinite(it->second)) values.push_back(it->second);
        }
        return summarize(values);
    };
    for (Estimator e : estimators) {
        cell.relative_error[e] = collect(&ReplicationMetrics::relative_error, e);
        cell.loading_correlation[e] = collect(&ReplicationMetrics::loading_correlation, e);
        cell.factor_correlation[e] = collect(&ReplicationMetrics::factor_correlation, e);
        if (config.horizon > 0) cell.forecast_ratio[e] = collect(&ReplicationMetrics::forecast_ratio, e);
    }
    return cell;
}

// One CSV per metric: rows are error law x sigma, columns model x estimator.
inline void emit_tables(const SimReport& report, const std::string& dir,
                        const std::vector<Estimator>& estimators = all_estimators()) {
    std::filesystem::create_directories(dir);
    const std::vector<LinkShape> models{LinkShape::linear, LinkShape::sine, LinkShape::none};
    struct RowKey {
        ErrorLaw law;
        double sigma;
        bool operator<(const RowKey& o) const { return law != o.law ? law < o.law : sigma < o.sigma; }
    };
    std::map<RowKey, std::map<LinkShape, const CellResult*>> rows;
    for (const auto& cell : report.cells) rows[{cell.config.errors, cell.config.sigma_gamma}][cell.config.model] = &cell;

    using Table = std::map<Estimator, MetricSummary> CellResult::*;
    const std::vector<std::pair<std::string, Table>> tables{
        {"relative_error.csv", &CellResult::relative_error},
        {"loading_correlation.csv", &CellResult::loading_correlation},
        {"factor_correlation.csv", &CellResult::factor_correlation},
        {"forecast_ratio.csv", &CellResult::forecast_ratio},
    };
    for (const auto& [name, member] : tables) {
        std::ofstream out(std::filesystem::path(dir) / name);
        if (!out) throw input_error("cannot write table " + name);
        out << "errors,sigma";
        for (LinkShape m : models)
            for (Estimator e : estimators) out << ',' << to_string(m) << '_' << to_string(e);
        out << '\n' << std::setprecision(6);
        for (const auto& [key, by_model] : rows) {
            out << to_string(key.law) << ',' << key.sigma;
            for (LinkShape m : models) {
                const auto it = by_model.find(m);
                for (Estimator e : estimators) {
                    out << ',';
                    if (it == by_model.end()) continue;
                    const auto& metric = it->second->*member;
                    const auto found = metric.find(e);
                    if (found != metric.end() && found->second.count > 0) out << found->second.mean;
                }
            }
            out << '\n';
        }
    }
}

}  // namespace proxyfactor
