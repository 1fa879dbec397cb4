#include <proxyfactor.hpp>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace pf = proxyfactor;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw pf::input_error("cannot open file: " + path);
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("cannot initialise SHA-256");
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), digest, &len);
    std::string hex;
    char byte[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(byte, sizeof byte, "%02x", digest[i]);
        hex += byte;
    }
    return hex;
}

std::string utc_now() {
    const std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    return buf;
}

// Run record written to <out-dir>/manifest.json before the computation starts
// and rewritten with the outcome when it ends.
class Manifest {
public:
    Manifest(const std::string& out_dir, const std::string& command)
        : path_(fs::path(out_dir) / "manifest.json"), start_(std::chrono::steady_clock::now()) {
        fs::create_directories(out_dir);
        doc_["command"] = command;
        doc_["library_version"] = pf::version;
        doc_["started_at"] = utc_now();
        doc_["status"] = "running";
        doc_["inputs"] = json::object();
        doc_["outputs"] = json::array();
        doc_["seed"] = nullptr;
    }

    // Every option under its long name: the parsed value when given, the
    // default otherwise, null when neither exists. Flags record true/false.
    void record_flags(const CLI::App& global, const CLI::App& sub, bool standardize) {
        json flags = json::object();
        auto add = [&](const CLI::App& app) {
            for (const CLI::Option* opt : app.get_options()) {
                if (opt->get_lnames().empty()) continue;
                const std::string name = "--" + opt->get_lnames().front();
                if (name == "--help" || name == "--version" || name == "--standardize") continue;
                if (opt->get_expected_min() == 0) {
                    flags[name] = opt->count() > 0;
                } else if (opt->count() > 0) {
                    const auto& res = opt->results();
                    if (res.size() == 1)
                        flags[name] = res.front();
                    else
                        flags[name] = res;
                } else if (!opt->get_default_str().empty()) {
                    flags[name] = opt->get_default_str();
                } else {
                    flags[name] = nullptr;
                }
            }
        };
        add(global);
        add(sub);
        flags["--standardize"] = standardize;
        doc_["flags"] = flags;
    }

    void add_input(const std::string& role, const std::string& file) {
        doc_["inputs"][role] = {{"path", file}, {"sha256", sha256_file(file)}};
    }

    void add_output(const std::string& file) { doc_["outputs"].push_back(file); }
    void set(const std::string& key, json value) { doc_[key] = std::move(value); }

    void begin() { write(); }

    void finish(const std::string& status, const std::string& message, int exit_code) {
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        doc_["status"] = status;
        doc_["exit_code"] = exit_code;
        doc_["wall_clock_seconds"] = seconds;
        doc_["finished_at"] = utc_now();
        if (!message.empty()) doc_["message"] = message;
        write();
    }

private:
    void write() const {
        std::ofstream out(path_);
        if (!out) throw pf::input_error("cannot write manifest " + path_.string());
        out << doc_.dump(2) << '\n';
    }

    fs::path path_;
    std::chrono::steady_clock::time_point start_;
    json doc_;
};

struct SieveFlags {
    std::string basis = "fourier";
    int terms = 5;
    bool no_intercept = false;

    void attach(CLI::App* app) {
        app->add_option("--basis", basis, "Sieve family: fourier, poly or linear")
            ->check(CLI::IsMember({"fourier", "poly", "linear"}))
            ->capture_default_str();
        app->add_option("--terms", terms, "Terms per covariate")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_flag("--no-intercept", no_intercept, "Drop the constant term");
    }

    pf::SieveSpec spec() const {
        pf::SieveSpec s;
        s.family = pf::parse_sieve_family(basis);
        s.terms_per_covariate = terms;
        s.intercept = !no_intercept;
        return s;
    }
};

struct HuberFlags {
    std::string constant = "cv";
    int folds = 5;
    std::vector<double> grid{0.5, 1.0, 2.0, 4.0, 8.0};
    int max_iter = 200;
    double tol = 1e-8;

    void attach(CLI::App* app) {
        app->add_option("--huber-C", constant, "Huber constant C, or 'cv' to cross-validate")->capture_default_str();
        app->add_option("--cv-folds", folds, "Cross-validation folds")->check(CLI::Range(2, 1000))->capture_default_str();
        app->add_option("--huber-grid", grid, "Candidate constants for cross-validation")
            ->delimiter(',')
            ->capture_default_str();
        app->add_option("--max-iter", max_iter, "IRLS iteration cap")->check(CLI::PositiveNumber)->capture_default_str();
        app->add_option("--tol", tol, "IRLS coefficient tolerance")->check(CLI::PositiveNumber)->capture_default_str();
    }

    pf::HuberConfig config() const {
        pf::HuberConfig c;
        if (constant != "cv") {
            double v = 0.0;
            try {
                std::size_t used = 0;
                v = std::stod(constant, &used);
                if (used != constant.size()) throw std::invalid_argument(constant);
            } catch (const std::exception&) {
                throw pf::config_error("--huber-C must be a positive number or 'cv'");
            }
            if (!(v > 0.0)) throw pf::config_error("--huber-C must be positive");
            c.constant = v;
        }
        if (grid.empty()) throw pf::config_error("--huber-grid is empty");
        for (double g : grid)
            if (!(g > 0.0)) throw pf::config_error("--huber-grid entries must be positive");
        c.cv_folds = folds;
        c.grid = grid;
        c.max_iter = max_iter;
        c.tol = tol;
        return c;
    }
};

pf::Orientation parse_orientation(const std::string& s) {
    return s == "columns" ? pf::Orientation::series_in_columns : pf::Orientation::series_in_rows;
}

std::string yes_no(bool b) { return b ? "yes" : "no"; }

std::string fmt(double v, int digits = 6) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

std::string out_file(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

struct Globals {
    unsigned threads = 0;
    bool standardize = true;
    std::string out_dir = "out";
    std::string orientation = "rows";
};

pf::PanelMatrix read_panel(const std::string& path, const Globals& g, Manifest& m) {
    m.add_input("panel", path);
    return pf::load_panel(path, parse_orientation(g.orientation));
}

std::optional<pf::ProxyMatrix> read_proxies(const std::string& path, const Globals& g, Manifest& m) {
    if (path.empty()) return std::nullopt;
    m.add_input("proxies", path);
    return pf::load_proxies(path, parse_orientation(g.orientation));
}

pf::Matrix prepared_panel(const pf::PanelMatrix& panel, const Globals& g) {
    return g.standardize ? pf::standardize_rows(panel.values) : panel.values;
}

// ---- diagnose ----------------------------------------------------------

struct DiagnoseArgs {
    std::string panel;
    double threshold = 6.0;
};

std::string cmd_diagnose(const DiagnoseArgs& a, const Globals& g, Manifest& m) {
    const auto panel = read_panel(a.panel, g, m);
    m.begin();
    const auto report = pf::kurtosis_report(panel, a.threshold);
    const auto path = out_file(g.out_dir, "kurtosis.csv");
    pf::write_kurtosis_csv(report, path);
    m.add_output(path);
    return "diagnose: " + pf::kurtosis_summary(report);
}

// ---- estimate ----------------------------------------------------------

struct EstimateArgs {
    std::string panel;
    std::string proxies;
    std::string estimator = "rpr";
    int k = 0;
    int select_k = 0;
    SieveFlags sieve;
    HuberFlags huber;
};

pf::Index resolve_k(int k, int select_k, const pf::Matrix& x, Manifest& m) {
    if (k > 0 && select_k > 0) throw pf::config_error("give either --k or --select-k, not both");
    if (k > 0) return k;
    if (select_k <= 0) throw pf::config_error("the number of factors is required (--k or --select-k)");
    const auto sel = pf::select_factor_count(x, select_k);
    m.set("selected_k", {{"chosen", sel.chosen}, {"criterion", sel.criterion}});
    return sel.chosen;
}

struct FittedModel {
    pf::FactorFit fit;
    std::optional<pf::SieveDesign> design;
    std::optional<pf::CrossValidation> cv;
};

FittedModel fit_model(pf::Estimator estimator, const pf::Matrix& x, const std::optional<pf::ProxyMatrix>& proxies,
                      pf::Index k, const SieveFlags& sieve, const HuberFlags& huber, unsigned threads) {
    FittedModel out;
    if (estimator == pf::Estimator::pca) {
        out.fit = pf::pca_fit(x, k);
        return out;
    }
    if (!proxies) throw pf::input_error(std::string("estimator ") + pf::to_string(estimator) + " needs --proxies");
    out.design = pf::build_design(proxies->values, sieve.spec());
    const auto& phi = out.design->phi;
    switch (estimator) {
        case pf::Estimator::robust: {
            auto config = huber.config();
            if (!config.constant) {
                out.cv = pf::cross_validate_constant(x, phi, config, threads);
                config.constant = out.cv->chosen;
            }
            out.fit = pf::extract_fit(pf::robust_sigma(x, phi, config, threads), x, k);
            break;
        }
        case pf::Estimator::sieve_ls:
            out.fit = pf::extract_fit(pf::sieve_ls_sigma(x, phi), x, k, pf::Estimator::sieve_ls);
            break;
        case pf::Estimator::interactive:
            out.fit = pf::int_fit(x, phi, k);
            break;
        case pf::Estimator::pca:
            break;
    }
    return out;
}

json fit_details(const FittedModel& model) {
    json j = {{"estimator", pf::to_string(model.fit.estimator)}, {"k", model.fit.n_factors()}};
    if (model.design) j["sieve_dimension"] = model.design->dimension();
    if (model.fit.coefficients) {
        const auto& c = *model.fit.coefficients;
        j["huber_constant"] = c.constant;
        j["huber_alpha"] = c.alpha;
        j["unconverged_series"] = c.unconverged();
    }
    if (model.cv) j["cv"] = {{"grid", model.cv->grid}, {"scores", model.cv->scores}, {"chosen", model.cv->chosen}};
    if (model.fit.estimator == pf::Estimator::interactive) j["iterations"] = model.fit.iterations;
    return j;
}

std::string cmd_estimate(const EstimateArgs& a, const Globals& g, Manifest& m) {
    const auto estimator = pf::parse_estimator(a.estimator);
    const auto panel = read_panel(a.panel, g, m);
    const auto proxies = read_proxies(a.proxies, g, m);
    if (proxies) pf::require_aligned(panel, *proxies);
    m.begin();
    const pf::Matrix x = prepared_panel(panel, g);
    const pf::Index k = resolve_k(a.k, a.select_k, x, m);
    const auto model = fit_model(estimator, x, proxies, k, a.sieve, a.huber, g.threads);
    pf::write_fit_bundle(model.fit, g.out_dir, panel.series_ids, panel.time_ids);
    for (const char* f : {"loadings.csv", "factors.csv", "explained.csv", "gamma.csv", "eigenvalues.csv"})
        m.add_output(out_file(g.out_dir, f));
    const json details = fit_details(model);
    m.set("fit", details);
    std::string line = "estimate: estimator=" + a.estimator + " K=" + std::to_string(k) +
                       " N=" + std::to_string(x.rows()) + " T=" + std::to_string(x.cols());
    if (model.fit.coefficients)
        line += " C=" + fmt(model.fit.coefficients->constant) +
                " unconverged=" + std::to_string(model.fit.coefficients->unconverged());
    return line;
}

// ---- test --------------------------------------------------------------

struct TestArgs {
    std::string panel;
    std::string proxies;
    std::string estimator = "rpr";
    int k = 0;
    int select_k = 0;
    std::string sigma_u = "diagonal";
    double threshold_c = 2.0;
    double sigma_u_alpha = 0.0;
    double gamma_level = 0.0;
    SieveFlags sieve;
    HuberFlags huber;
};

std::string cmd_test(const TestArgs& a, const Globals& g, Manifest& m) {
    const auto estimator = pf::parse_estimator(a.estimator);
    if (estimator != pf::Estimator::robust && estimator != pf::Estimator::sieve_ls)
        throw pf::config_error("test needs --estimator rpr or sievels");
    if (a.gamma_level != 0.0 && !(a.gamma_level > 0.0 && a.gamma_level < 1.0))
        throw pf::config_error("--gamma-level must lie in (0, 1)");
    const auto panel = read_panel(a.panel, g, m);
    const auto proxies = read_proxies(a.proxies, g, m);
    if (!proxies) throw pf::input_error("test needs --proxies");
    pf::require_aligned(panel, *proxies);
    m.begin();
    const pf::Matrix x = prepared_panel(panel, g);
    const pf::Index k = resolve_k(a.k, a.select_k, x, m);
    const auto model = fit_model(estimator, x, proxies, k, a.sieve, a.huber, g.threads);

    pf::IdiosyncraticCovariance sigma_u;
    if (a.sigma_u == "diagonal") {
        sigma_u = pf::diag_sigma_u(model.fit);
    } else {
        double alpha = a.sigma_u_alpha;
        if (alpha <= 0.0)
            alpha = model.fit.coefficients ? model.fit.coefficients->alpha
                                           : pf::tuning_alpha(1.0, x.cols(), x.rows(), model.design->dimension());
        sigma_u = pf::soft_threshold_sigma_u(model.fit, alpha, a.threshold_c);
        m.set("sigma_u_alpha", alpha);
    }
    for (pf::Index i : sigma_u.floored)
        std::cerr << "warning: residual variance of series '" << panel.series_ids[static_cast<std::size_t>(i)]
                  << "' floored at " << pf::variance_floor << '\n';

    const auto report = pf::test_statistic(model.fit, sigma_u);
    const auto path = out_file(g.out_dir, "test.csv");
    {
        std::ofstream out(path);
        if (!out) throw pf::input_error("cannot write file: " + path);
        out << "S,z,p_value,K,T,reject_1pct,reject_5pct,reject_10pct,sigma_u_mode\n" << std::setprecision(17)
            << report.statistic << ',' << report.z << ',' << report.p_value << ',' << report.factors << ','
            << report.periods << ',' << report.reject_at.at(0.01) << ',' << report.reject_at.at(0.05) << ','
            << report.reject_at.at(0.10) << ',' << pf::to_string(report.mode) << '\n';
    }
    m.add_output(path);

    if (a.gamma_level > 0.0) {
        const auto ci_path = out_file(g.out_dir, "gamma_ci.csv");
        std::vector<std::string> cols;
        for (pf::Index j = 1; j <= k; ++j) cols.push_back("gamma_" + std::to_string(j));
        for (pf::Index j = 1; j <= k; ++j) cols.push_back("halfwidth_" + std::to_string(j));
        cols.push_back("radius_squared");
        cols.push_back("regularized");
        pf::Matrix values(x.cols(), 2 * k + 2);
        for (pf::Index t = 0; t < x.cols(); ++t) {
            const auto gi = pf::gamma_inference(model.fit, model.design->phi, sigma_u, t, a.gamma_level);
            values.row(t).head(k) = gi.gamma.transpose();
            // Half-widths of the ellipsoid's bounding box.
            values.row(t).segment(k, k) = (gi.v_t.diagonal() * gi.radius_squared).cwiseSqrt().transpose();
            values(t, 2 * k) = gi.radius_squared;
            values(t, 2 * k + 1) = gi.regularized ? 1.0 : 0.0;
        }
        pf::csv::write(ci_path, "time", panel.time_ids, cols, values);
        m.add_output(ci_path);
    }
    m.set("fit", fit_details(model));
    return "test: S=" + fmt(report.statistic) + " z=" + fmt(report.z) + " p=" + fmt(report.p_value) +
           " reject@1%=" + yes_no(report.reject_at.at(0.01)) + " reject@5%=" + yes_no(report.reject_at.at(0.05)) +
           " reject@10%=" + yes_no(report.reject_at.at(0.10)) + " sigma_u=" + pf::to_string(report.mode);
}

// ---- forecast ----------------------------------------------------------

struct ForecastArgs {
    std::string panel;
    std::string proxies;
    std::string target;
    std::string target_column;
    int window = 0;
    std::string model = "linear";
    std::string predictors = "f";
    std::string estimator = "rpr";
    int k = 0;
    int select_k = 0;
    int slices = 10;
    bool center = false;
    SieveFlags sieve;
    HuberFlags huber;
};

std::string cmd_forecast(const ForecastArgs& a, const Globals& g, Manifest& m) {
    pf::ForecastOptions options;
    options.model = pf::parse_forecast_model(a.model);
    options.predictors = pf::parse_predictor_form(a.predictors);
    options.source = pf::parse_factor_source(a.estimator);
    options.sieve = a.sieve.spec();
    options.huber = a.huber.config();
    options.index.slices = a.slices;
    options.index.center = a.center;
    options.standardize = g.standardize;
    options.threads = g.threads;
    if (a.window <= 0) throw pf::config_error("--window must be positive");
    options.window = a.window;

    const auto panel = read_panel(a.panel, g, m);
    const auto proxies = read_proxies(a.proxies, g, m);
    const bool needs_proxies = options.source != pf::FactorSource::pca ||
                               options.predictors.kind != pf::PredictorForm::Kind::factors;
    if (needs_proxies && !proxies) throw pf::input_error("this forecast configuration needs --proxies");
    if (proxies) pf::require_aligned(panel, *proxies);
    m.add_input("target", a.target);
    const pf::Vector y = pf::load_target(a.target, a.target_column, panel.time_ids);
    m.begin();

    if (options.predictors.uses_factors()) {
        // The factor count is chosen on the first window only.
        const pf::Matrix first = panel.values.leftCols(std::min<pf::Index>(a.window, panel.n_periods()));
        options.factors = resolve_k(a.k, a.select_k, g.standardize ? pf::standardize_rows(first) : first, m);
    } else {
        options.factors = a.k > 0 ? a.k : 1;
    }
    const pf::Matrix w = proxies ? proxies->values : pf::Matrix();
    const auto report = pf::rolling_forecast(panel.values, w, y, options);
    for (const auto& msg : report.warnings) std::cerr << "warning: " << msg << '\n';

    const auto path = out_file(g.out_dir, "predictions.csv");
    pf::write_predictions(report, panel.time_ids, path);
    m.add_output(path);
    const auto summary_path = out_file(g.out_dir, "forecast.csv");
    {
        std::ofstream out(summary_path);
        if (!out) throw pf::input_error("cannot write file: " + summary_path);
        out << "oos_r2,sse,origins,window,k\n"
            << std::setprecision(17) << report.oos_r2 << ',' << report.sse << ',' << report.y.size() << ','
            << report.window << ',' << options.factors << '\n';
    }
    m.add_output(summary_path);
    json details = {{"oos_r2", report.oos_r2}, {"sse", report.sse}, {"origins", report.y.size()},
                    {"k", options.factors}};
    if (report.huber_constant) details["huber_constant"] = *report.huber_constant;
    if (!report.index_counts.empty() && options.model == pf::ForecastModel::multi_index)
        details["index_counts"] = report.index_counts;
    m.set("forecast", details);
    return "forecast: oos_R2=" + fmt(report.oos_r2) + " origins=" + std::to_string(report.y.size()) +
           " window=" + std::to_string(report.window) + " K=" + std::to_string(options.factors);
}

// ---- simulate ----------------------------------------------------------

struct SimulateArgs {
    std::vector<std::string> models{"I"};
    std::vector<std::string> errors{"t3x2"};
    std::vector<double> sigmas{0.01};
    std::vector<std::string> estimators{"rpr", "sievels", "pca", "int"};
    int reps = 200;
    std::uint64_t seed = 20240601;
    int n = 50;
    int t = 100;
    int k = 5;
    int d = 5;
    int horizon = 50;
    SieveFlags sieve;
    HuberFlags huber;
};

void write_cells(const pf::SimReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw pf::input_error("cannot write file: " + path);
    out << "model,errors,sigma,estimator,metric,mean,std_error,count,failures,partial\n" << std::setprecision(10);
    using Table = std::map<pf::Estimator, pf::MetricSummary> pf::CellResult::*;
    const std::vector<std::pair<const char*, Table>> metrics{
        {"relative_error", &pf::CellResult::relative_error},
        {"loading_correlation", &pf::CellResult::loading_correlation},
        {"factor_correlation", &pf::CellResult::factor_correlation},
        {"forecast_ratio", &pf::CellResult::forecast_ratio},
    };
    for (const auto& cell : report.cells)
        for (const auto& [name, member] : metrics)
            for (const auto& [est, s] : cell.*member)
                out << pf::to_string(cell.config.model) << ',' << pf::to_string(cell.config.errors) << ','
                    << cell.config.sigma_gamma << ',' << pf::to_string(est) << ',' << name << ',' << s.mean << ','
                    << s.std_error << ',' << s.count << ',' << cell.failures << ',' << cell.partial << '\n';
}

std::string cmd_simulate(const SimulateArgs& a, const Globals& g, Manifest& m) {
    std::vector<pf::Estimator> estimators;
    for (const auto& e : a.estimators) estimators.push_back(pf::parse_estimator(e));
    pf::SimConfig base;
    base.n = a.n;
    base.t = a.t;
    base.k = a.k;
    base.d = a.d;
    base.replications = a.reps;
    base.seed = a.seed;
    base.horizon = a.horizon;
    base.sieve = a.sieve.spec();
    base.huber = a.huber.config();
    std::vector<pf::SimConfig> cells;
    for (const auto& model : a.models)
        for (const auto& law : a.errors)
            for (double sigma : a.sigmas) {
                pf::SimConfig c = base;
                c.model = pf::parse_link_shape(model);
                c.errors = pf::parse_error_law(law);
                c.sigma_gamma = sigma;
                c.validate();
                cells.push_back(c);
            }
    m.set("seed", a.seed);
    m.begin();

    pf::SimReport report;
    int failures = 0;
    for (const auto& c : cells) {
        report.cells.push_back(pf::run_cell(c, estimators, g.threads));
        const auto& cell = report.cells.back();
        failures += cell.failures;
        if (cell.partial)
            std::cerr << "warning: cell model=" << pf::to_string(c.model) << " errors=" << pf::to_string(c.errors)
                      << " sigma=" << c.sigma_gamma << " is partial (" << cell.failures << " of " << c.replications
                      << " replications failed)\n";
        for (std::size_t r = 0; r < cell.replications.size(); ++r)
            if (!cell.replications[r].ok)
                std::cerr << "warning: replication " << r << " failed: " << cell.replications[r].failure << '\n';
    }
    pf::emit_tables(report, g.out_dir, estimators);
    for (const char* f : {"relative_error.csv", "loading_correlation.csv", "factor_correlation.csv",
                          "forecast_ratio.csv"})
        m.add_output(out_file(g.out_dir, f));
    const auto cells_path = out_file(g.out_dir, "cells.csv");
    write_cells(report, cells_path);
    m.add_output(cells_path);
    return "simulate: cells=" + std::to_string(cells.size()) + " reps=" + std::to_string(a.reps) +
           " failures=" + std::to_string(failures) + " tables=" + g.out_dir;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const pf::input_error*>(&e)) return 2;
    if (dynamic_cast<const pf::numerical_error*>(&e)) return 3;
    if (dynamic_cast<const pf::config_error*>(&e)) return 4;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return 2;
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Proxy-regressed factor models with forecasting"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(pf::version));
    Globals g;
    app.add_option("--threads", g.threads, "Worker threads (0 = all cores)")->capture_default_str();
    app.add_flag("--standardize,!--no-standardize", g.standardize,
                 "Z-score each series before estimation (estimate, test, forecast; on by default)")
        ->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "Directory for outputs and the run manifest")->capture_default_str();
    app.add_option("--orientation", g.orientation, "CSV layout: series in 'rows' or 'columns'")
        ->check(CLI::IsMember({"rows", "columns"}))
        ->capture_default_str();

    DiagnoseArgs diag;
    auto* diagnose = app.add_subcommand("diagnose", "Per-series excess kurtosis of a panel");
    diagnose->add_option("--panel", diag.panel, "Panel CSV")->required();
    diagnose->add_option("--threshold", diag.threshold, "Kurtosis flag threshold")->capture_default_str();

    EstimateArgs est;
    auto* estimate = app.add_subcommand("estimate", "Estimate loadings and factors");
    estimate->add_option("--panel", est.panel, "Panel CSV")->required();
    estimate->add_option("--proxies", est.proxies, "Proxy CSV (not needed for pca)");
    estimate->add_option("--estimator", est.estimator, "rpr, sievels, pca or int")
        ->check(CLI::IsMember({"rpr", "sievels", "pca", "int"}))
        ->capture_default_str();
    estimate->add_option("--k", est.k, "Number of factors");
    estimate->add_option("--select-k", est.select_k, "Choose K by information criterion up to this maximum");
    est.sieve.attach(estimate);
    est.huber.attach(estimate);

    TestArgs tst;
    auto* test = app.add_subcommand("test", "Test whether the proxies fully explain the factors");
    test->add_option("--panel", tst.panel, "Panel CSV")->required();
    test->add_option("--proxies", tst.proxies, "Proxy CSV");
    test->add_option("--estimator", tst.estimator, "rpr or sievels")
        ->check(CLI::IsMember({"rpr", "sievels"}))
        ->capture_default_str();
    test->add_option("--k", tst.k, "Number of factors");
    test->add_option("--select-k", tst.select_k, "Choose K by information criterion up to this maximum");
    test->add_option("--sigma-u", tst.sigma_u, "Idiosyncratic covariance: diagonal or soft")
        ->check(CLI::IsMember({"diagonal", "soft"}))
        ->capture_default_str();
    test->add_option("--threshold-c", tst.threshold_c, "Soft-threshold constant c")->capture_default_str();
    test->add_option("--sigma-u-alpha", tst.sigma_u_alpha, "Huber scale for robust covariances (default: fit's)");
    test->add_option("--gamma-level", tst.gamma_level, "Also write per-period confidence regions at this level");
    tst.sieve.attach(test);
    tst.huber.attach(test);

    ForecastArgs fc;
    auto* forecast = app.add_subcommand("forecast", "Rolling one-step forecasts of a target series");
    forecast->add_option("--panel", fc.panel, "Panel CSV")->required();
    forecast->add_option("--proxies", fc.proxies, "Proxy CSV");
    forecast->add_option("--target", fc.target, "Target CSV with periods in rows")->required();
    forecast->add_option("--target-column", fc.target_column, "Column of the target CSV (default: first)");
    forecast->add_option("--window", fc.window, "Rolling window length")->required();
    forecast->add_option("--model", fc.model, "linear or mindex")
        ->check(CLI::IsMember({"linear", "mindex"}))
        ->capture_default_str();
    forecast->add_option("--predictors", fc.predictors, "f, fw, fwi:<i> or w")->capture_default_str();
    forecast->add_option("--estimator", fc.estimator, "rpr, sievels, pca, pca2 or int")
        ->check(CLI::IsMember({"rpr", "sievels", "pca", "pca2", "int"}))
        ->capture_default_str();
    forecast->add_option("--k", fc.k, "Number of factors");
    forecast->add_option("--select-k", fc.select_k, "Choose K on the first window up to this maximum");
    forecast->add_option("--slices", fc.slices, "Slices for sliced inverse regression")->capture_default_str();
    forecast->add_flag("--center", fc.center, "Center predictors before whitening");
    fc.sieve.attach(forecast);
    fc.huber.attach(forecast);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo tables for the simulation designs");
    simulate->add_option("--model", sim.models, "I, II and/or III")->capture_default_str();
    simulate->add_option("--errors", sim.errors, "gaussian8, mixn, t3x2 and/or logn")->capture_default_str();
    simulate->add_option("--sigma", sim.sigmas, "Residual factor variances")->capture_default_str();
    simulate->add_option("--estimators", sim.estimators, "Subset of rpr, sievels, pca, int")
        ->delimiter(',')
        ->capture_default_str();
    simulate->add_option("--reps", sim.reps, "Replications per cell")->check(CLI::PositiveNumber)->capture_default_str();
    simulate->add_option("--seed", sim.seed, "Base seed")->capture_default_str();
    simulate->add_option("--n", sim.n, "Series")->capture_default_str();
    simulate->add_option("--t", sim.t, "Estimation periods")->capture_default_str();
    simulate->add_option("--k", sim.k, "Factors")->capture_default_str();
    simulate->add_option("--d", sim.d, "Proxies")->capture_default_str();
    simulate->add_option("--horizon", sim.horizon, "Rolling forecasts after the sample (0 disables)")
        ->capture_default_str();
    sim.sieve.attach(simulate);
    sim.huber.attach(simulate);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }

    CLI::App* sub = app.get_subcommands().front();
    std::optional<Manifest> manifest;
    try {
        manifest.emplace(g.out_dir, sub->get_name());
        manifest->record_flags(app, *sub, g.standardize);
        std::string summary;
        if (sub == diagnose)
            summary = cmd_diagnose(diag, g, *manifest);
        else if (sub == estimate)
            summary = cmd_estimate(est, g, *manifest);
        else if (sub == test)
            summary = cmd_test(tst, g, *manifest);
        else if (sub == forecast)
            summary = cmd_forecast(fc, g, *manifest);
        else
            summary = cmd_simulate(sim, g, *manifest);
        manifest->finish("ok", "", 0);
        std::cout << summary << std::endl;
        return 0;
    } catch (const std::exception& e) {
        const int code = exit_code_for(e);
        std::cerr << "error: " << e.what() << '\n';
        if (manifest) {
            try {
                manifest->finish("failed", e.what(), code);
            } catch (const std::exception&) {
            }
        }
        return code;
    }
}
