// Writes a synthetic monthly panel with proxies and a one-step-ahead target.
#include <proxyfactor.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace pf = proxyfactor;

namespace {

void write_table(const std::string& path, const std::string& corner, const std::vector<std::string>& rows,
                 const std::vector<std::string>& cols, const pf::Matrix& values, int digits) {
    std::ofstream out(path);
    if (!out) throw pf::input_error("cannot write file: " + path);
    out << corner;
    for (const auto& c : cols) out << ',' << c;
    out << '\n';
    char buf[32];
    for (pf::Index r = 0; r < values.rows(); ++r) {
        out << rows[static_cast<std::size_t>(r)];
        for (pf::Index c = 0; c < values.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.*g", digits, values(r, c));
            out << ',' << buf;
        }
        out << '\n';
    }
}

std::vector<std::string> month_labels(pf::Index count, int first_year) {
    std::vector<std::string> out;
    char buf[16];
    for (pf::Index t = 0; t < count; ++t) {
        std::snprintf(buf, sizeof buf, "%04d-%02d", first_year + static_cast<int>(t / 12), static_cast<int>(t % 12) + 1);
        out.emplace_back(buf);
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synthetic panel, proxies and target for forecast dry runs"};
    std::string out_dir = "samples";
    pf::Index n = 131;
    pf::Index t = 480;
    pf::Index d = 8;
    pf::Index k = 4;
    double gamma_sd = 0.5;
    std::uint64_t seed = 7;
    double noise_scale = 1.5;
    pf::Index heavy_rows = -1;
    std::string link = "sine";
    int digits = 6;
    app.add_option("--out-dir", out_dir)->capture_default_str();
    app.add_option("--n", n)->capture_default_str();
    app.add_option("--t", t)->capture_default_str();
    app.add_option("--d", d)->capture_default_str();
    app.add_option("--k", k)->capture_default_str();
    app.add_option("--gamma-sd", gamma_sd)->capture_default_str();
    app.add_option("--seed", seed)->capture_default_str();
    app.add_option("--noise-scale", noise_scale, "Scale of the idiosyncratic noise")->capture_default_str();
    app.add_option("--heavy-rows", heavy_rows, "Series with t3 noise; the rest are Gaussian (-1 = all)")
        ->capture_default_str();
    app.add_option("--link", link, "Proxy-to-factor map: sine or linear")
        ->check(CLI::IsMember({"sine", "linear"}))
        ->capture_default_str();
    app.add_option("--digits", digits, "Significant digits written")->check(CLI::Range(1, 17))->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> z(0.0, 1.0);
        std::student_t_distribution<double> t3(3.0);
        std::uniform_real_distribution<double> unit(-1.0, 1.0);

        // Persistent proxies, factors loading on smooth functions of them,
        // heavy-tailed idiosyncratic noise.
        pf::Matrix w(d, t);
        pf::Vector state = pf::Vector::Zero(d);
        for (pf::Index s = 0; s < t; ++s) {
            for (pf::Index c = 0; c < d; ++c) state(c) = 0.8 * state(c) + 0.6 * z(rng);
            w.col(s) = state;
        }
        pf::Matrix mixing(k, d);
        for (auto& v : mixing.reshaped()) v = unit(rng);
        pf::Matrix f(k, t);
        for (pf::Index s = 0; s < t; ++s) {
            const pf::Vector g = link == "linear" ? pf::Vector(mixing * w.col(s))
                                                  : pf::Vector(mixing * w.col(s).array().sin().matrix() +
                                                               0.3 * mixing * w.col(s));
            for (pf::Index j = 0; j < k; ++j) f(j, s) = g(j) + gamma_sd * z(rng);
        }
        pf::Matrix loadings(n, k);
        for (auto& v : loadings.reshaped()) v = z(rng);
        pf::Matrix x = loadings * f;
        const pf::Index heavy = heavy_rows < 0 ? n : heavy_rows;
        for (pf::Index c = 0; c < t; ++c)
            for (pf::Index i = 0; i < n; ++i) x(i, c) += noise_scale * (i < heavy ? t3(rng) : z(rng));

        pf::Vector beta(k);
        for (auto& v : beta) v = unit(rng);
        pf::Matrix y(t, 1);
        y(0, 0) = z(rng);
        for (pf::Index s = 1; s < t; ++s) y(s, 0) = beta.dot(f.col(s - 1)) + 0.5 * z(rng);

        std::filesystem::create_directories(out_dir);
        const auto months = month_labels(t, 1980);
        const auto dir = std::filesystem::path(out_dir);
        write_table((dir / "panel.csv").string(), "series", pf::csv::numbered("x", n), months, x, digits);
        write_table((dir / "proxies.csv").string(), "proxy", pf::csv::numbered("w", d), months, w, digits);
        write_table((dir / "target.csv").string(), "time", months, {"y"}, y, digits);
        std::cout << "wrote " << n << "x" << t << " panel, " << d << " proxies and target to " << out_dir << std::endl;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
