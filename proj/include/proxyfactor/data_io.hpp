#pragma once

#include "core.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace proxyfactor {

enum class Orientation { series_in_rows, series_in_columns };

// N x T panel; row i is series series_ids[i], column t is period time_ids[t].
struct PanelMatrix {
    Matrix values;
    std::vector<std::string> series_ids;
    std::vector<std::string> time_ids;

    Index n_series() const { return values.rows(); }
    Index n_periods() const { return values.cols(); }
};

// d x T observed covariates aligned with a panel.
struct ProxyMatrix {
    Matrix values;
    std::vector<std::string> proxy_ids;
    std::vector<std::string> time_ids;

    Index n_proxies() const { return values.rows(); }
    Index n_periods() const { return values.cols(); }
};

struct KurtosisReport {
    std::vector<std::string> series_ids;
    std::vector<double> excess_kurtosis;
    double threshold = 6.0;
    std::size_t count_above = 0;
};

namespace csv {

struct LabeledTable {
    std::vector<std::string> row_labels;
    std::vector<std::string> col_labels;
    Matrix values;
};

inline std::string_view trim(std::string_view s) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell.push_back('"');
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            cells.emplace_back(trim(cell));
            cell.clear();
        } else {
            cell.push_back(c);
        }
    }
    cells.emplace_back(trim(cell));
    return cells;
}

inline bool parse_number(std::string_view text, double& out) {
    text = trim(text);
    if (text.empty()) return false;
    if (text.front() == '+') text.remove_prefix(1);
    const char* end = text.data() + text.size();
    const auto result = std::from_chars(text.data(), end, out);
    return result.ec == std::errc() && result.ptr == end && std::isfinite(out);
}

// Reads a table whose first row holds column labels and whose first column
// holds row labels. Every other cell must be a finite number.
inline LabeledTable read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw input_error("cannot open file: " + path);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        rows.push_back(split_line(line));
        line_numbers.push_back(line_no);
    }
    if (rows.size() < 2) throw input_error(path + ": need a header row and at least one data row");
    LabeledTable table;
    const auto& header = rows.front();
    if (header.size() < 2) throw input_error(path + ": header has no data columns");
    table.col_labels.assign(header.begin() + 1, header.end());
    const std::size_t width = table.col_labels.size();
    table.values.resize(static_cast<Index>(rows.size() - 1), static_cast<Index>(width));

    std::vector<std::string> short_rows;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& cells = rows[r];
        if (cells.size() != width + 1) {
            short_rows.push_back("line " + std::to_string(line_numbers[r]) + " has " +
                                 std::to_string(cells.size()) + " cells, expected " +
                                 std::to_string(width + 1));
            continue;
        }
        table.row_labels.push_back(cells[0]);
        for (std::size_t c = 0; c < width; ++c) {
            double v = 0.0;
            if (!parse_number(cells[c + 1], v)) {
                throw input_error(path + ": non-numeric or missing value '" + cells[c + 1] + "' at line " +
                                  std::to_string(line_numbers[r]) + ", column " + std::to_string(c + 2) +
                                  " (row '" + cells[0] + "', column '" + table.col_labels[c] + "')");
            }
            table.values(static_cast<Index>(r - 1), static_cast<Index>(c)) = v;
        }
    }
    if (!short_rows.empty()) {
        std::string msg = path + ": rows with missing cells:";
        for (const auto& s : short_rows) msg += "\n  " + s;
        throw input_error(msg);
    }
    return table;
}

inline void write(const std::string& path, const std::string& corner, const std::vector<std::string>& row_labels,
                  const std::vector<std::string>& col_labels, const Matrix& values) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot write file: " + path);
    out << corner;
    for (const auto& c : col_labels) out << ',' << c;
    out << '\n';
    char buf[40];
    for (Index r = 0; r < values.rows(); ++r) {
        out << row_labels[static_cast<std::size_t>(r)];
        for (Index c = 0; c < values.cols(); ++c) {
            std::snprintf(buf, sizeof buf, "%.17g", values(r, c));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) throw input_error("failed while writing " + path);
}

inline std::vector<std::string> numbered(const std::string& prefix, Index count) {
    std::vector<std::string> out;
    for (Index i = 1; i <= count; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

}  // namespace csv

namespace detail {

inline void require_unique(const std::vector<std::string>& labels, const std::string& what, const std::string& path) {
    std::unordered_set<std::string> seen;
    for (const auto& l : labels) {
        if (!seen.insert(l).second) throw input_error(path + ": duplicate " + what + " label '" + l + "'");
    }
}

}  // namespace detail

inline PanelMatrix load_panel(const std::string& path, Orientation orientation = Orientation::series_in_rows) {
    auto table = csv::read(path);
    PanelMatrix panel;
    if (orientation == Orientation::series_in_rows) {
        panel.values = std::move(table.values);
        panel.series_ids = std::move(table.row_labels);
        panel.time_ids = std::move(table.col_labels);
    } else {
        panel.values = table.values.transpose();
        panel.series_ids = std::move(table.col_labels);
        panel.time_ids = std::move(table.row_labels);
    }
    detail::require_unique(panel.series_ids, "series", path);
    detail::require_unique(panel.time_ids, "time", path);
    for (Index i = 0; i < panel.n_series(); ++i) {
        const auto row = panel.values.row(i);
        if (row.maxCoeff() == row.minCoeff())
            throw input_error(path + ": series '" + panel.series_ids[static_cast<std::size_t>(i)] +
                              "' has zero variance");
    }
    return panel;
}

inline void save_panel(const PanelMatrix& panel, const std::string& path) {
    csv::write(path, "series", panel.series_ids, panel.time_ids, panel.values);
}

inline ProxyMatrix load_proxies(const std::string& path, Orientation orientation = Orientation::series_in_rows) {
    auto table = csv::read(path);
    ProxyMatrix proxies;
    if (orientation == Orientation::series_in_rows) {
        proxies.values = std::move(table.values);
        proxies.proxy_ids = std::move(table.row_labels);
        proxies.time_ids = std::move(table.col_labels);
    } else {
        proxies.values = table.values.transpose();
        proxies.proxy_ids = std::move(table.col_labels);
        proxies.time_ids = std::move(table.row_labels);
    }
    detail::require_unique(proxies.proxy_ids, "proxy", path);
    detail::require_unique(proxies.time_ids, "time", path);
    for (Index i = 0; i < proxies.n_proxies(); ++i) {
        const auto row = proxies.values.row(i);
        if (row.maxCoeff() == row.minCoeff())
            throw input_error(path + ": proxy '" + proxies.proxy_ids[static_cast<std::size_t>(i)] +
                              "' has zero variance");
    }
    return proxies;
}

inline void save_proxies(const ProxyMatrix& proxies, const std::string& path) {
    csv::write(path, "proxy", proxies.proxy_ids, proxies.time_ids, proxies.values);
}

inline void require_aligned(const PanelMatrix& panel, const ProxyMatrix& proxies) {
    if (panel.time_ids != proxies.time_ids)
        throw input_error("proxy time labels do not match the panel time labels");
}

// Reads one named column of a table laid out with periods in rows. The
// period labels must match `time_ids`.
inline Vector load_target(const std::string& path, const std::string& column,
                          const std::vector<std::string>& time_ids) {
    const auto table = csv::read(path);
    Index col = -1;
    if (column.empty()) {
        col = 0;
    } else {
        for (std::size_t c = 0; c < table.col_labels.size(); ++c)
            if (table.col_labels[c] == column) col = static_cast<Index>(c);
    }
    if (col < 0) throw input_error(path + ": no column named '" + column + "'");
    if (table.row_labels != time_ids) throw input_error(path + ": time labels do not match the panel time labels");
    return table.values.col(col);
}

// Population excess kurtosis m4 / m2^2 - 3.
inline double excess_kurtosis(const Eigen::Ref<const Vector>& x) {
    if (x.size() < 4) throw config_error("excess kurtosis needs at least 4 observations");
    const double mean = x.mean();
    const Vector c = x.array() - mean;
    const double m2 = c.squaredNorm() / static_cast<double>(x.size());
    const double m4 = c.array().pow(4).sum() / static_cast<double>(x.size());
    if (m2 <= 0.0) throw numerical_error("excess kurtosis of a constant series is undefined");
    return m4 / (m2 * m2) - 3.0;
}

inline KurtosisReport kurtosis_report(const PanelMatrix& panel, double threshold = 6.0) {
    KurtosisReport report;
    report.threshold = threshold;
    report.series_ids = panel.series_ids;
    for (Index i = 0; i < panel.n_series(); ++i) {
        const double k = excess_kurtosis(panel.values.row(i).transpose());
        report.excess_kurtosis.push_back(k);
        if (k > threshold) ++report.count_above;
    }
    return report;
}

inline void write_kurtosis_csv(const KurtosisReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw input_error("cannot write file: " + path);
    out << "series_id,excess_kurtosis\n" << std::setprecision(17);
    for (std::size_t i = 0; i < report.series_ids.size(); ++i)
        out << report.series_ids[i] << ',' << report.excess_kurtosis[i] << '\n';
}

inline std::string kurtosis_summary(const KurtosisReport& report) {
    std::ostringstream s;
    s << report.count_above << " of " << report.series_ids.size() << " series have excess kurtosis above "
      << report.threshold;
    return s.str();
}

// Demeans each row and scales it to unit population variance.
inline Matrix standardize_rows(const Matrix& x) {
    Matrix out = x;
    for (Index i = 0; i < out.rows(); ++i) {
        auto row = out.row(i);
        row.array() -= row.mean();
        const double sd = std::sqrt(row.squaredNorm() / static_cast<double>(row.size()));
        if (sd <= 0.0) throw numerical_error("cannot standardize a constant row");
        row /= sd;
    }
    return out;
}

}  // namespace proxyfactor
