#pragma once

// Long-format CSV ingestion (one row per unit-period), derived columns and
// panel export.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "panelqr/error.hpp"
#include "panelqr/panel.hpp"

namespace panelqr {

/// Splits one CSV record (comma separator, double-quote escaping).
inline std::vector<std::string> split_csv_record(std::string_view line) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        const char c = line[k];
        if (quoted) {
            if (c == '"') {
                if (k + 1 < line.size() && line[k + 1] == '"') {
                    field.push_back('"');
                    ++k;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else {
            field.push_back(c);
        }
    }
    if (quoted) throw Error(ErrorKind::ParseError, "unterminated quoted field");
    fields.push_back(std::move(field));
    return fields;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    /// File line number of each row (the header is line 1).
    std::vector<std::size_t> line_numbers;

    std::optional<std::size_t> column(std::string_view name) const {
        for (std::size_t c = 0; c < header.size(); ++c)
            if (header[c] == name) return c;
        return std::nullopt;
    }
};

inline CsvTable read_csv(std::istream& in) {
    CsvTable table;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        std::vector<std::string> fields;
        try {
            fields = split_csv_record(line);
        } catch (const Error&) {
            throw Error(ErrorKind::ParseError, "row " + std::to_string(line_no) + ": unterminated quoted field");
        }
        if (!have_header) {
            table.header = std::move(fields);
            have_header = true;
            continue;
        }
        if (fields.size() != table.header.size())
            throw Error(ErrorKind::ParseError, "row " + std::to_string(line_no) + ": expected " +
                                                   std::to_string(table.header.size()) + " fields, found " +
                                                   std::to_string(fields.size()));
        table.rows.push_back(std::move(fields));
        table.line_numbers.push_back(line_no);
    }
    if (!have_header) throw Error(ErrorKind::ParseError, "input has no header row");
    return table;
}

inline std::optional<double> parse_number(std::string_view text) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
    if (text.empty()) return std::nullopt;
    if (text.front() == '+') text.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
    return value;
}

enum class TransformOp { None, Log, Square };

struct ColumnTransform {
    std::string column;
    TransformOp op = TransformOp::None;
    std::string new_name;
};

/// Parses "col:op:new[,col:op:new...]" with op one of log, square, none.
inline std::vector<ColumnTransform> parse_transforms(std::string_view spec) {
    std::vector<ColumnTransform> out;
    std::size_t start = 0;
    while (start <= spec.size()) {
        const std::size_t end = std::min(spec.find(',', start), spec.size());
        const std::string_view item = spec.substr(start, end - start);
        start = end + 1;
        if (item.empty()) {
            if (end == spec.size()) break;
            continue;
        }
        const auto c1 = item.find(':');
        const auto c2 = c1 == std::string_view::npos ? c1 : item.find(':', c1 + 1);
        if (c2 == std::string_view::npos || item.find(':', c2 + 1) != std::string_view::npos)
            throw Error(ErrorKind::InvalidArgument, "transform '" + std::string(item) + "' is not of the form col:op:new");
        ColumnTransform t;
        t.column = std::string(item.substr(0, c1));
        const std::string_view op = item.substr(c1 + 1, c2 - c1 - 1);
        t.new_name = std::string(item.substr(c2 + 1));
        if (op == "log") t.op = TransformOp::Log;
        else if (op == "square") t.op = TransformOp::Square;
        else if (op == "none") t.op = TransformOp::None;
        else throw Error(ErrorKind::InvalidArgument, "unknown transform op '" + std::string(op) + "'");
        if (t.column.empty() || t.new_name.empty())
            throw Error(ErrorKind::InvalidArgument, "transform '" + std::string(item) + "' has an empty column name");
        out.push_back(std::move(t));
        if (end == spec.size()) break;
    }
    return out;
}

/// 17 significant digits: reads back to the same double.
inline std::string format_exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Fixed 6 significant digits for human-facing tables.
inline std::string format_table(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct PanelCsvSpec {
    std::string path;
    std::string unit_col;
    std::string time_col;
    std::string response_col;
    std::vector<std::string> covariate_cols;
    std::vector<ColumnTransform> transforms;
};

namespace detail {

inline void require_distinct(const std::vector<std::string>& names, const char* what) {
    std::set<std::string> seen;
    for (const auto& s : names)
        if (!seen.insert(s).second)
            throw Error(ErrorKind::InvalidArgument, std::string(what) + " '" + s + "' appears more than once");
}

} // namespace detail

/// Builds a balanced panel from a parsed long-format table. Units keep the
/// order of first appearance; periods are sorted numerically when every time
/// label is a number and lexicographically otherwise.
inline PanelDataset panel_from_table(const CsvTable& table, const PanelCsvSpec& spec) {
    auto need = [&](const std::string& name) {
        auto c = table.column(name);
        if (!c) throw Error(ErrorKind::ParseError, "column '" + name + "' not found in header");
        return *c;
    };
    detail::require_distinct(table.header, "header column");
    const std::size_t unit_c = need(spec.unit_col), time_c = need(spec.time_col);

    // Numeric columns: raw ones on demand, derived ones from transforms.
    std::unordered_map<std::string, std::vector<double>> columns;
    auto numeric = [&](const std::string& name) -> const std::vector<double>& {
        if (auto it = columns.find(name); it != columns.end()) return it->second;
        const std::size_t c = need(name);
        std::vector<double> values(table.rows.size());
        for (std::size_t r = 0; r < table.rows.size(); ++r) {
            const auto v = parse_number(table.rows[r][c]);
            if (!v)
                throw Error(ErrorKind::ParseError, "row " + std::to_string(table.line_numbers[r]) + ": column '" + name +
                                                       "' value '" + table.rows[r][c] + "' is not a finite number");
            values[r] = *v;
        }
        return columns.emplace(name, std::move(values)).first->second;
    };
    for (const auto& t : spec.transforms) {
        if (t.new_name != t.column && (columns.contains(t.new_name) || table.column(t.new_name)))
            throw Error(ErrorKind::InvalidArgument, "transform output '" + t.new_name + "' already exists");
        std::vector<double> values = numeric(t.column);
        for (std::size_t r = 0; r < values.size(); ++r) {
            double& v = values[r];
            if (t.op == TransformOp::Log) {
                if (!(v > 0.0))
                    throw Error(ErrorKind::NonPositiveLog, "row " + std::to_string(table.line_numbers[r]) +
                                                               ": log of non-positive '" + t.column + "' value " +
                                                               format_exact(v));
                v = std::log(v);
            } else if (t.op == TransformOp::Square) {
                v = v * v;
            }
        }
        columns.insert_or_assign(t.new_name, std::move(values));
    }
    detail::require_distinct(spec.covariate_cols, "covariate");
    const std::vector<double>& response = numeric(spec.response_col);
    std::vector<const std::vector<double>*> covs;
    for (const auto& name : spec.covariate_cols) covs.push_back(&numeric(name));

    std::vector<std::string> units;
    std::unordered_map<std::string, std::size_t> unit_index;
    std::set<std::string> time_set;
    for (const auto& row : table.rows) {
        if (unit_index.emplace(row[unit_c], units.size()).second) units.push_back(row[unit_c]);
        time_set.insert(row[time_c]);
    }
    std::vector<std::string> times(time_set.begin(), time_set.end());
    if (std::all_of(times.begin(), times.end(), [](const std::string& s) { return parse_number(s).has_value(); }))
        std::stable_sort(times.begin(), times.end(),
                         [](const std::string& a, const std::string& b) { return *parse_number(a) < *parse_number(b); });
    std::unordered_map<std::string, std::size_t> time_index;
    for (std::size_t t = 0; t < times.size(); ++t) time_index.emplace(times[t], t);

    const std::size_t n = units.size(), T = times.size(), p = covs.size();
    if (n == 0) throw Error(ErrorKind::ParseError, "input has no data rows");
    std::vector<long> cell(n * T, -1);
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const std::size_t i = unit_index.at(table.rows[r][unit_c]), t = time_index.at(table.rows[r][time_c]);
        long& slot = cell[i * T + t];
        if (slot >= 0)
            throw Error(ErrorKind::DuplicateCell, "row " + std::to_string(table.line_numbers[r]) + ": unit '" + units[i] +
                                                      "' period '" + times[t] + "' already appeared on row " +
                                                      std::to_string(table.line_numbers[static_cast<std::size_t>(slot)]));
        slot = static_cast<long>(r);
    }
    std::vector<std::string> incomplete;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < T; ++t)
            if (cell[i * T + t] < 0) {
                incomplete.push_back(units[i]);
                break;
            }
    if (!incomplete.empty()) {
        std::string list;
        for (const auto& u : incomplete) list += (list.empty() ? "" : ", ") + u;
        throw Error(ErrorKind::UnbalancedPanel, "units missing periods: " + list + " (expected " + std::to_string(T) +
                                                    " periods each)");
    }

    Eigen::VectorXd y(static_cast<Eigen::Index>(n * T));
    Eigen::MatrixXd X(static_cast<Eigen::Index>(n * T), static_cast<Eigen::Index>(p));
    for (std::size_t k = 0; k < n * T; ++k) {
        const auto r = static_cast<std::size_t>(cell[k]);
        y[static_cast<Eigen::Index>(k)] = response[r];
        for (std::size_t j = 0; j < p; ++j) X(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) = (*covs[j])[r];
    }
    return PanelDataset(n, T, std::move(y), std::move(X), std::move(units), std::move(times), spec.covariate_cols);
}

inline PanelDataset load_panel(std::istream& in, const PanelCsvSpec& spec) { return panel_from_table(read_csv(in), spec); }

inline PanelDataset load_panel(const PanelCsvSpec& spec) {
    std::ifstream in(spec.path);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open '" + spec.path + "'");
    return load_panel(in, spec);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

/// Long-format export: unit,time,<response>,<covariates...> at full precision.
inline void write_panel_csv(const PanelDataset& data, std::ostream& out, const std::string& response_name = "y") {
    out << "unit,time," << csv_escape(response_name);
    for (const auto& name : data.covariate_names()) out << ',' << csv_escape(name);
    out << '\n';
    for (std::size_t i = 0; i < data.n(); ++i)
        for (std::size_t t = 0; t < data.T(); ++t) {
            out << csv_escape(data.unit_labels()[i]) << ',' << csv_escape(data.time_labels()[t]) << ','
                << format_exact(data.y(i, t));
            for (std::size_t j = 0; j < data.p(); ++j) out << ',' << format_exact(data.x(i, t, j));
            out << '\n';
        }
}

struct TurningPoint {
    double value = 0.0;
    /// beta1 > 0 and beta2 < 0: an inverted U.
    bool inverted_u = false;
};

/// Stationary point -beta1 / (2 beta2) of beta1 x + beta2 x^2.
inline TurningPoint turning_point(double beta1, double beta2) {
    if (beta2 == 0.0) throw Error(ErrorKind::ZeroQuadraticTerm, "quadratic coefficient is zero");
    return {-beta1 / (2.0 * beta2), beta1 > 0.0 && beta2 < 0.0};
}

} // namespace panelqr
