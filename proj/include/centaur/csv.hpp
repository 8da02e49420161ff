#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "centaur/datasets.hpp"
#include "centaur/error.hpp"

namespace centaur {

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            cells.push_back(line.substr(start));
            return cells;
        }
        cells.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline double parse_real(std::string_view cell, std::size_t line) {
    cell = trim(cell);
    if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (ec != std::errc() || ptr != cell.data() + cell.size() || cell.empty())
        throw ParseError("non-numeric cell '" + std::string(cell) + "'", line);
    if (!std::isfinite(v)) throw ParseError("non-finite cell '" + std::string(cell) + "'", line);
    return v;
}

inline std::string format_real(double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(n));
}

}  // namespace detail

/// Reads a UTF-8 CSV with a header row whose last column is the label. When `task` is not
/// given, all-{0,1} labels mean binary and anything else means regression.
inline LabeledDataset parse_csv(std::istream& in, std::optional<TaskKind> task = std::nullopt) {
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw EmptyDataError("CSV has no header row");
    ++line_no;
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = detail::split_commas(line);
    if (header.size() < 2) throw ParseError("header needs at least one feature and a label column", 1);

    LabeledDataset ds;
    for (std::size_t j = 0; j + 1 < header.size(); ++j)
        ds.feature_names.emplace_back(detail::trim(header[j]));
    const std::size_t d = ds.feature_names.size();
    ds.features.cols = d;

    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_commas(line);
        if (cells.size() != d + 1)
            throw ParseError("ragged row: expected " + std::to_string(d + 1) + " cells, got " +
                                 std::to_string(cells.size()),
                             line_no);
        for (std::size_t j = 0; j < d; ++j) ds.features.data.push_back(detail::parse_real(cells[j], line_no));
        ds.labels.push_back(detail::parse_real(cells[d], line_no));
    }
    ds.features.rows = ds.labels.size();
    if (ds.empty()) throw EmptyDataError("CSV has a header but no records");

    if (task) {
        ds.task = *task;
    } else {
        ds.task = std::all_of(ds.labels.begin(), ds.labels.end(), [](double y) { return y == 0.0 || y == 1.0; })
                      ? TaskKind::binary
                      : TaskKind::regression;
    }
    return ds;
}

inline LabeledDataset load_csv(const std::string& path, std::optional<TaskKind> task = std::nullopt) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "' for reading");
    return parse_csv(in, task);
}

inline void write_csv(const LabeledDataset& ds, std::ostream& out, const std::string& label_name = "label") {
    for (const auto& name : ds.feature_names) out << name << ',';
    out << label_name << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.row(i)) out << detail::format_real(v) << ',';
        out << detail::format_real(ds.labels[i]) << '\n';
    }
}

inline void save_csv(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    write_csv(ds, out);
}

}  // namespace centaur
