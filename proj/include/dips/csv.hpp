#pragma once

// Tabular CSV ingestion. One column holds labels (integers or strings); every
// other column must parse as a finite real number.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"

namespace dips {

using ColumnRef = std::variant<std::string, std::size_t>;

struct CsvDataset {
    Dataset dataset;
    /// Raw label text -> class index. Indices follow the sorted order of the
    /// raw values (numeric order when every label is an integer).
    std::map<std::string, ClassIndex> label_dictionary;
    bool labels_were_integers = false;
};

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
}

/// Splits one line on commas, honouring double-quoted fields.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    const char* first = s.data();
    if (*first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool parse_integer(const std::string& s, long long& out) {
    if (s.empty()) return false;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc() && ptr == s.data() + s.size();
}

}  // namespace detail

/// Loads a CSV file. Row and column numbers in ParseError are 1-based
/// positions in the file.
inline CsvDataset load_csv(const std::filesystem::path& path, const ColumnRef& label_column, bool has_header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV file: " + path.string());

    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;
    std::vector<std::string> header;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv_line(line);
        if (has_header && header.empty()) {
            header = std::move(cells);
            continue;
        }
        rows.push_back(std::move(cells));
        line_numbers.push_back(line_no);
    }
    if (rows.empty()) throw ParseError("CSV has no data rows", line_no, 0);

    const std::size_t width = has_header ? header.size() : rows.front().size();
    std::size_t label_idx = 0;
    if (std::holds_alternative<std::string>(label_column)) {
        if (!has_header) throw ArgumentError("label column by name requires a header row");
        const auto& name = std::get<std::string>(label_column);
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw ArgumentError("label column not found: " + name);
        label_idx = static_cast<std::size_t>(it - header.begin());
    } else {
        label_idx = std::get<std::size_t>(label_column);
    }
    if (label_idx >= width) throw ArgumentError("label column index out of range");
    if (width < 2) throw ArgumentError("CSV needs at least one feature column besides the label");

    // First pass: label vocabulary.
    bool all_int = true;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != width)
            throw ParseError("ragged row: expected " + std::to_string(width) + " cells, got " +
                                 std::to_string(rows[r].size()),
                             line_numbers[r], rows[r].size());
        long long v;
        if (!detail::parse_integer(rows[r][label_idx], v)) all_int = false;
        if (rows[r][label_idx].empty()) throw ParseError("empty label cell", line_numbers[r], label_idx + 1);
    }

    CsvDataset out;
    out.labels_were_integers = all_int;
    if (all_int) {
        std::map<long long, std::string> values;
        for (auto& row : rows) {
            long long v;
            detail::parse_integer(row[label_idx], v);
            values.emplace(v, std::to_string(v));
        }
        ClassIndex k = 0;
        for (auto& [v, text] : values) out.label_dictionary.emplace(text, k++);
    } else {
        std::map<std::string, int> values;
        for (auto& row : rows) values.emplace(row[label_idx], 0);
        ClassIndex k = 0;
        for (auto& [text, unused] : values) out.label_dictionary.emplace(text, k++);
    }
    if (out.label_dictionary.size() < 2) throw ArgumentError("label column holds a single class");

    // Second pass: features and mapped labels.
    Dataset& ds = out.dataset;
    ds.features = Matrix(rows.size(), width - 1);
    ds.labels = Labels(rows.size());
    ds.class_count = static_cast<int>(out.label_dictionary.size());
    for (std::size_t c = 0; c < width; ++c) {
        if (c == label_idx) continue;
        ds.feature_names.push_back(has_header ? header[c] : "f" + std::to_string(c));
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::size_t f = 0;
        for (std::size_t c = 0; c < width; ++c) {
            if (c == label_idx) continue;
            double v;
            if (!detail::parse_double(rows[r][c], v))
                throw ParseError("non-numeric or non-finite feature cell '" + rows[r][c] + "'", line_numbers[r], c + 1);
            ds.features(r, f++) = v;
        }
        std::string key = rows[r][label_idx];
        if (all_int) {
            long long v;
            detail::parse_integer(key, v);
            key = std::to_string(v);
        }
        (*ds.labels)[r] = out.label_dictionary.at(key);
    }
    return out;
}

inline void write_label_dictionary(const std::filesystem::path& path, const std::map<std::string, ClassIndex>& dict) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (auto& [k, v] : dict) j[k] = v;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write label dictionary: " + path.string());
    out << j.dump(2) << '\n';
}

}  // namespace dips
