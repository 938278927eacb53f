#pragma once

// Comma-separated tables with a header row, and their conversion into model
// sequences. Cells are kept as text so a canonical file writes back unchanged.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "latmark/errors.hpp"
#include "latmark/model.hpp"

namespace latmark {

struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t k = 0; k < header.size(); ++k)
      if (header[k] == name) return k;
    return std::nullopt;
  }

  std::size_t column(const std::string& name) const {
    if (auto k = find(name)) return *k;
    detail::invalid(source + ": no column named '" + name + "'");
  }

  // 1-based file line of data row r
  std::size_t line_of(std::size_t r) const { return r + 2; }
};

namespace detail {

inline std::string where(const std::string& source, std::size_t line) {
  return source + ":" + std::to_string(line) + ": ";
}

inline std::vector<std::string> split_csv_line(const std::string& line, const std::string& source, std::size_t lineno) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"' && cell.empty()) {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  if (quoted) invalid(where(source, lineno) + "unterminated quoted field");
  out.push_back(std::move(cell));
  return out;
}

inline std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

}  // namespace detail

inline Table read_csv(std::istream& in, const std::string& source) {
  Table t;
  t.source = source;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      t.header = detail::split_csv_line(line, source, lineno);
      for (std::size_t k = 0; k < t.header.size(); ++k) {
        if (t.header[k].empty()) detail::invalid(detail::where(source, 1) + "empty column name");
        for (std::size_t j = 0; j < k; ++j)
          if (t.header[j] == t.header[k]) detail::invalid(detail::where(source, 1) + "duplicate column '" + t.header[k] + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line, source, lineno);
    if (cells.size() != t.header.size()) {
      detail::invalid(detail::where(source, lineno) + "expected " + std::to_string(t.header.size()) + " fields, found " +
                      std::to_string(cells.size()));
    }
    t.rows.push_back(std::move(cells));
  }
  if (lineno == 0) detail::invalid(source + ": empty file, expected a header row");
  return t;
}

inline Table read_csv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) detail::invalid(path + ": cannot open file");
  return read_csv(in, path);
}

inline void write_csv(std::ostream& out, const Table& t) {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) {
      if (k > 0) out << ',';
      out << detail::quote_if_needed(cells[k]);
    }
    out << '\n';
  };
  line(t.header);
  for (const auto& r : t.rows) line(r);
}

inline void write_csv_file(const std::string& path, const Table& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) detail::invalid(path + ": cannot write file");
  write_csv(out, t);
}

// Shortest text that reads back to the same double; NaN becomes an empty cell.
inline std::string format_double(double x) {
  if (std::isnan(x)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const char* first = s.data();
  if (*first == '+') ++first;
  double v = 0.0;
  const auto res = std::from_chars(first, s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// ---- dataset ingestion ------------------------------------------------------

// Which table columns feed the model.
struct DataLayout {
  std::string id_column;                       // empty: one sequence
  std::string time_column;                     // required for continuous-time classes
  std::vector<std::string> value_columns;      // one per emission component
  std::vector<std::string> covariate_columns;  // emission covariates, by index
  std::vector<std::string> tpm_covariates;     // hmm t.p.m. predictors
};

inline Dataset build_dataset(const Table& t, const DataLayout& layout, ModelClass cls) {
  const std::string& src = t.source;
  auto col = [&](const std::string& name) { return t.column(name); };
  std::optional<std::size_t> id_col, time_col;
  if (!layout.id_column.empty()) id_col = col(layout.id_column);
  if (!layout.time_column.empty()) time_col = col(layout.time_column);
  if (is_continuous_time(cls) && !time_col) detail::invalid(src + ": model class '" + class_name(cls) + "' needs data.time");
  std::vector<std::size_t> values, covs, preds;
  for (const auto& c : layout.value_columns) values.push_back(col(c));
  for (const auto& c : layout.covariate_columns) covs.push_back(col(c));
  for (const auto& c : layout.tpm_covariates) preds.push_back(col(c));

  auto number = [&](std::size_t r, std::size_t k, bool allow_missing) {
    const auto& cell = t.rows[r][k];
    if (cell.empty()) {
      if (allow_missing) return kMissing;
      detail::invalid(detail::where(src, t.line_of(r)) + "column '" + t.header[k] + "' may not be empty");
    }
    const auto v = parse_double(cell);
    if (!v || !std::isfinite(*v)) {
      detail::invalid(detail::where(src, t.line_of(r)) + "column '" + t.header[k] + "': '" + cell + "' is not a finite number");
    }
    return *v;
  };

  Dataset data;
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string id = id_col ? t.rows[r][*id_col] : std::string();
    auto [it, fresh] = index.try_emplace(id, data.size());
    if (fresh) {
      data.emplace_back();
      data.back().id = id;
    }
    Sequence& s = data[it->second];
    if (time_col) {
      const double time = number(r, *time_col, false);
      if (!s.times.empty() && !(time > s.times.back())) {
        detail::invalid(detail::where(src, t.line_of(r)) + "times must be strictly increasing within id '" + id + "'");
      }
      s.times.push_back(time);
    }
    Observation x;
    for (std::size_t k : values) x.values.push_back(number(r, k, true));
    for (std::size_t k : covs) x.covariates.push_back(number(r, k, false));
    s.obs.push_back(std::move(x));
    s.rows.push_back(r);
  }
  if (!preds.empty()) {
    for (auto& s : data) {
      s.design = Matrix::Ones(static_cast<Eigen::Index>(s.length()), static_cast<Eigen::Index>(preds.size()) + 1);
      for (std::size_t i = 0; i < s.length(); ++i)
        for (std::size_t k = 0; k < preds.size(); ++k)
          s.design(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k) + 1) = number(s.rows[i], preds[k], false);
    }
  }
  if (data.empty()) detail::invalid(src + ": no data rows");
  return data;
}

}  // namespace latmark
