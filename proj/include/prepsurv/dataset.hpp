#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "prepsurv/error.hpp"
#include "prepsurv/random.hpp"

namespace prepsurv {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ColumnKind { Numeric, Categorical, Time, Event };

struct ColumnMeta {
  std::string name;
  ColumnKind kind = ColumnKind::Numeric;
  std::vector<std::string> categories;  // Categorical only, first-occurrence order

  bool is_feature() const { return kind == ColumnKind::Numeric || kind == ColumnKind::Categorical; }
  bool operator==(const ColumnMeta&) const = default;
};

/// Feature matrix with an explicit observation mask plus the survival outcome.
///
/// `columns` lists every column in file order, including the Time and Event
/// columns; `values`/`mask` hold only the feature columns, in the same order.
/// Categorical cells store the index of their label in ColumnMeta::categories.
/// Cells with mask == false carry NaN and are never read.
struct SurvivalDataset {
  std::vector<ColumnMeta> columns;
  RowMatrix values;
  MaskMatrix mask;
  Eigen::VectorXd time;
  Eigen::VectorXd event;

  std::size_t n_rows() const { return static_cast<std::size_t>(time.size()); }
  std::size_t n_features() const { return static_cast<std::size_t>(values.cols()); }

  std::vector<std::size_t> feature_column_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c].is_feature()) out.push_back(c);
    return out;
  }

  const ColumnMeta& feature(std::size_t j) const { return columns[feature_column_indices().at(j)]; }

  std::vector<std::string> feature_names() const {
    std::vector<std::string> out;
    for (const auto& c : columns)
      if (c.is_feature()) out.push_back(c.name);
    return out;
  }

  /// Index of a feature by name, or npos.
  std::size_t feature_index(std::string_view name) const {
    std::size_t j = 0;
    for (const auto& c : columns) {
      if (!c.is_feature()) continue;
      if (c.name == name) return j;
      ++j;
    }
    return npos;
  }

  const ColumnMeta& time_column() const { return find_kind(ColumnKind::Time); }
  const ColumnMeta& event_column() const { return find_kind(ColumnKind::Event); }

  bool is_complete() const { return mask.size() == 0 || mask.all(); }
  std::size_t n_events() const { return static_cast<std::size_t>(event.sum()); }

  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * values.cols(), static_cast<std::size_t>(values.cols())};
  }

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

 private:
  const ColumnMeta& find_kind(ColumnKind kind) const {
    for (const auto& c : columns)
      if (c.kind == kind) return c;
    fail(ErrorCode::SchemaMismatch, "dataset has no column of the requested kind");
  }
};

/// Column-kind assignment for CSV ingestion. Unlisted columns are numeric.
struct Schema {
  std::string time;
  std::string event;
  std::set<std::string> categorical;
  std::set<std::string> ignore;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Separator-delimited fields; double-quoted fields may contain the
// separator and "" for a literal quote.
inline std::vector<std::string> split_fields(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (true) {
    std::size_t j = i;
    while (j < line.size() && (line[j] == ' ' || line[j] == '\t')) ++j;
    if (j < line.size() && line[j] == '"') {
      std::string field;
      for (++j; j < line.size(); ++j) {
        if (line[j] != '"') field += line[j];
        else if (j + 1 < line.size() && line[j + 1] == '"') field += '"', ++j;
        else break;
      }
      auto pos = line.find(sep, j);
      out.push_back(std::move(field));
      if (pos == std::string_view::npos) break;
      i = pos + 1;
      continue;
    }
    auto pos = line.find(sep, i);
    out.emplace_back(trim(line.substr(i, pos == std::string_view::npos ? std::string_view::npos : pos - i)));
    if (pos == std::string_view::npos) break;
    i = pos + 1;
  }
  return out;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

inline bool is_missing_token(std::string_view s) { return s.empty() || s == "NA"; }

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Parses the schema text format: `key=value[,value...]` lines with keys
/// time, event, categorical, ignore. `#` starts a comment.
inline Schema parse_schema(std::string_view text) {
  Schema schema;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto body = detail::trim(line);
    if (body.empty()) continue;
    auto eq = body.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorCode::ConfigError, "schema line " + std::to_string(line_no) + ": expected key=value");
    auto key = std::string(detail::trim(body.substr(0, eq)));
    auto values = detail::split_fields(body.substr(eq + 1));
    if (key == "time" || key == "event") {
      if (values.size() != 1 || values[0].empty())
        fail(ErrorCode::ConfigError, "schema line " + std::to_string(line_no) + ": " + key + " takes one column");
      (key == "time" ? schema.time : schema.event) = values[0];
    } else if (key == "categorical" || key == "ignore") {
      for (auto& v : values)
        if (!v.empty()) (key == "categorical" ? schema.categorical : schema.ignore).insert(v);
    } else {
      fail(ErrorCode::ConfigError, "schema line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  if (schema.time.empty() || schema.event.empty())
    fail(ErrorCode::ConfigError, "schema must name a time and an event column");
  return schema;
}

inline Schema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::ConfigError, "cannot open schema file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_schema(ss.str());
}

/// Parses CSV text. Empty fields and the token "NA" are missing.
inline SurvivalDataset parse_csv(std::string_view text, const Schema& schema) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) fail(ErrorCode::EmptyFile, "no header row");
  auto header = detail::split_fields(line);

  if (schema.time == schema.event) fail(ErrorCode::SchemaMismatch, "time and event must be different columns");
  auto in_header = [&](const std::string& name) { return std::find(header.begin(), header.end(), name) != header.end(); };
  for (const auto& name : {schema.time, schema.event})
    if (!in_header(name)) fail(ErrorCode::SchemaMismatch, "column '" + name + "' not in header");
  for (const auto* set : {&schema.categorical, &schema.ignore})
    for (const auto& name : *set) {
      if (!in_header(name)) fail(ErrorCode::SchemaMismatch, "column '" + name + "' not in header");
      if (name == schema.time || name == schema.event)
        fail(ErrorCode::SchemaMismatch, "outcome column '" + name + "' cannot be categorical or ignored");
    }
  {
    std::set<std::string> unique(header.begin(), header.end());
    if (unique.size() != header.size()) fail(ErrorCode::SchemaMismatch, "duplicate header names");
  }

  SurvivalDataset ds;
  std::vector<int> source_to_feature(header.size(), -1);
  int time_src = -1, event_src = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto& name = header[c];
    if (schema.ignore.count(name)) continue;
    ColumnMeta meta{name, ColumnKind::Numeric, {}};
    if (name == schema.time) {
      meta.kind = ColumnKind::Time;
      time_src = static_cast<int>(c);
    } else if (name == schema.event) {
      meta.kind = ColumnKind::Event;
      event_src = static_cast<int>(c);
    } else {
      if (schema.categorical.count(name)) meta.kind = ColumnKind::Categorical;
      int j = 0;
      for (const auto& m : ds.columns) j += m.is_feature() ? 1 : 0;
      source_to_feature[c] = j;
    }
    ds.columns.push_back(std::move(meta));
  }
  const std::size_t p = ds.feature_names().size();
  const auto feature_meta = ds.feature_column_indices();  // feature j -> index into ds.columns

  std::vector<double> cells, times, events;
  std::vector<char> observed;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_fields(line);
    if (fields.size() != header.size())
      fail(ErrorCode::SchemaMismatch, "line " + std::to_string(line_no) + " has " + std::to_string(fields.size()) +
                                          " fields, header has " + std::to_string(header.size()));
    const auto& tf = fields[time_src];
    const auto& ef = fields[event_src];
    if (detail::is_missing_token(tf) || detail::is_missing_token(ef))
      fail(ErrorCode::MissingOutcome, "line " + std::to_string(line_no) + " has a missing time or event");
    double t = 0.0;
    if (!detail::parse_double(tf, t) || t < 0.0)
      fail(ErrorCode::SchemaMismatch, "line " + std::to_string(line_no) + ": time must be a non-negative number");
    if (ef != "0" && ef != "1")
      fail(ErrorCode::BadEventValue, "line " + std::to_string(line_no) + ": event value '" + ef + "'");
    times.push_back(t);
    events.push_back(ef == "1" ? 1.0 : 0.0);

    std::vector<double> row(p, std::numeric_limits<double>::quiet_NaN());
    std::vector<char> row_obs(p, 0);
    for (std::size_t c = 0; c < header.size(); ++c) {
      int j = source_to_feature[c];
      if (j < 0) continue;
      const auto& f = fields[c];
      if (detail::is_missing_token(f)) continue;
      auto& meta = ds.columns[feature_meta[j]];
      if (meta.kind == ColumnKind::Categorical) {
        auto it = std::find(meta.categories.begin(), meta.categories.end(), f);
        if (it == meta.categories.end()) {
          meta.categories.push_back(f);
          it = meta.categories.end() - 1;
        }
        row[j] = static_cast<double>(it - meta.categories.begin());
      } else {
        double v = 0.0;
        if (!detail::parse_double(f, v))
          fail(ErrorCode::SchemaMismatch, "line " + std::to_string(line_no) + ": non-numeric value '" + f +
                                              "' in numeric column '" + meta.name + "'");
        row[j] = v;
      }
      row_obs[j] = 1;
    }
    cells.insert(cells.end(), row.begin(), row.end());
    observed.insert(observed.end(), row_obs.begin(), row_obs.end());
  }
  if (times.empty()) fail(ErrorCode::EmptyFile, "no data rows");

  for (const auto& m : ds.columns)
    if (m.kind == ColumnKind::Categorical && m.categories.empty())
      fail(ErrorCode::SchemaMismatch, "categorical column '" + m.name + "' has no observed labels");

  const auto n = static_cast<Eigen::Index>(times.size());
  ds.values = RowMatrix(n, static_cast<Eigen::Index>(p));
  ds.mask = MaskMatrix(n, static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(p); ++j) {
      ds.values(i, j) = cells[i * p + j];
      ds.mask(i, j) = observed[i * p + j] != 0;
    }
  ds.time = Eigen::Map<Eigen::VectorXd>(times.data(), n);
  ds.event = Eigen::Map<Eigen::VectorXd>(events.data(), n);
  return ds;
}

inline SurvivalDataset load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema);
}

/// Writes the dataset in its column order; masked cells become empty fields.
inline std::string to_csv(const SurvivalDataset& ds) {
  std::string out;
  for (std::size_t c = 0; c < ds.columns.size(); ++c) {
    if (c) out += ',';
    out += detail::csv_field(ds.columns[c].name);
  }
  out += '\n';
  for (std::size_t i = 0; i < ds.n_rows(); ++i) {
    std::size_t j = 0;
    for (std::size_t c = 0; c < ds.columns.size(); ++c) {
      if (c) out += ',';
      const auto& meta = ds.columns[c];
      switch (meta.kind) {
        case ColumnKind::Time: out += detail::format_double(ds.time[i]); break;
        case ColumnKind::Event: out += ds.event[i] > 0.5 ? '1' : '0'; break;
        case ColumnKind::Categorical:
          if (ds.mask(i, j)) out += detail::csv_field(meta.categories.at(static_cast<std::size_t>(ds.values(i, j))));
          ++j;
          break;
        case ColumnKind::Numeric:
          if (ds.mask(i, j)) out += detail::format_double(ds.values(i, j));
          ++j;
          break;
      }
    }
    out += '\n';
  }
  return out;
}

/// Schema that reloads a dataset written by to_csv.
inline Schema schema_of(const SurvivalDataset& ds) {
  Schema s;
  for (const auto& c : ds.columns) {
    if (c.kind == ColumnKind::Time) s.time = c.name;
    if (c.kind == ColumnKind::Event) s.event = c.name;
    if (c.kind == ColumnKind::Categorical) s.categorical.insert(c.name);
  }
  return s;
}

/// Inverse of parse_schema.
inline std::string to_schema_text(const Schema& s) {
  std::string out = "time=" + s.time + "\nevent=" + s.event + '\n';
  auto list = [&](const char* key, const std::set<std::string>& names) {
    if (names.empty()) return;
    out += key;
    out += '=';
    bool first = true;
    for (const auto& n : names) out += (first ? "" : ",") + n, first = false;
    out += '\n';
  };
  list("categorical", s.categorical);
  list("ignore", s.ignore);
  return out;
}

inline void write_csv(const SurvivalDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out << to_csv(ds);
}

/// Rows in the given order (duplicates allowed).
inline SurvivalDataset take_rows(const SurvivalDataset& ds, std::span<const std::size_t> rows) {
  SurvivalDataset out;
  out.columns = ds.columns;
  const auto n = static_cast<Eigen::Index>(rows.size());
  out.values.resize(n, ds.values.cols());
  out.mask.resize(n, ds.mask.cols());
  out.time.resize(n);
  out.event.resize(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    auto i = static_cast<Eigen::Index>(rows[k]);
    out.values.row(k) = ds.values.row(i);
    out.mask.row(k) = ds.mask.row(i);
    out.time[k] = ds.time[i];
    out.event[k] = ds.event[i];
  }
  return out;
}

/// Keeps the named features (in dataset order); Time and Event are always retained.
inline SurvivalDataset select_features(const SurvivalDataset& ds, const std::vector<std::string>& keep) {
  SurvivalDataset out;
  std::vector<Eigen::Index> cols;
  Eigen::Index j = 0;
  for (const auto& c : ds.columns) {
    if (!c.is_feature()) {
      out.columns.push_back(c);
      continue;
    }
    if (std::find(keep.begin(), keep.end(), c.name) != keep.end()) {
      out.columns.push_back(c);
      cols.push_back(j);
    }
    ++j;
  }
  const auto n = ds.values.rows();
  out.values.resize(n, static_cast<Eigen::Index>(cols.size()));
  out.mask.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.values.col(static_cast<Eigen::Index>(k)) = ds.values.col(cols[k]);
    out.mask.col(static_cast<Eigen::Index>(k)) = ds.mask.col(cols[k]);
  }
  out.time = ds.time;
  out.event = ds.event;
  return out;
}

/// Replaces each categorical column with c-1 indicator columns named
/// `name=label` (first category is the reference). Masked source cells mask
/// every derived cell.
inline SurvivalDataset encode_categoricals(const SurvivalDataset& ds) {
  SurvivalDataset out;
  out.time = ds.time;
  out.event = ds.event;
  const auto n = ds.values.rows();
  std::vector<Eigen::VectorXd> cols;
  std::vector<Eigen::Array<bool, Eigen::Dynamic, 1>> masks;
  Eigen::Index j = 0;
  for (const auto& c : ds.columns) {
    if (!c.is_feature()) {
      out.columns.push_back(c);
      continue;
    }
    if (c.kind == ColumnKind::Numeric) {
      out.columns.push_back(c);
      cols.emplace_back(ds.values.col(j));
      masks.emplace_back(ds.mask.col(j));
    } else {
      for (std::size_t level = 1; level < c.categories.size(); ++level) {
        out.columns.push_back({c.name + "=" + c.categories[level], ColumnKind::Numeric, {}});
        Eigen::VectorXd col(n);
        for (Eigen::Index i = 0; i < n; ++i)
          col[i] = ds.mask(i, j) ? (static_cast<std::size_t>(ds.values(i, j)) == level ? 1.0 : 0.0)
                                 : std::numeric_limits<double>::quiet_NaN();
        cols.push_back(std::move(col));
        masks.emplace_back(ds.mask.col(j));
      }
    }
    ++j;
  }
  out.values.resize(n, static_cast<Eigen::Index>(cols.size()));
  out.mask.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    out.values.col(static_cast<Eigen::Index>(k)) = cols[k];
    out.mask.col(static_cast<Eigen::Index>(k)) = masks[k];
  }
  return out;
}

struct SplitPair {
  SurvivalDataset train;
  SurvivalDataset test;
  std::uint64_t seed = 0;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

/// Seeded random train/test partition; both sides must contain an event.
inline SplitPair split(const SurvivalDataset& ds, double test_fraction, std::uint64_t seed) {
  const std::size_t n = ds.n_rows();
  require(n >= 10, ErrorCode::TooFewRows, "split needs at least 10 rows, got " + std::to_string(n));
  require(test_fraction > 0.0 && test_fraction < 1.0, ErrorCode::InvalidArgument, "test_fraction must be in (0,1)");
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));

  for (std::uint64_t attempt = 0; attempt < 100; ++attempt) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng = stream(seed, Stream::Split, attempt);
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<std::size_t> test(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<std::size_t> train(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    auto has_event = [&](const std::vector<std::size_t>& rows) {
      return std::any_of(rows.begin(), rows.end(), [&](std::size_t i) { return ds.event[i] > 0.5; });
    };
    if (has_event(train) && has_event(test)) {
      SplitPair out{take_rows(ds, train), take_rows(ds, test), seed, std::move(train), std::move(test)};
      return out;
    }
  }
  fail(ErrorCode::DegenerateSplit, "no split with events on both sides after 100 attempts");
}

/// Fraction of masked cells per feature column.
inline std::vector<double> missing_profile(const SurvivalDataset& ds) {
  std::vector<double> out(ds.n_features(), 0.0);
  if (ds.n_rows() == 0) return out;
  for (std::size_t j = 0; j < ds.n_features(); ++j) {
    auto missing = (!ds.mask.col(static_cast<Eigen::Index>(j))).count();
    out[j] = static_cast<double>(missing) / static_cast<double>(ds.n_rows());
  }
  return out;
}

/// Builds a fully observed numeric dataset; convenient for tests and synthetic data.
inline SurvivalDataset make_dataset(const RowMatrix& x, const Eigen::VectorXd& time, const Eigen::VectorXd& event,
                                    std::vector<std::string> names = {}) {
  SurvivalDataset ds;
  if (names.empty())
    for (Eigen::Index j = 0; j < x.cols(); ++j) names.push_back("x" + std::to_string(j));
  require(static_cast<Eigen::Index>(names.size()) == x.cols(), ErrorCode::InvalidArgument, "feature name count");
  for (auto& n : names) ds.columns.push_back({std::move(n), ColumnKind::Numeric, {}});
  ds.columns.push_back({"time", ColumnKind::Time, {}});
  ds.columns.push_back({"event", ColumnKind::Event, {}});
  ds.values = x;
  ds.mask = MaskMatrix::Constant(x.rows(), x.cols(), true);
  ds.time = time;
  ds.event = event;
  return ds;
}

}  // namespace prepsurv
