#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "kblm/corpus.hpp"
#include "kblm/model.hpp"

namespace kblm {

inline constexpr int kReportSchemaVersion = 1;

/// Writes `content` beside `path` and renames it into place, so readers never
/// see a half-written file and a failed run leaves the previous one intact.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

/// Report skeleton shared by every subcommand.
inline nlohmann::json make_report(std::string kind) {
  return {{"schema_version", kReportSchemaVersion}, {"kind", std::move(kind)}};
}

/// Row label such as "baseline", "+c", "+c+g-kb".
inline std::string row_label(Variant v, const AblationFlags& a) {
  std::string base;
  switch (v) {
    case Variant::Baseline: base = "baseline"; break;
    case Variant::Conditional: base = "+c"; break;
    case Variant::Grounded: base = "+g"; break;
    case Variant::ConditionalGrounded: base = "+c+g"; break;
  }
  return base + a.label();
}

inline const std::vector<std::string>& canonical_rows() {
  static const std::vector<std::string> rows = {"baseline", "+c",     "+g",     "+c+g",
                                                "+c-kb",    "+g-v",   "+c+g-kb", "+c+g-v"};
  return rows;
}

struct Column {
  std::string header;
  std::string kind;  // report kind holding the value
  nlohmann::json::json_pointer path;
};

inline std::vector<Column> comparison_columns() {
  using P = nlohmann::json::json_pointer;
  return {
      {"MRR", "eval-predict", P("/metrics/mrr")},
      {"R@1", "eval-predict", P("/metrics/recall_at/1")},
      {"R@2", "eval-predict", P("/metrics/recall_at/2")},
      {"R@3", "eval-predict", P("/metrics/recall_at/3")},
      {"R@5", "eval-predict", P("/metrics/recall_at/5")},
      {"R@10", "eval-predict", P("/metrics/recall_at/10")},
      {"P@1", "eval-predict", P("/metrics/precision_at_1")},
      {"PPL", "eval-predict", P("/metrics/perplexity")},
      {"KS", "eval-complete", P("/metrics/ks")},
      {"UD", "eval-complete", P("/metrics/ud")},
      {"Prec", "eval-complete", P("/metrics/precision")},
      {"Rec", "eval-complete", P("/metrics/recall")},
      {"F1", "eval-complete", P("/metrics/f1")},
  };
}

/// Cells are copied verbatim from the input reports; a missing value is null.
struct ComparisonTable {
  std::vector<std::string> rows;
  std::vector<Column> columns;
  std::vector<std::vector<nlohmann::json>> cells;

  nlohmann::json to_json() const {
    auto out = make_report("report");
    auto arr = nlohmann::json::array();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      nlohmann::json row = {{"row", rows[r]}};
      for (std::size_t c = 0; c < columns.size(); ++c) row[columns[c].header] = cells[r][c];
      arr.push_back(std::move(row));
    }
    out["rows"] = arr;
    return out;
  }
};

/// Groups evaluation reports by their "row" field. Rows outside the canonical
/// list are appended in label order; a canonical row with no reports is omitted.
inline ComparisonTable build_comparison(const std::vector<nlohmann::json>& reports) {
  std::map<std::string, std::map<std::string, const nlohmann::json*>> by_row;
  for (const auto& r : reports) {
    if (!r.is_object() || r.value("schema_version", 0) != kReportSchemaVersion)
      throw DataError("report with missing or unsupported schema_version");
    if (!r.contains("row") || !r.contains("kind")) continue;
    by_row[r["row"].get<std::string>()][r["kind"].get<std::string>()] = &r;
  }
  ComparisonTable t;
  t.columns = comparison_columns();
  std::vector<std::string> order;
  for (const auto& name : canonical_rows())
    if (by_row.count(name)) order.push_back(name);
  for (const auto& [name, _] : by_row)
    if (std::find(canonical_rows().begin(), canonical_rows().end(), name) == canonical_rows().end())
      order.push_back(name);
  for (const auto& name : order) {
    std::vector<nlohmann::json> cells;
    for (const auto& col : t.columns) {
      const auto& kinds = by_row[name];
      auto it = kinds.find(col.kind);
      if (it != kinds.end() && it->second->contains(col.path)) {
        cells.push_back(it->second->at(col.path));
      } else {
        cells.push_back(nullptr);
      }
    }
    t.rows.push_back(name);
    t.cells.push_back(std::move(cells));
  }
  return t;
}

namespace detail {

inline std::string render_cell(const nlohmann::json& v, bool fixed) {
  if (v.is_null()) return "-";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_float()) {
    std::ostringstream os;
    if (fixed) {
      os << std::fixed << std::setprecision(4) << v.get<double>();
    } else {
      os << std::setprecision(17) << v.get<double>();
    }
    return os.str();
  }
  return v.dump();
}

}  // namespace detail

inline void render_table_text(std::ostream& os, const ComparisonTable& t) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> head = {"model"};
  for (const auto& c : t.columns) head.push_back(c.header);
  grid.push_back(head);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    std::vector<std::string> line = {t.rows[r]};
    for (const auto& v : t.cells[r]) line.push_back(detail::render_cell(v, true));
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      if (c == 0) {
        os << std::left << std::setw(static_cast<int>(width[c])) << line[c];
      } else {
        os << "  " << std::right << std::setw(static_cast<int>(width[c])) << line[c];
      }
    }
    os << '\n';
  }
}

inline void render_table_csv(std::ostream& os, const ComparisonTable& t) {
  os << "model";
  for (const auto& c : t.columns) os << ',' << csv_field(c.header);
  os << '\n';
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    os << csv_field(t.rows[r]);
    for (const auto& v : t.cells[r]) os << ',' << csv_field(v.is_null() ? "" : detail::render_cell(v, false));
    os << '\n';
  }
}

}  // namespace kblm
