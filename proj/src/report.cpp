#include "xmrbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <optional>

#include "xmrbench/error.hpp"

namespace xmr {

using nlohmann::json;

ReportFormat report_format_for_path(std::string_view path) noexcept {
  return path.ends_with(".json") ? ReportFormat::kJson : ReportFormat::kCsv;
}

std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", value);
  return buf;
}

namespace {

double random_column(const RecallGrid& grid, std::size_t k) {
  if (grid.report_count == 0) return 0.0;
  return random_baseline_analytic(grid.report_count, std::min(k, grid.report_count));
}

// The CSV carries N only through the rounded random column. Every N within
// rounding distance of the most precise row is tried against all rows.
std::size_t infer_report_count(const std::vector<std::size_t>& ks,
                               const std::vector<std::string>& random) {
  if (ks.empty()) return 0;
  auto matches = [&](std::size_t n) {
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const double expected = n == 0 ? 0.0 : random_baseline_analytic(n, std::min(ks[i], n));
      if (format_percent(expected) != random[i]) return false;
    }
    return true;
  };
  std::optional<std::size_t> best_row;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double r = std::strtod(random[i].c_str(), nullptr);
    if (r > 0.0 && r < 100.0 && (!best_row || ks[i] > ks[*best_row])) best_row = i;
  }
  if (!best_row) {
    const std::size_t n = random.front() == format_percent(0.0)
                              ? 0
                              : *std::min_element(ks.begin(), ks.end());
    if (matches(n)) return n;
    throw Error(ErrorCode::kParse, "CSV random column is inconsistent with its k values");
  }
  const double k = static_cast<double>(ks[*best_row]);
  const double r = std::strtod(random[*best_row].c_str(), nullptr);
  const auto lo = static_cast<std::size_t>(std::floor(100.0 * k / (r + 0.005)));
  const auto hi = static_cast<std::size_t>(std::ceil(100.0 * k / std::max(r - 0.005, 1e-9)));
  for (std::size_t n = std::max<std::size_t>(lo, 1); n <= hi; ++n) {
    if (matches(n)) return n;
  }
  throw Error(ErrorCode::kParse, "CSV random column is inconsistent with its k values");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

double parse_number(std::string_view cell, std::size_t line) {
  std::string s(cell);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size()) {
    throw Error(ErrorCode::kParse,
                "CSV line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  for (;;) {
    const auto next = line.find(',', pos);
    out.push_back(line.substr(pos, next - pos));
    if (next == std::string_view::npos) return out;
    pos = next + 1;
  }
}

}  // namespace

std::string format_csv(const RecallGrid& grid) {
  std::string out = "k";
  for (double r : grid.ratios) out += ",p_" + format_percent(r);
  out += ",random\n";
  for (std::size_t ki = 0; ki < grid.k_values.size(); ++ki) {
    out += std::to_string(grid.k_values[ki]);
    for (std::size_t pi = 0; pi < grid.ratios.size(); ++pi) {
      out += ',' + format_percent(grid.at(ki, pi));
    }
    out += ',' + format_percent(random_column(grid, grid.k_values[ki])) + '\n';
  }
  return out;
}

RecallGrid parse_csv(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    if (end > pos) lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  if (lines.empty()) throw Error(ErrorCode::kParse, "empty CSV report");
  const auto header = split_commas(lines[0]);
  if (header.size() < 3 || header.front() != "k" || header.back() != "random") {
    throw Error(ErrorCode::kParse, "CSV header must be k,p_...,random");
  }
  RecallGrid grid;
  std::vector<std::string> random;
  for (std::size_t i = 1; i + 1 < header.size(); ++i) {
    if (!header[i].starts_with("p_")) throw Error(ErrorCode::kParse, "bad CSV column name");
    grid.ratios.push_back(parse_number(header[i].substr(2), 1));
  }
  for (std::size_t l = 1; l < lines.size(); ++l) {
    const auto cells = split_commas(lines[l]);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::kParse, "CSV line " + std::to_string(l + 1) + ": wrong column count");
    }
    const double k = parse_number(cells[0], l + 1);
    if (k < 1 || k != static_cast<double>(static_cast<std::size_t>(k))) {
      throw Error(ErrorCode::kParse, "CSV line " + std::to_string(l + 1) + ": bad k");
    }
    grid.k_values.push_back(static_cast<std::size_t>(k));
    for (std::size_t i = 1; i + 1 < cells.size(); ++i) {
      grid.cells.push_back(parse_number(cells[i], l + 1));
    }
    random.push_back(std::string(cells.back()));
  }
  grid.report_count = infer_report_count(grid.k_values, random);
  return grid;
}

json grid_to_json(const RecallGrid& grid, const json& provenance) {
  json rows = json::array();
  json random = json::array();
  for (std::size_t ki = 0; ki < grid.k_values.size(); ++ki) {
    json row = json::array();
    for (std::size_t pi = 0; pi < grid.ratios.size(); ++pi) row.push_back(grid.at(ki, pi));
    rows.push_back(std::move(row));
    random.push_back(random_column(grid, grid.k_values[ki]));
  }
  json j = json::object();
  j["provenance"] = provenance;
  j["metadata"] = {{"image_count", grid.image_count},
                   {"report_count", grid.report_count},
                   {"seed", grid.seed},
                   {"scorer", grid.scorer},
                   {"model", grid.model}};
  j["k_values"] = grid.k_values;
  j["ratios"] = grid.ratios;
  j["recall"] = std::move(rows);
  j["random"] = std::move(random);
  return j;
}

RecallGrid grid_from_json(const json& j) {
  try {
    RecallGrid grid;
    grid.k_values = j.at("k_values").get<std::vector<std::size_t>>();
    grid.ratios = j.at("ratios").get<std::vector<double>>();
    const auto& meta = j.at("metadata");
    grid.image_count = meta.at("image_count").get<std::size_t>();
    grid.report_count = meta.at("report_count").get<std::size_t>();
    grid.seed = meta.at("seed").get<std::uint64_t>();
    grid.scorer = meta.at("scorer").get<std::string>();
    grid.model = meta.at("model").get<std::string>();
    const auto& rows = j.at("recall");
    if (rows.size() != grid.k_values.size()) throw Error(ErrorCode::kParse, "recall row count");
    for (const auto& row : rows) {
      if (row.size() != grid.ratios.size()) throw Error(ErrorCode::kParse, "recall column count");
      for (const auto& v : row) grid.cells.push_back(v.get<double>());
    }
    return grid;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("bad JSON report: ") + e.what());
  }
}

void emit_report(const RecallGrid& grid, ReportFormat format, const std::string& path,
                 const json& provenance) {
  if (format == ReportFormat::kJson) {
    write_text(path, grid_to_json(grid, provenance).dump(2) + "\n");
    return;
  }
  write_text(path, format_csv(grid));
  json meta = grid_to_json(grid, provenance);
  meta.erase("recall");
  meta.erase("random");
  write_text(path + ".meta.json", meta.dump(2) + "\n");
}

}  // namespace xmr
