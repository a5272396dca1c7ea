#pragma once

#include <string>
#include <string_view>

#include <json.hpp>

#include "xmrbench/bench.hpp"

namespace xmr {

enum class ReportFormat { kCsv, kJson };

/// Chooses by extension: ".json" is JSON, everything else CSV.
ReportFormat report_format_for_path(std::string_view path) noexcept;

/// Recall grid as CSV: header "k,p_0.00,...,random", one row per k, values
/// with two decimals. The random column is the analytic baseline.
std::string format_csv(const RecallGrid& grid);

/// Reads k values, ratios and cells back (metadata is not part of the CSV).
/// Throws Error(kParse) on malformed input.
RecallGrid parse_csv(std::string_view text);

nlohmann::json grid_to_json(const RecallGrid& grid, const nlohmann::json& provenance);
RecallGrid grid_from_json(const nlohmann::json& j);

/// Writes the grid. CSV output gets a "<path>.meta.json" sidecar carrying
/// `provenance` and the grid metadata; JSON output embeds them. Output is
/// byte-stable for identical inputs.
void emit_report(const RecallGrid& grid, ReportFormat format, const std::string& path,
                 const nlohmann::json& provenance);

std::string format_percent(double value);

}  // namespace xmr
