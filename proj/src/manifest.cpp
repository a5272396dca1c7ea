#include "xmrbench/manifest.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "xmrbench/error.hpp"

namespace xmr {

using nlohmann::json;

std::string_view section_key(Section s) noexcept {
  switch (s) {
    case Section::kHistory: return "history";
    case Section::kComparison: return "comparison";
    case Section::kFindings: return "findings";
    case Section::kImpression: return "impression";
  }
  return "";
}

std::optional<Section> parse_section(std::string_view key) noexcept {
  for (Section s : kAllSections) {
    if (section_key(s) == key) return s;
  }
  return std::nullopt;
}

bool ReportText::has_content(Section s) const {
  const auto& text = section(s);
  return text && std::any_of(text->begin(), text->end(),
                             [](unsigned char c) { return !std::isspace(c); });
}

std::string ReportText::compose(std::span<const Section> selected) const {
  std::string out;
  for (Section s : selected) {
    if (!has_content(s)) continue;
    if (!out.empty()) out += '\n';
    out += *section(s);
  }
  return out.empty() ? raw : out;
}

Manifest::Manifest(std::vector<StudyRecord> studies, std::string base_dir)
    : studies_(std::move(studies)), base_dir_(std::move(base_dir)) {
  std::unordered_set<std::string_view> seen;
  for (std::size_t s = 0; s < studies_.size(); ++s) {
    const auto& study = studies_[s];
    if (!seen.insert(study.study_id).second) {
      throw Error(ErrorCode::kValidation, "duplicate study_id '" + study.study_id + "'");
    }
    if (study.image_refs.empty()) {
      throw Error(ErrorCode::kValidation, "study '" + study.study_id + "' has no images");
    }
    for (std::size_t i = 0; i < study.image_refs.size(); ++i) images_.push_back({s, i});
  }
}

std::string Manifest::resolve_image_path(std::size_t image) const {
  std::filesystem::path p(image_ref(image));
  if (p.is_absolute() || base_dir_.empty()) return p.string();
  return (std::filesystem::path(base_dir_) / p).string();
}

StudyRecord parse_study_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, e.what());
  }
  auto fail = [](const std::string& msg) { return Error(ErrorCode::kParse, msg); };
  if (!j.is_object()) throw fail("study record must be a JSON object");
  if (!j.contains("study_id") || !j["study_id"].is_string()) {
    throw fail("missing string field 'study_id'");
  }
  if (!j.contains("images") || !j["images"].is_array()) {
    throw fail("missing array field 'images'");
  }
  if (!j.contains("report") || !j["report"].is_object()) {
    throw fail("missing object field 'report'");
  }
  StudyRecord study;
  study.study_id = j["study_id"].get<std::string>();
  for (const auto& img : j["images"]) {
    if (!img.is_string()) throw fail("'images' entries must be strings");
    study.image_refs.push_back(img.get<std::string>());
  }
  const auto& report = j["report"];
  if (!report.contains("raw") || !report["raw"].is_string()) {
    throw fail("report is missing string field 'raw'");
  }
  study.report.raw = report["raw"].get<std::string>();
  for (Section s : kAllSections) {
    const std::string key(section_key(s));
    if (!report.contains(key)) continue;
    if (!report[key].is_string()) throw fail("report section '" + key + "' must be a string");
    study.report.section(s) = report[key].get<std::string>();
  }
  return study;
}

std::string format_study_line(const StudyRecord& study) {
  // Keys are emitted in a fixed order so output is byte-stable.
  json report = json::object();
  for (Section s : kAllSections) {
    if (study.report.section(s)) report[std::string(section_key(s))] = *study.report.section(s);
  }
  report["raw"] = study.report.raw;
  json j = json::object();
  j["study_id"] = study.study_id;
  j["images"] = study.image_refs;
  j["report"] = std::move(report);
  return j.dump();
}

Manifest parse_manifest(std::string_view text, std::string base_dir) {
  std::vector<StudyRecord> studies;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    try {
      studies.push_back(parse_study_line(line));
    } catch (const Error& e) {
      throw Error(ErrorCode::kParse, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return Manifest(std::move(studies), std::move(base_dir));
}

Manifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open manifest " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  auto parent = std::filesystem::path(path).parent_path().string();
  return parse_manifest(buf.str(), parent);
}

std::string format_manifest(const Manifest& manifest) {
  std::string out;
  for (const auto& study : manifest.studies()) {
    out += format_study_line(study);
    out += '\n';
  }
  return out;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << format_manifest(manifest);
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

Manifest filter_studies(const Manifest& manifest) {
  std::vector<StudyRecord> kept;
  for (const auto& study : manifest.studies()) {
    if (study.report.has_content(Section::kFindings) &&
        study.report.has_content(Section::kImpression)) {
      kept.push_back(study);
    }
  }
  return Manifest(std::move(kept), manifest.base_dir());
}

}  // namespace xmr
