#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xmr {

enum class Section { kHistory, kComparison, kFindings, kImpression };

inline constexpr std::array<Section, 4> kAllSections = {
    Section::kHistory, Section::kComparison, Section::kFindings, Section::kImpression};

std::string_view section_key(Section s) noexcept;
std::optional<Section> parse_section(std::string_view key) noexcept;

/// Report split into the four recognised sections plus the full raw text.
/// Sections outside the four are kept only in `raw`.
struct ReportText {
  std::array<std::optional<std::string>, 4> sections;
  std::string raw;

  const std::optional<std::string>& section(Section s) const {
    return sections[static_cast<std::size_t>(s)];
  }
  std::optional<std::string>& section(Section s) {
    return sections[static_cast<std::size_t>(s)];
  }

  /// True iff the section exists and has a non-whitespace character.
  bool has_content(Section s) const;

  /// Non-empty selected sections joined by '\n'; falls back to `raw` when
  /// none of them has content.
  std::string compose(std::span<const Section> selected) const;

  friend bool operator==(const ReportText&, const ReportText&) = default;
};

struct StudyRecord {
  std::string study_id;
  std::vector<std::string> image_refs;
  ReportText report;

  friend bool operator==(const StudyRecord&, const StudyRecord&) = default;
};

/// One flattened image query: the (study, image) it came from.
struct ImageEntry {
  std::size_t study_index;
  std::size_t image_index;
};

class Manifest {
 public:
  Manifest() = default;

  /// Throws Error(kValidation) on duplicate study ids or empty image lists.
  explicit Manifest(std::vector<StudyRecord> studies, std::string base_dir = {});

  const std::vector<StudyRecord>& studies() const noexcept { return studies_; }
  const std::vector<ImageEntry>& images() const noexcept { return images_; }

  /// M: total number of images.
  std::size_t image_count() const noexcept { return images_.size(); }
  /// N: number of reports (one per study).
  std::size_t report_count() const noexcept { return studies_.size(); }

  const std::string& image_ref(std::size_t image) const {
    const auto& e = images_[image];
    return studies_[e.study_index].image_refs[e.image_index];
  }
  /// The ground-truth report index for an image.
  std::size_t true_report(std::size_t image) const { return images_[image].study_index; }

  /// Directory that relative image paths resolve against.
  const std::string& base_dir() const noexcept { return base_dir_; }
  std::string resolve_image_path(std::size_t image) const;

  friend bool operator==(const Manifest& a, const Manifest& b) {
    return a.studies_ == b.studies_;
  }

 private:
  std::vector<StudyRecord> studies_;
  std::vector<ImageEntry> images_;
  std::string base_dir_;
};

/// Parses one manifest line. Throws Error(kParse) on malformed input.
StudyRecord parse_study_line(std::string_view line);
std::string format_study_line(const StudyRecord& study);

Manifest parse_manifest(std::string_view text, std::string base_dir = {});
Manifest load_manifest(const std::string& path);
std::string format_manifest(const Manifest& manifest);
void save_manifest(const Manifest& manifest, const std::string& path);

/// Keeps studies whose report has non-empty Findings and Impression.
Manifest filter_studies(const Manifest& manifest);

}  // namespace xmr
