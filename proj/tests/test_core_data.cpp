#include <gtest/gtest.h>

#include <fstream>

#include <json.hpp>

#include "test_util.hpp"
#include "xmrbench/error.hpp"
#include "xmrbench/image.hpp"
#include "xmrbench/manifest.hpp"

namespace xmr {
namespace {

using testing::TempDir;

std::string study_line(const std::string& id, const std::vector<std::string>& images,
                       bool findings, bool impression) {
  nlohmann::json report{{"raw", "FINDINGS: clear. IMPRESSION: normal."}};
  if (findings) report["findings"] = "Lungs are clear.";
  if (impression) report["impression"] = "No acute disease.";
  return nlohmann::json{{"study_id", id}, {"images", images}, {"report", report}}.dump();
}

void expect_error(ErrorCode code, const std::function<void()>& fn) {
  try {
    fn();
    FAIL() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

TEST(Manifest, CountsImagesAndReports) {
  const std::string text = study_line("s1", {"a.png", "b.png"}, true, true) + "\n" +
                           study_line("s2", {"c.png"}, true, true) + "\n";
  const Manifest m = parse_manifest(text);
  EXPECT_EQ(m.image_count(), 3u);
  EXPECT_EQ(m.report_count(), 2u);
  EXPECT_EQ(m.true_report(0), 0u);
  EXPECT_EQ(m.true_report(1), 0u);
  EXPECT_EQ(m.true_report(2), 1u);
  EXPECT_EQ(m.image_ref(2), "c.png");
}

TEST(Manifest, EmptyTextGivesEmptyManifest) {
  const Manifest m = parse_manifest("");
  EXPECT_EQ(m.image_count(), 0u);
  EXPECT_EQ(m.report_count(), 0u);
}

TEST(Manifest, BlankLinesAreSkipped) {
  const Manifest m = parse_manifest("\n" + study_line("s1", {"a.png"}, true, true) + "\n\n");
  EXPECT_EQ(m.report_count(), 1u);
}

TEST(Manifest, DuplicateStudyIdIsValidationError) {
  const std::string text = study_line("s1", {"a.png"}, true, true) + "\n" +
                           study_line("s1", {"b.png"}, true, true) + "\n";
  expect_error(ErrorCode::kValidation, [&] { parse_manifest(text); });
}

TEST(Manifest, StudyWithoutImagesIsRejected) {
  expect_error(ErrorCode::kValidation, [&] { parse_manifest(study_line("s1", {}, true, true)); });
}

TEST(Manifest, MalformedLineNamesLineNumber) {
  const std::string text = study_line("s1", {"a.png"}, true, true) + "\n{not json\n";
  try {
    parse_manifest(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Manifest, MissingFieldsAreParseErrors) {
  expect_error(ErrorCode::kParse, [] { parse_manifest(R"({"images":["a.png"],"report":{"raw":""}})"); });
  expect_error(ErrorCode::kParse, [] { parse_manifest(R"({"study_id":"x","report":{"raw":""}})"); });
  expect_error(ErrorCode::kParse, [] { parse_manifest(R"({"study_id":"x","images":["a.png"]})"); });
}

TEST(Manifest, FormatParseRoundTrip) {
  const std::string text = study_line("s1", {"a.png", "b.png"}, true, false) + "\n" +
                           study_line("s2", {"c.png"}, false, true) + "\n";
  const Manifest m = parse_manifest(text);
  const Manifest again = parse_manifest(format_manifest(m));
  EXPECT_EQ(m, again);
  EXPECT_EQ(format_manifest(m), format_manifest(again));
}

TEST(Manifest, SaveLoadResolvesRelativeImages) {
  TempDir dir;
  const Manifest m = parse_manifest(study_line("s1", {"img/a.png"}, true, true));
  save_manifest(m, dir.file("m.jsonl"));
  const Manifest loaded = load_manifest(dir.file("m.jsonl"));
  EXPECT_EQ(loaded, m);
  EXPECT_EQ(loaded.resolve_image_path(0), (dir.path() / "img/a.png").string());
}

TEST(Manifest, MissingFileIsIoError) {
  expect_error(ErrorCode::kIo, [] { load_manifest("/nonexistent/manifest.jsonl"); });
}

TEST(Filter, KeepsOnlyStudiesWithFindingsAndImpression) {
  const std::string text = study_line("both", {"a.png"}, true, true) + "\n" +
                           study_line("no-imp", {"b.png"}, true, false) + "\n" +
                           study_line("no-find", {"c.png"}, false, true) + "\n" +
                           study_line("none", {"d.png"}, false, false) + "\n";
  const Manifest kept = filter_studies(parse_manifest(text));
  ASSERT_EQ(kept.report_count(), 1u);
  EXPECT_EQ(kept.studies()[0].study_id, "both");
}

TEST(Filter, WhitespaceOnlySectionCountsAsMissing) {
  StudyRecord s{"s", {"a.png"}, {}};
  s.report.section(Section::kFindings) = "text";
  s.report.section(Section::kImpression) = "   \n";
  EXPECT_EQ(filter_studies(Manifest({s})).report_count(), 0u);
}

TEST(Filter, Idempotent) {
  const std::string text = study_line("a", {"a.png"}, true, true) + "\n" +
                           study_line("b", {"b.png"}, false, true) + "\n";
  const Manifest once = filter_studies(parse_manifest(text));
  EXPECT_EQ(filter_studies(once), once);
}

TEST(ReportText, ComposeJoinsSelectedSectionsInOrder) {
  ReportText r;
  r.raw = "raw text";
  r.section(Section::kFindings) = "F";
  r.section(Section::kImpression) = "I";
  const std::vector<Section> both{Section::kFindings, Section::kImpression};
  EXPECT_EQ(r.compose(both), "F\nI");
  const std::vector<Section> history{Section::kHistory};
  EXPECT_EQ(r.compose(history), "raw text");
}

TEST(Decode, GrayscaleValuesNormalizeToUnitRange) {
  const ImageTensor img = load_image(testing::data_path("gray_0_128_255.png"));
  ASSERT_EQ(img.height(), 1u);
  ASSERT_EQ(img.width(), 3u);
  ASSERT_EQ(img.channels(), 1u);
  EXPECT_EQ(img.at(0, 0), 0.0f);
  EXPECT_FLOAT_EQ(img.at(0, 1), 128.0f / 255.0f);
  EXPECT_NEAR(img.at(0, 1), 0.50196, 1e-5);
  EXPECT_EQ(img.at(0, 2), 1.0f);
}

TEST(Decode, RgbPng) {
  const ImageTensor img = load_image(testing::data_path("rgb_2x1.png"));
  ASSERT_EQ(img.channels(), 3u);
  EXPECT_EQ(img.at(0, 0, 0), 1.0f);
  EXPECT_EQ(img.at(0, 0, 1), 0.0f);
  EXPECT_FLOAT_EQ(img.at(0, 0, 2), 128.0f / 255.0f);
  EXPECT_FLOAT_EQ(img.at(0, 1, 2), 30.0f / 255.0f);
}

TEST(Decode, GrayscaleJpeg) {
  const ImageTensor img = load_image(testing::data_path("gray16_128.jpg"));
  ASSERT_EQ(img.channels(), 1u);
  ASSERT_EQ(img.height(), 16u);
  for (float v : img.pixels()) EXPECT_NEAR(v, 128.0f / 255.0f, 1.5f / 255.0f);
}

TEST(Decode, GarbageIsDecodeError) {
  expect_error(ErrorCode::kDecode, [] { load_image(testing::data_path("not_an_image.bin")); });
  auto bytes = read_file_bytes(testing::data_path("gray_0_128_255.png"));
  bytes.resize(bytes.size() / 2);
  expect_error(ErrorCode::kDecode, [&] { decode_image(bytes); });
}

TEST(Decode, PngRoundTripIsExactFor8BitValues) {
  std::vector<float> px;
  for (int v = 0; v < 256; ++v) px.push_back(static_cast<float>(v) / 255.0f);
  const ImageTensor img(16, 16, 1, px);
  EXPECT_EQ(decode_image(encode_png(img)), img);
}

TEST(ImageTensor, RejectsInvalidShapesAndValues) {
  expect_error(ErrorCode::kValidation, [] { ImageTensor(0, 2, 1, {}); });
  expect_error(ErrorCode::kValidation, [] { ImageTensor(1, 1, 2, {0.f, 0.f}); });
  expect_error(ErrorCode::kValidation, [] { ImageTensor(1, 2, 1, {0.f}); });
  expect_error(ErrorCode::kValidation, [] { ImageTensor(1, 1, 1, {1.5f}); });
}

}  // namespace
}  // namespace xmr
