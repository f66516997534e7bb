#include <gtest/gtest.h>

#include <random>
#include <string>

#include "json.hpp"
#include "mcontrib/container.hpp"
#include "mcontrib/dataset.hpp"
#include "support/temp_dir.hpp"

namespace mcontrib {
namespace {

using testing_support::TempDir;

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const DatasetError& e) {
    return e.what();
  }
  return {};
}

TEST(EncodeTabular, CategoriesMissingAndNumbers) {
  ColumnEncoding sex{"sex", {{"F", 0.0}, {"M", 1.0}}};
  ColumnEncoding bmi{"bmi"};
  bmi.missing = -1.0;
  ColumnEncoding age{"age"};
  EXPECT_EQ(encode_tabular({"M", "", "54.5"}, {sex, bmi, age}), Tensor::vector({1.0, -1.0, 54.5}));
  EXPECT_EQ(encode_field(" F ", sex), 0.0);
  const auto err = error_of([&] { encode_field("X", sex); });
  EXPECT_NE(err.find("unmapped category 'X' (allowed: F, M)"), std::string::npos) << err;
  EXPECT_FALSE(error_of([&] { encode_field("", age); }).empty());
  EXPECT_FALSE(error_of([&] { encode_field("abc", age); }).empty());
  EXPECT_FALSE(error_of([&] { encode_tabular({"M"}, {sex, age}); }).empty());
}

TEST(ParseCsv, QuotedFieldsAndOffsets) {
  const auto t = parse_csv("a,b,c\n1,\"x, y\",\"he said \"\"hi\"\"\"\n2,\"multi\nline\",3\n");
  EXPECT_EQ(t.header, (std::vector<std::string>{"a", "b", "c"}));
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "x, y");
  EXPECT_EQ(t.rows[0][2], "he said \"hi\"");
  EXPECT_EQ(t.rows[1][1], "multi\nline");
  EXPECT_EQ(t.row_offsets[0], 6u);
  EXPECT_EQ(*t.column("c"), 2u);
  EXPECT_FALSE(t.column("z"));
}

TEST(ParseCsv, RaggedRowNamesItsByteOffset) {
  const auto err = error_of([] { parse_csv("a,b\n1,2\n3\n", "data.csv"); });
  EXPECT_NE(err.find("data.csv: byte 8"), std::string::npos) << err;
}

TEST(Mtn, RoundTripsFloat32Values) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> value(-100, 100);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> shape{1 + static_cast<std::size_t>(trial % 4), 1 + static_cast<std::size_t>(trial % 3), 2};
    std::vector<double> data(Tensor::element_count(shape));
    for (double& v : data) v = value(rng);  // exactly representable in float32
    const Tensor t(shape, data);
    EXPECT_EQ(decode_mtn(encode_mtn(t)), t);
  }
}

TEST(Mtn, LayoutIsMagicHeaderThenLittleEndianFloats) {
  const auto bytes = encode_mtn(Tensor({1}, {1.0}));
  EXPECT_EQ(bytes, std::string("MTN1\n{\"dtype\":\"f32\",\"shape\":[1]}\n") + std::string("\x00\x00\x80\x3f", 4));
}

TEST(Mtn, ShortPayloadIsAnError) {
  std::string bytes = "MTN1\n{\"dtype\":\"f32\",\"shape\":[2,2]}\n" + std::string(12, '\0');
  const auto err = error_of([&] { decode_mtn(bytes, "img.mtn"); });
  EXPECT_NE(err.find("img.mtn: byte"), std::string::npos) << err;
  EXPECT_NE(err.find("needs 4"), std::string::npos) << err;
  EXPECT_FALSE(error_of([] { decode_mtn("P5\n"); }).empty());
  EXPECT_FALSE(error_of([] { decode_mtn("MTN1\n{\"dtype\":\"f64\",\"shape\":[1]}\n12345678"); }).empty());
}

nlohmann::json minimal_manifest() {
  return nlohmann::json::parse(R"({
    "name": "toy",
    "modalities": [
      {"name": "clinical", "kind": "tabular", "shape": [3]},
      {"name": "note", "kind": "text"}
    ],
    "samples": [
      {"id": "s1", "inputs": {"clinical": [1, 2, 3], "note": {"text": "no acute disease"}}, "label": 1},
      {"id": "s2", "inputs": {"clinical": {"values": [4, 5, 6]}, "note": {"text": "mild effusion"}}, "label": 0}
    ]
  })");
}

TEST(Manifest, MinimalTwoModalities) {
  const auto manifest = parse_manifest(minimal_manifest());
  EXPECT_EQ(manifest.name, "toy");
  ASSERT_EQ(manifest.modality_count(), 2u);
  EXPECT_EQ(manifest.modalities[0].h(), 3u);
  EXPECT_FALSE(manifest.modalities[1].h());
  EXPECT_EQ(manifest.modalities[1].fill, FillKind::Token);
  ManifestDataset data(manifest);
  EXPECT_EQ(data.sample_id(1), "s2");
  const auto s = data.sample(0);
  EXPECT_EQ(std::get<Tensor>(s[0].value), Tensor::vector({1, 2, 3}));
  EXPECT_EQ(std::get<TokenList>(s[1].value), (TokenList{"no", "acute", "disease"}));
}

TEST(Manifest, BrsetShapedImageAndTabular) {
  auto doc = nlohmann::json::parse(R"({
    "modalities": [
      {"name": "fundus", "kind": "image", "shape": [960, 1120, 3], "mask": {"patch_shape": [64, 70]}, "h": 240},
      {"name": "clinical", "kind": "tabular", "columns": ["age", "comorbidities", "diabetes_time", "insulin",
                                                           "sex", "exam_eye", "diabetes"]}
    ],
    "samples": [{"id": "img1", "inputs": {"fundus": "img1.mtn", "clinical": {"file": "t.csv", "row": 0}}}]
  })");
  const auto manifest = parse_manifest(doc);
  EXPECT_EQ(manifest.modalities[0].h(), 240u);
  EXPECT_EQ(manifest.modalities[0].grid.channels, 3u);
  EXPECT_EQ(manifest.modalities[0].grid.channel_axis, ChannelAxis::Last);
  EXPECT_EQ(manifest.modalities[1].h(), 7u);
}

TEST(Manifest, CsvRowWithCategoryMaps) {
  TempDir dir;
  write_file(dir.file("clinical.csv"),
             "patient,age,comorbidities,diabetes_time,insulin,sex,exam_eye,diabetes\n"
             "p9,63,none,10,yes,1,2,yes\n");
  auto doc = nlohmann::json::parse(R"({
    "modalities": [{"name": "clinical", "kind": "tabular", "key_column": "patient", "columns": [
      "age", {"name": "comorbidities", "map": {"none": 0, "diabetes": 1}}, "diabetes_time",
      {"name": "insulin", "map": {"no": 0, "yes": 1}}, "sex", "exam_eye",
      {"name": "diabetes", "map": {"no": 0, "yes": 1}}]}],
    "samples": [{"id": "a", "inputs": {"clinical": {"file": "clinical.csv", "key": "p9"}}}]
  })");
  write_file(dir.file("m.json"), doc.dump());
  const auto manifest = load_manifest(dir.file("m.json"));
  const auto s = ManifestDataset(manifest).sample(0);
  EXPECT_EQ(std::get<Tensor>(s[0].value), Tensor::vector({63, 0, 10, 1, 1, 2, 1}));
}

TEST(Manifest, ImageFromMtnFileRelativeToManifest) {
  TempDir dir;
  write_mtn(dir.file("x.mtn"), Tensor({2, 2}, {1, 2, 3, 4}));
  write_mtn(dir.file("bad.mtn"), Tensor({3}, {1, 2, 3}));
  auto doc = nlohmann::json::parse(R"({
    "modalities": [{"name": "img", "kind": "image", "shape": [2, 2], "mask": {"patch_shape": [1, 2]}}],
    "samples": [{"id": "ok", "inputs": {"img": "x.mtn"}}]
  })");
  write_file(dir.file("m.json"), doc.dump());
  const auto s = ManifestDataset(load_manifest(dir.file("m.json"))).sample(0);
  EXPECT_EQ(std::get<Tensor>(s[0].value), Tensor({2, 2}, {1, 2, 3, 4}));

  doc["samples"][0]["inputs"]["img"] = "bad.mtn";
  write_file(dir.file("m.json"), doc.dump());
  const auto err = error_of([&] { load_manifest(dir.file("m.json")); });
  EXPECT_NE(err.find("sample 'ok', modality 'img'"), std::string::npos) << err;
}

TEST(Manifest, SchemaErrorsCarryJsonPaths) {
  auto dup = minimal_manifest();
  dup["modalities"][1]["name"] = "clinical";
  dup["modalities"][1]["kind"] = "tabular";
  dup["modalities"][1]["shape"] = {1};
  auto err = error_of([&] { parse_manifest(dup); });
  EXPECT_NE(err.find("$.modalities[1].name"), std::string::npos) << err;
  EXPECT_NE(err.find("duplicate"), std::string::npos) << err;

  auto dup_id = minimal_manifest();
  dup_id["samples"][1]["id"] = "s1";
  EXPECT_NE(error_of([&] { parse_manifest(dup_id); }).find("duplicate sample id"), std::string::npos);

  auto missing = minimal_manifest();
  missing["samples"][0]["inputs"].erase("note");
  EXPECT_NE(error_of([&] { parse_manifest(missing); }).find("$.samples[0].inputs"), std::string::npos);

  auto bad_h = minimal_manifest();
  bad_h["modalities"][0]["h"] = 4;
  err = error_of([&] { parse_manifest(bad_h); });
  EXPECT_NE(err.find("declares 4 patches"), std::string::npos) << err;

  auto bad_grid = nlohmann::json::parse(R"({
    "modalities": [{"name": "img", "kind": "image", "shape": [224, 224], "mask": {"patch_shape": [15, 16]}}],
    "samples": [{"inputs": {"img": "x.mtn"}}]})");
  err = error_of([&] { parse_manifest(bad_grid); });
  EXPECT_NE(err.find("$.modalities[0].mask.patch_shape"), std::string::npos) << err;
  EXPECT_NE(err.find("[14,16]"), std::string::npos) << err;

  auto text_zero = minimal_manifest();
  text_zero["modalities"][1]["mask"] = {{"fill", "zero"}};
  EXPECT_FALSE(error_of([&] { parse_manifest(text_zero); }).empty());

  EXPECT_FALSE(error_of([] { parse_manifest(nlohmann::json::array()); }).empty());
}

TEST(Manifest, EmptyTextIsAnErrorNamingTheSample) {
  auto doc = minimal_manifest();
  doc["samples"][1]["inputs"]["note"] = {{"text", "   "}};
  const auto err = error_of([&] { ManifestDataset(parse_manifest(doc)).sample(1); });
  EXPECT_NE(err.find("sample 's2'"), std::string::npos) << err;
}

TEST(Manifest, InlineValueCountMustMatchShape) {
  auto doc = minimal_manifest();
  doc["samples"][0]["inputs"]["clinical"] = {1, 2};
  EXPECT_FALSE(error_of([&] { ManifestDataset(parse_manifest(doc)).sample(0); }).empty());
}

TEST(ResolveFills, MeanFillAndSingleSampleWarning) {
  auto doc = minimal_manifest();
  doc["modalities"][0]["mask"] = {{"fill", "mean"}};
  const auto manifest = parse_manifest(doc);
  ManifestDataset data(manifest);
  std::vector<std::string> warnings;
  const auto fills = resolve_fills(manifest, data, &warnings);
  EXPECT_EQ(std::get<MeanFill>(fills[0]).mean, Tensor::vector({2.5, 3.5, 4.5}));
  EXPECT_EQ(std::get<MaskTokenFill>(fills[1]).symbol, "[MASK]");
  EXPECT_TRUE(warnings.empty());

  doc["samples"].erase(1);
  const auto single = parse_manifest(doc);
  resolve_fills(single, ManifestDataset(single), &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("single sample"), std::string::npos);
}

}  // namespace
}  // namespace mcontrib
