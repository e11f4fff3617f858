#include <gtest/gtest.h>

#include <sstream>

#include "mcdu/ingest.hpp"
#include "mcdu/synth.hpp"

namespace mcdu {
namespace {

const char* kHeader = R"({"image_id":"img","height":4,"width":4,"n_repetitions":3,"num_classes":2})";

SampleSet parse(const std::string& text, const IngestConfig& cfg = {}) {
  std::istringstream in(text);
  return parse_sample_set(in, cfg);
}

Detection det(double bg, int rep = 0) {
  return Detection{BBox(0, 0, 2, 2), ScoreVector({bg, 1.0 - bg, 0.0}), std::nullopt, rep};
}

TEST(ParseSampleSet, HeaderOnly) {
  const auto s = parse(std::string(kHeader) + "\n");
  EXPECT_EQ(s.image_id, "img");
  EXPECT_EQ(s.n_repetitions, 3);
  EXPECT_TRUE(s.detections.empty());
}

TEST(ParseSampleSet, OneRecordPerRepetitionSortedByRepetition) {
  std::string text = std::string(kHeader) + "\n";
  for (int rep : {2, 0, 1}) {
    text += R"({"repetition":)" + std::to_string(rep) + R"(,"bbox":[0,0,2,2],"scores":[0.1,0.8,0.1]})" + "\n";
  }
  const auto s = parse(text);
  ASSERT_EQ(s.detections.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(s.detections[i].repetition, i);
}

TEST(ParseSampleSet, BadRunsNameTheLine) {
  const std::string text = std::string(kHeader) + "\n" +
                           R"({"repetition":0,"bbox":[0,0,2,2],"scores":[0.1,0.8,0.1],"mask_runs":[3,12]})" + "\n";
  try {
    parse(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(ParseSampleSet, RejectsStructuralErrors) {
  const std::string h = std::string(kHeader) + "\n";
  // Repetition out of range.
  EXPECT_THROW(parse(h + R"({"repetition":3,"bbox":[0,0,2,2],"scores":[0.1,0.8,0.1]})"), ParseError);
  // Wrong score count for k = 2.
  EXPECT_THROW(parse(h + R"({"repetition":0,"bbox":[0,0,2,2],"scores":[0.2,0.8]})"), ParseError);
  // Unknown field.
  EXPECT_THROW(parse(h + R"({"repetition":0,"bbox":[0,0,2,2],"scores":[0.1,0.8,0.1],"extra":1})"), ParseError);
  // Field order.
  EXPECT_THROW(parse(h + R"({"bbox":[0,0,2,2],"repetition":0,"scores":[0.1,0.8,0.1]})"), ParseError);
  // Not JSON.
  EXPECT_THROW(parse(h + "{oops"), ParseError);
  EXPECT_THROW(parse(""), ParseError);
}

TEST(ParseSampleSet, ClampsOvershootingBoxes) {
  const std::string text = std::string(kHeader) + "\n" + R"({"repetition":0,"bbox":[-1,1,6,3],"scores":[0.1,0.8,0.1]})";
  EXPECT_EQ(parse(text).detections.at(0).bbox, BBox(0, 1, 4, 3));
  IngestConfig strict;
  strict.clamp_boxes = false;
  EXPECT_THROW(parse(text, strict), ParseError);
}

TEST(ParseSampleSet, SerializeRoundTrip) {
  SceneSpec spec;
  spec.height = 60;
  spec.width = 80;
  spec.n_repetitions = 5;
  spec.seed = 17;
  InstanceSpec a;
  a.true_box = BBox(5.5, 7.25, 30, 40);
  a.mask_noise = 0.3;
  a.mask_presence = 0.5;
  spec.instances = {a};
  const auto scene = generate(spec);
  std::ostringstream out;
  write_sample_set(out, scene.samples);
  EXPECT_EQ(parse(out.str()), scene.samples);
}

TEST(FilterBackground, Examples) {
  SampleSet s;
  s.n_repetitions = 1;
  s.detections = {det(0.0), det(0.0)};
  EXPECT_EQ(filter_background(s, {}).detections, s.detections);

  s.detections = {det(0.46)};
  EXPECT_TRUE(filter_background(s, {}).detections.empty());

  s.detections = {det(0.45)};
  EXPECT_EQ(filter_background(s, {}).detections.size(), 1u);
}

TEST(FilterBackground, MixedSetKeepsOrderAndIsIdempotent) {
  SampleSet s;
  s.n_repetitions = 10;
  const std::vector<double> bgs{0.1, 0.5, 0.2, 0.9, 0.3, 0.0, 0.46, 0.45, 0.05, 0.4};
  for (std::size_t i = 0; i < bgs.size(); ++i) s.detections.push_back(det(bgs[i], static_cast<int>(i)));
  std::vector<Detection> expected;
  for (const auto& d : s.detections) {
    if (!(d.scores.background() > 0.45)) expected.push_back(d);
  }
  const auto once = filter_background(s, {});
  EXPECT_EQ(once.detections.size(), 7u);
  EXPECT_EQ(once.detections, expected);
  EXPECT_EQ(filter_background(once, {}), once);
}

TEST(FilterLegacy, DropsWhenNoForegroundClassClearsThreshold) {
  SampleSet s;
  s.n_repetitions = 1;
  s.detections = {Detection{BBox(0, 0, 1, 1), ScoreVector({0.96, 0.04, 0.0}), std::nullopt, 0},
                  Detection{BBox(0, 0, 1, 1), ScoreVector({0.9, 0.06, 0.04}), std::nullopt, 0}};
  IngestConfig cfg;
  cfg.background_threshold = 1.0;
  cfg.legacy_min_class_score = 0.05;
  const auto out = postprocess(s, cfg);
  ASSERT_EQ(out.detections.size(), 1u);
  EXPECT_EQ(out.detections[0], s.detections[1]);
}

}  // namespace
}  // namespace mcdu
