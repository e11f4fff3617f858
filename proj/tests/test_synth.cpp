#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mcdu/clustering.hpp"
#include "mcdu/ingest.hpp"
#include "mcdu/synth.hpp"
#include "test_support.hpp"

namespace mcdu {
namespace {

SceneSpec base_spec() {
  SceneSpec spec;
  spec.seed = 99;
  InstanceSpec a, b;
  a.true_box = BBox(40, 40, 140, 120);
  b.true_box = BBox(300, 200, 420, 330);
  b.true_class = 3;
  b.mask_shape = MaskShape::Box;
  spec.instances = {a, b};
  return spec;
}

std::string serialized(const SynthScene& s) {
  std::ostringstream out;
  write_sample_set(out, s.samples);
  write_ground_truth(out, s.ground_truth);
  for (int l : s.true_labels) out << l << '\n';
  return out.str();
}

TEST(Generate, DeterministicPerSeed) {
  auto spec = base_spec();
  spec.instances[0].mask_noise = 0.2;
  spec.instances[1].miss_rate = 0.1;
  EXPECT_EQ(serialized(generate(spec)), serialized(generate(spec)));
  auto other = spec;
  other.seed = 100;
  EXPECT_NE(serialized(generate(spec)), serialized(generate(other)));
}

TEST(Generate, NoiselessRepetitionsAreIdentical) {
  auto spec = base_spec();
  for (auto& in : spec.instances) {
    in.box_jitter_sigma = 0.0;
    in.class_confusion = 0.0;
  }
  const auto scene = generate(spec);
  ASSERT_EQ(scene.samples.detections.size(), 200u);
  for (std::size_t i = 2; i < scene.samples.detections.size(); ++i) {
    const auto& d = scene.samples.detections[i];
    const auto& first = scene.samples.detections[i % 2];
    EXPECT_EQ(d.bbox, first.bbox);
    EXPECT_EQ(d.scores, first.scores);
    EXPECT_EQ(d.mask, first.mask);
  }
  const auto clusters = cluster_pipeline(scene.samples, {});
  EXPECT_TRUE(testing::same_partition(testing::labels_from_clusters(clusters, 200), scene.true_labels));
}

TEST(Generate, MissRateOneSilencesInstance) {
  auto spec = base_spec();
  spec.instances[1].miss_rate = 1.0;
  const auto scene = generate(spec);
  EXPECT_EQ(scene.samples.detections.size(), 100u);
  for (int l : scene.true_labels) EXPECT_EQ(l, 0);
  EXPECT_EQ(scene.ground_truth.size(), 2u);
}

TEST(Generate, LabelBookkeeping) {
  auto spec = base_spec();
  spec.instances[0].miss_rate = 0.3;
  const auto scene = generate(spec);
  ASSERT_EQ(scene.true_labels.size(), scene.samples.detections.size());
  for (int l : scene.true_labels) {
    EXPECT_GE(l, 0);
    EXPECT_LT(l, 2);
  }
  for (std::size_t i = 1; i < scene.samples.detections.size(); ++i) {
    EXPECT_LE(scene.samples.detections[i - 1].repetition, scene.samples.detections[i].repetition);
  }
}

TEST(Generate, EdgeNoiseMatchesSigma) {
  SceneSpec spec;
  spec.seed = 3;
  spec.n_repetitions = 2000;
  InstanceSpec a;
  a.true_box = BBox(200, 150, 300, 260);
  a.box_jitter_sigma = 2.5;
  spec.instances = {a};
  const auto scene = generate(spec);
  double sum[4] = {}, sq[4] = {};
  for (const auto& d : scene.samples.detections) {
    const double v[4] = {d.bbox.x1(), d.bbox.y1(), d.bbox.x2(), d.bbox.y2()};
    for (int i = 0; i < 4; ++i) {
      sum[i] += v[i];
      sq[i] += v[i] * v[i];
    }
  }
  const double n = 2000.0;
  for (int i = 0; i < 4; ++i) {
    const double sd = std::sqrt(sq[i] / n - (sum[i] / n) * (sum[i] / n));
    EXPECT_NEAR(sd, 2.5, 0.25);
  }
}

TEST(Generate, ScoresLeakHalfToBackground) {
  SceneSpec spec;
  spec.seed = 5;
  InstanceSpec a;
  a.true_box = BBox(10, 10, 50, 50);
  a.class_confusion = 0.2;
  a.true_class = 2;
  spec.instances = {a};
  for (const auto& d : generate(spec).samples.detections) {
    const double leak = 1.0 - d.scores[2];
    EXPECT_NEAR(d.scores.background(), 0.5 * leak, 1e-12);
    EXPECT_LE(leak, 0.3 + 1e-12);
    EXPECT_GE(leak, 0.1 - 1e-12);
  }
}

TEST(Generate, SeparatedScenesAreRecovered) {
  // Instances 200 px apart with sigma 2.
  SceneSpec spec;
  spec.seed = 21;
  for (int i = 0; i < 3; ++i) {
    InstanceSpec in;
    in.true_box = BBox(20 + 200 * i, 100, 120 + 200 * i, 200);
    spec.instances.push_back(in);
  }
  const auto scene = generate(spec);
  const auto clusters = cluster_pipeline(scene.samples, {});
  EXPECT_GE(testing::adjusted_rand_index(testing::labels_from_clusters(clusters, scene.true_labels.size()),
                                         scene.true_labels),
            0.99);
}

TEST(Generate, MasksFollowShapeAndPresence) {
  auto spec = base_spec();
  spec.instances[0].mask_presence = 0.0;
  const auto scene = generate(spec);
  for (std::size_t i = 0; i < scene.samples.detections.size(); ++i) {
    const auto& d = scene.samples.detections[i];
    if (scene.true_labels[i] == 0) {
      EXPECT_FALSE(d.mask);
    } else {
      ASSERT_TRUE(d.mask);
      EXPECT_EQ(d.mask->height(), spec.height);
    }
  }
  // Ground-truth box masks are the rasterized boxes.
  EXPECT_EQ(*scene.ground_truth[1].mask, rasterize_box(scene.ground_truth[1].bbox, spec.height, spec.width));
  // Ellipse masks fit inside their box.
  EXPECT_LT(scene.ground_truth[0].mask->area(), rasterize_box(scene.ground_truth[0].bbox, spec.height, spec.width).area());
}

TEST(SceneSpec, Validation) {
  auto spec = base_spec();
  spec.instances[0].miss_rate = 1.5;
  EXPECT_THROW(generate(spec), DataError);
  spec = base_spec();
  spec.instances[0].true_class = 6;
  EXPECT_THROW(generate(spec), DataError);
  spec = base_spec();
  spec.instances[0].box_jitter_sigma = -1.0;
  EXPECT_THROW(generate(spec), DataError);
  spec = base_spec();
  spec.instances[0].true_box = BBox(700, 10, 720, 20);
  EXPECT_THROW(generate(spec), DataError);
}

TEST(CalibrationRecords, ShapeAndDeterminism) {
  const auto a = generate_calibration_records(300, 2.0, 4, 8);
  const auto b = generate_calibration_records(300, 2.0, 4, 8);
  ASSERT_EQ(a.size(), 300u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].logits, b[i].logits);
    EXPECT_EQ(a[i].logits.size(), 5u);
    EXPECT_GE(a[i].true_class, 0);
    EXPECT_LT(a[i].true_class, 5);
  }
  EXPECT_THROW(generate_calibration_records(0, 1.0, 4, 1), std::invalid_argument);
  EXPECT_THROW(generate_calibration_records(10, 0.0, 4, 1), std::invalid_argument);
}

TEST(CalibrationRecords, UnitTemperatureRecovered) {
  const double t = fit_temperature(generate_calibration_records(10000, 1.0, 5, 77));
  EXPECT_GE(t, 0.9);
  EXPECT_LE(t, 1.1);
}

}  // namespace
}  // namespace mcdu
