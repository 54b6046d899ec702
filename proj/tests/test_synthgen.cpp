#include <algorithm>
#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "cme/synthgen.hpp"

namespace cme::synth {
namespace {

TEST(SpriteGrid, FullGridCount) {
  const auto full = SpriteConfig::full();
  EXPECT_EQ(full.combination_count(), 737280u);
  EXPECT_EQ(enumerate_concepts(full).values.rows(), 737280);
}

TEST(SpriteGrid, SubsampledGridCount) {
  const SpriteConfig config;
  EXPECT_EQ(config.combination_count(), 36864u);
  EXPECT_EQ(config.rotation_values().size(), 8u);
  EXPECT_EQ(config.position_values().size(), 16u);
  EXPECT_EQ(config.scale_values().size(), 6u);
}

TEST(SpriteGrid, EveryTupleOnceInLexicographicOrder) {
  const auto table = enumerate_concepts(SpriteConfig{});
  ASSERT_EQ(table.names.size(), 6u);
  EXPECT_EQ(table.names[1], "shape");
  std::set<std::tuple<int, int, int, int, int>> seen;
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    const auto r = table.values.row(i);
    EXPECT_EQ(r(kColor), 0);
    seen.insert({r(kShape), r(kScale), r(kRotation), r(kPosX), r(kPosY)});
  }
  EXPECT_EQ(seen.size(), 36864u);
  EXPECT_EQ(table.values.row(1)(kPosY), 1);
  EXPECT_EQ(table.values.row(16)(kPosX), 1);
}

TEST(SpriteGrid, RenderingIsDeterministicAndNonDegenerate) {
  const SpriteConfig config;
  const auto a = generate_dsprites(config);
  const auto b = generate_dsprites(SpriteConfig{});
  EXPECT_EQ(a.pixels, b.pixels);
  const std::size_t px = 16 * 16;
  ASSERT_EQ(a.pixels.size(), a.size() * px);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto begin = a.pixels.begin() + static_cast<std::ptrdiff_t>(i * px);
    const auto on = std::count(begin, begin + static_cast<std::ptrdiff_t>(px), uint8_t{1});
    ASSERT_GE(on, 1) << "image " << i;
    ASSERT_LT(on, static_cast<std::ptrdiff_t>(px)) << "image " << i;
  }
}

TEST(SpriteGrid, LargerScaleCoversMorePixels) {
  const SpriteConfig config;
  std::vector<int32_t> small{0, 0, 0, 0, 8, 8}, large{0, 0, 5, 0, 8, 8};
  for (int shape = 0; shape < 3; ++shape) {
    small[kShape] = large[kShape] = shape;
    const auto s = render_sprite(config, small);
    const auto l = render_sprite(config, large);
    EXPECT_LT(std::count(s.begin(), s.end(), 1), std::count(l.begin(), l.end(), 1)) << shape;
  }
}

TEST(SpriteGrid, ShapesDifferAtEqualPose) {
  const SpriteConfig config;
  std::vector<int32_t> row{0, 0, 5, 0, 8, 8};
  std::set<std::vector<uint8_t>> images;
  for (int shape = 0; shape < 3; ++shape) {
    row[kShape] = shape;
    images.insert(render_sprite(config, row));
  }
  EXPECT_EQ(images.size(), 3u);
}

TEST(TaskLabels, Examples) {
  IntMatrix heart(1, 6);
  heart << 0, 2, 5, 0, 0, 0;
  EXPECT_EQ(make_task_labels(heart, Task::kTask2)[0], 17);
  EXPECT_EQ(make_task_labels(heart, Task::kTask1)[0], 2);
  EXPECT_EQ(task_class_count(Task::kTask2), 18);
  EXPECT_THROW(parse_task("task3"), ValidationError);

  const auto table = enumerate_concepts(SpriteConfig{});
  const auto t1 = make_task_labels(table.values, "task1");
  EXPECT_EQ(std::set<int32_t>(t1.begin(), t1.end()), (std::set<int32_t>{0, 1, 2}));
  const auto t2 = make_task_labels(table.values, "task2");
  std::set<std::pair<int, int>> pairs;
  std::set<int32_t> labels(t2.begin(), t2.end());
  EXPECT_EQ(labels.size(), 18u);
  for (Eigen::Index i = 0; i < table.values.rows(); ++i) {
    // Bijection: the label determines (shape, scale).
    EXPECT_EQ(t2[static_cast<std::size_t>(i)] / 6, table.values(i, kShape));
    EXPECT_EQ(t2[static_cast<std::size_t>(i)] % 6, table.values(i, kScale));
  }
}

TEST(SpriteConfig, ValidationRejectsBadSizes) {
  SpriteConfig c;
  c.image_size = 2;
  EXPECT_THROW(c.validate(), ValidationError);
  SpriteConfig r;
  r.max_radius_fraction = 0.7;
  EXPECT_THROW(r.validate(), ValidationError);
}

}  // namespace
}  // namespace cme::synth
