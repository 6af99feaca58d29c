#include <gtest/gtest.h>

#include <map>
#include <set>

#include "glp/manifest.hpp"
#include "glp/textured.hpp"
#include "test_util.hpp"

using glp::Shape;
using glp::Texture;

TEST(Textured, DeterministicBoundedAndSeeded) {
  const auto a = glp::render_textured_shape(Shape::circle, Texture::checker, 64, 3);
  const auto b = glp::render_textured_shape(Shape::circle, Texture::checker, 64, 3);
  const auto c = glp::render_textured_shape(Shape::circle, Texture::checker, 64, 4);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a.channels(), 1u);
  for (double v : a.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Textured, ShapeFactorChangesOnlyTheFootprint) {
  // Same seed, same placement and texture draw: a circle is the square with
  // its corners replaced by background, so the square has more pixels far
  // from the background level.
  auto far_from_gray = [](const glp::Image& img) {
    std::size_t n = 0;
    for (double v : img.data()) n += std::abs(v - 0.5) > 0.3;
    return n;
  };
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto sq = glp::render_textured_shape(Shape::square, Texture::stripes, 64, seed);
    const auto ci = glp::render_textured_shape(Shape::circle, Texture::stripes, 64, seed);
    EXPECT_GT(far_from_gray(sq), far_from_gray(ci));
  }
}

TEST(Textured, DatasetIsBalancedSplitAndReproducible) {
  testutil::TempDir a("tex_a"), b("tex_b");
  const auto m = glp::generate_textured_dataset(20, 32, a.path(), 5);
  ASSERT_EQ(m.records.size(), 20u);
  std::map<std::string, int> per_class;
  std::map<std::string, int> per_split;
  for (const auto& r : m.records) {
    ++per_class[r.global_label + "/" + r.local_label];
    ++per_split[r.split];
  }
  EXPECT_EQ(per_class.size(), 4u);
  for (const auto& [k, n] : per_class) EXPECT_EQ(n, 5) << k;
  EXPECT_EQ(per_split["train"], 12);
  EXPECT_EQ(per_split["val"], 4);
  EXPECT_EQ(per_split["test"], 4);
  EXPECT_EQ(glp::read_manifest(a / glp::kManifestFile).records, m.records);

  const auto m2 = glp::generate_textured_dataset(20, 32, b.path(), 5);
  EXPECT_EQ(m.records, m2.records);
  for (const auto& r : m.records) {
    EXPECT_EQ(glp::read_file_bytes((a / r.path).string()),
              glp::read_file_bytes((b / r.path).string()));
  }
  const auto d = glp::load_dataset(m, glp::LabelTask::joint);
  EXPECT_EQ(d.class_names.size(), 4u);
  EXPECT_THROW(glp::generate_textured_dataset(3, 32, a.path(), 1), glp::DomainError);
}
