#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "glp/navon.hpp"
#include "glp/spectral.hpp"
#include "oracles.hpp"

using glp::Image;

namespace {

Image random_plane(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(h, w, 1);
  for (double& v : img.data()) v = u(rng);
  return img;
}

// Smooth "natural-ish" image: a few random gratings plus mild noise.
Image smooth_scene(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(n, n, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const double fx = 1 + 4 * u(rng), fy = 1 + 4 * u(rng), ph = 6.28 * u(rng);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        img.at(y, x, c) = std::clamp(
            0.5 + 0.3 * std::sin(6.2832 * (fx * x + fy * y) / n + ph) + 0.1 * (u(rng) - 0.5),
            0.0, 1.0);
  }
  return img;
}

}  // namespace

TEST(SpectralDft, ConstantImageIsDcOnly) {
  const Image c(6, 10, 1, 0.25);
  const auto s = glp::dft2(c);
  for (std::size_t u = 0; u < s.height; ++u) {
    for (std::size_t v = 0; v < s.width; ++v) {
      const double expected = (u == 3 && v == 5) ? 0.25 * 60 : 0.0;
      EXPECT_NEAR(std::abs(s.at(u, v) - glp::cplx(expected, 0)), 0.0, 1e-12);
    }
  }
}

TEST(SpectralDft, ImpulseHasFlatMagnitude) {
  Image d(8, 5, 1, 0.0);
  d.at(0, 0) = 1.0;
  const auto s = glp::dft2(d);
  for (const auto& z : s.values) EXPECT_NEAR(std::abs(z), 1.0, 1e-12);
}

TEST(SpectralDft, MatchesDirectTransformForAnySize) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {12, 7}, {5, 16}, {9, 9}}) {
    const Image img = random_plane(h, w, h * 31 + w);
    const auto s = glp::dft2(img);
    const std::vector<glp::cplx> z(img.data().begin(), img.data().end());
    const auto ref = oracle::naive_dft2(z, h, w, false);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const auto& got = s.at((y + h / 2) % h, (x + w / 2) % w);
        EXPECT_LT(std::abs(got - ref[y * w + x]), 1e-9) << h << "x" << w;
      }
    }
  }
}

TEST(SpectralDft, RoundtripIsExactToDoublePrecision) {
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {64, 64}, {13, 20}}) {
    const Image img = random_plane(h, w, 99);
    const auto back = glp::idft2_real(glp::dft2(img));
    double err = 0.0;
    for (std::size_t i = 0; i < back.size(); ++i) {
      err = std::max(err, std::abs(back[i] - img.data()[i]));
    }
    EXPECT_LT(err, 1e-9) << h << "x" << w;
  }
}

TEST(SpectralLowpass, GainAtCenterAndAtRadiusAlpha) {
  const Image img = random_plane(16, 16, 1);
  const auto s = glp::dft2(img);
  const double alpha = 3.0;
  const auto f = glp::gaussian_lowpass(s, alpha);
  EXPECT_EQ(f.at(8, 8), s.at(8, 8));
  // (8 + 3, 8) lies at distance exactly alpha from the center.
  const glp::cplx ratio = f.at(11, 8) / s.at(11, 8);
  EXPECT_NEAR(ratio.real(), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(std::exp(-0.5), 0.6065, 1e-4);
}

TEST(SpectralLowpass, HugeAlphaIsIdentity) {
  const Image img = random_plane(64, 64, 2);
  const auto s = glp::dft2(img);
  const auto f = glp::gaussian_lowpass(s, 1e6);
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    EXPECT_LT(std::abs(f.values[i] - s.values[i]), 1e-6);
  }
  const Image out = glp::filter_image(img, 1e6);
  for (std::size_t i = 0; i < img.size(); ++i) {
    EXPECT_NEAR(out.data()[i], img.data()[i], 1e-6);
  }
}

TEST(SpectralLowpass, RejectsNonPositiveAlpha) {
  const auto s = glp::dft2(Image(8, 8, 1, 0.5));
  EXPECT_THROW(glp::gaussian_lowpass(s, 0.0), glp::DomainError);
  EXPECT_THROW(glp::gaussian_lowpass(s, -1.0), glp::DomainError);
  EXPECT_THROW(glp::filter_image(Image(8, 8, 1), 0.0), glp::DomainError);
}

TEST(SpectralLowpass, GainIsMonotoneInAlpha) {
  const auto d2 = glp::squared_frequency_radius(16, 12);
  const std::vector<double> alphas{0.3, 0.8, 1.0, 2.5, 7.0, 40.0};
  for (std::size_t a = 1; a < alphas.size(); ++a) {
    for (double r2 : d2) {
      EXPECT_LE(glp::gaussian_gain(r2, alphas[a - 1]), glp::gaussian_gain(r2, alphas[a]));
    }
  }
}

TEST(SpectralFilter, ConstantImageIsUnchanged) {
  const Image c(16, 16, 3, 0.6);
  for (double alpha : {0.5, 2.0, 100.0}) {
    const Image out = glp::filter_image(c, alpha);
    for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(out.data()[i], 0.6, 1e-12);
  }
}

TEST(SpectralFilter, CheckerboardCollapsesToGray) {
  Image board(64, 64, 1);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) board.at(y, x) = (x + y) % 2 ? 1.0 : 0.0;
  const Image out = glp::filter_image(board, 1.0);
  const std::vector<double> plane(board.data().begin(), board.data().end());
  const auto ref = oracle::naive_lowpass(plane, 64, 64, 1.0);
  double oracle_dev = 0.0, dev = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    oracle_dev = std::max(oracle_dev, std::abs(std::clamp(ref[i], 0.0, 1.0) - 0.5));
    dev = std::max(dev, std::abs(out.data()[i] - 0.5));
  }
  // Only DC and the (32, 32) Nyquist bin carry energy; the latter's gain is
  // exp(-1024), far below double resolution.
  EXPECT_LT(oracle_dev, 1e-12);
  EXPECT_LT(dev, 1e-12);
  EXPECT_NEAR(dev, oracle_dev, 1e-12);
}

TEST(SpectralFilter, MatchesDirectTransformFiltering) {
  const Image img = random_plane(12, 10, 17);
  const std::vector<double> plane(img.data().begin(), img.data().end());
  for (double alpha : {0.7, 2.0, 4.5}) {
    const auto ref = oracle::naive_lowpass(plane, 12, 10, alpha);
    const Image out = glp::filter_image(img, alpha);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      EXPECT_NEAR(out.data()[i], std::clamp(ref[i], 0.0, 1.0), 1e-12);
    }
  }
}

TEST(SmartFilter, ConstantImagePicksSmallestAlpha) {
  const auto r = glp::smart_filter(Image(16, 16, 1, 0.3));
  ASSERT_EQ(r.profile.alphas.size(), glp::kDefaultAlphaGridSize);
  for (double e : r.profile.entropies) EXPECT_EQ(e, 0.0);
  EXPECT_EQ(r.profile.alpha_star, r.profile.alphas.front());
  EXPECT_DOUBLE_EQ(r.profile.alpha_star, 0.5);
  EXPECT_DOUBLE_EQ(r.profile.alphas.back(), 8.0);
}

TEST(SmartFilter, NavonStimulusMatchesExhaustiveSearch) {
  glp::StimulusSpec spec;
  spec.global_shape = glp::Shape::circle;
  spec.local_shape = glp::Shape::square;
  spec.image_size = 64;
  spec.local_size = 8;
  spec.sparsity = 1.2;
  spec.line_width = 1;
  spec.seed = 7;
  const Image stim = glp::render_compound_stimulus(spec);
  const auto r = glp::smart_filter(stim);
  const double exhaustive = oracle::exhaustive_alpha_star(stim, 0.5, 32.0);
  const auto& a = r.profile.alphas;
  const std::size_t k = r.profile.star_index;
  const double cell = std::max({1.0, k > 0 ? a[k] - a[k - 1] : 0.0,
                                k + 1 < a.size() ? a[k + 1] - a[k] : 0.0});
  EXPECT_LE(std::abs(r.profile.alpha_star - exhaustive), cell)
      << "alpha*=" << r.profile.alpha_star << " exhaustive=" << exhaustive;
}

TEST(SmartFilter, ProfileIsBoundedOnNaturalImage) {
  const Image scene = smooth_scene(48, 4);
  const auto r = glp::smart_filter(scene);
  for (double e : r.profile.entropies) {
    EXPECT_TRUE(std::isfinite(e));
    EXPECT_GE(e, 0.0);
    EXPECT_LE(e, 8.0);
  }
  const double best = *std::max_element(r.profile.entropies.begin(), r.profile.entropies.end());
  EXPECT_EQ(r.profile.entropies[r.profile.star_index], best);
  for (std::size_t i = 0; i < r.profile.star_index; ++i) EXPECT_LT(r.profile.entropies[i], best);
}

TEST(SmartFilter, OutputEqualsFilterAtAlphaStarAndIsDeterministic) {
  const Image scene = smooth_scene(32, 8);
  const auto r1 = glp::smart_filter(scene);
  const auto r2 = glp::smart_filter(scene);
  EXPECT_EQ(r1.image, glp::filter_image(scene, r1.profile.alpha_star));
  EXPECT_EQ(r1.profile.entropies, r2.profile.entropies);
  EXPECT_EQ(r1.profile.alpha_star, r2.profile.alpha_star);
  EXPECT_EQ(r1.image, r2.image);
}

TEST(SmartFilter, RejectsBadGridsAndTinyImages) {
  const Image img = random_plane(16, 16, 3);
  EXPECT_THROW(glp::smart_filter(img, std::vector<double>{}), glp::DomainError);
  EXPECT_THROW(glp::smart_filter(img, std::vector<double>{2.0, 1.0}), glp::DomainError);
  EXPECT_THROW(glp::smart_filter(img, std::vector<double>{0.0, 1.0}), glp::DomainError);
  EXPECT_THROW(glp::smart_filter(Image(4, 16, 1)), glp::DomainError);
  const auto r = glp::smart_filter(img, std::vector<double>{1.0, 2.0, 3.0});
  EXPECT_EQ(r.profile.alphas.size(), 3u);
}

TEST(SmartFilter, ProfileCsvFormat) {
  glp::EntropyProfile p{{0.5, 1.0}, {0.25, 1.5}, 1.0, 1};
  std::ostringstream os;
  glp::write_profile_csv(os, p);
  EXPECT_EQ(os.str(), "alpha,entropy\n0.5,0.25\n1,1.5\n# alpha_star=1\n");
}
