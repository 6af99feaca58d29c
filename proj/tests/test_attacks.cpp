#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include "glp/attacks.hpp"
#include "glp/models.hpp"

using glp::AttackConfig;
using glp::AttackKind;
namespace nn = glp::nn;
using T = double;

namespace {

// Flattens its input into a linear layer with fixed weights.
struct LinearScorer {
  nn::Parameter<T> w;
  nn::Parameter<T> b;

  LinearScorer(std::size_t in, std::size_t classes, std::vector<T> weights, std::vector<T> bias)
      : w(nn::Tensor<T>::from({classes, in}, std::move(weights))),
        b(nn::Tensor<T>::from({classes}, std::move(bias))) {}

  static LinearScorer random(std::size_t in, std::size_t classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<T> n(0.0, 1.0);
    std::vector<T> wv(in * classes), bv(classes);
    for (auto& v : wv) v = n(rng);
    for (auto& v : bv) v = n(rng);
    return {in, classes, wv, bv};
  }

  nn::Tensor<T> logits(const nn::Tensor<T>& x) const {
    return nn::linear(nn::flatten(x), w.tensor, b.tensor);
  }
};

// Two classes, scores (0, w x + c): the cross-entropy is the logistic loss.
LinearScorer logistic(T w, T c) { return {1, 2, {0.0, w}, {0.0, c}}; }

AttackConfig cfg(AttackKind kind, double eps, std::size_t steps = 10,
                 std::optional<double> lambda = std::nullopt) {
  AttackConfig c;
  c.kind = kind;
  c.epsilon = eps;
  c.steps = steps;
  c.lambda = lambda;
  return c;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double logistic_loss(double w, double c, double x, int y) {
  const double p = sigmoid(w * x + c);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

nn::Tensor<T> random_images(std::size_t n, std::size_t c, std::size_t s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<T> u(0.0, 1.0);
  std::vector<T> v(n * c * s * s);
  for (auto& e : v) e = u(rng);
  return nn::Tensor<T>::from({n, c, s, s}, std::move(v));
}

double linf(const nn::Tensor<T>& a, const nn::Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(InputGradient, LogisticClosedForm) {
  const auto m = logistic(1.7, -0.4);
  for (int y : {0, 1}) {
    const auto x = nn::Tensor<T>::from({1, 1, 1, 1}, {0.3});
    const std::vector<int> labels{y};
    const auto g = glp::input_gradient<T>(m, x, labels);
    EXPECT_NEAR(g[0], (sigmoid(1.7 * 0.3 - 0.4) - y) * 1.7, 1e-12);
  }
}

TEST(InputGradient, SumsOverTheBatchAndKeepsShape) {
  const auto m = LinearScorer::random(12, 3, 2);
  const auto x = random_images(4, 3, 2, 5);
  const std::vector<int> y{0, 1, 2, 1};
  const auto g = glp::input_gradient<T>(m, x, y);
  EXPECT_EQ(g.shape(), x.shape());
  // One sample alone gets the same gradient as in the batch.
  const auto x1 = nn::Tensor<T>::from({1, 3, 2, 2}, std::vector<T>(x.values().begin() + 12,
                                                                   x.values().begin() + 24));
  const std::vector<int> y1{1};
  const auto g1 = glp::input_gradient<T>(m, x1, y1);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(g[12 + i], g1[i], 1e-12);
}

TEST(InputGradient, ZeroWeightsGiveZeroGradient) {
  const LinearScorer m(4, 2, std::vector<T>(8, 0.0), {0.5, -0.5});
  const auto x = random_images(2, 1, 2, 3);
  const std::vector<int> y{0, 1};
  const auto g = glp::input_gradient<T>(m, x, y);
  for (T v : g.values()) EXPECT_EQ(v, 0.0);
  // sign(0) = 0, so FGSM leaves the image alone.
  const auto adv = glp::attack<T>(m, x, y, cfg(AttackKind::fgsm, 0.1));
  EXPECT_EQ(linf(adv, x), 0.0);
}

TEST(InputGradient, RequiresGradMode) {
  const auto m = logistic(1.0, 0.0);
  const auto x = nn::Tensor<T>::from({1, 1, 1, 1}, {0.5});
  const std::vector<int> y{1};
  nn::NoGradGuard ng;
  EXPECT_THROW(glp::input_gradient<T>(m, x, y), glp::UsageError);
}

TEST(Fgsm, ZeroEpsilonIsIdentity) {
  const auto m = LinearScorer::random(48, 4, 9);
  const auto x = random_images(3, 3, 4, 1);
  const std::vector<int> y{0, 3, 2};
  for (auto kind : {AttackKind::fgsm, AttackKind::pgd}) {
    const auto adv = glp::attack<T>(m, x, y, cfg(kind, 0.0));
    ASSERT_EQ(adv.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(adv[i], x[i]);
  }
}

TEST(Fgsm, InteriorPixelsMoveByExactlyEpsilon) {
  const auto m = LinearScorer::random(16, 2, 4);
  std::vector<T> v(16);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.3 + 0.025 * static_cast<double>(i);
  const auto x = nn::Tensor<T>::from({1, 1, 4, 4}, v);
  const std::vector<int> y{1};
  const double eps = 0.05;
  const auto adv = glp::attack<T>(m, x, y, cfg(AttackKind::fgsm, eps));
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(std::abs(adv[i] - x[i]), eps, 1e-15);
}

TEST(Fgsm, LogisticAdversarialLossMatchesClosedForm) {
  const double w = -2.3, c = 0.6, x0 = 0.42, eps = 0.07;
  const auto m = logistic(w, c);
  for (int y : {0, 1}) {
    const auto x = nn::Tensor<T>::from({1, 1, 1, 1}, {x0});
    const std::vector<int> labels{y};
    const auto adv = glp::attack<T>(m, x, labels, cfg(AttackKind::fgsm, eps));
    const double dir = w * (sigmoid(w * x0 + c) - y) > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(logistic_loss(w, c, adv[0], y), logistic_loss(w, c, x0 + eps * dir, y), 1e-12);
    EXPECT_GT(logistic_loss(w, c, adv[0], y), logistic_loss(w, c, x0, y));
  }
}

TEST(Fgsm, ClampsToTheUnitRange) {
  const auto m = logistic(5.0, 0.0);
  const auto x = nn::Tensor<T>::from({2, 1, 1, 1}, {0.98, 0.01});
  const std::vector<int> y{0, 1};  // pushes the first up and the second down
  const auto adv = glp::attack<T>(m, x, y, cfg(AttackKind::fgsm, 0.1));
  EXPECT_EQ(adv[0], 1.0);
  EXPECT_EQ(adv[1], 0.0);
}

TEST(Pgd, OneFullStepEqualsFgsm) {
  const auto m = LinearScorer::random(27, 3, 6);
  const auto x = random_images(5, 3, 3, 8);
  const std::vector<int> y{0, 1, 2, 0, 1};
  for (double eps : {0.001, 0.03, 0.2}) {
    const auto f = glp::attack<T>(m, x, y, cfg(AttackKind::fgsm, eps));
    const auto p = glp::attack<T>(m, x, y, cfg(AttackKind::pgd, eps, 1, eps));
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(f[i], p[i]);
  }
}

TEST(Pgd, QuadraticMatchesHandIteration) {
  // J(x) = (x - 0.5)^2 pushes x away from 0.5; start left of it.
  auto grad = [](const nn::Tensor<T>& at) {
    return nn::Tensor<T>::from(at.shape(), {2.0 * (at[0] - 0.5)});
  };
  const auto x = nn::Tensor<T>::from({1}, {0.45});
  const double eps = 0.3, lambda = 0.1;
  const auto adv = glp::pgd<T>(grad, x, eps, 10, lambda);
  double h = 0.45;
  std::vector<double> path;
  for (int s = 0; s < 10; ++s) {
    const double step = 2.0 * (h - 0.5) > 0 ? lambda : -lambda;
    h = std::clamp(h + step, std::max(0.0, 0.45 - eps), std::min(1.0, 0.45 + eps));
    path.push_back(h);
  }
  EXPECT_DOUBLE_EQ(adv[0], h);
  EXPECT_NEAR(h, 0.15, 1e-12);  // saturated at the ball boundary
  EXPECT_NEAR(path[2], 0.15, 1e-12);
  EXPECT_NEAR(path[1], 0.25, 1e-12);
}

TEST(Pgd, ZeroEpsilonAnyStepsIsIdentity) {
  const auto m = LinearScorer::random(8, 2, 3);
  const auto x = random_images(2, 2, 2, 4);
  const std::vector<int> y{0, 1};
  const auto adv = glp::attack<T>(m, x, y, cfg(AttackKind::pgd, 0.0, 7, 0.05));
  EXPECT_EQ(linf(adv, x), 0.0);
}

TEST(Attacks, LinfContainmentOnRandomModels) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto m = LinearScorer::random(75, 4, 100 + seed);
    const auto x = random_images(6, 3, 5, 200 + seed);
    const std::vector<int> y{0, 1, 2, 3, 0, 1};
    for (double eps : {0.001, 0.01, 0.1, 0.5}) {
      for (const AttackConfig& cfg :
           {cfg(AttackKind::fgsm, eps), cfg(AttackKind::pgd, eps, 10),
            cfg(AttackKind::pgd, eps, 3, eps)}) {
        const auto adv = glp::attack<T>(m, x, y, cfg);
        EXPECT_LE(linf(adv, x), eps + 1e-6);
        for (T v : adv.values()) {
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
        }
      }
    }
  }
}

TEST(Attacks, LinfContainmentThroughTheSmartFilter) {
  glp::ModelSpec s;
  s.kind = glp::ModelKind::glp;
  s.arch.gas.input_size = s.arch.local.input_size = 16;
  s.class_names = {"a", "b"};
  auto m = glp::Model<T>::build(s, 3);
  std::mt19937_64 rng(11);
  std::normal_distribution<T> n(0.0, 0.1);
  for (auto& v : m.head.weight.tensor.values()) v = n(rng);
  const auto before = m.state();
  const auto x = random_images(2, 1, 16, 7);
  const std::vector<int> y{0, 1};
  for (double eps : {0.01, 0.05}) {
    const auto f = glp::attack<T>(m, x, y, cfg(AttackKind::fgsm, eps));
    const auto p = glp::attack<T>(m, x, y, cfg(AttackKind::pgd, eps));
    EXPECT_LE(linf(f, x), eps + 1e-6);
    EXPECT_LE(linf(p, x), eps + 1e-6);
    EXPECT_GT(linf(f, x), 0.0);
  }
  EXPECT_EQ(m.state(), before);
}

TEST(Attacks, ParametersAreUntouched) {
  auto m = LinearScorer::random(12, 3, 1);
  const std::vector<T> w0(m.w.tensor.values().begin(), m.w.tensor.values().end());
  const auto x = random_images(2, 3, 2, 2);
  const std::vector<int> y{2, 0};
  (void)glp::attack<T>(m, x, y, cfg(AttackKind::pgd, 0.1));
  (void)glp::attack<T>(m, x, y, cfg(AttackKind::fgsm, 0.1));
  EXPECT_EQ(std::vector<T>(m.w.tensor.values().begin(), m.w.tensor.values().end()), w0);
  EXPECT_FALSE(m.w.tensor.has_grad());
}

TEST(AttackConfig, Validation) {
  EXPECT_THROW((cfg(AttackKind::fgsm, -0.1).validate()), glp::DomainError);
  EXPECT_THROW((cfg(AttackKind::pgd, 0.1, 0).validate()), glp::DomainError);
  EXPECT_THROW((cfg(AttackKind::pgd, 0.1, 3, -1.0).validate()), glp::DomainError);
  EXPECT_DOUBLE_EQ((cfg(AttackKind::pgd, 0.09).step_size()), 0.03);
  EXPECT_EQ(glp::parse_attack("pgd"), AttackKind::pgd);
  EXPECT_THROW(glp::parse_attack("cw"), glp::ConfigError);
}

namespace {

// Ten 1-pixel images scored by the sign of x - 0.5. One is naturally
// misclassified and three sit within 0.1 of the threshold.
glp::Dataset threshold_set() {
  glp::Dataset d;
  d.height = d.width = 1;
  d.class_names = {"dark", "light"};
  d.pixels = {0.1f, 0.2f, 0.3f, 0.45f, 0.52f, 0.55f, 0.65f, 0.9f, 0.95f, 0.7f};
  d.labels = {0, 0, 0, 0, 1, 1, 1, 1, 1, 0};
  return d;
}

}  // namespace

TEST(Sweep, RuleArithmeticOnTenImages) {
  const auto m = logistic(20.0, -10.0);
  glp::SweepConfig cfg;
  cfg.epsilons = {0.0, 0.1};
  cfg.batch = 4;
  const auto rep = glp::robustness_sweep<T>(m, threshold_set(), cfg);
  EXPECT_DOUBLE_EQ(rep.natural_accuracy, 0.9);
  for (auto kind : {AttackKind::fgsm, AttackKind::pgd}) {
    const auto& r0 = rep.row(kind, 0.0);
    EXPECT_EQ(r0.mean, rep.natural_accuracy);
    const auto& r = rep.row(kind, 0.1);
    EXPECT_EQ(r.counts.total, 10u);
    EXPECT_EQ(r.counts.natural_miss, 1u);
    EXPECT_EQ(r.counts.adversarial_miss, 3u);
    EXPECT_DOUBLE_EQ(r.mean, 0.6);
    ASSERT_EQ(r.repeats.size(), 5u);
    for (double a : r.repeats) EXPECT_DOUBLE_EQ(a, 0.6);
  }
}

TEST(Sweep, NeverFlippingAttackKeepsPerfectAccuracy) {
  glp::Dataset d = threshold_set();
  d.pixels = {0.0f, 0.0f, 0.0f, 0.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 0.0f};
  const auto m = logistic(20.0, -10.0);
  glp::SweepConfig cfg;
  cfg.epsilons = {0.0, 0.1, 0.3};
  const auto rep = glp::robustness_sweep<T>(m, d, cfg);
  for (const auto& r : rep.rows) EXPECT_DOUBLE_EQ(r.mean, 1.0);
}

TEST(Sweep, CsvLayoutAndErrors) {
  const auto m = logistic(20.0, -10.0);
  glp::SweepConfig cfg;
  cfg.attacks = {AttackKind::fgsm};
  cfg.epsilons = {0.1};
  cfg.repeats = 2;
  const auto rep = glp::robustness_sweep<T>(m, threshold_set(), cfg);
  std::ostringstream os;
  glp::write_sweep_csv(os, rep);
  EXPECT_EQ(os.str(),
            "attack,epsilon,repeat,accuracy\n"
            "fgsm,0.1,0,0.600000\n"
            "fgsm,0.1,1,0.600000\n"
            "fgsm,0.1,mean,0.600000\n");
  EXPECT_THROW(rep.row(AttackKind::pgd, 0.1), glp::UsageError);
  EXPECT_THROW(glp::robustness_sweep<T>(m, glp::Dataset{}, cfg), glp::DomainError);
}
