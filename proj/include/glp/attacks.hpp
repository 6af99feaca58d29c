#pragma once

// White-box L-infinity attacks (FGSM, PGD) and the robustness sweep.
//
// Attacks are written against a gradient callable `grad(x) -> dJ/dx` so any
// differentiable objective can be attacked; `input_gradient` supplies that
// callable for a classifier and cross-entropy loss.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "glp/models.hpp"

namespace glp {

/// Anything with eval-mode logits over raw [N, C, H, W] inputs.
template <class M, class T>
concept Classifier = requires(const M& m, const nn::Tensor<T>& x) {
  { m.logits(x) } -> std::convertible_to<nn::Tensor<T>>;
};

/// d(sum of per-sample cross-entropy)/dx. Parameters are frozen for the
/// call, so the model is left untouched.
template <class T, class M>
  requires Classifier<M, T>
nn::Tensor<T> input_gradient(const M& model, const nn::Tensor<T>& x, std::span<const int> labels) {
  if (!nn::detail::grad_mode) throw UsageError("input_gradient called with gradients disabled");
  nn::FreezeParametersGuard frozen;
  auto xin = x.detach();
  xin.set_requires_grad(true);
  const auto ce = nn::softmax_cross_entropy(model.logits(xin), labels);
  nn::backward(nn::scale(ce, static_cast<T>(labels.size())));
  std::vector<T> g(xin.numel(), T(0));
  if (xin.has_grad()) std::copy(xin.grad().begin(), xin.grad().end(), g.begin());
  return nn::Tensor<T>::from(x.shape(), std::move(g));
}

namespace detail {

template <class T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

template <class T>
void check_attack_inputs(const nn::Tensor<T>& x, const nn::Tensor<T>& g, double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw DomainError("attack epsilon must be >= 0");
  if (g.shape() != x.shape()) throw ShapeError("gradient shape does not match the input");
}

}  // namespace detail

/// clamp01(x + eps * sign(grad(x))), with sign(0) = 0.
template <class T, class G>
nn::Tensor<T> fgsm(G&& grad, const nn::Tensor<T>& x, double eps) {
  const nn::Tensor<T> g = grad(x);
  detail::check_attack_inputs(x, g, eps);
  std::vector<T> adv(x.numel());
  const T e = static_cast<T>(eps);
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = std::clamp(x[i] + e * detail::sign(g[i]), T(0), T(1));
  }
  return nn::Tensor<T>::from(x.shape(), std::move(adv));
}

/// Iterated signed steps of size `lambda`, each projected back onto the
/// eps-ball around the clean x intersected with [0, 1]. Starts from x.
template <class T, class G>
nn::Tensor<T> pgd(G&& grad, const nn::Tensor<T>& x, double eps, std::size_t steps, double lambda) {
  if (steps == 0) throw DomainError("pgd needs at least one step");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("pgd step size must be > 0");
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw DomainError("attack epsilon must be >= 0");
  const T e = static_cast<T>(eps), l = static_cast<T>(lambda);
  std::vector<T> lo(x.numel()), hi(x.numel());
  for (std::size_t i = 0; i < lo.size(); ++i) {
    lo[i] = std::max(T(0), x[i] - e);
    hi[i] = std::min(T(1), x[i] + e);
  }
  nn::Tensor<T> cur = x.detach();
  for (std::size_t s = 0; s < steps; ++s) {
    const nn::Tensor<T> g = grad(cur);
    detail::check_attack_inputs(x, g, eps);
    std::vector<T> next(x.numel());
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] = std::clamp(cur[i] + l * detail::sign(g[i]), lo[i], hi[i]);
    }
    cur = nn::Tensor<T>::from(x.shape(), std::move(next));
  }
  return cur;
}

enum class AttackKind { fgsm, pgd };

inline std::string attack_name(AttackKind k) { return k == AttackKind::fgsm ? "fgsm" : "pgd"; }

inline AttackKind parse_attack(const std::string& s) {
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "pgd") return AttackKind::pgd;
  throw ConfigError("unknown attack '" + s + "'");
}

struct AttackConfig {
  AttackKind kind = AttackKind::fgsm;
  double epsilon = 0.0;
  std::size_t steps = 10;
  std::optional<double> lambda;  // pgd step size; eps / 3 when unset

  double step_size() const { return lambda ? *lambda : epsilon / 3.0; }

  void validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw DomainError("epsilon must be >= 0");
    if (kind == AttackKind::pgd) {
      if (steps == 0) throw DomainError("pgd needs at least one step");
      if (lambda && !(*lambda > 0.0)) throw DomainError("pgd step size must be > 0");
    }
  }
};

/// Adversarial copy of x[N, ...] against true labels y.
template <class T, class M>
  requires Classifier<M, T>
nn::Tensor<T> attack(const M& model, const nn::Tensor<T>& x, std::span<const int> y,
                     const AttackConfig& cfg) {
  cfg.validate();
  auto grad = [&](const nn::Tensor<T>& at) { return input_gradient<T>(model, at, y); };
  if (cfg.epsilon == 0.0) return x.detach();
  if (cfg.kind == AttackKind::fgsm) return fgsm<T>(grad, x, cfg.epsilon);
  return pgd<T>(grad, x, cfg.epsilon, cfg.steps, cfg.step_size());
}

inline const std::vector<double> kPaperEpsilons{0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.15, 0.5};

struct SweepConfig {
  std::vector<AttackKind> attacks{AttackKind::fgsm, AttackKind::pgd};
  std::vector<double> epsilons = kPaperEpsilons;
  std::size_t pgd_steps = 10;
  std::optional<double> pgd_lambda;  // eps / 3 per epsilon when unset
  std::size_t repeats = 5;
  std::size_t topk = 1;
  std::uint64_t seed = 0;
  std::size_t batch = 32;
};

struct SweepCounts {
  std::size_t total = 0;
  std::size_t natural_miss = 0;
  std::size_t adversarial_miss = 0;
};

/// 1 - (naturally misclassified + adversarially misclassified) / total.
inline double sweep_accuracy(const SweepCounts& c) {
  if (c.total == 0) throw DomainError("sweep over an empty set");
  return 1.0 - static_cast<double>(c.natural_miss + c.adversarial_miss) /
                   static_cast<double>(c.total);
}

struct SweepRow {
  AttackKind attack = AttackKind::fgsm;
  double epsilon = 0.0;
  std::vector<double> repeats;
  double mean = 0.0;
  SweepCounts counts;
};

struct RobustnessReport {
  std::size_t topk = 1;
  double natural_accuracy = 0.0;
  std::vector<double> epsilons;
  std::vector<SweepRow> rows;

  const SweepRow& row(AttackKind k, double eps) const {
    for (const auto& r : rows) {
      if (r.attack == k && r.epsilon == eps) return r;
    }
    throw UsageError("no sweep row for " + attack_name(k) + " at the requested epsilon");
  }
};

namespace detail {

inline std::vector<bool> topk_hits(std::span<const double> logits, std::size_t classes,
                                   std::span<const int> labels, std::size_t k) {
  std::vector<bool> hit(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hit[i] = label_rank(logits.subspan(i * classes, classes), labels[i]) < k;
  }
  return hit;
}

template <class T, class M>
std::vector<double> logits_of(const M& model, const nn::Tensor<T>& x) {
  nn::NoGradGuard ng;
  const auto z = model.logits(x);
  return {z.values().begin(), z.values().end()};
}

}  // namespace detail

/// Runs every attack at every epsilon against the images `model` classifies
/// correctly. Each image's outcome is computed once, in fixed index-order
/// batches, so results do not depend on the repeat's data order; repeats
/// re-walk the set in a freshly shuffled order and average.
template <class T, class M>
  requires Classifier<M, T>
RobustnessReport robustness_sweep(const M& model, const Dataset& test, const SweepConfig& cfg) {
  if (test.size() == 0) throw DomainError("robustness sweep over an empty set");
  if (cfg.repeats == 0) throw DomainError("sweep needs at least one repeat");
  if (cfg.topk == 0) throw DomainError("top-k needs k >= 1");
  const std::size_t n = test.size();
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch);

  std::vector<bool> natural(n);
  std::size_t classes = 0;
  for (std::size_t start = 0; start < n; start += batch) {
    std::vector<std::size_t> idx(std::min(n, start + batch) - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto x = gather<T>(test, idx);
    const auto y = gather_labels(test, idx);
    const auto z = detail::logits_of<T>(model, x);
    classes = z.size() / idx.size();
    const auto hit = detail::topk_hits(z, classes, y, cfg.topk);
    for (std::size_t i = 0; i < idx.size(); ++i) natural[idx[i]] = hit[i];
  }
  std::vector<std::size_t> attackable;
  for (std::size_t i = 0; i < n; ++i) {
    if (natural[i]) attackable.push_back(i);
  }

  RobustnessReport rep;
  rep.topk = cfg.topk;
  rep.epsilons = cfg.epsilons;
  SweepCounts base{n, n - attackable.size(), 0};
  rep.natural_accuracy = sweep_accuracy(base);

  for (AttackKind kind : cfg.attacks) {
    for (double eps : cfg.epsilons) {
      AttackConfig ac{kind, eps, cfg.pgd_steps, cfg.pgd_lambda};
      ac.validate();
      std::vector<bool> flipped(n, false);
      if (eps > 0.0) {
        for (std::size_t start = 0; start < attackable.size(); start += batch) {
          const std::size_t end = std::min(attackable.size(), start + batch);
          const std::span<const std::size_t> idx(attackable.data() + start, end - start);
          const auto x = gather<T>(test, idx);
          const auto y = gather_labels(test, idx);
          const auto adv = attack<T>(model, x, y, ac);
          const auto hit = detail::topk_hits(detail::logits_of<T>(model, adv), classes, y, cfg.topk);
          for (std::size_t i = 0; i < idx.size(); ++i) flipped[idx[i]] = !hit[i];
        }
      }
      SweepRow row;
      row.attack = kind;
      row.epsilon = eps;
      for (std::size_t r = 0; r < cfg.repeats; ++r) {
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(substream_seed(cfg.seed, "repeats", r));
        std::shuffle(order.begin(), order.end(), rng);
        SweepCounts c{n, 0, 0};
        for (std::size_t i : order) {
          if (!natural[i]) {
            ++c.natural_miss;
          } else if (flipped[i]) {
            ++c.adversarial_miss;
          }
        }
        row.counts = c;
        row.repeats.push_back(sweep_accuracy(c));
      }
      row.mean = std::accumulate(row.repeats.begin(), row.repeats.end(), 0.0) /
                 static_cast<double>(row.repeats.size());
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

/// `attack,epsilon,repeat,accuracy` rows, each epsilon closed by repeat=mean.
inline void write_sweep_csv(std::ostream& os, const RobustnessReport& rep) {
  char buf[128];
  os << "attack,epsilon,repeat,accuracy\n";
  for (const auto& r : rep.rows) {
    for (std::size_t i = 0; i < r.repeats.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s,%g,%zu,%.6f\n", attack_name(r.attack).c_str(), r.epsilon,
                    i, r.repeats[i]);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, "%s,%g,mean,%.6f\n", attack_name(r.attack).c_str(), r.epsilon,
                  r.mean);
    os << buf;
  }
}

}  // namespace glp
