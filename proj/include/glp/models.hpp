#pragma once

// The Global Advantage Stream (GAS), the local CNN and the fused GLP
// classifier, plus their training and evaluation loops.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "glp/common.hpp"
#include "glp/layers.hpp"
#include "glp/lowpass_op.hpp"
#include "glp/manifest.hpp"

namespace glp {

struct GasSpec {
  std::size_t input_size = 64;
  std::size_t channels = 1;
  std::size_t conv1 = 8;
  std::size_t conv2 = 16;

  // conv1 keeps the extent (pad 1), conv2 trims a pixel per side (pad 0).
  std::size_t pooled_extent() const { return (input_size - 2) / 2; }
  std::size_t feature_dim() const { return conv2 * pooled_extent() * pooled_extent(); }

  void validate() const {
    if (input_size < 8) throw ShapeError("gas: input_size must be at least 8");
    if (channels != 1 && channels != 3) throw ShapeError("gas: channels must be 1 or 3");
    if (conv1 == 0 || conv2 == 0) throw ShapeError("gas: empty convolution");
  }
};

struct LocalCnnSpec {
  std::size_t input_size = 64;
  std::size_t channels = 1;
  std::array<std::size_t, 4> widths{16, 32, 64, 64};

  std::size_t final_extent() const { return input_size >> 4; }
  std::size_t feature_dim() const { return widths[3] * final_extent() * final_extent(); }

  void validate() const {
    if (input_size < 16) throw ShapeError("local: input_size must be at least 16");
    if (channels != 1 && channels != 3) throw ShapeError("local: channels must be 1 or 3");
    for (std::size_t c : widths) {
      if (c == 0) throw ShapeError("local: empty convolution");
    }
  }
};

struct GlpSpec {
  GasSpec gas;
  LocalCnnSpec local;
  std::size_t fusion_channels = 16;  // 1x1 conv on the GAS maps; 0 disables it

  std::size_t gas_feature_dim() const {
    const std::size_t p = gas.pooled_extent();
    return (fusion_channels ? fusion_channels : gas.conv2) * p * p;
  }
  std::size_t head_width() const { return gas_feature_dim() + local.feature_dim(); }

  void validate() const {
    gas.validate();
    local.validate();
    if (gas.input_size != local.input_size || gas.channels != local.channels) {
      throw ShapeError("glp: the two streams must consume the same input shape");
    }
  }
};

enum class ModelKind { gas, local, glp };

inline std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::gas: return "gas";
    case ModelKind::local: return "local";
    case ModelKind::glp: return "glp";
  }
  return "?";
}

inline ModelKind parse_kind(const std::string& s) {
  if (s == "gas") return ModelKind::gas;
  if (s == "local") return ModelKind::local;
  if (s == "glp") return ModelKind::glp;
  throw ConfigError("unknown model kind '" + s + "'");
}

struct ModelSpec {
  ModelKind kind = ModelKind::gas;
  GlpSpec arch;
  std::vector<std::string> class_names;

  std::size_t num_classes() const { return class_names.size(); }
  std::size_t input_size() const {
    return kind == ModelKind::local ? arch.local.input_size : arch.gas.input_size;
  }
  std::size_t channels() const {
    return kind == ModelKind::local ? arch.local.channels : arch.gas.channels;
  }
  std::size_t head_width() const {
    switch (kind) {
      case ModelKind::gas: return arch.gas.feature_dim();
      case ModelKind::local: return arch.local.feature_dim();
      case ModelKind::glp: return arch.head_width();
    }
    return 0;
  }
  void validate() const {
    if (class_names.size() < 2) throw ShapeError("model needs at least two classes");
    switch (kind) {
      case ModelKind::gas: arch.gas.validate(); break;
      case ModelKind::local: arch.local.validate(); break;
      case ModelKind::glp: arch.validate(); break;
    }
  }
};

/// Named activations captured during a forward pass (for Grad-CAM).
template <class T>
using Taps = std::map<std::string, nn::Tensor<T>>;

namespace detail {
template <class T>
void tap(Taps<T>* taps, const char* name, const nn::Tensor<T>& t) {
  if (taps) (*taps)[name] = t;
}
}  // namespace detail

/// A batch seen by a model. `filtered` is the smart-filtered copy of `raw`;
/// when undefined the GAS path filters `raw` itself, in the graph.
template <class T>
struct Batch {
  nn::Tensor<T> raw;
  nn::Tensor<T> filtered;
};

template <class T>
struct GasStream {
  GasSpec spec;
  nn::Conv2d<T> conv1;
  nn::Conv2d<T> conv2;
  nn::BatchNorm2d<T> bn;

  GasStream() = default;
  GasStream(const GasSpec& s, std::mt19937_64& rng)
      : spec(s), conv1(s.channels, s.conv1, 3, 1, rng), conv2(s.conv1, s.conv2, 3, 0, rng),
        bn(s.conv2) {}

  nn::Tensor<T> trunk(const nn::Tensor<T>& filtered, Taps<T>* taps) const {
    auto h = nn::relu(conv1(filtered));
    detail::tap(taps, "gas.conv1", h);
    h = nn::relu(conv2(h));
    detail::tap(taps, "gas.conv2", h);
    return nn::maxpool2(h);
  }

  /// Feature maps [N, conv2, p, p] of an already filtered input.
  nn::Tensor<T> maps(const nn::Tensor<T>& filtered, Taps<T>* taps = nullptr) const {
    auto h = bn.eval(trunk(filtered, taps));
    detail::tap(taps, "gas.bn", h);
    return h;
  }
  nn::Tensor<T> train_maps(const nn::Tensor<T>& filtered) { return bn.train(trunk(filtered, nullptr)); }

  template <class F>
  void visit(F&& f) {
    f(conv1.weight), f(conv1.bias), f(conv2.weight), f(conv2.bias), f(bn.gamma), f(bn.beta);
  }
  static std::type_identity<T> scalar_type() { return {}; }
};

template <class T>
struct LocalStream {
  LocalCnnSpec spec;
  std::array<nn::Conv2d<T>, 4> blocks;

  LocalStream() = default;
  LocalStream(const LocalCnnSpec& s, std::mt19937_64& rng) : spec(s) {
    std::size_t in = s.channels;
    for (std::size_t i = 0; i < 4; ++i) {
      blocks[i] = nn::Conv2d<T>(in, s.widths[i], 3, 1, rng);
      in = s.widths[i];
    }
  }

  nn::Tensor<T> features(const nn::Tensor<T>& x, Taps<T>* taps = nullptr) const {
    static constexpr const char* names[] = {"local.block1", "local.block2", "local.block3",
                                            "local.block4"};
    nn::Tensor<T> h = x;
    for (std::size_t i = 0; i < 4; ++i) {
      h = nn::relu(blocks[i](h));
      detail::tap(taps, names[i], h);
      h = nn::maxpool2(h);
    }
    return nn::flatten(h);
  }

  template <class F>
  void visit(F&& f) {
    for (auto& b : blocks) f(b.weight), f(b.bias);
  }

  static std::type_identity<T> scalar_type() { return {}; }
};

/// One of the three classifiers. GAS and local models carry a single stream
/// and a linear head; GLP carries both streams, the fusion conv and a head
/// over [GAS features, local features].
template <class T>
class Model {
 public:
  ModelSpec spec;
  std::optional<GasStream<T>> gas;
  std::optional<LocalStream<T>> local;
  std::optional<nn::Conv2d<T>> fusion;
  nn::Linear<T> head;

  Model() = default;

  /// Seeded initialization. Heads start at zero, so initial logits are flat.
  /// The fusion conv starts as the identity when its width matches the GAS
  /// maps.
  static Model build(const ModelSpec& s, std::uint64_t seed) {
    s.validate();
    Model m;
    m.spec = s;
    std::mt19937_64 rng(substream_seed(seed, "init", 0));
    if (s.kind != ModelKind::local) m.gas.emplace(s.arch.gas, rng);
    if (s.kind != ModelKind::gas) m.local.emplace(s.arch.local, rng);
    if (s.kind == ModelKind::glp && s.arch.fusion_channels) {
      const std::size_t in = s.arch.gas.conv2, out = s.arch.fusion_channels;
      m.fusion.emplace(in, out, 1, 0, rng);
      if (in == out) {
        auto w = m.fusion->weight.tensor.values();
        std::fill(w.begin(), w.end(), T(0));
        for (std::size_t k = 0; k < out; ++k) w[k * in + k] = T(1);
      }
    }
    m.head = nn::Linear<T>(s.head_width(), s.num_classes(), rng);
    auto hw = m.head.weight.tensor.values();
    std::fill(hw.begin(), hw.end(), T(0));
    return m;
  }

  bool uses_filter() const { return spec.kind != ModelKind::local; }
  bool uses_raw() const { return spec.kind != ModelKind::gas; }

  /// Eval-mode logits. Differentiable with respect to the batch inputs.
  nn::Tensor<T> logits(const Batch<T>& in, Taps<T>* taps = nullptr) const {
    check_input(in.raw.defined() ? in.raw : in.filtered);
    nn::Tensor<T> g, l;
    if (gas) g = gas->maps(filtered_of(in, taps), taps);
    if (local) l = local->features(in.raw, taps);
    return head_logits(g, l, taps);
  }
  nn::Tensor<T> logits(const nn::Tensor<T>& raw, Taps<T>* taps = nullptr) const {
    return logits(Batch<T>{raw, {}}, taps);
  }

  /// Logits from stream outputs: GAS maps [N, c, p, p] and/or local features.
  nn::Tensor<T> head_logits(const nn::Tensor<T>& gas_maps, const nn::Tensor<T>& local_features,
                            Taps<T>* taps = nullptr) const {
    switch (spec.kind) {
      case ModelKind::gas: return head(nn::flatten(gas_maps));
      case ModelKind::local: return head(local_features);
      case ModelKind::glp: break;
    }
    nn::Tensor<T> g = gas_maps;
    if (fusion) {
      g = (*fusion)(g);
      detail::tap(taps, "fusion", g);
    }
    return head(nn::concat_features(nn::flatten(g), local_features));
  }

  /// Train-mode logits: batch statistics in the GAS batchnorm of a standalone
  /// GAS model. GLP streams are frozen and always run in eval mode.
  nn::Tensor<T> train_logits(const Batch<T>& in) {
    if (spec.kind == ModelKind::gas) {
      check_input(in.filtered.defined() ? in.filtered : in.raw);
      return head(nn::flatten(gas->train_maps(filtered_of(in, nullptr))));
    }
    return logits(in);
  }

  /// Learnable parameters in declaration order.
  std::vector<nn::Parameter<T>*> parameters() {
    std::vector<nn::Parameter<T>*> out;
    auto add = [&](nn::Parameter<T>& p) { out.push_back(&p); };
    if (gas) gas->visit(add);
    if (local) local->visit(add);
    if (fusion) add(fusion->weight), add(fusion->bias);
    add(head.weight), add(head.bias);
    return out;
  }

  /// Every stored array (parameters, then batchnorm running statistics) in the
  /// fixed checkpoint order.
  std::vector<std::span<T>> arrays() {
    std::vector<std::span<T>> out;
    for (auto* p : parameters()) out.push_back(p->tensor.values());
    if (gas) {
      out.push_back(gas->bn.running.mean);
      out.push_back(gas->bn.running.var);
    }
    return out;
  }

  std::vector<std::vector<T>> state() {
    std::vector<std::vector<T>> s;
    for (auto a : arrays()) s.emplace_back(a.begin(), a.end());
    return s;
  }
  void load_state(const std::vector<std::vector<T>>& s) {
    auto dst = arrays();
    if (dst.size() != s.size()) throw ShapeError("state has the wrong number of arrays");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].size() != s[i].size()) throw ShapeError("state array has the wrong length");
      std::copy(s[i].begin(), s[i].end(), dst[i].begin());
    }
  }

  /// Deep copy (copying a Model shares its tensors).
  Model clone() const {
    auto& self = const_cast<Model&>(*this);
    Model c = build(spec, 0);
    c.load_state(self.state());
    auto from = self.parameters();
    auto to = c.parameters();
    for (std::size_t i = 0; i < from.size(); ++i) {
      to[i]->velocity = from[i]->velocity;
      if (from[i]->frozen) to[i]->freeze();
    }
    return c;
  }

  void freeze_streams() {
    if (gas) gas->visit([](nn::Parameter<T>& p) { p.freeze(); });
    if (local) local->visit([](nn::Parameter<T>& p) { p.freeze(); });
  }

 private:
  void check_input(const nn::Tensor<T>& x) const {
    const std::size_t s = spec.input_size();
    if (!x.defined() || x.rank() != 4 || x.dim(1) != spec.channels() || x.dim(2) != s ||
        x.dim(3) != s) {
      throw ShapeError("model expects input [N, " + std::to_string(spec.channels()) + ", " +
                       std::to_string(s) + ", " + std::to_string(s) + "]");
    }
  }
  nn::Tensor<T> filtered_of(const Batch<T>& in, Taps<T>*) const {
    if (in.filtered.defined()) return in.filtered;
    return nn::smart_lowpass(in.raw);
  }
};

// ---------------------------------------------------------------------------
// Data plumbing.

/// Smart-filtered copy of every image, bit-identical to what the in-graph
/// filter produces for the same sample.
inline Dataset smart_filter_dataset(const Dataset& ds, std::vector<double>* cutoffs = nullptr) {
  Dataset out = ds;
  if (cutoffs) cutoffs->resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto x = nn::Tensor<float>::from({1, ds.channels, ds.height, ds.width},
                                     std::vector<float>(ds.image(i).begin(), ds.image(i).end()));
    std::vector<double> a;
    const auto y = nn::smart_lowpass(x, &a);
    std::copy(y.values().begin(), y.values().end(), out.image(i).begin());
    if (cutoffs) (*cutoffs)[i] = a[0];
  }
  return out;
}

/// The data a model consumes: raw images plus, for models with a GAS path,
/// their filtered copies.
struct ModelData {
  const Dataset* raw = nullptr;
  const Dataset* filtered = nullptr;

  const Dataset& any() const { return raw ? *raw : *filtered; }
  std::size_t size() const { return any().size(); }
};

template <class T>
nn::Tensor<T> gather(const Dataset& ds, std::span<const std::size_t> idx) {
  const std::size_t per = ds.image_numel();
  std::vector<T> v(idx.size() * per);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto src = ds.image(idx[b]);
    std::transform(src.begin(), src.end(), v.begin() + b * per,
                   [](float f) { return static_cast<T>(f); });
  }
  return nn::Tensor<T>::from({idx.size(), ds.channels, ds.height, ds.width}, std::move(v));
}

template <class T>
Batch<T> make_batch(const ModelData& d, std::span<const std::size_t> idx, bool need_raw,
                    bool need_filtered) {
  Batch<T> b;
  if (need_raw) {
    if (!d.raw) throw UsageError("model needs raw images");
    b.raw = gather<T>(*d.raw, idx);
  }
  if (need_filtered) {
    if (d.filtered) {
      b.filtered = gather<T>(*d.filtered, idx);
    } else if (d.raw) {
      b.raw = gather<T>(*d.raw, idx);
    } else {
      throw UsageError("model needs images");
    }
  }
  return b;
}

inline std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = ds.labels[idx[i]];
  return y;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct Prediction {
  int label = 0;
  std::vector<double> logits;
};

/// Rank of `label` among `logits`: the number of classes ordered before it,
/// where ties go to the lower class index.
inline std::size_t label_rank(std::span<const double> logits, int label) {
  const double v = logits[static_cast<std::size_t>(label)];
  std::size_t r = 0;
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (logits[j] > v || (logits[j] == v && j < static_cast<std::size_t>(label))) ++r;
  }
  return r;
}

inline int argmax(std::span<const double> logits) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < logits.size(); ++j) {
    if (logits[j] > logits[best]) best = j;
  }
  return static_cast<int>(best);
}

struct EvalResult {
  std::size_t classes = 0;
  std::vector<double> logits;  // [N, classes]
  std::vector<int> labels;
  double loss = 0.0;

  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const {
    return {logits.data() + i * classes, classes};
  }
  double topk(std::size_t k) const {
    if (labels.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < size(); ++i) hits += label_rank(row(i), labels[i]) < k;
    return static_cast<double>(hits) / static_cast<double>(size());
  }
  double top1() const { return topk(1); }
  std::vector<bool> correct() const {
    std::vector<bool> c(size());
    for (std::size_t i = 0; i < size(); ++i) c[i] = label_rank(row(i), labels[i]) == 0;
    return c;
  }
};

inline constexpr std::size_t kEvalBatch = 64;

template <class T>
EvalResult evaluate(const Model<T>& m, const ModelData& d) {
  if (d.size() == 0) throw DomainError("cannot evaluate on an empty dataset");
  nn::NoGradGuard ng;
  EvalResult r;
  r.classes = m.spec.num_classes();
  r.labels = d.any().labels;
  r.logits.reserve(d.size() * r.classes);
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + kEvalBatch); ++i) idx.push_back(i);
    const auto batch = make_batch<T>(d, idx, m.uses_raw(), m.uses_filter());
    const auto z = m.logits(batch);
    const auto y = gather_labels(d.any(), idx);
    loss += static_cast<double>(nn::softmax_cross_entropy(z, y).item()) *
            static_cast<double>(idx.size());
    for (T v : z.values()) r.logits.push_back(static_cast<double>(v));
  }
  r.loss = loss / static_cast<double>(d.size());
  return r;
}

template <class T>
double topk_accuracy(const Model<T>& m, const ModelData& d, std::size_t k) {
  return evaluate(m, d).topk(k);
}

/// Class and logits for one image.
template <class T>
Prediction predict(const Model<T>& m, const Image& img) {
  if (img.height() != m.spec.input_size() || img.width() != m.spec.input_size() ||
      img.channels() != m.spec.channels()) {
    throw ShapeError("image does not match the model's input shape");
  }
  nn::NoGradGuard ng;
  std::vector<float> chw(img.channels() * img.pixel_count());
  image_to_chw(img, chw);
  auto x = nn::Tensor<T>::from({1, img.channels(), img.height(), img.width()},
                               std::vector<T>(chw.begin(), chw.end()));
  const auto z = m.logits(x);
  Prediction p;
  p.logits.assign(z.values().begin(), z.values().end());
  p.label = argmax(p.logits);
  return p;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainHyper {
  double lr = 2e-3;
  double momentum = 0.9;
  double lr_decay = 0.9;  // multiplier applied after every epoch
  std::size_t batch = 64;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double top1 = 0.0;
};

struct TrainReport {
  std::vector<EpochLog> history;
  std::size_t best_epoch = 0;
  double best_val_top1 = 0.0;
};

inline void write_training_log(std::ostream& os, const std::vector<EpochLog>& h) {
  char buf[128];
  os << "epoch,split,loss,top1\n";
  for (const auto& e : h) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%.8g,%.8g\n", e.epoch, e.split.c_str(), e.loss, e.top1);
    os << buf;
  }
}

namespace detail {

/// Shared SGD loop. `step` runs forward plus backward on one batch and
/// returns its summed loss; the loop handles shuffling, the optimizer, the lr
/// schedule, logging and best-validation snapshots.
template <class T>
TrainReport run_training(Model<T>& m, std::size_t train_size, const TrainHyper& hp,
                         const std::function<double(std::span<const std::size_t>, std::size_t&)>& step,
                         const std::function<EvalResult()>& eval_train,
                         const std::function<EvalResult()>& eval_val) {
  if (train_size == 0) throw DomainError("cannot train on an empty dataset");
  if (hp.batch == 0) throw DomainError("batch size must be positive");
  if (!(hp.lr > 0.0)) throw DomainError("learning rate must be positive");
  std::vector<nn::Parameter<T>*> params;
  for (auto* p : m.parameters()) {
    if (!p->frozen) params.push_back(p);
  }
  TrainReport rep;
  {
    const auto tr = eval_train();
    const auto va = eval_val();
    rep.history.push_back({0, "train", tr.loss, tr.top1()});
    rep.history.push_back({0, "val", va.loss, va.top1()});
    rep.best_val_top1 = va.top1();
  }
  auto best = m.state();
  std::vector<std::size_t> order(train_size);
  double lr = hp.lr;
  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(substream_seed(hp.seed, "shuffle", epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < train_size; start += hp.batch) {
      const std::size_t end = std::min(train_size, start + hp.batch);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      loss += step(idx, hits);
      nn::sgd_momentum_step(params, lr, hp.momentum);
    }
    if (!std::isfinite(loss)) throw NumericError("training loss diverged");
    rep.history.push_back({epoch, "train", loss / static_cast<double>(train_size),
                           static_cast<double>(hits) / static_cast<double>(train_size)});
    const auto va = eval_val();
    rep.history.push_back({epoch, "val", va.loss, va.top1()});
    if (va.top1() > rep.best_val_top1) {
      rep.best_val_top1 = va.top1();
      rep.best_epoch = epoch;
      best = m.state();
    }
    lr *= hp.lr_decay;
  }
  m.load_state(best);
  return rep;
}

template <class T>
std::size_t count_hits(const nn::Tensor<T>& z, std::span<const int> y) {
  const std::size_t k = z.dim(1);
  std::size_t hits = 0;
  std::vector<double> row(k);
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) row[j] = static_cast<double>(z[i * k + j]);
    hits += label_rank(row, y[i]) == 0;
  }
  return hits;
}

}  // namespace detail

/// Trains every non-frozen parameter of `m` end to end with softmax
/// cross-entropy, returning the best-validation parameters in place.
template <class T>
TrainReport train_classifier(Model<T>& m, const ModelData& train, const ModelData& val,
                             const TrainHyper& hp) {
  if (train.size() == 0 || val.size() == 0) throw DomainError("empty training or validation set");
  auto step = [&](std::span<const std::size_t> idx, std::size_t& hits) {
    const auto batch = make_batch<T>(train, idx, m.uses_raw(), m.uses_filter());
    const auto y = gather_labels(train.any(), idx);
    const auto z = m.train_logits(batch);
    const auto loss = nn::softmax_cross_entropy(z, y);
    nn::backward(loss);
    hits += detail::count_hits(z, y);
    return static_cast<double>(loss.item()) * static_cast<double>(idx.size());
  };
  return detail::run_training<T>(
      m, train.size(), hp, step, [&] { return evaluate(m, train); },
      [&] { return evaluate(m, val); });
}

/// A standalone GAS or local classifier built from `spec` and trained on
/// the task (the temporary head is kept with the model).
template <class T>
Model<T> train_stream_classifier(const ModelSpec& spec, const ModelData& train,
                                 const ModelData& val, const TrainHyper& hp,
                                 TrainReport* report = nullptr) {
  if (spec.kind == ModelKind::glp) throw UsageError("use train_glp for the fused model");
  auto m = Model<T>::build(spec, hp.seed);
  auto rep = train_classifier(m, train, val, hp);
  if (report) *report = std::move(rep);
  return m;
}

/// Stream outputs of a frozen GLP model for every sample, computed once so
/// the head can be trained without re-running the streams.
template <class T>
struct StreamFeatures {
  nn::Dims gas_shape;  // per-sample [c, p, p]
  std::vector<T> gas;
  std::size_t local_dim = 0;
  std::vector<T> local;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

template <class T>
StreamFeatures<T> stream_features(const Model<T>& m, const ModelData& d) {
  if (m.spec.kind != ModelKind::glp) throw UsageError("stream_features needs a GLP model");
  nn::NoGradGuard ng;
  StreamFeatures<T> f;
  f.labels = d.any().labels;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < d.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(d.size(), start + kEvalBatch); ++i) idx.push_back(i);
    const auto b = make_batch<T>(d, idx, true, true);
    const auto g = m.gas->maps(b.filtered.defined() ? b.filtered : nn::smart_lowpass(b.raw));
    const auto l = m.local->features(b.raw);
    f.gas_shape = {g.dim(1), g.dim(2), g.dim(3)};
    f.local_dim = l.dim(1);
    f.gas.insert(f.gas.end(), g.values().begin(), g.values().end());
    f.local.insert(f.local.end(), l.values().begin(), l.values().end());
  }
  return f;
}

namespace detail {

template <class T>
nn::Tensor<T> head_batch(const Model<T>& m, const StreamFeatures<T>& f,
                         std::span<const std::size_t> idx) {
  const std::size_t gper = nn::numel_of(f.gas_shape);
  std::vector<T> g(idx.size() * gper), l(idx.size() * f.local_dim);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    std::copy_n(f.gas.begin() + idx[b] * gper, gper, g.begin() + b * gper);
    std::copy_n(f.local.begin() + idx[b] * f.local_dim, f.local_dim, l.begin() + b * f.local_dim);
  }
  nn::Dims gs{idx.size()};
  gs.insert(gs.end(), f.gas_shape.begin(), f.gas_shape.end());
  return m.head_logits(nn::Tensor<T>::from(gs, std::move(g)),
                       nn::Tensor<T>::from({idx.size(), f.local_dim}, std::move(l)));
}

template <class T>
std::vector<int> labels_at(const StreamFeatures<T>& f, std::span<const std::size_t> idx) {
  std::vector<int> y(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) y[i] = f.labels[idx[i]];
  return y;
}

}  // namespace detail

template <class T>
EvalResult evaluate_head(const Model<T>& m, const StreamFeatures<T>& f) {
  nn::NoGradGuard ng;
  EvalResult r;
  r.classes = m.spec.num_classes();
  r.labels = f.labels;
  double loss = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < f.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(f.size(), start + kEvalBatch); ++i) idx.push_back(i);
    const auto z = detail::head_batch(m, f, idx);
    loss += static_cast<double>(nn::softmax_cross_entropy(z, detail::labels_at(f, idx)).item()) *
            static_cast<double>(idx.size());
    for (T v : z.values()) r.logits.push_back(static_cast<double>(v));
  }
  r.loss = loss / static_cast<double>(f.size());
  return r;
}

/// Copies parameter values (and batchnorm statistics) between streams of the
/// same shape. Tensors share storage when copied, so this is the deep copy.
template <class Stream>
void copy_stream(const Stream& from, Stream& to) {
  using T = typename decltype(to.scalar_type())::type;
  std::vector<std::span<T>> dst;
  std::vector<std::span<const T>> src;
  const_cast<Stream&>(from).visit([&](auto& p) { src.push_back(p.tensor.values()); });
  to.visit([&](auto& p) { dst.push_back(p.tensor.values()); });
  if (src.size() != dst.size()) throw ShapeError("copy_stream: layer count mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].size() != dst[i].size()) throw ShapeError("copy_stream: layer shape mismatch");
    std::copy(src[i].begin(), src[i].end(), dst[i].begin());
  }
  if constexpr (requires { to.bn; }) to.bn.running = from.bn.running;
}

/// Hyperparameters of the hybrid procedure: GAS is trained on the task with
/// `gas`, then the fused head with `head`.
struct GlpHyper {
  TrainHyper gas{};
  TrainHyper head{2e-3, 0.9, 0.9, 8, 20, 0};
};

struct GlpReport {
  TrainReport gas;
  TrainReport head;
};

/// Combines a trained GAS classifier and a trained local classifier into a
/// GLP model and trains its fusion conv and head on the frozen streams.
template <class T>
Model<T> assemble_and_train_glp(const ModelSpec& spec, const Model<T>& gas_model,
                                const Model<T>& local_model, const ModelData& train,
                                const ModelData& val, const TrainHyper& hp,
                                TrainReport* report = nullptr) {
  if (spec.kind != ModelKind::glp) throw UsageError("assemble_and_train_glp needs a GLP spec");
  if (!gas_model.gas || !local_model.local) throw UsageError("GLP needs a GAS and a local stream");
  auto m = Model<T>::build(spec, hp.seed);
  if (gas_model.spec.arch.gas.feature_dim() != spec.arch.gas.feature_dim() ||
      local_model.spec.arch.local.feature_dim() != spec.arch.local.feature_dim() ||
      m.head.in_features() != spec.arch.head_width()) {
    throw ShapeError("GLP head width does not match the stream feature sizes");
  }
  // Copy stream values, not handles: the donors stay independent.
  copy_stream(*gas_model.gas, *m.gas);
  copy_stream(*local_model.local, *m.local);
  m.freeze_streams();

  const auto ftrain = stream_features(m, train);
  const auto fval = stream_features(m, val);
  auto step = [&](std::span<const std::size_t> idx, std::size_t& hits) {
    const auto z = detail::head_batch(m, ftrain, idx);
    const auto y = detail::labels_at(ftrain, idx);
    const auto loss = nn::softmax_cross_entropy(z, y);
    nn::backward(loss);
    hits += detail::count_hits(z, y);
    return static_cast<double>(loss.item()) * static_cast<double>(idx.size());
  };
  auto rep = detail::run_training<T>(
      m, ftrain.size(), hp, step, [&] { return evaluate_head(m, ftrain); },
      [&] { return evaluate_head(m, fval); });
  if (report) *report = std::move(rep);
  return m;
}

/// The four-step hybrid procedure: (1) the given local classifier's stream is
/// frozen, (2) GAS is trained on the task, (3) both feature banks are
/// concatenated, (4) only the fusion conv and head are trained.
template <class T>
Model<T> train_glp(const ModelSpec& spec, const Model<T>& local_model, const ModelData& train,
                   const ModelData& val, const GlpHyper& hp, GlpReport* report = nullptr,
                   Model<T>* gas_out = nullptr) {
  if (spec.kind != ModelKind::glp) throw UsageError("train_glp needs a GLP spec");
  ModelSpec gs = spec;
  gs.kind = ModelKind::gas;
  TrainReport gas_rep, head_rep;
  auto gas_model = train_stream_classifier<T>(gs, train, val, hp.gas, &gas_rep);
  auto m = assemble_and_train_glp(spec, gas_model, local_model, train, val, hp.head, &head_rep);
  if (report) *report = {std::move(gas_rep), std::move(head_rep)};
  if (gas_out) *gas_out = std::move(gas_model);
  return m;
}

}  // namespace glp
