#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "glp/model_io.hpp"
#include "glp/models.hpp"
#include "glp/navon.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using glp::Dataset;
using glp::Model;
using glp::ModelData;
using glp::ModelKind;
using glp::ModelSpec;
namespace nn = glp::nn;

namespace {

ModelSpec spec_of(ModelKind kind, std::size_t size = 64, std::size_t classes = 2) {
  ModelSpec s;
  s.kind = kind;
  s.arch.gas.input_size = s.arch.local.input_size = size;
  for (std::size_t i = 0; i < classes; ++i) s.class_names.push_back("c" + std::to_string(i));
  return s;
}

// Two classes separated by which half of the image is brighter.
Dataset toy_set(std::size_t n, std::size_t size, std::uint64_t seed) {
  Dataset d;
  d.height = d.width = size;
  d.class_names = {"left", "right"};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> noise(-0.1f, 0.1f);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    d.labels.push_back(y);
    for (std::size_t r = 0; r < size; ++r)
      for (std::size_t c = 0; c < size; ++c) {
        const bool left = c < size / 2;
        const float base = (left == (y == 0)) ? 0.75f : 0.25f;
        d.pixels.push_back(std::clamp(base + noise(rng), 0.0f, 1.0f));
      }
  }
  return d;
}

std::vector<std::vector<float>> snapshot(Model<float>& m) { return m.state(); }

}  // namespace

TEST(ModelBuild, GasFeatureDimMatchesForwardShape) {
  const auto s = spec_of(ModelKind::gas);
  EXPECT_EQ(s.arch.gas.feature_dim(), 15376u);
  auto m = Model<float>::build(s, 1);
  glp::Taps<float> taps;
  nn::NoGradGuard ng;
  const auto z = m.logits(nn::Tensor<float>::full({2, 1, 64, 64}, 0.5f), &taps);
  EXPECT_EQ(taps.at("gas.bn").shape(), (nn::Dims{2, 16, 31, 31}));
  EXPECT_EQ(taps.at("gas.conv2").shape(), (nn::Dims{2, 16, 62, 62}));
  EXPECT_EQ(z.shape(), (nn::Dims{2, 2}));
  EXPECT_EQ(m.head.in_features(), 15376u);
}

TEST(ModelBuild, LocalAndGlpWidths) {
  auto local = Model<float>::build(spec_of(ModelKind::local), 1);
  EXPECT_EQ(local.head.in_features(), 1024u);
  auto glp_model = Model<float>::build(spec_of(ModelKind::glp, 64, 4), 1);
  EXPECT_EQ(glp_model.head.in_features(), 15376u + 1024u);
  EXPECT_EQ(glp_model.head.out_features(), 4u);
  nn::NoGradGuard ng;
  glp::Taps<float> taps;
  glp_model.logits(nn::Tensor<float>::full({1, 1, 64, 64}, 0.3f), &taps);
  EXPECT_EQ(taps.at("fusion").shape(), (nn::Dims{1, 16, 31, 31}));
  EXPECT_EQ(taps.at("local.block4").shape(), (nn::Dims{1, 64, 8, 8}));
}

TEST(ModelBuild, SeedDeterminism) {
  auto a = Model<float>::build(spec_of(ModelKind::glp), 7);
  auto b = Model<float>::build(spec_of(ModelKind::glp), 7);
  auto c = Model<float>::build(spec_of(ModelKind::glp), 8);
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_NE(snapshot(a), snapshot(c));
}

TEST(ModelBuild, RejectsBadSpecs) {
  auto s = spec_of(ModelKind::gas);
  s.class_names = {"only"};
  EXPECT_THROW(Model<float>::build(s, 0), glp::ShapeError);
  s = spec_of(ModelKind::glp);
  s.arch.local.input_size = 32;
  EXPECT_THROW(Model<float>::build(s, 0), glp::ShapeError);
  s = spec_of(ModelKind::local, 8);
  EXPECT_THROW(Model<float>::build(s, 0), glp::ShapeError);
}

TEST(ModelForward, InputShapeIsChecked) {
  const auto m = Model<float>::build(spec_of(ModelKind::gas), 1);
  nn::NoGradGuard ng;
  EXPECT_THROW(m.logits(nn::Tensor<float>::zeros({1, 1, 32, 32})), glp::ShapeError);
  EXPECT_THROW(m.logits(nn::Tensor<float>::zeros({1, 3, 64, 64})), glp::ShapeError);
  EXPECT_THROW(glp::predict(m, glp::Image(64, 64, 3)), glp::ShapeError);
}

TEST(ModelForward, ConstantImageFeaturesMatchUnfilteredPass) {
  auto m = Model<float>::build(spec_of(ModelKind::gas), 3);
  nn::NoGradGuard ng;
  const auto x = nn::Tensor<float>::full({1, 1, 64, 64}, 0.625f);
  glp::Taps<float> filtered, unfiltered;
  m.logits(x, &filtered);
  m.logits(glp::Batch<float>{x, x}, &unfiltered);
  const auto a = filtered.at("gas.bn").values();
  const auto b = unfiltered.at("gas.bn").values();
  ASSERT_EQ(a.size(), 15376u);
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-5f);
}

TEST(ModelForward, EvalIsDeterministicAndPrefilteredPathIsIdentical) {
  const auto m = Model<float>::build(spec_of(ModelKind::glp), 4);
  glp::StimulusSpec st;
  st.seed = 5;
  const auto img = glp::render_compound_stimulus(st);
  const auto p1 = glp::predict(m, img);
  const auto p2 = glp::predict(m, img);
  EXPECT_EQ(p1.logits, p2.logits);

  Dataset d;
  d.height = d.width = 64;
  d.pixels.resize(64 * 64);
  glp::image_to_chw(img, d.pixels);
  d.labels = {0};
  d.class_names = m.spec.class_names;
  std::vector<double> cut;
  const auto f = glp::smart_filter_dataset(d, &cut);
  const auto ref = glp::smart_filter(img);
  EXPECT_EQ(cut[0], ref.profile.alpha_star);
  for (std::size_t i = 0; i < 64 * 64; ++i) {
    ASSERT_EQ(f.pixels[i], static_cast<float>(ref.image.data()[i]));
  }
  const auto e1 = glp::evaluate(m, ModelData{&d, &f});
  const auto e2 = glp::evaluate(m, ModelData{&d, nullptr});
  EXPECT_EQ(e1.logits, e2.logits);
  EXPECT_EQ(e1.logits, p1.logits);
}

TEST(LowpassOp, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto x = gradcheck::random_tensor({2, 1, 8, 8}, rng, 0.2, 0.8);
  const std::vector<double> alphas{1.5, 3.0};
  EXPECT_LT(gradcheck::max_rel_error([&] { return gradcheck::project(nn::lowpass(x, alphas)); },
                                     {x}),
            1e-4);
  // Entries pushed past the clamp pass no gradient.
  auto sat = nn::Tensor<double>::full({1, 1, 8, 8}, 1.5, true);
  const std::vector<double> a1{2.0};
  nn::backward(nn::sum(nn::lowpass(sat, a1)));
  for (double g : sat.grad()) EXPECT_EQ(g, 0.0);
}

TEST(LowpassOp, SmartVersionIsFilterAtSelectedCutoff) {
  glp::StimulusSpec st;
  st.seed = 9;
  const auto img = glp::render_compound_stimulus(st);
  std::vector<double> chw(64 * 64);
  for (std::size_t i = 0; i < chw.size(); ++i) chw[i] = img.data()[i];
  auto x = nn::Tensor<double>::from({1, 1, 64, 64}, chw, true);
  std::vector<double> cut;
  const auto y = nn::smart_lowpass(x, &cut);
  const auto ref = glp::smart_filter(img);
  EXPECT_EQ(cut[0], ref.profile.alpha_star);
  for (std::size_t i = 0; i < chw.size(); ++i) ASSERT_EQ(y[i], ref.image.data()[i]);
  // The cutoff is held fixed in the backward pass.
  nn::backward(gradcheck::project(y));
  auto x2 = nn::Tensor<double>::from({1, 1, 64, 64}, chw, true);
  nn::backward(gradcheck::project(nn::lowpass(x2, cut)));
  for (std::size_t i = 0; i < chw.size(); ++i) ASSERT_EQ(x.grad()[i], x2.grad()[i]);
}

TEST(TopK, RankingRules) {
  const std::vector<double> z{2.0, 1.0};
  EXPECT_EQ(glp::label_rank(z, 0), 0u);
  EXPECT_EQ(glp::label_rank(z, 1), 1u);
  const std::vector<double> tie{1.0, 1.0, 0.0};
  EXPECT_EQ(glp::label_rank(tie, 0), 0u);
  EXPECT_EQ(glp::label_rank(tie, 1), 1u);

  glp::EvalResult r;
  r.classes = 4;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < 4; ++j) r.logits.push_back(g(rng));
    r.labels.push_back(i % 4);
  }
  EXPECT_LE(r.topk(1), r.topk(2));
  EXPECT_LE(r.topk(2), r.topk(3));
  EXPECT_EQ(r.topk(4), 1.0);
}

TEST(Training, ZeroEpochsAndInitialLoss) {
  const auto tr = toy_set(32, 16, 1), va = toy_set(16, 16, 2);
  auto m = Model<float>::build(spec_of(ModelKind::local, 16), 5);
  const auto before = snapshot(m);
  glp::TrainHyper hp;
  hp.epochs = 0;
  hp.seed = 5;
  const auto rep = glp::train_classifier(m, ModelData{&tr, nullptr}, ModelData{&va, nullptr}, hp);
  EXPECT_EQ(snapshot(m), before);
  ASSERT_EQ(rep.history.size(), 2u);
  EXPECT_NEAR(rep.history[0].loss, std::log(2.0), 1e-6);
  EXPECT_NEAR(rep.history[1].loss, std::log(2.0), 1e-6);
}

TEST(Training, EmptySetsAreDomainErrors) {
  auto m = Model<float>::build(spec_of(ModelKind::local, 16), 5);
  Dataset empty;
  empty.height = empty.width = 16;
  const auto tr = toy_set(8, 16, 1);
  EXPECT_THROW(glp::train_classifier(m, ModelData{&empty, nullptr}, ModelData{&tr, nullptr}, {}),
               glp::DomainError);
  EXPECT_THROW(glp::load_dataset(glp::DatasetManifest{}, glp::LabelTask::global),
               glp::DomainError);
}

TEST(Training, SeparableToySetIsLearned) {
  const auto tr = toy_set(32, 16, 1), va = toy_set(16, 16, 2);
  for (ModelKind kind : {ModelKind::local, ModelKind::gas}) {
    const auto ftr = glp::smart_filter_dataset(tr), fva = glp::smart_filter_dataset(va);
    glp::TrainHyper hp;
    hp.batch = 8;
    hp.epochs = 20;
    hp.seed = 11;
    glp::TrainReport rep;
    auto m = glp::train_stream_classifier<float>(spec_of(kind, 16), ModelData{&tr, &ftr},
                                                 ModelData{&va, &fva}, hp, &rep);
    EXPECT_EQ(glp::evaluate(m, ModelData{&tr, &ftr}).top1(), 1.0) << glp::kind_name(kind);
    EXPECT_EQ(rep.history.back().epoch, 20u);
    EXPECT_EQ(rep.history.back().split, "val");
  }
}

TEST(Training, GlpFreezesLocalStreamAndMatchesLocalOnToySet) {
  int wins = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto tr = toy_set(32, 16, 10 + seed), va = toy_set(16, 16, 20 + seed);
    const auto ftr = glp::smart_filter_dataset(tr), fva = glp::smart_filter_dataset(va);
    const ModelData dtr{&tr, &ftr}, dva{&va, &fva};
    glp::TrainHyper hp;
    hp.batch = 8;
    hp.epochs = 10;
    hp.seed = seed;
    auto local = glp::train_stream_classifier<float>(spec_of(ModelKind::local, 16), dtr, dva, hp);
    const auto local_before = snapshot(local);
    std::vector<std::vector<float>> stream_before;
    for (auto* p : local.parameters()) stream_before.emplace_back(p->tensor.values().begin(), p->tensor.values().end());
    stream_before.pop_back(), stream_before.pop_back();  // head

    glp::GlpHyper gh;
    gh.gas = hp;
    gh.head.epochs = 5;
    gh.head.seed = seed;
    auto fused = glp::train_glp<float>(spec_of(ModelKind::glp, 16), local, dtr, dva, gh);
    EXPECT_EQ(snapshot(local), local_before);
    std::size_t i = 0;
    fused.local->visit([&](nn::Parameter<float>& p) {
      EXPECT_TRUE(p.frozen);
      EXPECT_TRUE(std::equal(p.tensor.values().begin(), p.tensor.values().end(),
                             stream_before[i++].begin()));
    });
    EXPECT_EQ(fused.head.in_features(), 784u + 64u);
    wins += glp::evaluate(fused, dva).top1() >= glp::evaluate(local, dva).top1();
  }
  EXPECT_GE(wins, 2);
}

TEST(Checkpoint, RoundTripAndValidation) {
  testutil::TempDir dir("ckpt");
  auto m = Model<float>::build(spec_of(ModelKind::glp, 32, 3), 21);
  m.gas->bn.running.mean[2] = 0.25f;
  const std::string prefix = (dir / "model").string();
  glp::save_model(m, prefix);
  auto back = glp::load_model<float>(prefix);
  EXPECT_EQ(back.spec.class_names, m.spec.class_names);
  EXPECT_EQ(snapshot(back), snapshot(m));

  auto bytes = glp::encode_checkpoint(m);
  auto other = Model<float>::build(spec_of(ModelKind::glp, 16, 3), 0);
  EXPECT_THROW(glp::decode_checkpoint<float>(bytes, other), glp::DecodeError);
  auto same = Model<float>::build(spec_of(ModelKind::glp, 32, 3), 0);
  auto cut = bytes;
  cut.resize(cut.size() - 3);
  EXPECT_THROW(glp::decode_checkpoint<float>(cut, same), glp::DecodeError);
  bytes[0] = 'X';
  EXPECT_THROW(glp::decode_checkpoint<float>(bytes, same), glp::DecodeError);
}

TEST(ModelSpecText, RoundTripAndErrors) {
  auto s = spec_of(ModelKind::glp, 32, 4);
  s.arch.local.widths = {8, 8, 16, 16};
  const auto text = glp::model_spec_text(s);
  const auto back = glp::parse_model_spec(text);
  EXPECT_EQ(glp::model_spec_text(back), text);
  EXPECT_THROW(glp::parse_model_spec("[model]\nkind = gas\n"), glp::ConfigError);
  EXPECT_THROW(glp::parse_model_spec("[model]\nkind = cat\nclasses = a,b\n"), glp::ConfigError);
  EXPECT_THROW(glp::parse_model_spec("[model]\nkind = gas\nclasses = a,b\n[gas]\nconv1 = x\n"),
               glp::ConfigError);
  EXPECT_THROW(glp::parse_model_spec("[model]\nkind = gas\nclasses = a,b\nfoo = 1\n"),
               glp::ConfigError);
  EXPECT_NO_THROW(glp::parse_model_spec("# comment\n[model]\nkind = local\nclasses = a, b\n"));
}
