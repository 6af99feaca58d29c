// glp: dataset generation, smart filtering, training, evaluation, attacks,
// Grad-CAM and the two end-to-end experiments.
//
// Every subcommand reads a flat key=value config (--config FILE) and lets
// flags override individual keys. Exit codes: 0 ok, 2 config/usage error,
// 3 data error, 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "glp/experiments.hpp"

namespace fs = std::filesystem;
using glp::Config;

namespace {

// Subcommand whose options all land in one Config.
struct Command {
  CLI::App* app = nullptr;
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  std::map<std::string, std::string> defaults;

  Config resolve() const {
    Config c = config_file.empty() ? Config{} : Config::load(config_file);
    for (const auto& s : sets) c.set_assignment(s);
    for (const auto& [k, v] : flags) {
      const CLI::Option* opt = app->get_option_no_throw("--" + k);
      if (!opt) opt = app->get_option_no_throw(k);
      if (opt && opt->count() > 0) c.set(k, v);
    }
    for (const auto& [k, v] : defaults) c.set_default(k, v);
    return c;
  }
};

Command& add_command(CLI::App& root, std::vector<std::unique_ptr<Command>>& all,
                     const std::string& name, const std::string& help,
                     std::map<std::string, std::string> defaults,
                     const std::vector<std::string>& extra_keys = {}) {
  auto cmd = std::make_unique<Command>();
  cmd->app = root.add_subcommand(name, help);
  cmd->app->add_option("--config", cmd->config_file, "key=value config file");
  cmd->app->add_option("--set", cmd->sets, "override as key=value (repeatable)");
  cmd->defaults = std::move(defaults);
  std::vector<std::string> keys = extra_keys;
  for (const auto& [k, v] : cmd->defaults) keys.push_back(k);
  for (const auto& k : keys) {
    if (cmd->flags.count(k)) continue;
    auto& slot = cmd->flags[k];
    cmd->app->add_option("--" + k, slot, k);
  }
  all.push_back(std::move(cmd));
  return *all.back();
}

std::uint64_t seed_of(const Config& c) {
  if (!c.has("seed")) throw glp::ConfigError("missing mandatory key 'seed'");
  return c.u64("seed");
}

glp::DatasetManifest open_manifest(const std::string& dir) {
  const fs::path d(dir);
  auto m = glp::read_manifest(d / glp::kManifestFile);
  m.base_dir = d;
  return m;
}

void write_text(const std::string& path, const std::string& text) {
  glp::write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

int gen(const Config& c, const std::string& which) {
  c.check_keys({"out", "count", "size", "seed"});
  const auto out = c.str("out");
  const auto n = c.size("count"), s = c.size("size");
  const auto seed = seed_of(c);
  glp::DatasetManifest m;
  if (which == "navon") m = glp::generate_navon_dataset(n, s, out, seed);
  if (which == "simple") m = glp::generate_simple_dataset(n, s, out, seed);
  if (which == "textured") m = glp::generate_textured_dataset(n, s, out, seed);
  std::printf("wrote %zu %s images to %s\n", m.records.size(), which.c_str(), out.c_str());
  return 0;
}

int cmd_filter(const Config& c) {
  c.check_keys({"input", "out", "alpha", "profile"});
  const auto input = c.str("input");
  const auto img = glp::read_png(input);
  std::string out = c.has("out") ? c.str("out") : "";
  if (out.empty()) out = (fs::path(input).parent_path() / fs::path(input).stem()).string() + ".filtered.png";
  if (c.str("alpha") == "auto") {
    const auto r = glp::smart_filter(img);
    glp::write_png(out, r.image);
    if (c.has("profile") && !c.str("profile").empty()) {
      std::ofstream os(c.str("profile"));
      if (!os) throw glp::IoError("cannot write " + c.str("profile"));
      glp::write_profile_csv(os, r.profile);
    }
    std::printf("alpha* = %.6g entropy = %.6f -> %s\n", r.profile.alpha_star,
                r.profile.entropies[r.profile.star_index], out.c_str());
  } else {
    const double a = c.real("alpha");
    if (!(a > 0.0)) throw glp::ConfigError("alpha must be positive or 'auto'");
    glp::write_png(out, glp::filter_image(img, a));
    std::printf("alpha = %.6g -> %s\n", a, out.c_str());
  }
  return 0;
}

glp::ModelSpec spec_for(glp::ModelKind kind, const glp::Dataset& d) {
  glp::ModelSpec s;
  s.kind = kind;
  s.class_names = d.class_names;
  s.arch.gas.input_size = s.arch.local.input_size = d.height;
  s.arch.gas.channels = s.arch.local.channels = d.channels;
  if (d.height != d.width) throw glp::ShapeError("images must be square");
  return s;
}

int cmd_train(const Config& c) {
  c.check_keys({"data", "kind", "task", "epochs", "lr", "momentum", "lr_decay", "batch", "seed",
                "out", "local", "head_epochs", "head_batch"});
  const auto kind = glp::parse_kind(c.str("kind"));
  const auto task = glp::parse_label_task(c.str("task"));
  const auto m = open_manifest(c.str("data"));
  const auto names = m.class_names(task);
  const auto train = glp::load_dataset(m.subset("train"), task, names);
  const auto val = glp::load_dataset(m.subset("val"), task, names);
  glp::TrainHyper hp;
  hp.lr = c.real("lr");
  hp.momentum = c.real("momentum");
  hp.lr_decay = c.real("lr_decay");
  hp.batch = c.size("batch");
  hp.epochs = c.size("epochs");
  hp.seed = seed_of(c);
  const auto spec = spec_for(kind, train);
  std::optional<glp::Dataset> ftrain, fval;
  if (kind != glp::ModelKind::local) {
    ftrain = glp::smart_filter_dataset(train);
    fval = glp::smart_filter_dataset(val);
  }
  const glp::ModelData td{&train, ftrain ? &*ftrain : nullptr};
  const glp::ModelData vd{&val, fval ? &*fval : nullptr};
  const auto out = c.str("out");
  glp::Model<float> model;
  std::vector<glp::EpochLog> history;
  if (kind == glp::ModelKind::glp) {
    if (!c.has("local") || c.str("local").empty()) {
      throw glp::ConfigError("training a GLP model needs local=<trained local model prefix>");
    }
    const auto local = glp::load_model<float>(c.str("local"));
    glp::GlpHyper gh;
    gh.gas = hp;
    gh.head = hp;
    gh.head.epochs = c.size("head_epochs");
    gh.head.batch = c.size("head_batch");
    glp::GlpReport rep;
    model = glp::train_glp<float>(spec, local, td, vd, gh, &rep);
    history = rep.head.history;
  } else {
    glp::TrainReport rep;
    model = glp::train_stream_classifier<float>(spec, td, vd, hp, &rep);
    history = rep.history;
  }
  glp::save_model(model, out);
  std::ostringstream os;
  glp::write_training_log(os, history);
  write_text(out + ".train.csv", os.str());
  std::printf("saved %s model to %s.{spec,ckpt}; val top1 %.4f\n", c.str("kind").c_str(),
              out.c_str(), glp::evaluate(model, vd).top1());
  return 0;
}

struct LoadedSplit {
  glp::Dataset raw;
  std::optional<glp::Dataset> filtered;
  glp::ModelData data() const { return {&raw, filtered ? &*filtered : nullptr}; }
};

LoadedSplit load_split(const glp::Model<float>& model, const Config& c) {
  const auto task = glp::parse_label_task(c.str("task"));
  const auto m = open_manifest(c.str("data"));
  LoadedSplit s;
  s.raw = glp::load_dataset(m.subset(c.str("split")), task, model.spec.class_names);
  if (model.uses_filter()) s.filtered = glp::smart_filter_dataset(s.raw);
  return s;
}

int cmd_eval(const Config& c) {
  c.check_keys({"model", "data", "task", "split", "topk", "out"});
  const auto model = glp::load_model<float>(c.str("model"));
  const auto split = load_split(model, c);
  const auto r = glp::evaluate(model, split.data());
  std::string csv = "k,accuracy\n";
  for (std::size_t k : c.sizes("topk")) {
    if (k == 0) throw glp::ConfigError("topk entries must be >= 1");
    std::printf("top%zu %.6f\n", k, r.topk(k));
    csv += std::to_string(k) + "," + glp::detail::fmt("%.6f", r.topk(k)) + "\n";
  }
  if (c.has("out") && !c.str("out").empty()) write_text(c.str("out"), csv);
  return 0;
}

int cmd_attack(const Config& c) {
  c.check_keys({"model", "data", "task", "split", "attacks", "epsilons", "pgd_steps", "repeats",
                "topk", "seed", "out"});
  const auto model = glp::load_model<float>(c.str("model"));
  const auto split = load_split(model, c);
  glp::SweepConfig sc;
  sc.attacks.clear();
  for (const auto& a : c.list("attacks")) sc.attacks.push_back(glp::parse_attack(a));
  sc.epsilons = c.reals("epsilons");
  for (double e : sc.epsilons) {
    if (e < 0.0) throw glp::ConfigError("epsilons must be >= 0");
  }
  sc.pgd_steps = c.size("pgd_steps");
  if (sc.pgd_steps == 0) throw glp::ConfigError("pgd_steps must be >= 1");
  sc.repeats = c.size("repeats");
  sc.topk = c.size("topk");
  sc.seed = glp::substream_seed(seed_of(c), "repeats");
  const auto rep = glp::robustness_sweep<float>(model, split.raw, sc);
  std::ostringstream os;
  glp::write_sweep_csv(os, rep);
  if (c.has("out") && !c.str("out").empty()) {
    write_text(c.str("out"), os.str());
  } else {
    std::cout << os.str();
  }
  std::printf("natural accuracy %.6f\n", rep.natural_accuracy);
  return 0;
}

int cmd_gradcam(const Config& c) {
  c.check_keys({"model", "input", "class", "layer", "out", "upsample"});
  const auto model = glp::load_model<float>(c.str("model"));
  const auto img = glp::read_png(c.str("input"));
  int cls = glp::predict(model, img).label;
  if (c.has("class") && !c.str("class").empty()) {
    const auto& names = model.spec.class_names;
    const auto it = std::find(names.begin(), names.end(), c.str("class"));
    cls = it != names.end() ? static_cast<int>(it - names.begin())
                            : static_cast<int>(c.size("class"));
  }
  const auto up = c.str("upsample");
  if (up != "bilinear" && up != "nearest") throw glp::ConfigError("upsample is bilinear|nearest");
  const auto layer = c.has("layer") ? c.str("layer") : "";
  const auto h = glp::gradcam(model, img, cls, layer,
                              up == "nearest" ? glp::Upsample::nearest : glp::Upsample::bilinear);
  std::string stem = c.has("out") ? c.str("out") : "";
  if (stem.empty()) stem = (fs::path(c.str("input")).parent_path() / fs::path(c.str("input")).stem()).string();
  glp::write_png(stem + ".cam.png", glp::overlay(h, img));
  glp::write_file_bytes(stem + ".pgm", glp::encode_pgm16(h));
  std::printf("class %s -> %s.cam.png, %s.pgm\n",
              static_cast<std::size_t>(cls) < model.spec.class_names.size()
                  ? model.spec.class_names[static_cast<std::size_t>(cls)].c_str()
                  : "?",
              stem.c_str(), stem.c_str());
  return 0;
}

void print_manifest(const std::string& out_dir) {
  std::printf("reports in %s (run_manifest.json lists checksums)\n", out_dir.c_str());
}

int cmd_exp1(const Config& c) {
  const auto r = glp::run_navon_experiment(c);
  for (const auto& row : r.table) {
    std::printf("%-6s local %.4f global %.4f\n", row.model.c_str(), row.local_acc, row.global_acc);
  }
  std::printf("grad-cam band localization %zu/%zu\n", r.localization_passes(), r.localization.size());
  print_manifest(c.has("out_dir") ? c.str("out_dir") : glp::navon_defaults().at("out_dir"));
  return 0;
}

int cmd_exp2(const Config& c) {
  const auto r = glp::run_glp_robustness_experiment(c);
  for (const auto& row : r.clean) {
    std::printf("%-6s", row.model.c_str());
    for (const auto& [k, a] : row.topk) std::printf(" top%zu %.4f", k, a);
    std::printf("\n");
  }
  print_manifest(c.has("out_dir") ? c.str("out_dir") : glp::robustness_defaults().at("out_dir"));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Global/local processing toolkit"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<Command>> cmds;

  auto& gnavon = add_command(app, cmds, "gen-navon", "generate Navon compound stimuli",
                             {{"count", "2000"}, {"size", "64"}}, {"out", "seed"});
  auto& gsimple = add_command(app, cmds, "gen-simple", "generate simple circle/square outlines",
                              {{"count", "3000"}, {"size", "64"}}, {"out", "seed"});
  auto& gtex = add_command(app, cmds, "gen-textured", "generate the textured-shapes set",
                           {{"count", "1000"}, {"size", "64"}}, {"out", "seed"});
  auto& filter = add_command(app, cmds, "filter", "smart or fixed-cutoff low-pass filter",
                             {{"alpha", "auto"}}, {"out", "profile"});
  filter.app->add_option("input", filter.flags["input"], "input PNG");
  auto& train = add_command(app, cmds, "train", "train a gas, local or glp model",
                            {{"kind", "gas"}, {"task", "global"}, {"epochs", "30"},
                             {"lr", "0.002"}, {"momentum", "0.9"}, {"lr_decay", "0.9"},
                             {"batch", "64"}, {"head_epochs", "20"}, {"head_batch", "8"}},
                            {"data", "out", "seed", "local"});
  auto& eval = add_command(app, cmds, "eval", "top-k accuracy of a saved model",
                           {{"task", "global"}, {"split", "test"}, {"topk", "1,5"}},
                           {"model", "data", "out"});
  auto& attack = add_command(app, cmds, "attack", "FGSM/PGD robustness sweep",
                             {{"task", "global"}, {"split", "test"}, {"attacks", "fgsm,pgd"},
                              {"epsilons", "0,0.001,0.005,0.01,0.05,0.1,0.15,0.5"},
                              {"pgd_steps", "10"}, {"repeats", "5"}, {"topk", "1"},
                              {"seed", "0"}},
                             {"model", "data", "out"});
  auto& cam = add_command(app, cmds, "gradcam", "Grad-CAM overlay for one image",
                          {{"upsample", "bilinear"}}, {"model", "class", "layer", "out"});
  cam.app->add_option("input", cam.flags["input"], "input PNG");
  std::vector<std::string> exp1_keys{"seed"}, exp2_keys{"seed"};
  auto& exp1 = add_command(app, cmds, "run-exp1", "Navon global/local detection experiment",
                           glp::navon_defaults(), exp1_keys);
  auto& exp2 = add_command(app, cmds, "run-exp2", "GLP robustness experiment",
                           glp::robustness_defaults(), exp2_keys);
  // Experiment defaults are applied by the runners so the config hash only
  // covers what the user set plus those defaults.
  exp1.defaults.clear();
  exp2.defaults.clear();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gnavon.app) return gen(gnavon.resolve(), "navon");
    if (*gsimple.app) return gen(gsimple.resolve(), "simple");
    if (*gtex.app) return gen(gtex.resolve(), "textured");
    if (*filter.app) return cmd_filter(filter.resolve());
    if (*train.app) return cmd_train(train.resolve());
    if (*eval.app) return cmd_eval(eval.resolve());
    if (*attack.app) return cmd_attack(attack.resolve());
    if (*cam.app) return cmd_gradcam(cam.resolve());
    if (*exp1.app) return cmd_exp1(exp1.resolve());
    if (*exp2.app) return cmd_exp2(exp2.resolve());
  } catch (const glp::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const glp::UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const glp::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const glp::Error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 2;
}
