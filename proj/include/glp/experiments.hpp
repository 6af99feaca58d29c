#pragma once

// End-to-end experiment runners: the Navon global/local detection study and
// the GLP-versus-local robustness study. Each run writes its reports under
// one output directory together with a manifest of artifact checksums.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "glp/attacks.hpp"
#include "glp/config.hpp"
#include "glp/gradcam.hpp"
#include "glp/model_io.hpp"
#include "glp/models.hpp"
#include "glp/navon.hpp"
#include "glp/textured.hpp"

namespace glp {

namespace fs = std::filesystem;

/// Files written by a run, in write order, with their FNV-1a checksums.
class ArtifactLog {
 public:
  explicit ArtifactLog(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const { return root_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }

  void write(const std::string& rel, const std::string& text) {
    write(rel, std::vector<std::uint8_t>(text.begin(), text.end()));
  }
  void write(const std::string& rel, const std::vector<std::uint8_t>& bytes) {
    const auto p = path(rel);
    detail::ensure_dir(p.parent_path());
    write_file_bytes(p.string(), bytes);
    record(rel);
  }
  /// Checksums a file some other routine already wrote.
  void record(const std::string& rel) {
    const auto bytes = read_file_bytes(path(rel).string());
    entries_.emplace_back(rel, fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                                        bytes.size())));
  }

  const std::vector<std::pair<std::string, std::uint64_t>>& entries() const { return entries_; }

 private:
  fs::path root_;
  std::vector<std::pair<std::string, std::uint64_t>> entries_;
};

/// `run_manifest.json`: config hash, seed, artifact checksums, wall time.
inline void write_run_manifest(const ArtifactLog& log, const Config& cfg, double seconds) {
  // The output location does not change results, so it stays out of the hash.
  Config hashed;
  for (const auto& [k, v] : cfg.values()) {
    if (k != "out_dir") hashed.set(k, v);
  }
  nlohmann::ordered_json j;
  j["config_hash"] = hex64(hashed.hash());
  j["seed"] = cfg.u64("seed");
  j["config"] = cfg.values();
  auto& arts = j["artifacts"];
  arts = nlohmann::ordered_json::object();
  for (const auto& [name, sum] : log.entries()) arts[name] = hex64(sum);
  j["elapsed_seconds"] = seconds;
  write_file_bytes(log.path("run_manifest.json").string(),
                   [&] {
                     const auto s = j.dump(2) + "\n";
                     return std::vector<std::uint8_t>(s.begin(), s.end());
                   }());
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string training_log_text(const std::vector<EpochLog>& h) {
  std::ostringstream os;
  write_training_log(os, h);
  return os.str();
}

inline TrainHyper hyper_from(const Config& c, const std::string& epochs_key, std::size_t batch,
                             const std::string& salt) {
  TrainHyper hp;
  hp.lr = c.real("lr");
  hp.momentum = c.real("momentum");
  hp.lr_decay = c.real("lr_decay");
  hp.batch = batch;
  hp.epochs = c.size(epochs_key);
  hp.seed = substream_seed(c.u64("seed"), salt);
  if (!(hp.lr > 0.0)) throw ConfigError("lr must be positive");
  if (hp.momentum < 0.0 || hp.momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  if (!(hp.lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
  if (hp.batch == 0) throw ConfigError("batch must be positive");
  return hp;
}

inline void apply_defaults(Config& c, const std::map<std::string, std::string>& defaults) {
  std::set<std::string> known{"experiment", "seed"};
  for (const auto& [k, v] : defaults) {
    known.insert(k);
    c.set_default(k, v);
  }
  c.check_keys(known);
  if (!c.has("seed")) throw ConfigError("config key 'seed' is mandatory");
  (void)c.u64("seed");
}

inline Image dataset_image(const Dataset& ds, std::size_t i) {
  return chw_to_image(ds.image(i), ds.channels, ds.height, ds.width);
}

/// Overlay PNG plus raw 16-bit heatmap for one sample.
inline void write_cam(ArtifactLog& log, const std::string& stem, const Heatmap& h,
                      const Image& img) {
  log.write(stem + ".cam.png", encode_png(overlay(h, img)));
  log.write(stem + ".pgm", encode_pgm16(h));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Navon global/local detection.

inline const std::map<std::string, std::string>& navon_defaults() {
  static const std::map<std::string, std::string> d{
      {"out_dir", "runs/exp1"}, {"image_size", "64"},  {"train_count", "3000"},
      {"test_count", "2000"},   {"gas_epochs", "30"},  {"local_epochs", "30"},
      {"lr", "0.002"},          {"momentum", "0.9"},   {"lr_decay", "0.9"},
      {"batch", "64"},          {"cam_samples", "20"}, {"cam_overlays", "4"}};
  return d;
}

struct NavonRow {
  std::string model;
  double local_acc = 0.0;
  double global_acc = 0.0;
};

struct Localization {
  std::size_t index = 0;  // Navon dataset index
  double mass_in_band = 0.0;
  double band_area = 0.0;
  bool better_than_uniform() const { return mass_in_band > band_area; }
};

struct NavonResult {
  std::vector<NavonRow> table;  // gas, local
  std::vector<Localization> localization;
  const NavonRow& row(const std::string& model) const {
    for (const auto& r : table) {
      if (r.model == model) return r;
    }
    throw UsageError("no Navon row for " + model);
  }
  std::size_t localization_passes() const {
    std::size_t n = 0;
    for (const auto& l : localization) n += l.better_than_uniform();
    return n;
  }
};

inline std::string navon_table_csv(const std::vector<NavonRow>& rows) {
  std::string s = "model,local_acc,global_acc\n";
  for (const auto& r : rows) {
    s += r.model + "," + detail::fmt("%.6f", r.local_acc) + "," + detail::fmt("%.6f", r.global_acc) +
         "\n";
  }
  return s;
}

/// Grad-CAM mass inside the global-contour band for the first `count` Navon
/// stimuli whose global shape is a circle, explained for the circle class.
inline std::vector<Localization> navon_localization(const Model<float>& gas, const Dataset& navon,
                                                    std::size_t count, std::size_t image_size,
                                                    std::uint64_t navon_seed,
                                                    ArtifactLog* log = nullptr,
                                                    std::size_t overlays = 0) {
  std::vector<Localization> out;
  const auto& names = gas.spec.class_names;
  const auto it = std::find(names.begin(), names.end(), "circle");
  if (it == names.end()) throw UsageError("model has no 'circle' class");
  const int circle = static_cast<int>(it - names.begin());
  for (std::size_t i = 0; i < navon.size() && out.size() < count; ++i) {
    const auto spec = navon_dataset_spec(i, image_size, navon_seed);
    if (spec.global_shape != Shape::circle) continue;
    const auto layout = render_compound_layout(spec);
    const auto mask = contour_band(layout, spec.global_shape, spec.local_size / 2 + spec.line_width);
    const auto img = detail::dataset_image(navon, i);
    const auto h = gradcam(gas, img, circle, "gas.conv2");
    Localization l;
    l.index = i;
    l.mass_in_band = mass_fraction(h, mask);
    l.band_area = static_cast<double>(std::count(mask.begin(), mask.end(), true)) /
                  static_cast<double>(mask.size());
    if (log && out.size() < overlays) {
      detail::write_cam(*log, "gradcam/gas_navon_" + std::to_string(i), h, img);
    }
    out.push_back(l);
  }
  return out;
}

inline std::string localization_csv(const std::vector<Localization>& ls) {
  std::string s = "index,mass_in_band,band_area,better_than_uniform\n";
  for (const auto& l : ls) {
    s += std::to_string(l.index) + "," + detail::fmt("%.6f", l.mass_in_band) + "," +
         detail::fmt("%.6f", l.band_area) + "," + (l.better_than_uniform() ? "1" : "0") + "\n";
  }
  return s;
}

/// Trains GAS and the local CNN on simple shapes, scores both on the Navon
/// set's global and local labels and explains GAS on circle stimuli.
inline NavonResult run_navon_experiment(Config cfg) {
  const auto start = std::chrono::steady_clock::now();
  detail::apply_defaults(cfg, navon_defaults());
  const std::uint64_t seed = cfg.u64("seed");
  const std::size_t size = cfg.size("image_size");
  if (size < 16) throw ConfigError("image_size must be >= 16");
  ArtifactLog log(cfg.str("out_dir"));
  detail::ensure_dir(log.root());

  const std::uint64_t navon_seed = substream_seed(seed, "datagen", 1);
  const auto sm = generate_simple_dataset(cfg.size("train_count"), size, log.path("data/simple"),
                                          substream_seed(seed, "datagen", 0));
  const auto nm = generate_navon_dataset(cfg.size("test_count"), size, log.path("data/navon"),
                                         navon_seed);
  log.record("data/simple/manifest.csv");
  log.record("data/navon/manifest.csv");

  const auto train = load_dataset(sm.subset("train"), LabelTask::global);
  const auto val = load_dataset(sm.subset("val"), LabelTask::global, train.class_names);
  const auto navon_global = load_dataset(nm, LabelTask::global, train.class_names);
  auto navon_local = navon_global;
  navon_local.labels = load_dataset(nm, LabelTask::local, train.class_names).labels;
  const auto ftrain = smart_filter_dataset(train);
  const auto fval = smart_filter_dataset(val);
  const auto fnavon = smart_filter_dataset(navon_global);

  ModelSpec spec;
  spec.class_names = train.class_names;
  spec.arch.gas.input_size = spec.arch.local.input_size = size;

  NavonResult res;
  Model<float> gas_model;
  for (auto kind : {ModelKind::gas, ModelKind::local}) {
    spec.kind = kind;
    const std::string name = kind_name(kind);
    const auto hp = detail::hyper_from(cfg, name + "_epochs", cfg.size("batch"), name);
    TrainReport rep;
    auto m = train_stream_classifier<float>(spec, {&train, &ftrain}, {&val, &fval}, hp, &rep);
    log.write(name + "_train.csv", detail::training_log_text(rep.history));
    save_model(m, log.path(name).string());
    log.record(name + ".spec");
    log.record(name + ".ckpt");
    const auto ev = evaluate(m, {&navon_global, &fnavon});
    auto evl = ev;
    evl.labels = navon_local.labels;
    res.table.push_back({name, evl.top1(), ev.top1()});
    if (kind == ModelKind::gas) gas_model = std::move(m);
  }
  log.write("table1.csv", navon_table_csv(res.table));

  res.localization = navon_localization(gas_model, navon_global, cfg.size("cam_samples"), size,
                                        navon_seed, &log, cfg.size("cam_overlays"));
  log.write("localization.csv", localization_csv(res.localization));

  nlohmann::ordered_json j;
  j["experiment"] = "navon";
  for (const auto& r : res.table) {
    j["models"][r.model] = {{"local_acc", r.local_acc}, {"global_acc", r.global_acc}};
  }
  j["localization"] = {{"samples", res.localization.size()},
                       {"better_than_uniform", res.localization_passes()}};
  log.write("summary.json", j.dump(2) + "\n");
  write_run_manifest(log, cfg,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return res;
}

// ---------------------------------------------------------------------------
// GLP robustness on the textured-shapes set (or an external manifest).

inline const std::map<std::string, std::string>& robustness_defaults() {
  static const std::map<std::string, std::string> d{
      {"out_dir", "runs/exp2"},
      {"data_dir", ""},
      {"task", "joint"},
      {"image_size", "64"},
      {"count", "2000"},
      {"local_epochs", "30"},
      {"gas_epochs", "30"},
      {"head_epochs", "20"},
      {"head_batch", "8"},
      {"lr", "0.002"},
      {"momentum", "0.9"},
      {"lr_decay", "0.9"},
      {"batch", "64"},
      {"attacks", "fgsm,pgd"},
      {"epsilons", "0,0.001,0.005,0.01,0.05,0.1,0.15,0.5"},
      {"pgd_steps", "10"},
      {"repeats", "5"},
      {"topk", "1,5"},
      {"cam_overlays", "4"}};
  return d;
}

struct CleanRow {
  std::string model;
  std::vector<std::pair<std::size_t, double>> topk;  // (k, accuracy)
  double at(std::size_t k) const {
    for (const auto& [kk, a] : topk) {
      if (kk == k) return a;
    }
    throw UsageError("no top-" + std::to_string(k) + " accuracy for " + model);
  }
};

struct RobustnessResult {
  std::vector<CleanRow> clean;  // local, gas, glp
  std::map<std::string, std::map<std::size_t, RobustnessReport>> sweeps;  // model -> k -> report

  const CleanRow& clean_row(const std::string& model) const {
    for (const auto& r : clean) {
      if (r.model == model) return r;
    }
    throw UsageError("no clean row for " + model);
  }
  double accuracy(const std::string& model, std::size_t k, AttackKind a, double eps) const {
    return sweeps.at(model).at(k).row(a, eps).mean;
  }
};

inline std::string clean_csv(const std::vector<CleanRow>& rows) {
  std::string s = "model";
  for (const auto& [k, a] : rows.front().topk) s += ",top" + std::to_string(k);
  s += "\n";
  for (const auto& r : rows) {
    s += r.model;
    for (const auto& [k, a] : r.topk) s += "," + detail::fmt("%.6f", a);
    s += "\n";
  }
  return s;
}

/// One row per model x top-k x attack x epsilon x repeat.
inline std::string robustness_csv(const RobustnessResult& r) {
  std::string s = "model,topk,attack,epsilon,repeat,accuracy\n";
  for (const auto& [model, by_k] : r.sweeps) {
    for (const auto& [k, rep] : by_k) {
      for (const auto& row : rep.rows) {
        for (std::size_t i = 0; i < row.repeats.size(); ++i) {
          s += model + "," + std::to_string(k) + "," + attack_name(row.attack) + "," +
               detail::fmt("%g", row.epsilon) + "," + std::to_string(i) + "," +
               detail::fmt("%.6f", row.repeats[i]) + "\n";
        }
      }
    }
  }
  return s;
}

inline RobustnessResult run_glp_robustness_experiment(Config cfg) {
  const auto start = std::chrono::steady_clock::now();
  detail::apply_defaults(cfg, robustness_defaults());
  const std::uint64_t seed = cfg.u64("seed");
  const LabelTask task = parse_label_task(cfg.str("task"));
  ArtifactLog log(cfg.str("out_dir"));
  detail::ensure_dir(log.root());

  SweepConfig sc;
  sc.attacks.clear();
  for (const auto& a : cfg.list("attacks")) sc.attacks.push_back(parse_attack(a));
  sc.epsilons = cfg.reals("epsilons");
  for (double e : sc.epsilons) {
    if (e < 0.0) throw ConfigError("epsilons must be >= 0");
  }
  sc.pgd_steps = cfg.size("pgd_steps");
  sc.repeats = cfg.size("repeats");
  sc.seed = substream_seed(seed, "repeats");
  if (sc.pgd_steps == 0 || sc.repeats == 0) throw ConfigError("pgd_steps and repeats must be >= 1");
  const auto ks = cfg.sizes("topk");
  if (ks.empty() || std::count(ks.begin(), ks.end(), 0u)) throw ConfigError("topk entries must be >= 1");

  DatasetManifest dm;
  if (cfg.str("data_dir").empty()) {
    dm = generate_textured_dataset(cfg.size("count"), cfg.size("image_size"), log.path("data/textured"),
                                   substream_seed(seed, "datagen", 2));
    log.record("data/textured/manifest.csv");
  } else {
    const fs::path dir = cfg.str("data_dir");
    dm = read_manifest(dir / kManifestFile);
    dm.base_dir = dir;
  }
  const auto names = dm.class_names(task);
  const auto train = load_dataset(dm.subset("train"), task, names);
  const auto val = load_dataset(dm.subset("val"), task, names);
  const auto test = load_dataset(dm.subset("test"), task, names);
  if (train.height != train.width) throw ShapeError("images must be square");
  const auto ftrain = smart_filter_dataset(train);
  const auto fval = smart_filter_dataset(val);
  const auto ftest = smart_filter_dataset(test);

  ModelSpec spec;
  spec.class_names = names;
  spec.arch.gas.input_size = spec.arch.local.input_size = train.height;
  spec.arch.gas.channels = spec.arch.local.channels = train.channels;

  // Step 1: the local stream, trained on its own.
  spec.kind = ModelKind::local;
  TrainReport local_rep;
  auto local = train_stream_classifier<float>(
      spec, {&train, nullptr}, {&val, nullptr},
      detail::hyper_from(cfg, "local_epochs", cfg.size("batch"), "local"), &local_rep);
  log.write("local_train.csv", detail::training_log_text(local_rep.history));

  // Steps 2-4: GAS on the task, then the fused head on frozen streams.
  spec.kind = ModelKind::glp;
  GlpHyper gh;
  gh.gas = detail::hyper_from(cfg, "gas_epochs", cfg.size("batch"), "gas");
  gh.head = detail::hyper_from(cfg, "head_epochs", cfg.size("head_batch"), "head");
  GlpReport glp_rep;
  Model<float> gas;
  auto glp = train_glp<float>(spec, local, {&train, &ftrain}, {&val, &fval}, gh, &glp_rep, &gas);
  log.write("gas_train.csv", detail::training_log_text(glp_rep.gas.history));
  log.write("glp_head_train.csv", detail::training_log_text(glp_rep.head.history));

  RobustnessResult res;
  for (auto* entry : {&local, &gas, &glp}) {
    const std::string name = kind_name(entry->spec.kind);
    save_model(*entry, log.path(name).string());
    log.record(name + ".spec");
    log.record(name + ".ckpt");
    const auto ev = evaluate(*entry, {&test, &ftest});
    CleanRow row{name, {}};
    for (std::size_t k : ks) row.topk.emplace_back(k, ev.topk(k));
    res.clean.push_back(row);
  }
  log.write("clean_accuracy.csv", clean_csv(res.clean));

  for (auto* entry : {&local, &glp}) {
    const std::string name = kind_name(entry->spec.kind);
    for (std::size_t k : ks) {
      SweepConfig c = sc;
      c.topk = k;
      auto rep = robustness_sweep<float>(*entry, test, c);
      std::ostringstream os;
      write_sweep_csv(os, rep);
      log.write("sweep_" + name + "_top" + std::to_string(k) + ".csv", os.str());
      res.sweeps[name][k] = std::move(rep);
    }
  }
  log.write("robustness.csv", robustness_csv(res));

  const std::size_t overlays = std::min(cfg.size("cam_overlays"), test.size());
  for (std::size_t i = 0; i < overlays; ++i) {
    const auto img = detail::dataset_image(test, i);
    for (auto* entry : {&local, &glp}) {
      const std::string name = kind_name(entry->spec.kind);
      const auto h = gradcam(*entry, img, test.labels[i]);
      detail::write_cam(log, "gradcam/" + name + "_" + std::to_string(i), h, img);
    }
  }

  nlohmann::ordered_json j;
  j["experiment"] = "glp-robustness";
  for (const auto& r : res.clean) {
    for (const auto& [k, a] : r.topk) j["clean"][r.model]["top" + std::to_string(k)] = a;
  }
  for (const auto& [model, by_k] : res.sweeps) {
    for (const auto& [k, rep] : by_k) {
      for (const auto& row : rep.rows) {
        j["sweeps"][model]["top" + std::to_string(k)][attack_name(row.attack)]
         [detail::fmt("%g", row.epsilon)] = row.mean;
      }
    }
  }
  j["best_epochs"] = {{"local", local_rep.best_epoch},
                      {"gas", glp_rep.gas.best_epoch},
                      {"glp_head", glp_rep.head.best_epoch}};
  log.write("summary.json", j.dump(2) + "\n");
  write_run_manifest(log, cfg,
                     std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return res;
}

}  // namespace glp
