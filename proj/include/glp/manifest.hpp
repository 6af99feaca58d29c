#pragma once

// Dataset manifests (`path,global_label,local_label,split` CSV) and their
// in-memory, network-ready form.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "glp/common.hpp"
#include "glp/imaging.hpp"

namespace glp {

inline constexpr const char* kManifestHeader = "path,global_label,local_label,split";

struct ManifestRecord {
  std::string path;  // relative to the manifest's directory
  std::string global_label;
  std::string local_label;
  std::string split;  // train | val | test

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

/// Which manifest column(s) define the class of a record.
enum class LabelTask { global, local, joint };

inline LabelTask parse_label_task(const std::string& s) {
  if (s == "global") return LabelTask::global;
  if (s == "local") return LabelTask::local;
  if (s == "joint") return LabelTask::joint;
  throw ConfigError("unknown label task '" + s + "' (global|local|joint)");
}

inline std::string label_of(const ManifestRecord& r, LabelTask task) {
  switch (task) {
    case LabelTask::global: return r.global_label;
    case LabelTask::local: return r.local_label;
    case LabelTask::joint: return r.global_label + "|" + r.local_label;
  }
  return {};
}

struct DatasetManifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRecord> records;

  std::filesystem::path resolve(const ManifestRecord& r) const {
    return base_dir / r.path;
  }

  DatasetManifest subset(const std::string& split) const {
    DatasetManifest m{base_dir, {}};
    std::copy_if(records.begin(), records.end(), std::back_inserter(m.records),
                 [&](const ManifestRecord& r) { return r.split == split; });
    return m;
  }

  /// Sorted distinct class names; class indices follow this order.
  std::vector<std::string> class_names(LabelTask task) const {
    std::vector<std::string> names;
    for (const auto& r : records) names.push_back(label_of(r, task));
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
  }

  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

inline void write_manifest(const std::filesystem::path& file,
                           const DatasetManifest& m) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + file.string());
  out << kManifestHeader << '\n';
  for (const auto& r : m.records) {
    out << r.path << ',' << r.global_label << ',' << r.local_label << ','
        << r.split << '\n';
  }
  if (!out) throw IoError("short write to manifest " + file.string());
}

inline DatasetManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest " + file.string());
  DatasetManifest m;
  m.base_dir = file.parent_path();
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw DecodeError("manifest " + file.string() + " lacks header '" +
                      kManifestHeader + "'");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(col);
    if (cols.size() != 4) {
      throw DecodeError("manifest " + file.string() + ":" +
                        std::to_string(lineno) + ": expected 4 columns");
    }
    m.records.push_back({cols[0], cols[1], cols[2], cols[3]});
  }
  return m;
}

/// Images in N x C x H x W float layout with integer labels.
struct Dataset {
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const { return channels * height * width; }
  std::span<const float> image(std::size_t i) const {
    return {pixels.data() + i * image_numel(), image_numel()};
  }
  std::span<float> image(std::size_t i) {
    return {pixels.data() + i * image_numel(), image_numel()};
  }
};

/// Interleaved HWC doubles to planar CHW floats.
inline void image_to_chw(const Image& img, std::span<float> out) {
  const std::size_t n = img.pixel_count();
  const std::size_t c = img.channels();
  auto src = img.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      out[ch * n + i] = static_cast<float>(src[i * c + ch]);
    }
  }
}

inline Image chw_to_image(std::span<const float> chw, std::size_t channels,
                          std::size_t height, std::size_t width) {
  Image img(height, width, channels);
  const std::size_t n = height * width;
  auto dst = img.data();
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t i = 0; i < n; ++i) dst[i * channels + ch] = chw[ch * n + i];
  }
  return img;
}

/// Decodes every record of `m`. When `class_names` is empty the vocabulary is
/// taken from the manifest itself.
inline Dataset load_dataset(const DatasetManifest& m, LabelTask task,
                            std::vector<std::string> class_names = {}) {
  if (m.records.empty()) throw DomainError("cannot load an empty manifest");
  if (class_names.empty()) class_names = m.class_names(task);
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < class_names.size(); ++i) {
    index[class_names[i]] = static_cast<int>(i);
  }
  Dataset ds;
  ds.class_names = class_names;
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const Image img = read_png(m.resolve(m.records[i]).string());
    if (i == 0) {
      ds.channels = img.channels();
      ds.height = img.height();
      ds.width = img.width();
      ds.pixels.resize(m.records.size() * ds.image_numel());
    } else if (img.channels() != ds.channels || img.height() != ds.height ||
               img.width() != ds.width) {
      throw ShapeError("image " + m.records[i].path +
                       " does not match the dataset's image shape");
    }
    const auto label = label_of(m.records[i], task);
    const auto it = index.find(label);
    if (it == index.end()) {
      throw DomainError("label '" + label + "' is not in the class vocabulary");
    }
    image_to_chw(img, ds.image(i));
    ds.labels.push_back(it->second);
  }
  return ds;
}

}  // namespace glp
