#pragma once

// Model spec text files and binary parameter checkpoints.
//
// Spec file:        [model] / [gas] / [local] / [glp] sections of key = value.
// Checkpoint file:  "GLPCKPT1", u32 version, u64 hash of the spec text,
//                   u32 array count, then per array a u64 length and that
//                   many little-endian float32 values.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "glp/common.hpp"
#include "glp/models.hpp"

namespace glp {

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(trim(cur));
  return out;
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != v.size() || v[0] == '-') {
    throw ConfigError("'" + key + "' needs a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(x);
}

}  // namespace detail

inline std::string model_spec_text(const ModelSpec& s) {
  std::ostringstream o;
  const auto& g = s.arch.gas;
  const auto& l = s.arch.local;
  o << "[model]\n"
    << "kind = " << kind_name(s.kind) << "\n"
    << "classes = ";
  for (std::size_t i = 0; i < s.class_names.size(); ++i) o << (i ? "," : "") << s.class_names[i];
  o << "\n";
  if (s.kind != ModelKind::local) {
    o << "\n[gas]\ninput_size = " << g.input_size << "\nchannels = " << g.channels
      << "\nconv1 = " << g.conv1 << "\nconv2 = " << g.conv2 << "\n";
  }
  if (s.kind != ModelKind::gas) {
    o << "\n[local]\ninput_size = " << l.input_size << "\nchannels = " << l.channels
      << "\nwidths = " << l.widths[0] << "," << l.widths[1] << "," << l.widths[2] << ","
      << l.widths[3] << "\n";
  }
  if (s.kind == ModelKind::glp) o << "\n[glp]\nfusion_channels = " << s.arch.fusion_channels << "\n";
  return o.str();
}

inline ModelSpec parse_model_spec(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = detail::trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("bad section header on line " + std::to_string(lineno));
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "gas" && section != "local" && section != "glp") {
        throw ConfigError("unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos || section.empty()) {
      throw ConfigError("expected key = value inside a section on line " + std::to_string(lineno));
    }
    const std::string key = section + "." + detail::trim(line.substr(0, eq));
    if (!kv.emplace(key, detail::trim(line.substr(eq + 1))).second) {
      throw ConfigError("duplicate key " + key);
    }
  }
  auto take = [&](const std::string& key) -> std::optional<std::string> {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  ModelSpec s;
  const auto kind = take("model.kind");
  if (!kind) throw ConfigError("model spec needs [model] kind");
  s.kind = parse_kind(*kind);
  const auto classes = take("model.classes");
  if (!classes) throw ConfigError("model spec needs [model] classes");
  s.class_names = detail::split_list(*classes);
  auto size_key = [&](const std::string& key, std::size_t& dst) {
    if (auto v = take(key)) dst = detail::parse_size(key, *v);
  };
  size_key("gas.input_size", s.arch.gas.input_size);
  size_key("gas.channels", s.arch.gas.channels);
  size_key("gas.conv1", s.arch.gas.conv1);
  size_key("gas.conv2", s.arch.gas.conv2);
  size_key("local.input_size", s.arch.local.input_size);
  size_key("local.channels", s.arch.local.channels);
  if (auto v = take("local.widths")) {
    const auto parts = detail::split_list(*v);
    if (parts.size() != 4) throw ConfigError("local.widths needs four values");
    for (std::size_t i = 0; i < 4; ++i) s.arch.local.widths[i] = detail::parse_size("local.widths", parts[i]);
  }
  size_key("glp.fusion_channels", s.arch.fusion_channels);
  if (!kv.empty()) throw ConfigError("unknown model spec key " + kv.begin()->first);
  // A single-stream spec describes the one input shape for both streams.
  if (s.kind == ModelKind::gas) {
    s.arch.local.input_size = s.arch.gas.input_size, s.arch.local.channels = s.arch.gas.channels;
  } else if (s.kind == ModelKind::local) {
    s.arch.gas.input_size = s.arch.local.input_size, s.arch.gas.channels = s.arch.local.channels;
  }
  try {
    s.validate();
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("invalid model spec: ") + e.what());
  }
  return s;
}

inline constexpr char kCheckpointMagic[8] = {'G', 'L', 'P', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos > in.size() || in.size() - pos < sizeof(U)) throw DecodeError("checkpoint is truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[pos + i]) << (8 * i);
  pos += sizeof(U);
  return v;
}

}  // namespace detail

template <class T>
std::vector<std::uint8_t> encode_checkpoint(Model<T>& m) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, fnv1a64(model_spec_text(m.spec)));
  const auto arrays = m.arrays();
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto a : arrays) {
    detail::put_le<std::uint64_t>(out, a.size());
    for (T v : a) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

/// Loads values into `m`, whose spec must match the one the checkpoint was
/// written with.
template <class T>
void decode_checkpoint(std::span<const std::uint8_t> in, Model<T>& m) {
  if (in.size() < 8 || std::memcmp(in.data(), kCheckpointMagic, 8) != 0) {
    throw DecodeError("not a checkpoint file");
  }
  std::size_t pos = 8;
  if (detail::get_le<std::uint32_t>(in, pos) != kCheckpointVersion) {
    throw UnsupportedFormatError("unsupported checkpoint version");
  }
  if (detail::get_le<std::uint64_t>(in, pos) != fnv1a64(model_spec_text(m.spec))) {
    throw DecodeError("checkpoint was written for a different model spec");
  }
  auto arrays = m.arrays();
  if (detail::get_le<std::uint32_t>(in, pos) != arrays.size()) {
    throw DecodeError("checkpoint array count does not match the model");
  }
  for (auto a : arrays) {
    if (detail::get_le<std::uint64_t>(in, pos) != a.size()) {
      throw DecodeError("checkpoint array length does not match the model");
    }
    for (T& v : a) v = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(in, pos)));
  }
  if (pos != in.size()) throw DecodeError("trailing bytes after checkpoint");
}

/// Writes `<prefix>.spec` and `<prefix>.ckpt`.
template <class T>
void save_model(Model<T>& m, const std::string& prefix) {
  const std::string text = model_spec_text(m.spec);
  write_file_bytes(prefix + ".spec", std::vector<std::uint8_t>(text.begin(), text.end()));
  write_file_bytes(prefix + ".ckpt", encode_checkpoint(m));
}

template <class T>
Model<T> load_model(const std::string& prefix) {
  const auto text = read_file_bytes(prefix + ".spec");
  auto m = Model<T>::build(parse_model_spec(std::string(text.begin(), text.end())), 0);
  decode_checkpoint<T>(read_file_bytes(prefix + ".ckpt"), m);
  return m;
}

}  // namespace glp
