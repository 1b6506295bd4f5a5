#include "lac/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace lac {

using nlohmann::json;

namespace {
constexpr char kAlphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
constexpr int kFormatVersion = 1;
}  // namespace

std::string base64_encode(const unsigned char* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    const unsigned b0 = data[i];
    const unsigned b1 = i + 1 < len ? data[i + 1] : 0;
    const unsigned b2 = i + 2 < len ? data[i + 2] : 0;
    out.push_back(kAlphabet[b0 >> 2]);
    out.push_back(kAlphabet[((b0 & 0x3) << 4) | (b1 >> 4)]);
    out.push_back(i + 1 < len ? kAlphabet[((b1 & 0xF) << 2) | (b2 >> 6)] : '=');
    out.push_back(i + 2 < len ? kAlphabet[b2 & 0x3F] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  static const auto value_of = [] {
    std::array<int, 256> v{};
    v.fill(-1);
    for (int i = 0; i < 64; ++i) v[static_cast<unsigned char>(kAlphabet[i])] = i;
    return v;
  }();
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  int acc = 0, bits = 0;
  for (const char ch : text) {
    if (ch == '=' || ch == '\n' || ch == '\r') continue;
    const int v = value_of[static_cast<unsigned char>(ch)];
    if (v < 0) throw Error("base64: invalid character");
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((acc >> bits) & 0xFF));
    }
  }
  return out;
}

namespace {

std::string encode_vec(const Vec& v) {
  return base64_encode(reinterpret_cast<const unsigned char*>(v.data()),
                       static_cast<size_t>(v.size()) * sizeof(double));
}

Vec decode_vec(const std::string& text, int64_t expected) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != static_cast<size_t>(expected) * sizeof(double))
    throw Error("checkpoint: tensor byte size mismatch");
  Vec v(expected);
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return v;
}

}  // namespace

void Checkpoint::put_tensors(const std::string& prefix, const TensorRefs& refs) {
  for (const auto& [name, m] : refs.mats) {
    Tensor t;
    t.name = prefix + name;
    t.rows = m->rows();
    t.cols = m->cols();
    t.data = Eigen::Map<const Vec>(m->data(), m->size());
    tensors.push_back(std::move(t));
  }
  for (const auto& [name, v] : refs.vecs) {
    Tensor t;
    t.name = prefix + name;
    t.rows = v->size();
    t.cols = 0;
    t.data = *v;
    tensors.push_back(std::move(t));
  }
}

bool Checkpoint::has_tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

const Checkpoint::Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw Error("checkpoint: missing tensor " + name);
}

void Checkpoint::take_tensors(const std::string& prefix, TensorRefs refs) const {
  for (auto& [name, m] : refs.mats) {
    const Tensor& t = tensor(prefix + name);
    if (t.rows != m->rows() || t.cols != m->cols())
      throw Error("checkpoint: shape mismatch for " + prefix + name);
    Eigen::Map<Vec>(m->data(), m->size()) = t.data;
  }
  for (auto& [name, v] : refs.vecs) {
    const Tensor& t = tensor(prefix + name);
    if (t.rows != v->size() || t.cols != 0)
      throw Error("checkpoint: shape mismatch for " + prefix + name);
    *v = t.data;
  }
}

void Checkpoint::put_vec(const std::string& name, const Vec& v) {
  Tensor t;
  t.name = name;
  t.rows = v.size();
  t.cols = 0;
  t.data = v;
  tensors.push_back(std::move(t));
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json blobs = json::array();
  for (const auto& t : ckpt.tensors)
    blobs.push_back(json{{"name", t.name},
                         {"rows", t.rows},
                         {"cols", t.cols},
                         {"data", encode_vec(t.data)}});
  const json j{{"format_version", kFormatVersion},
               {"kind", ckpt.kind},
               {"config", ckpt.config},
               {"step", ckpt.step},
               {"rng_state", ckpt.rng_state},
               {"extra", ckpt.extra},
               {"tensors", std::move(blobs)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("save_checkpoint: cannot open " + path);
  out << j.dump();
  if (!out) throw Error("save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("load_checkpoint: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw Error("load_checkpoint: parse error in " + path + ": " + e.what());
  }
  if (!j.contains("format_version") || j["format_version"].get<int>() != kFormatVersion)
    throw Error("load_checkpoint: unsupported format_version in " + path);
  Checkpoint ckpt;
  ckpt.kind = j.at("kind").get<std::string>();
  ckpt.config = j.at("config");
  ckpt.step = j.at("step").get<int64_t>();
  ckpt.rng_state = j.at("rng_state").get<std::string>();
  ckpt.extra = j.value("extra", json::object());
  for (const auto& b : j.at("tensors")) {
    Checkpoint::Tensor t;
    t.name = b.at("name").get<std::string>();
    t.rows = b.at("rows").get<int64_t>();
    t.cols = b.at("cols").get<int64_t>();
    const int64_t n = t.cols == 0 ? t.rows : t.rows * t.cols;
    t.data = decode_vec(b.at("data").get<std::string>(), n);
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void require_checkpoint_kind(const Checkpoint& ckpt, const std::string& kind) {
  if (ckpt.kind != kind)
    throw Error("checkpoint kind mismatch: expected " + kind + ", found " +
                ckpt.kind);
}

}  // namespace lac
