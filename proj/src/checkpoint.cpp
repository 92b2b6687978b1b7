// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "cuti/error.hpp"

namespace cuti {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[8] = {'C', 'U', 'T', 'I', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kText = 0;
constexpr std::uint8_t kArray = 1;

class Writer {
 public:
  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void put_name(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw FormatError("checkpoint truncated", pos_);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

struct RawEntry {
  std::vector<int> shape;
  std::vector<float> values;
};

struct Parsed {
  nlohmann::json meta;
  std::vector<std::string> order;
  std::map<std::string, RawEntry> arrays;
};

Parsed parse(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  r.need(sizeof(kMagic));
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw FormatError("bad checkpoint magic", 0);
  r.get_string(sizeof(kMagic));
  const auto count = r.get<std::uint32_t>();
  Parsed p;
  bool have_meta = false;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t at = r.pos();
    const std::string name = r.get_string(r.get<std::uint32_t>());
    const auto kind = r.get<std::uint8_t>();
    if (kind == kText) {
      const auto n = r.get<std::uint64_t>();
      const std::string text = r.get_string(static_cast<std::size_t>(n));
      if (name != "meta.json") throw FormatError("unexpected text entry '" + name + "'", at);
      try {
        p.meta = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception& ex) {
        throw FormatError(std::string("meta.json: ") + ex.what(), at);
      }
      have_meta = true;
    } else if (kind == kArray) {
      RawEntry a;
      const auto rank = r.get<std::uint32_t>();
      if (rank < 1 || rank > 4) throw FormatError("array '" + name + "' has invalid rank", at);
      std::size_t n = 1;
      for (std::uint32_t i = 0; i < rank; ++i) {
        a.shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
        n *= static_cast<std::size_t>(a.shape.back());
      }
      r.need(n * sizeof(float));
      a.values.resize(n);
      for (float& v : a.values) v = r.get<float>();
      p.order.push_back(name);
      p.arrays.emplace(name, std::move(a));
    } else {
      throw FormatError("unknown entry kind", at);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after last entry", r.pos());
  if (!have_meta) throw FormatError("checkpoint has no meta.json", 0);
  return p;
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const ModelState& state, const nlohmann::json& extra_meta) {
  nlohmann::json meta = {{"format", kCheckpointFormat},
                         {"architecture", to_json(state.spec)},
                         {"epoch", state.meta.epoch},
                         {"seed", state.meta.seed},
                         {"config_hash", state.meta.config_hash},
                         {"has_generators", state.has_generators()}};
  if (!extra_meta.is_null()) meta["extra"] = extra_meta;

  std::uint32_t count = 1;
  for_each_parameter(state, [&](const std::string&, const Tensor&) { ++count; });

  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(count);
  const std::string text = meta.dump();
  w.put_name("meta.json");
  w.put<std::uint8_t>(kText);
  w.put<std::uint64_t>(text.size());
  w.put_bytes(text.data(), text.size());
  for_each_parameter(state, [&](const std::string& name, const Tensor& t) {
    w.put_name(name);
    w.put<std::uint8_t>(kArray);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.put<float>(static_cast<float>(v));
  });
  return w.take();
}

ModelState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Parsed p = parse(bytes);
  if (p.meta.value("format", "") != kCheckpointFormat) {
    throw FormatError("unsupported checkpoint format '" + p.meta.value("format", "") + "'", 0);
  }
  ModelState state;
  try {
    state = init_model(backbone_spec_from_json(p.meta.at("architecture")), 0, p.meta.at("has_generators").get<bool>());
    state.meta.epoch = p.meta.at("epoch").get<int>();
    state.meta.seed = p.meta.at("seed").get<std::uint64_t>();
    state.meta.config_hash = p.meta.at("config_hash").get<std::string>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("meta.json: ") + ex.what(), 0);
  }
  std::size_t expected = 0;
  for_each_parameter(state, [&](const std::string& name, Tensor& t) {
    ++expected;
    auto it = p.arrays.find(name);
    if (it == p.arrays.end()) throw FormatError("checkpoint is missing array '" + name + "'", 0);
    if (it->second.shape != t.shape()) throw FormatError("array '" + name + "' has the wrong shape", 0);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(it->second.values[i]);
  });
  if (expected != p.arrays.size()) throw FormatError("checkpoint has arrays the architecture does not use", 0);
  return state;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path, const nlohmann::json& extra_meta) {
  write_file_bytes(path, serialize_checkpoint(state, extra_meta));
}

ModelState load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file_bytes(path)); }

nlohmann::json checkpoint_meta(const std::vector<std::uint8_t>& bytes) { return parse(bytes).meta; }

std::vector<std::string> checkpoint_array_names(const std::vector<std::uint8_t>& bytes) { return parse(bytes).order; }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace cuti
