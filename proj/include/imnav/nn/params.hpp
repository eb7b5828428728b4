#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "imnav/nn/tape.hpp"

namespace imnav::nn {

// Owns named parameters in creation order. Names are unique paths like
// "policy/encoder/conv1/W". Checkpoints are a little-endian binary container:
//   magic "IMNAVCK1", u32 version, u64 count,
//   then per parameter: u32 name_len, name bytes, u32 ndim, u32 dims[], f64 data[].
class ParamStore {
 public:
  Param& create(const std::string& name, std::vector<int> dims) {
    if (index_.count(name)) throw Error("ParamStore: duplicate parameter name " + name);
    params_.push_back(std::make_unique<Param>(name, Tensor::zeros(std::move(dims))));
    index_[name] = params_.size() - 1;
    return *params_.back();
  }

  Param& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("ParamStore: unknown parameter " + name);
    return *params_[it->second];
  }

  size_t count() const { return params_.size(); }
  int64_t total_size() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p->size();
    return n;
  }

  std::vector<Param*> all() const {
    std::vector<Param*> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  // Parameters whose name starts with any of the given prefixes, in creation order.
  std::vector<Param*> with_prefix(const std::vector<std::string>& prefixes) const {
    std::vector<Param*> out;
    for (const auto& p : params_) {
      for (const auto& pre : prefixes) {
        if (p->name.rfind(pre, 0) == 0) {
          out.push_back(p.get());
          break;
        }
      }
    }
    return out;
  }

  void zero_grads() {
    for (auto& p : params_) p->grad.zero();
  }

  void check_grads_finite() const {
    for (const auto& p : params_) {
      if (!p->grad.all_finite()) throw Error("non-finite gradient in parameter " + p->name);
      if (!p->value.all_finite()) throw Error("non-finite value in parameter " + p->name);
    }
  }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint for writing: " + path);
    f.write(kMagic, 8);
    write_u32(f, kVersion);
    write_u64(f, params_.size());
    for (const auto& p : params_) {
      write_u32(f, static_cast<uint32_t>(p->name.size()));
      f.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
      write_u32(f, static_cast<uint32_t>(p->value.dims.size()));
      for (int d : p->value.dims) write_u32(f, static_cast<uint32_t>(d));
      f.write(reinterpret_cast<const char*>(p->value.v.data()),
              static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!f) throw Error("checkpoint write failed: " + path);
  }

  // Loads values into existing parameters; names and shapes must match exactly.
  void load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open checkpoint: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0) throw Error("bad checkpoint magic: " + path);
    const uint32_t version = read_u32(f);
    if (version != kVersion) throw Error("unsupported checkpoint version in " + path);
    const uint64_t n = read_u64(f);
    if (n != params_.size()) throw Error("checkpoint parameter count mismatch in " + path);
    for (uint64_t i = 0; i < n; ++i) {
      const uint32_t name_len = read_u32(f);
      std::string name(name_len, '\0');
      f.read(name.data(), name_len);
      Param& p = at(name);
      const uint32_t ndim = read_u32(f);
      std::vector<int> dims(ndim);
      for (auto& d : dims) d = static_cast<int>(read_u32(f));
      if (dims != p.value.dims) throw Error("checkpoint shape mismatch for " + name);
      f.read(reinterpret_cast<char*>(p.value.v.data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(double)));
      if (!f) throw Error("checkpoint truncated at " + name);
    }
  }

 private:
  static constexpr char kMagic[9] = "IMNAVCK1";
  static constexpr uint32_t kVersion = 1;

  static void write_u32(std::ofstream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u64(std::ofstream& f, uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
  }
  static uint32_t read_u32(std::ifstream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static uint64_t read_u64(std::ifstream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }

  std::vector<std::unique_ptr<Param>> params_;
  std::map<std::string, size_t> index_;
};

}  // namespace imnav::nn
