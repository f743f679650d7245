#pragma once

#include <map>
#include <string>

#include "bevloc/tensor.hpp"

namespace bevloc::nn {

// Named parameter map with per-tensor gradient accumulators. Buffers
// (running statistics, configuration vectors) live here too but are flagged
// non-trainable so the optimizer and parameter counts skip them.
template <typename T>
class ParamStoreT {
 public:
  struct Entry {
    TensorT<T> value;
    TensorT<T> grad;
    bool trainable = true;
  };

  TensorT<T>& create(const std::string& name, std::vector<int> shape, bool trainable = true) {
    if (entries_.count(name)) throw Error("ParamStore: duplicate name " + name);
    Entry e;
    e.value = TensorT<T>(shape);
    e.grad = TensorT<T>(std::move(shape));
    e.trainable = trainable;
    return entries_.emplace(name, std::move(e)).first->second.value;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  TensorT<T>& value(const std::string& name) { return entry(name).value; }
  const TensorT<T>& value(const std::string& name) const { return entry(name).value; }
  TensorT<T>& grad(const std::string& name) { return entry(name).grad; }

  void accumulate(const std::string& name, const TensorT<T>& g) {
    Entry& e = entry(name);
    if (!e.value.same_shape(g))
      throw Error("ParamStore: gradient shape mismatch for " + name + " (" + g.shape_str() +
                  " vs " + e.value.shape_str() + ")");
    for (std::size_t i = 0; i < g.data.size(); ++i) e.grad.data[i] += g.data[i];
  }

  void zero_grad() {
    for (auto& [name, e] : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
  }

  std::size_t param_count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& [name, e] : entries_)
      if (e.trainable && name.rfind(prefix, 0) == 0) n += e.value.numel();
    return n;
  }

  // sorted by name, deterministic
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  Entry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("ParamStore: unknown name " + name);
    return it->second;
  }
  const Entry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw Error("ParamStore: unknown name " + name);
    return it->second;
  }

 private:
  std::map<std::string, Entry> entries_;
};

using ParamStore = ParamStoreT<float>;

// BRW1 weight file: magic "BRW1", u64 little-endian manifest length, JSON
// manifest mapping tensor name -> {dtype:"f32", shape, byte_offset}, then a
// raw little-endian float blob. Round-trips bit-exactly.
void save_brw1(const ParamStore& params, const std::string& path);
void load_brw1(ParamStore& params, const std::string& path);  // into existing entries
ParamStore load_brw1_fresh(const std::string& path);          // creates entries from manifest

}  // namespace bevloc::nn
