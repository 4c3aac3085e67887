#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "edgedepth/rng.hpp"
#include "edgedepth/tensor.hpp"

namespace edgedepth {

// A named, trainable weight buffer. Lives outside any Graph; each forward
// pass binds it into the graph as a fresh leaf.
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // same length as values; zeroed between steps

  std::int64_t numel() const { return static_cast<std::int64_t>(values.size()); }
};

// Ordered parameter registry. Registration order is the serialization and
// optimizer-update order, so it must be deterministic.
class ParamStore {
 public:
  // Kaiming-style uniform init in [-sqrt(6/fan_in), sqrt(6/fan_in)].
  Parameter& create(const std::string& name, Shape shape, int fan_in, Rng& rng);
  Parameter& create_zeros(const std::string& name, Shape shape);
  Parameter& create_values(const std::string& name, Shape shape, std::vector<double> values);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::int64_t total_values() const;

  void zero_grads();

 private:
  Parameter& insert(Parameter p);

  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Flat named-parameter checkpoint: magic "ECDW", u32 count, then per
// parameter u16 name length, name bytes, u8 rank, u32 extents, f64
// little-endian values.
void save_checkpoint(const std::string& path, const ParamStore& store);

// Loads into an existing store; every stored name must exist with a
// matching shape (ConfigError otherwise). Malformed files raise FormatError
// with the offending byte offset.
void load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace edgedepth
