#include "edgedepth/params.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "edgedepth/errors.hpp"

namespace edgedepth {

Parameter& ParamStore::insert(Parameter p) {
  if (index_.count(p.name)) {
    throw ConfigError("ParamStore: duplicate parameter name '" + p.name + "'");
  }
  index_[p.name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back();
}

Parameter& ParamStore::create(const std::string& name, Shape shape, int fan_in, Rng& rng) {
  Parameter p;
  p.name = name;
  p.shape = std::move(shape);
  const std::int64_t n = shape_numel(p.shape);
  // Kaiming-style uniform: keeps activation variance roughly constant
  // through the stacked conv/linear layers.
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in > 0 ? fan_in : 1));
  p.values.resize(static_cast<std::size_t>(n));
  for (double& v : p.values) v = rng.uniform(-bound, bound);
  p.grad.assign(p.values.size(), 0.0);
  return insert(std::move(p));
}

Parameter& ParamStore::create_zeros(const std::string& name, Shape shape) {
  Parameter p;
  p.name = name;
  p.shape = std::move(shape);
  p.values.assign(static_cast<std::size_t>(shape_numel(p.shape)), 0.0);
  p.grad = p.values;
  return insert(std::move(p));
}

Parameter& ParamStore::create_values(const std::string& name, Shape shape,
                                     std::vector<double> values) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
    throw ConfigError("ParamStore: value count does not match shape for '" + name + "'");
  }
  Parameter p;
  p.name = name;
  p.shape = std::move(shape);
  p.values = std::move(values);
  p.grad.assign(p.values.size(), 0.0);
  return insert(std::move(p));
}

Parameter& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ConfigError("ParamStore: unknown parameter '" + name + "'");
  }
  return params_[it->second];
}

const Parameter& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ConfigError("ParamStore: unknown parameter '" + name + "'");
  }
  return params_[it->second];
}

std::int64_t ParamStore::total_values() const {
  std::int64_t n = 0;
  for (const Parameter& p : params_) n += p.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (Parameter& p : params_) {
    p.grad.assign(p.values.size(), 0.0);
  }
}

// --- checkpoint io ------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'E', 'C', 'D', 'W'};

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  std::size_t offset() const { return pos_; }

  void need(std::size_t n, const char* what) {
    if (pos_ + n > data_.size()) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    double v;
    std::memcpy(&v, &bits, sizeof(v));
    return v;
  }

  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (const Parameter& p : store.all()) {
    put_u16(out, static_cast<std::uint16_t>(p.name.size()));
    out.append(p.name);
    out.push_back(static_cast<char>(p.shape.size()));
    for (int e : p.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : p.values) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) {
    throw Error("save_checkpoint: cannot open '" + path + "' for writing");
  }
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) {
    throw Error("save_checkpoint: write failed for '" + path + "'");
  }
}

void load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream f(path, std::ios::binary);
  if (!f) {
    throw Error("load_checkpoint: cannot open '" + path + "'");
  }
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  ByteReader r(std::move(data));

  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError("checkpoint magic mismatch (expected ECDW)", 0);
  }
  const std::uint32_t count = r.u32("parameter count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = r.u16("name length");
    const std::string name = r.bytes(name_len, "name");
    const std::uint8_t rank = r.u8("rank");
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<int>(r.u32("extent")));
    }
    const std::int64_t n = shape_numel(shape);
    std::vector<double> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = r.f64("value");

    if (!store.contains(name)) {
      throw ConfigError("load_checkpoint: parameter '" + name +
                        "' not present in this model configuration");
    }
    Parameter& p = store.at(name);
    if (p.shape != shape) {
      throw ConfigError("load_checkpoint: shape mismatch for '" + name + "': model has " +
                        shape_str(p.shape) + ", file has " + shape_str(shape));
    }
    p.values = std::move(values);
  }
  if (!r.done()) {
    throw FormatError("checkpoint has trailing bytes", r.offset());
  }
}

}  // namespace edgedepth
