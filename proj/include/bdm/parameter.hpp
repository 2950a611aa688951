#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bdm/error.hpp"
#include "bdm/tensor.hpp"

namespace bdm {

/// A trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor2 value;
  Tensor2 gradient;
  /// Scales this parameter's updates (the embedding tables use 25 in the full preset).
  double grad_multiplier = 1.0;

  Parameter(std::string n, Tensor2 v, double multiplier = 1.0)
      : name(std::move(n)), value(std::move(v)), gradient(value.rows(), value.cols()),
        grad_multiplier(multiplier) {
    if (!(grad_multiplier > 0.0)) throw ContractError("Parameter " + name + ": grad_multiplier must be > 0");
  }

  void zero_grad() { gradient.fill(0.0); }
};

struct SgdConfig {
  double learning_rate = 0.003;
  std::size_t batch_size = 100;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ContractError("SgdConfig: learning_rate must be > 0");
    if (batch_size < 1) throw ContractError("SgdConfig: batch_size must be >= 1");
  }
};

/// value <- value - lr * multiplier * gradient, then gradients are zeroed.
/// All gradients are checked before any value is touched.
inline void sgd_step(std::span<Parameter* const> params, const SgdConfig& cfg) {
  cfg.validate();
  for (const Parameter* p : params) {
    if (!p->gradient.all_finite()) throw TrainingError("non-finite gradient in parameter '" + p->name + "'");
  }
  for (Parameter* p : params) {
    const double step = cfg.learning_rate * p->grad_multiplier;
    auto& v = p->value.values();
    auto& g = p->gradient.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= step * g[i];
    p->zero_grad();
  }
}

/// Owns a model's parameters with stable addresses. Move-only.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter* add(std::string name, Tensor2 value, double grad_multiplier = 1.0) {
    if (find(name)) throw ContractError("duplicate parameter name '" + name + "'");
    params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value), grad_multiplier));
    ptrs_.push_back(params_.back().get());
    return ptrs_.back();
  }

  Parameter* add_uniform(std::string name, std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor2 w(rows, cols);
    for (double& v : w.values()) v = dist(rng);
    return add(std::move(name), std::move(w));
  }

  /// Dense weight with uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.
  Parameter* add_dense(std::string name, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    return add_uniform(std::move(name), fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  }

  /// Embedding table with normal(0, 0.1) init.
  Parameter* add_embedding(std::string name, std::size_t rows, std::size_t dim, std::mt19937_64& rng,
                           double grad_multiplier, double stddev = 0.1) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor2 t(rows, dim);
    for (double& v : t.values()) v = dist(rng);
    return add(std::move(name), std::move(t), grad_multiplier);
  }

  Parameter* add_constant(std::string name, std::size_t rows, std::size_t cols, double fill) {
    return add(std::move(name), Tensor2(rows, cols, fill));
  }

  Parameter* find(const std::string& name) const {
    for (Parameter* p : ptrs_) {
      if (p->name == name) return p;
    }
    return nullptr;
  }

  std::span<Parameter* const> all() const { return ptrs_; }
  std::size_t size() const { return ptrs_.size(); }

  void zero_grad() {
    for (Parameter* p : ptrs_) p->zero_grad();
  }

  std::size_t num_values() const {
    std::size_t n = 0;
    for (const Parameter* p : ptrs_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::vector<Parameter*> ptrs_;
};

/// FNV-1a over parameter names and raw values, in store order.
inline std::uint64_t checksum(const ParameterStore& store) {
  std::uint64_t h = 14695981039346656037ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const Parameter* p : store.all()) {
    mix(p->name.data(), p->name.size());
    mix(p->value.data(), p->value.size() * sizeof(double));
  }
  return h;
}

namespace io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                 static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

inline bool read_u32(std::istream& is, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline void write_f32(std::ostream& os, double v) {
  write_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

inline bool read_f32(std::istream& is, double& v) {
  std::uint32_t u = 0;
  if (!read_u32(is, u)) return false;
  v = static_cast<double>(std::bit_cast<float>(u));
  return true;
}

inline void write_bytes(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline bool read_bytes(std::istream& is, std::string& s) {
  std::uint32_t n = 0;
  if (!read_u32(is, n)) return false;
  s.resize(n);
  return static_cast<bool>(is.read(s.data(), n));
}

}  // namespace io

inline constexpr char kCheckpointMagic[4] = {'B', 'D', 'M', '1'};

/// Binary checkpoint: "BDM1" then (name_len u32, name, rows u32, cols u32, f32 LE values) per parameter.
inline void save_checkpoint(const ParameterStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open checkpoint for writing: " + path);
  os.write(kCheckpointMagic, 4);
  for (const Parameter* p : store.all()) {
    io::write_bytes(os, p->name);
    io::write_u32(os, static_cast<std::uint32_t>(p->value.rows()));
    io::write_u32(os, static_cast<std::uint32_t>(p->value.cols()));
    for (double v : p->value.values()) io::write_f32(os, v);
  }
  if (!os) throw Error("failed writing checkpoint: " + path);
}

/// Loads values into an existing store; every stored parameter must exist with the same shape.
inline void load_checkpoint(ParameterStore& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint: " + path);
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw ParseError("bad checkpoint magic in " + path);
  }
  std::size_t loaded = 0;
  std::string name;
  while (io::read_bytes(is, name)) {
    std::uint32_t rows = 0, cols = 0;
    if (!io::read_u32(is, rows) || !io::read_u32(is, cols)) throw ParseError("truncated checkpoint record '" + name + "'");
    Parameter* p = store.find(name);
    if (!p) throw ValidationError("checkpoint parameter '" + name + "' not in model");
    if (p->value.rows() != rows || p->value.cols() != cols) {
      throw DimensionError("checkpoint parameter '" + name + "' has shape " + std::to_string(rows) + "x" +
                           std::to_string(cols) + ", model expects " + shape_str(p->value));
    }
    for (double& v : p->value.values()) {
      if (!io::read_f32(is, v)) throw ParseError("truncated checkpoint values for '" + name + "'");
    }
    ++loaded;
  }
  if (loaded != store.size()) {
    throw ValidationError("checkpoint " + path + " holds " + std::to_string(loaded) + " of " +
                          std::to_string(store.size()) + " parameters");
  }
}

}  // namespace bdm
