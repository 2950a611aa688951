#pragma once

#include <random>
#include <string>
#include <vector>

#include "bdm/autodiff.hpp"
#include "bdm/parameter.hpp"

namespace bdm {

/// y = x W + b
struct Dense {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;

  Dense() = default;
  Dense(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng)
      : weight(store.add_dense(name + ".w", in, out, rng)), bias(store.add_constant(name + ".b", 1, out, 0.0)) {}

  std::size_t in_dim() const { return weight->value.rows(); }
  std::size_t out_dim() const { return weight->value.cols(); }

  Var operator()(Var x) const {
    Tape& t = *x.tape;
    return add_row(matmul(x, t.param(*weight)), t.param(*bias));
  }
};

struct LayerNorm {
  Parameter* gain = nullptr;
  Parameter* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::size_t dim)
      : gain(store.add_constant(name + ".gain", 1, dim, 1.0)), bias(store.add_constant(name + ".bias", 1, dim, 0.0)) {}

  Var operator()(Var x) const {
    Tape& t = *x.tape;
    return layer_norm(x, t.param(*gain), t.param(*bias));
  }
};

/// Feed-forward stack with residual connections. Every layer but the last uses
/// ReLU, the last uses tanh. The shortcut is the identity when a layer keeps
/// its width and a learned linear projection otherwise. When input_dim differs
/// from hidden_dims[0] a linear input projection runs first.
class ResidualDnn {
 public:
  ResidualDnn() = default;
  ResidualDnn(ParameterStore& store, const std::string& name, std::size_t input_dim,
              const std::vector<std::size_t>& hidden_dims, std::mt19937_64& rng)
      : input_dim_(input_dim) {
    if (hidden_dims.empty()) throw ContractError("ResidualDnn: hidden_dims must be non-empty");
    std::size_t width = input_dim;
    if (input_dim != hidden_dims.front()) {
      input_proj_ = Dense(store, name + ".in", input_dim, hidden_dims.front(), rng);
      has_input_proj_ = true;
      width = hidden_dims.front();
    }
    for (std::size_t l = 0; l < hidden_dims.size(); ++l) {
      const std::size_t out = hidden_dims[l];
      Layer layer{Dense(store, name + ".l" + std::to_string(l), width, out, rng), {}, false};
      if (out != width) {
        layer.shortcut = Dense(store, name + ".l" + std::to_string(l) + ".skip", width, out, rng);
        layer.projected = true;
      }
      layers_.push_back(layer);
      width = out;
    }
    output_dim_ = width;
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }

  Var operator()(Var x) const {
    if (x.cols() != input_dim_) {
      throw ContractError("ResidualDnn: input has " + std::to_string(x.cols()) + " columns, expected " +
                          std::to_string(input_dim_));
    }
    Var h = has_input_proj_ ? input_proj_(x) : x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      Var pre = layer.dense(h);
      Var act = l + 1 == layers_.size() ? tanh(pre) : relu(pre);
      h = add(act, layer.projected ? layer.shortcut(h) : h);
    }
    return h;
  }

 private:
  struct Layer {
    Dense dense;
    Dense shortcut;
    bool projected;
  };

  std::size_t input_dim_ = 0;
  std::size_t output_dim_ = 0;
  bool has_input_proj_ = false;
  Dense input_proj_;
  std::vector<Layer> layers_;
};

}  // namespace bdm
