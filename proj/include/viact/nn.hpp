#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "viact/ops.hpp"
#include "viact/tensor.hpp"

namespace viact {

using Rng = std::mt19937_64;

/// Trainable tensor with its checkpoint name and weight-decay membership.
struct Parameter {
  std::string name;
  Tensor value;
  bool decay = true;
};

using ParameterList = std::vector<Parameter>;

/// Normal(0, std) resampled outside +-2 std.
Tensor trunc_normal(const Shape& shape, double std, Rng& rng);

/// y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(int64_t in, int64_t out, Rng& rng, double init_std = 0.02);

  int64_t in_features() const { return weight.dim(0); }
  int64_t out_features() const { return weight.dim(1); }
  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-6;

  LayerNorm() = default;
  explicit LayerNorm(int64_t dim);

  Tensor operator()(const Tensor& x) const { return layernorm(x, gain, bias, eps); }
  void collect(ParameterList& out, const std::string& prefix) const;
};

int64_t count_parameters(const ParameterList& params);

/// Copies values by name; throws DimensionError on shape mismatch and
/// ConfigError on a missing name unless `allow_missing`.
void load_parameters(ParameterList& params, const std::vector<std::pair<std::string, Tensor>>& values,
                     bool allow_missing = false);

}  // namespace viact
