#include "viact/nn.hpp"

#include <map>

namespace viact {

Tensor trunc_normal(const Shape& shape, double std, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(static_cast<size_t>(shape_numel(shape)));
  for (auto& x : v) {
    double z = normal(rng);
    while (z < -2.0 || z > 2.0) z = normal(rng);
    x = z * std;
  }
  return Tensor::from(std::span<const double>(v), shape, true);
}

Linear::Linear(int64_t in, int64_t out, Rng& rng, double init_std)
    : weight(trunc_normal({in, out}, init_std, rng)), bias(Tensor::zeros({out}, true)) {}

void Linear::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, true});
  out.push_back({prefix + ".bias", bias, false});
}

LayerNorm::LayerNorm(int64_t dim) : gain(Tensor::full({dim}, 1.0, true)), bias(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(ParameterList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain, false});
  out.push_back({prefix + ".bias", bias, false});
}

int64_t count_parameters(const ParameterList& params) {
  int64_t n = 0;
  for (const auto& p : params) n += p.value.numel();
  return n;
}

void load_parameters(ParameterList& params, const std::vector<std::pair<std::string, Tensor>>& values,
                     bool allow_missing) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : values) by_name[name] = &t;
  for (auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) {
      if (allow_missing) continue;
      throw ConfigError("missing parameter " + p.name);
    }
    const Tensor& src = *it->second;
    if (src.shape() != p.value.shape()) {
      throw DimensionError("parameter " + p.name + ": stored " + shape_str(src.shape()) + " vs model " +
                           shape_str(p.value.shape()));
    }
    Tensor converted = src.to(p.value.dtype());
    detail::dispatch(p.value.dtype(), [&]<typename T>() {
      auto dst = p.value.mutable_values<T>();
      auto s = converted.values<T>();
      std::copy(s.begin(), s.end(), dst.begin());
    });
  }
}

}  // namespace viact
