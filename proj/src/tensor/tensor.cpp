#include "viact/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "autograd.hpp"

namespace viact {

namespace {
std::atomic<DType> g_default_dtype{DType::f32};
thread_local bool t_grad_enabled = true;
std::atomic<int64_t> g_current_bytes{0};
std::atomic<int64_t> g_peak_bytes{0};
}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

const char* dtype_name(DType dtype) { return dtype == DType::f32 ? "float32" : "float64"; }

DType default_dtype() { return g_default_dtype.load(); }
void set_default_dtype(DType dtype) { g_default_dtype.store(dtype); }

bool grad_enabled() { return t_grad_enabled; }
NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

MemoryStats memory_stats() { return {g_current_bytes.load(), g_peak_bytes.load()}; }
void reset_peak_memory() { g_peak_bytes.store(g_current_bytes.load()); }

namespace detail {

void track_alloc(int64_t bytes) {
  int64_t now = g_current_bytes.fetch_add(bytes) + bytes;
  int64_t peak = g_peak_bytes.load();
  while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
  }
}

void track_free(int64_t bytes) { g_current_bytes.fetch_sub(bytes); }

Storage::Storage(DType dt, int64_t n) : dtype(dt) {
  if (dt == DType::f32) {
    f32.assign(static_cast<size_t>(n), 0.0f);
  } else {
    f64.assign(static_cast<size_t>(n), 0.0);
  }
}

Storage& TensorImpl::grad_storage() {
  if (!grad) grad = std::make_shared<Storage>(data->dtype, data->size());
  return *grad;
}

Tensor empty_like_shape(const Shape& shape, DType dtype) { return Tensor::zeros(shape, dtype, false); }

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!grad_enabled()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

void record(Tensor& out, const char* op, std::vector<Tensor> inputs,
            std::function<void(const Storage& grad_out)> backward) {
  if (!grad_enabled()) return;
  bool needed = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (!needed) return;
  auto node = std::make_shared<Node>();
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  auto impl = out.impl();
  impl->node = std::move(node);
  impl->requires_grad = true;
}

}  // namespace detail

using detail::Storage;
using detail::TensorImpl;

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

Tensor Tensor::zeros(const Shape& shape, DType dtype, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::make_shared<Storage>(dtype, shape_numel(shape));
  impl->requires_grad = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return zeros(shape, default_dtype(), requires_grad); }

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  detail::dispatch(t.dtype(), [&]<typename T>() {
    auto v = t.mutable_values<T>();
    std::fill(v.begin(), v.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from(std::span<const double> values, const Shape& shape, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " + shape_str(shape));
  }
  Tensor t = zeros(shape, requires_grad);
  detail::dispatch(t.dtype(), [&]<typename T>() {
    auto v = t.mutable_values<T>();
    std::transform(values.begin(), values.end(), v.begin(), [](double x) { return static_cast<T>(x); });
  });
  return t;
}

Tensor Tensor::from(std::span<const float> values, const Shape& shape, bool requires_grad) {
  std::vector<double> tmp(values.begin(), values.end());
  return from(std::span<const double>(tmp), shape, requires_grad);
}

Tensor Tensor::from(std::initializer_list<double> values, const Shape& shape, bool requires_grad) {
  return from(std::span<const double>(values.begin(), values.size()), shape, requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({value}, Shape{}, requires_grad); }

const Shape& Tensor::shape() const {
  if (!impl_) throw DimensionError("undefined tensor");
  return impl_->shape;
}

int64_t Tensor::dim(int axis) const {
  const auto& s = shape();
  int r = static_cast<int>(s.size());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return shape_numel(shape()); }
DType Tensor::dtype() const {
  if (!impl_) throw DimensionError("undefined tensor");
  return impl_->data->dtype;
}

std::vector<double> Tensor::to_vector() const {
  return detail::dispatch(dtype(), [&]<typename T>() {
    auto v = values<T>();
    return std::vector<double>(v.begin(), v.end());
  });
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return to_vector()[0];
}

double Tensor::at(std::initializer_list<int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
  int64_t flat = 0;
  size_t d = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[d]) throw DimensionError("index out of range for " + shape_str(s));
    flat = flat * s[d] + i;
    ++d;
  }
  return detail::dispatch(dtype(), [&]<typename T>() { return static_cast<double>(values<T>()[flat]); });
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  if (impl_->node) throw Error("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::is_leaf() const { return !impl_->node; }

Tensor& Tensor::retain_grad() {
  impl_->retain_grad = true;
  return *this;
}

Tensor Tensor::grad() const {
  if (!impl_ || !impl_->grad) return {};
  auto g = std::make_shared<TensorImpl>();
  g->shape = impl_->shape;
  g->data = impl_->grad;
  return wrap(std::move(g));
}

void Tensor::zero_grad() { impl_->grad.reset(); }

void Tensor::backward() const {
  if (numel() != 1) throw DimensionError("backward() without gradient requires a scalar, got " + shape_str(shape()));
  backward(Tensor::full(shape(), 1.0).to(dtype()));
}

void Tensor::backward(const Tensor& grad_output) const {
  if (grad_output.shape() != shape()) {
    throw DimensionError("backward gradient shape " + shape_str(grad_output.shape()) + " does not match " +
                         shape_str(shape()));
  }
  if (!requires_grad()) throw Error("backward() on a tensor that does not require gradients");

  // Reverse topological order by iterative post-order DFS. Owning pointers
  // keep interior tensors alive while their producers' nodes are released.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, size_t>> stack;
  stack.emplace_back(impl_, 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [cur, next] = stack.back();
    if (cur->node && next < cur->node->inputs.size()) {
      std::shared_ptr<TensorImpl> child = cur->node->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
    } else {
      order.push_back(cur);
      stack.pop_back();
    }
  }

  Tensor seed = grad_output.to(dtype());
  detail::dispatch(dtype(), [&]<typename T>() {
    auto dst = impl_->grad_storage().span<T>();
    auto src = seed.values<T>();
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });

  NoGradGuard no_grad;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* cur = it->get();
    if (!cur->node) continue;
    if (cur->grad) cur->node->backward(*cur->grad);
    cur->node.reset();
    if (!cur->retain_grad) cur->grad.reset();
  }
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return wrap(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = std::make_shared<Storage>(*impl_->data);
  impl->requires_grad = impl_->requires_grad && !impl_->node;
  return wrap(std::move(impl));
}

Tensor Tensor::to(DType dt) const {
  if (dt == dtype()) return *this;
  Tensor out = zeros(shape(), dt, false);
  detail::dispatch(dtype(), [&]<typename S>() {
    auto src = values<S>();
    detail::dispatch(dt, [&]<typename D>() {
      auto dst = out.mutable_values<D>();
      for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

}  // namespace viact
