#include "sdpt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace sdpt {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

namespace {

thread_local bool g_grad_enabled = true;

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

void validate_shape(const Shape& shape) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

void set_finite_checks(bool on) { g_finite_checks = on; }
bool finite_checks() { return g_finite_checks; }

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor Tensor::full(const Shape& shape, double v) {
  validate_shape(shape);
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value.assign(shape_numel(shape), v);
  return wrap(std::move(n));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data) {
  validate_shape(shape);
  if (data.size() != shape_numel(shape)) {
    throw ShapeError("from_data: " + std::to_string(data.size()) +
                     " values do not fill shape " + shape_str(shape));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value = std::move(data);
  return wrap(std::move(n));
}

Tensor Tensor::uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  validate_shape(shape);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(lo, hi);
  return from_data(shape, std::move(data));
}

const Shape& Tensor::shape() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->shape;
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

const std::vector<double>& Tensor::values() const {
  if (!node_) throw Error("use of undefined tensor");
  return node_->value;
}

double Tensor::scalar() const {
  if (numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!node_) throw Error("use of undefined tensor");
  if (!node_->parents.empty()) throw Error("set_requires_grad is restricted to leaf tensors");
  node_->requires_grad = on;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!node_) throw Error("use of undefined tensor");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) throw Error("use of undefined tensor");
  node_->grad.assign(node_->value.size(), 0.0);
}

std::vector<double>& Tensor::mutable_values() {
  if (!node_) throw Error("use of undefined tensor");
  if (!node_->parents.empty()) throw Error("mutable_values is restricted to leaf tensors");
  return node_->value;
}

Tensor Tensor::detach() const {
  if (!node_) throw Error("use of undefined tensor");
  auto n = std::make_shared<detail::Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  return wrap(std::move(n));
}

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

void Tensor::backward() const {
  if (!node_) throw Error("use of undefined tensor");
  if (numel() != 1) {
    throw ShapeError("backward() requires a scalar, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) {
    throw Error("backward() on a tensor with no recorded gradient path");
  }

  // Iterative post-order DFS; reversed post-order runs each node after all of
  // its consumers.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* n;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      detail::Node* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward) {
  if (finite_checks()) {
    for (double v : value) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite value produced in op with output shape " +
                           shape_str(shape));
      }
    }
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (n->value.size() != shape_numel(n->shape)) {
    throw ShapeError("internal: op value size mismatch for shape " + shape_str(n->shape));
  }
  bool track = false;
  if (grad_enabled()) {
    for (const Tensor& p : parents) {
      if (p.requires_grad()) track = true;
    }
  }
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const Tensor& p : parents) n->parents.push_back(p.node());
    n->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(n));
}

}  // namespace sdpt
