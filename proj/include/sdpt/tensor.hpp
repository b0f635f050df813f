#ifndef SDPT_TENSOR_HPP
#define SDPT_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "sdpt/errors.hpp"
#include "sdpt/rng.hpp"

namespace sdpt {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

// One entry of the recorded operation tape. Ops that require gradients keep
// shared ownership of their parents so the tape stays alive until backward.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates into parents' grads. Empty for leaves.
  std::function<void(Node&)> backward;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

// When false, newly created tensors do not record tape entries. Scoped via
// NoGradGuard for inference paths.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

// When true, every op output is scanned for NaN/Inf and a NumericError is
// thrown on detection. Defaults to on in debug builds.
void set_finite_checks(bool on);
bool finite_checks();

// Shared handle to a tape node. Value data is immutable after construction
// except for leaf tensors, which the optimizer may update between passes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double v);
  static Tensor from_data(const Shape& shape, std::vector<double> data);
  static Tensor uniform(const Shape& shape, Rng& rng, double lo, double hi);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t ndim() const { return shape().size(); }

  const std::vector<double>& values() const;
  double value_at(std::size_t flat) const { return values().at(flat); }
  double scalar() const;  // requires numel() == 1

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);  // leaf tensors only

  // Accumulated gradient; reads as zeros before any backward pass.
  const std::vector<double>& grad() const;
  void zero_grad();

  // Leaf tensors only: in-place value mutation for optimizer updates.
  std::vector<double>& mutable_values();

  // Runs reverse-mode accumulation from this scalar through the tape.
  void backward() const;

  // Detached copy: same values, no tape history.
  Tensor detach() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Builds an op result node, wiring parents and the backward closure only when
// gradients are enabled and some parent requires them.
Tensor make_op(Shape shape, std::vector<double> value,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward);

}  // namespace sdpt

#endif
