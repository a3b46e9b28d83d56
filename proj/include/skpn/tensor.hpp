#pragma once

#include "skpn/image.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace skpn {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

class Tensor;

namespace detail {

// One entry of the reverse-mode tape. The value is fixed at construction;
// `backward` receives the gradient w.r.t. this node and must add the
// gradients of its parents into `parent_grads` (pre-sized, same order as
// `parents`).
struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<const Node>> parents;
  std::function<void(std::span<const double> grad,
                     std::vector<std::vector<double>>& parent_grads)>
      backward;
};

}  // namespace detail

// Dense row-major f64 tensor with an attached autodiff history. Values are
// immutable; every op returns a new tensor.
class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape);
  static Tensor constant(Shape shape, double value);
  // Leaf that participates in differentiation.
  static Tensor parameter(Shape shape, std::vector<double> data);
  static Tensor from_image(const Image& img, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::int64_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::int64_t numel() const;
  std::span<const double> data() const;
  double item() const;
  bool requires_grad() const;
  const std::string& op() const;
  bool all_finite() const;

  // Detached copy as a fresh leaf (gradients enabled or not).
  Tensor detach(bool requires_grad = false) const;

  // Channel `c` of sample `n` of an [N,C,H,W] tensor.
  Image image(std::int64_t n = 0, std::int64_t c = 0) const;

  const detail::Node* node() const { return node_.get(); }

  // Graph construction hook for op implementations.
  static Tensor make_result(Shape shape, std::vector<double> value, std::string op,
                            std::vector<Tensor> parents,
                            decltype(detail::Node::backward) backward);

 private:
  explicit Tensor(std::shared_ptr<const detail::Node> node) : node_(std::move(node)) {}

  std::shared_ptr<const detail::Node> node_;
};

// dLoss/dLeaf for every tensor in `wrt`, aligned by index. Leaves that the
// loss does not reach receive zero gradients. Throws if `loss` is not scalar.
std::vector<Tensor> backward(const Tensor& loss, std::span<const Tensor> wrt);

}  // namespace skpn
