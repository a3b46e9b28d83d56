#include "skpn/tensor.hpp"

#include "skpn/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace skpn {

std::int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::int64_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    os << (i ? "," : "") << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  for (auto d : shape) {
    if (d < 0) throw ShapeError("shape", "negative extent in " + shape_string(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("shape", "shape " + shape_string(shape) + " does not hold " +
                                  std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->op = "leaf";
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape) { return constant(std::move(shape), 0.0); }

Tensor Tensor::constant(Shape shape, double value) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  Tensor t = from_data(std::move(shape), std::move(data));
  std::const_pointer_cast<detail::Node>(t.node_)->requires_grad = true;
  return t;
}

Tensor Tensor::from_image(const Image& img, bool requires_grad) {
  std::vector<double> data(img.data(), img.data() + img.size());
  Shape shape{1, 1, img.rows(), img.cols()};
  return requires_grad ? parameter(std::move(shape), std::move(data))
                       : from_data(std::move(shape), std::move(data));
}

const Shape& Tensor::shape() const {
  static const Shape kEmpty;
  return node_ ? node_->shape : kEmpty;
}

std::int64_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis", "axis " + std::to_string(axis) + " out of range for " +
                                 shape_string(shape()));
  }
  return shape()[axis];
}

std::int64_t Tensor::numel() const { return node_ ? static_cast<std::int64_t>(node_->value.size()) : 0; }

std::span<const double> Tensor::data() const {
  if (!node_) return {};
  return node_->value;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ShapeError("numel", "item() on tensor of shape " + shape_string(shape()));
  }
  return node_->value.front();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::string& Tensor::op() const {
  static const std::string kNone = "undefined";
  return node_ ? node_->op : kNone;
}

bool Tensor::all_finite() const {
  return std::all_of(data().begin(), data().end(), [](double v) { return std::isfinite(v); });
}

Tensor Tensor::detach(bool requires_grad) const {
  std::vector<double> copy(data().begin(), data().end());
  return requires_grad ? parameter(shape(), std::move(copy)) : from_data(shape(), std::move(copy));
}

Image Tensor::image(std::int64_t n, std::int64_t c) const {
  if (rank() != 4) throw ShapeError("rank", "image() needs [N,C,H,W], got " + shape_string(shape()));
  if (n < 0 || n >= dim(0)) throw ShapeError("N", "sample index out of range");
  if (c < 0 || c >= dim(1)) throw ShapeError("C", "channel index out of range");
  const auto h = dim(2), w = dim(3);
  const double* base = node_->value.data() + (n * dim(1) + c) * h * w;
  return Eigen::Map<const Image>(base, h, w);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> value, std::string op,
                           std::vector<Tensor> parents,
                           decltype(detail::Node::backward) backward) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = std::move(op);
  node->requires_grad = std::any_of(parents.begin(), parents.end(),
                                    [](const Tensor& p) { return p.requires_grad(); });
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

namespace {

// Post-order DFS restricted to nodes that carry gradients.
std::vector<const detail::Node*> topo_order(const detail::Node* root) {
  std::vector<const detail::Node*> order;
  std::unordered_set<const detail::Node*> visited;
  std::vector<std::pair<const detail::Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

std::vector<Tensor> backward(const Tensor& loss, std::span<const Tensor> wrt) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("loss", "backward() needs a scalar loss, got " + shape_string(loss.shape()));
  }

  std::unordered_map<const detail::Node*, std::vector<double>> grads;
  if (loss.requires_grad()) {
    const auto order = topo_order(loss.node());
    grads[loss.node()] = {1.0};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const detail::Node* node = *it;
      if (!node->backward) continue;  // leaf
      auto found = grads.find(node);
      if (found == grads.end()) continue;
      std::vector<std::vector<double>> parent_grads(node->parents.size());
      for (std::size_t i = 0; i < node->parents.size(); ++i) {
        parent_grads[i].assign(node->parents[i]->value.size(), 0.0);
      }
      node->backward(found->second, parent_grads);
      for (std::size_t i = 0; i < node->parents.size(); ++i) {
        const detail::Node* parent = node->parents[i].get();
        if (!parent->requires_grad) continue;
        auto& acc = grads[parent];
        if (acc.empty()) {
          acc = std::move(parent_grads[i]);
        } else {
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += parent_grads[i][j];
        }
      }
    }
  }

  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& leaf : wrt) {
    auto found = grads.find(leaf.node());
    if (found != grads.end() && !found->second.empty()) {
      out.push_back(Tensor::from_data(leaf.shape(), found->second));
    } else {
      out.push_back(Tensor::zeros(leaf.shape()));
    }
  }
  return out;
}

}  // namespace skpn
