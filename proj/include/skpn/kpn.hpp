#pragma once

#include "skpn/image.hpp"
#include "skpn/tensor.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace skpn {

struct KpnConfig {
  int kernel_size = 21;
  int stem_channels = 64;
  int num_res_blocks = 5;
  int groups = 2;  // applied to both convs of the middle residual block
  bool softmax_kernels = false;

  int half_size() const { return (kernel_size - 1) / 2; }
  int kernel_channels() const { return kernel_size * kernel_size; }
  // Index of the residual block that uses grouped convolutions.
  int grouped_block() const { return num_res_blocks / 2; }
  void validate() const;
};

enum class ModelKind { kKpn, kPlainCnn };

ModelKind parse_model_kind(const std::string& name);
std::string to_string(ModelKind kind);

struct NamedTensor {
  std::string name;
  Tensor value;
};

// Learnable tensors in topology order. Names are stable across save/load.
class ModelParams {
 public:
  void add(std::string name, Tensor value);
  void set(std::string_view name, Tensor value);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::span<const NamedTensor> entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t size() const { return entries_.size(); }
  std::int64_t parameter_count() const;

  // Copy whose tensors are fresh leaves (with or without gradients).
  ModelParams detached(bool requires_grad) const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<NamedTensor> entries_;
};

// 1-based channel of kernel offset (s, t), s and t in [-r, r].
constexpr int kernel_channel(int s, int t, int kernel_size) {
  const int r = (kernel_size - 1) / 2;
  return (s + r) * kernel_size + (t + r) + 1;
}

// Per-pixel k x k filters, stored as an [N, k^2, H, W] tensor whose channel
// c - 1 holds the weight of offset (s, t) with c = kernel_channel(s, t, k).
struct KernelField {
  Tensor values;
  int kernel_size = 0;

  std::int64_t rows() const { return values.dim(2); }
  std::int64_t cols() const { return values.dim(3); }
};

// Local convolution layer:
//   out(m, n) = sum_{s,t} x(m - s, n - t) * v(m, n, kernel_channel(s, t))
// with s the outer and t the inner loop, both from -r to r, and edge
// replication for reads outside the image.
//   x [N,1,H,W], v [N,k^2,H,W] -> [N,1,H,W]
Tensor local_conv(const Tensor& x, const Tensor& v);
Image local_conv(const Image& x, const KernelField& field, std::int64_t sample = 0);

// Analytic adjoints of local_conv for upstream gradient `grad_out`.
std::pair<Tensor, Tensor> local_conv_backward(const Tensor& grad_out, const Tensor& x, const Tensor& v);

// Kernel of pixel (m, n) as a k x k matrix; row s + r, column t + r.
Eigen::MatrixXd kernel_at(const KernelField& field, std::int64_t m, std::int64_t n,
                          std::int64_t sample = 0);

// Parameter names and shapes of a topology, in order.
std::vector<std::pair<std::string, Shape>> model_layout(const KpnConfig& config, ModelKind kind);

// He fan-in normal weights, zero biases, deterministic per seed.
ModelParams build_model(const KpnConfig& config, std::uint64_t seed);
ModelParams build_plain_cnn(const KpnConfig& config, std::uint64_t seed);
ModelParams build_params(const KpnConfig& config, ModelKind kind, std::uint64_t seed);

// Throws ShapeError naming the first parameter that disagrees with the layout.
void check_params(const ModelParams& params, const KpnConfig& config, ModelKind kind);

struct KpnOutput {
  KernelField field;
  Tensor yhat;
};

// x is [N,1,H,W] in [0,1].
KpnOutput kpn_forward(const Tensor& x, const ModelParams& params, const KpnConfig& config);
// Residual image-to-image CNN: x + head(features(x)).
Tensor plain_cnn_forward(const Tensor& x, const ModelParams& params, const KpnConfig& config);
Tensor model_forward(const Tensor& x, const ModelParams& params, const KpnConfig& config, ModelKind kind);

// Zero head weights and a centred-delta head bias, so an unnormalised KPN
// reproduces its input.
void force_identity_kernels(ModelParams& params, const KpnConfig& config);

}  // namespace skpn
