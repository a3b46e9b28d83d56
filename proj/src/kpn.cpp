#include "skpn/kpn.hpp"

#include "skpn/error.hpp"
#include "skpn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace skpn {

void KpnConfig::validate() const {
  if (kernel_size < 3 || kernel_size % 2 == 0) {
    throw std::invalid_argument("kernel_size must be odd and >= 3, got " + std::to_string(kernel_size));
  }
  if (stem_channels < 1) throw std::invalid_argument("stem_channels must be positive");
  if (num_res_blocks < 0) throw std::invalid_argument("num_res_blocks must be non-negative");
  if (groups < 1 || stem_channels % groups != 0) {
    throw std::invalid_argument("groups=" + std::to_string(groups) + " must divide stem_channels=" +
                                std::to_string(stem_channels));
  }
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "kpn") return ModelKind::kKpn;
  if (name == "plain-cnn") return ModelKind::kPlainCnn;
  throw std::invalid_argument("unknown model kind '" + name + "' (kpn | plain-cnn)");
}

std::string to_string(ModelKind kind) { return kind == ModelKind::kKpn ? "kpn" : "plain-cnn"; }

void ModelParams::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  entries_.push_back({std::move(name), std::move(value)});
}

void ModelParams::set(std::string_view name, Tensor value) {
  for (auto& e : entries_) {
    if (e.name == name) {
      if (e.value.shape() != value.shape()) {
        throw ShapeError(std::string(name), "parameter '" + std::string(name) + "' expects " +
                                                shape_string(e.value.shape()) + ", got " +
                                                shape_string(value.shape()));
      }
      e.value = std::move(value);
      return;
    }
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const Tensor& ModelParams::at(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.value;
  }
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

bool ModelParams::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

std::vector<Tensor> ModelParams::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

std::int64_t ModelParams::parameter_count() const {
  std::int64_t total = 0;
  for (const auto& e : entries_) total += e.value.numel();
  return total;
}

ModelParams ModelParams::detached(bool requires_grad) const {
  ModelParams out;
  for (const auto& e : entries_) out.add(e.name, e.value.detach(requires_grad));
  return out;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.name != y.name || x.value.shape() != y.value.shape()) return false;
    if (!std::equal(x.value.data().begin(), x.value.data().end(), y.value.data().begin())) return false;
  }
  return true;
}

Tensor local_conv(const Tensor& x, const Tensor& v) {
  if (x.rank() != 4 || x.dim(1) != 1) {
    throw ShapeError("C", "local_conv: x must be [N,1,H,W], got " + shape_string(x.shape()));
  }
  if (v.rank() != 4) throw ShapeError("rank", "local_conv: kernel field must be [N,k^2,H,W]");
  const auto n_batch = x.dim(0), h = x.dim(2), w = x.dim(3), kk = v.dim(1);
  const auto k = static_cast<std::int64_t>(std::lround(std::sqrt(static_cast<double>(kk))));
  if (k * k != kk || k % 2 == 0) {
    throw ShapeError("C", "local_conv: kernel field has " + std::to_string(kk) +
                              " channels, not an odd square");
  }
  if (v.dim(0) != n_batch) throw ShapeError("N", "local_conv: batch mismatch");
  if (v.dim(2) != h) throw ShapeError("H", "local_conv: kernel field height mismatch");
  if (v.dim(3) != w) throw ShapeError("W", "local_conv: kernel field width mismatch");

  const std::int64_t r = (k - 1) / 2, plane = h * w;
  const auto xd = x.data();
  const auto vd = v.data();
  std::vector<double> out(static_cast<std::size_t>(n_batch * plane));
  for (std::int64_t b = 0; b < n_batch; ++b) {
    const double* xs = xd.data() + b * plane;
    const double* vs = vd.data() + b * kk * plane;
    for (std::int64_t m = 0; m < h; ++m) {
      for (std::int64_t n = 0; n < w; ++n) {
        double acc = 0.0;
        for (std::int64_t s = -r; s <= r; ++s) {
          const double* xrow = xs + clamp_index(m - s, h) * w;
          for (std::int64_t t = -r; t <= r; ++t) {
            const std::int64_t c = (s + r) * k + (t + r);
            acc += xrow[clamp_index(n - t, w)] * vs[c * plane + m * w + n];
          }
        }
        out[b * plane + m * w + n] = acc;
      }
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), "local_conv", {x, v},
                             [x, v](std::span<const double> grad, auto& pg) {
                               const Tensor g = Tensor::from_data(x.shape(), {grad.begin(), grad.end()});
                               auto [gx, gv] = local_conv_backward(g, x, v);
                               std::copy(gx.data().begin(), gx.data().end(), pg[0].begin());
                               std::copy(gv.data().begin(), gv.data().end(), pg[1].begin());
                             });
}

std::pair<Tensor, Tensor> local_conv_backward(const Tensor& grad_out, const Tensor& x, const Tensor& v) {
  if (grad_out.shape() != x.shape()) {
    throw ShapeError("shape", "local_conv_backward: gradient " + shape_string(grad_out.shape()) +
                                  " vs input " + shape_string(x.shape()));
  }
  const auto n_batch = x.dim(0), h = x.dim(2), w = x.dim(3), kk = v.dim(1);
  const auto k = static_cast<std::int64_t>(std::lround(std::sqrt(static_cast<double>(kk))));
  const std::int64_t r = (k - 1) / 2, plane = h * w;
  const auto gd = grad_out.data();
  const auto xd = x.data();
  const auto vd = v.data();
  std::vector<double> gx(xd.size(), 0.0), gv(vd.size(), 0.0);
  for (std::int64_t b = 0; b < n_batch; ++b) {
    const double* xs = xd.data() + b * plane;
    const double* vs = vd.data() + b * kk * plane;
    double* gxs = gx.data() + b * plane;
    double* gvs = gv.data() + b * kk * plane;
    for (std::int64_t m = 0; m < h; ++m) {
      for (std::int64_t n = 0; n < w; ++n) {
        const double g = gd[b * plane + m * w + n];
        if (g == 0.0) continue;
        for (std::int64_t s = -r; s <= r; ++s) {
          const std::int64_t src_row = clamp_index(m - s, h) * w;
          for (std::int64_t t = -r; t <= r; ++t) {
            const std::int64_t c = (s + r) * k + (t + r);
            const std::int64_t src = src_row + clamp_index(n - t, w);
            gvs[c * plane + m * w + n] = g * xs[src];
            gxs[src] += g * vs[c * plane + m * w + n];
          }
        }
      }
    }
  }
  return {Tensor::from_data(x.shape(), std::move(gx)), Tensor::from_data(v.shape(), std::move(gv))};
}

Image local_conv(const Image& x, const KernelField& field, std::int64_t sample) {
  if (sample < 0 || sample >= field.values.dim(0)) throw std::out_of_range("sample index out of range");
  if (x.rows() != field.rows() || x.cols() != field.cols()) {
    throw ShapeError("H,W", "local_conv: image and kernel field sizes differ");
  }
  const auto kk = field.values.dim(1), plane = field.rows() * field.cols();
  std::vector<double> slice(field.values.data().begin() + sample * kk * plane,
                            field.values.data().begin() + (sample + 1) * kk * plane);
  const Tensor v = Tensor::from_data({1, kk, field.rows(), field.cols()}, std::move(slice));
  return local_conv(Tensor::from_image(x), v).image();
}

Eigen::MatrixXd kernel_at(const KernelField& field, std::int64_t m, std::int64_t n, std::int64_t sample) {
  if (m < 0 || m >= field.rows() || n < 0 || n >= field.cols()) {
    throw std::out_of_range("pixel (" + std::to_string(m) + "," + std::to_string(n) +
                            ") outside kernel field of " + std::to_string(field.rows()) + "x" +
                            std::to_string(field.cols()));
  }
  if (sample < 0 || sample >= field.values.dim(0)) throw std::out_of_range("sample index out of range");
  const int k = field.kernel_size;
  const std::int64_t plane = field.rows() * field.cols();
  const double* base = field.values.data().data() + sample * k * k * plane + m * field.cols() + n;
  Eigen::MatrixXd kernel(k, k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) kernel(i, j) = base[(i * k + j) * plane];
  }
  return kernel;
}

std::vector<std::pair<std::string, Shape>> model_layout(const KpnConfig& config, ModelKind kind) {
  config.validate();
  const std::int64_t c = config.stem_channels;
  std::vector<std::pair<std::string, Shape>> layout;
  layout.push_back({"stem.weight", {c, 1, 3, 3}});
  layout.push_back({"stem.bias", {c}});
  for (int b = 0; b < config.num_res_blocks; ++b) {
    const std::int64_t g = b == config.grouped_block() ? config.groups : 1;
    for (const char* conv : {"conv1", "conv2"}) {
      const std::string prefix = "res" + std::to_string(b) + "." + conv;
      layout.push_back({prefix + ".weight", {c, c / g, 3, 3}});
      layout.push_back({prefix + ".bias", {c}});
    }
  }
  const std::int64_t head = kind == ModelKind::kKpn ? config.kernel_channels() : 1;
  layout.push_back({"head.weight", {head, c, 1, 1}});
  layout.push_back({"head.bias", {head}});
  return layout;
}

ModelParams build_params(const KpnConfig& config, ModelKind kind, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (auto& [name, shape] : model_layout(config, kind)) {
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)), 0.0);
    if (shape.size() == 4) {
      const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : data) v = normal(rng);
    }
    params.add(name, Tensor::parameter(shape, std::move(data)));
  }
  return params;
}

ModelParams build_model(const KpnConfig& config, std::uint64_t seed) {
  return build_params(config, ModelKind::kKpn, seed);
}

ModelParams build_plain_cnn(const KpnConfig& config, std::uint64_t seed) {
  return build_params(config, ModelKind::kPlainCnn, seed);
}

void check_params(const ModelParams& params, const KpnConfig& config, ModelKind kind) {
  const auto layout = model_layout(config, kind);
  if (layout.size() != params.size()) {
    throw ShapeError("params", "model has " + std::to_string(params.size()) + " tensors, " + to_string(kind) +
                                   " layout expects " + std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& e = params.entries()[i];
    if (e.name != layout[i].first || e.value.shape() != layout[i].second) {
      throw ShapeError(layout[i].first, "parameter '" + e.name + "' " + shape_string(e.value.shape()) +
                                            " does not match expected '" + layout[i].first + "' " +
                                            shape_string(layout[i].second));
    }
  }
}

namespace {

Tensor features(const Tensor& x, const ModelParams& p, const KpnConfig& config) {
  Tensor h = conv2d(x, p.at("stem.weight"), p.at("stem.bias"));
  for (int b = 0; b < config.num_res_blocks; ++b) {
    const int g = b == config.grouped_block() ? config.groups : 1;
    const std::string prefix = "res" + std::to_string(b);
    Tensor inner = relu(conv2d(h, p.at(prefix + ".conv1.weight"), p.at(prefix + ".conv1.bias"), g));
    inner = conv2d(inner, p.at(prefix + ".conv2.weight"), p.at(prefix + ".conv2.bias"), g);
    h = add(h, inner);
  }
  return relu(h);
}

}  // namespace

KpnOutput kpn_forward(const Tensor& x, const ModelParams& params, const KpnConfig& config) {
  check_params(params, config, ModelKind::kKpn);
  Tensor v = conv2d(features(x, params, config), params.at("head.weight"), params.at("head.bias"));
  if (config.softmax_kernels) v = softmax(v, 1);
  Tensor yhat = local_conv(x, v);
  return {KernelField{std::move(v), config.kernel_size}, std::move(yhat)};
}

Tensor plain_cnn_forward(const Tensor& x, const ModelParams& params, const KpnConfig& config) {
  check_params(params, config, ModelKind::kPlainCnn);
  return add(x, conv2d(features(x, params, config), params.at("head.weight"), params.at("head.bias")));
}

Tensor model_forward(const Tensor& x, const ModelParams& params, const KpnConfig& config, ModelKind kind) {
  return kind == ModelKind::kKpn ? kpn_forward(x, params, config).yhat : plain_cnn_forward(x, params, config);
}

void force_identity_kernels(ModelParams& params, const KpnConfig& config) {
  const Tensor& w = params.at("head.weight");
  params.set("head.weight", Tensor::zeros(w.shape()));
  std::vector<double> bias(static_cast<std::size_t>(config.kernel_channels()), 0.0);
  bias[kernel_channel(0, 0, config.kernel_size) - 1] = 1.0;
  params.set("head.bias", Tensor::from_data({config.kernel_channels()}, std::move(bias)));
}

}  // namespace skpn
