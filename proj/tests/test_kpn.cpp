#include "skpn/error.hpp"
#include "skpn/grad_check.hpp"
#include "skpn/kpn.hpp"
#include "skpn/losses.hpp"
#include "skpn/ops.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace skpn;
using skpn::testing::random_tensor;

namespace {

// Literal triple loop over pixels and offsets, s outer, t inner.
std::vector<double> naive_local_conv(const Tensor& x, const Tensor& v, int k) {
  const auto n_img = x.dim(0), h = x.dim(2), w = x.dim(3);
  const int r = (k - 1) / 2;
  std::vector<double> out(static_cast<std::size_t>(x.numel()));
  for (std::int64_t b = 0; b < n_img; ++b)
    for (std::int64_t m = 0; m < h; ++m)
      for (std::int64_t n = 0; n < w; ++n) {
        double acc = 0.0;
        for (int s = -r; s <= r; ++s)
          for (int t = -r; t <= r; ++t) {
            const auto row = std::clamp<std::int64_t>(m - s, 0, h - 1);
            const auto col = std::clamp<std::int64_t>(n - t, 0, w - 1);
            const auto c = kernel_channel(s, t, k) - 1;
            acc += x.data()[(b * h + row) * w + col] * v.data()[((b * k * k + c) * h + m) * w + n];
          }
        out[(b * h + m) * w + n] = acc;
      }
  return out;
}

Tensor delta_field(std::int64_t n, int k, std::int64_t h, std::int64_t w) {
  std::vector<double> v(static_cast<std::size_t>(n * k * k * h * w), 0.0);
  const auto centre = kernel_channel(0, 0, k) - 1;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < h * w; ++i) v[static_cast<std::size_t>((b * k * k + centre) * h * w + i)] = 1.0;
  return Tensor::from_data({n, k * k, h, w}, v);
}

KpnConfig tiny_config(int k, int stem, int blocks) {
  KpnConfig c;
  c.kernel_size = k;
  c.stem_channels = stem;
  c.num_res_blocks = blocks;
  return c;
}

}  // namespace

TEST_CASE("kernel channel layout is 1-based and row-major in (s, t)") {
  CHECK(kernel_channel(-1, -1, 3) == 1);
  CHECK(kernel_channel(1, 1, 3) == 9);
  CHECK(kernel_channel(0, 0, 3) == 5);
  CHECK(kernel_channel(-10, -10, 21) == 1);
  CHECK(kernel_channel(10, 10, 21) == 441);
  CHECK(kernel_channel(-2, 1, 5) == 4);
}

TEST_CASE("local_conv with a delta field is the identity") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 1, 5, 7}, rng);
  for (int k : {3, 5}) CHECK(testing::same_bits(local_conv(x, delta_field(2, k, 5, 7)).data(), x.data()));

  const Image img = x.image(1);
  const KernelField field{delta_field(2, 3, 5, 7), 3};
  CHECK((local_conv(img, field, 1) == img).all());
}

TEST_CASE("uniform kernels preserve a constant image") {
  const Tensor x = Tensor::constant({1, 1, 6, 6}, 0.25);
  const Tensor v = Tensor::constant({1, 9, 6, 6}, 1.0 / 9.0);
  const Tensor y = local_conv(x, v);
  for (double yi : y.data()) CHECK(yi == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("local_conv matches the naive loop bit for bit") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = trial % 2 ? 3 : 5;
    const std::int64_t h = std::uniform_int_distribution<int>(1, 8)(rng);
    const std::int64_t w = std::uniform_int_distribution<int>(1, 8)(rng);
    const Tensor x = random_tensor({1, 1, h, w}, rng);
    const Tensor v = random_tensor({1, k * k, h, w}, rng);
    CHECK(testing::same_bits(local_conv(x, v).data(), naive_local_conv(x, v, k)));
  }
}

TEST_CASE("local_conv is linear in each argument") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x1 = random_tensor({1, 1, 6, 5}, rng), x2 = random_tensor({1, 1, 6, 5}, rng);
    const Tensor v1 = random_tensor({1, 9, 6, 5}, rng), v2 = random_tensor({1, 9, 6, 5}, rng);
    const double a = 0.7, b = -1.3;
    const Tensor xs = add(scale(x1, a), scale(x2, b));
    const Tensor vs = add(scale(v1, a), scale(v2, b));
    const Tensor lx = local_conv(xs, v1);
    const Tensor rx = add(scale(local_conv(x1, v1), a), scale(local_conv(x2, v1), b));
    const Tensor lv = local_conv(x1, vs);
    const Tensor rv = add(scale(local_conv(x1, v1), a), scale(local_conv(x1, v2), b));
    for (std::int64_t i = 0; i < lx.numel(); ++i) {
      CHECK(std::abs(lx.data()[i] - rx.data()[i]) < 1e-13);
      CHECK(std::abs(lv.data()[i] - rv.data()[i]) < 1e-13);
    }
  }
}

TEST_CASE("local_conv rejects mismatched shapes") {
  CHECK_THROWS_AS(local_conv(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 9, 4, 5})), ShapeError);
  CHECK_THROWS_AS(local_conv(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 8, 4, 4})), ShapeError);
  CHECK_THROWS_AS(local_conv(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 9, 4, 4})), ShapeError);
  CHECK_THROWS_AS(local_conv(Tensor::zeros({2, 1, 4, 4}), Tensor::zeros({1, 9, 4, 4})), ShapeError);
}

TEST_CASE("local_conv_backward examples") {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({1, 1, 5, 5}, rng);
  const Tensor v = random_tensor({1, 9, 5, 5}, rng);
  const auto [gx0, gv0] = local_conv_backward(Tensor::zeros({1, 1, 5, 5}), x, v);
  for (double g : gx0.data()) CHECK(g == 0.0);
  for (double g : gv0.data()) CHECK(g == 0.0);

  const Tensor ones = Tensor::constant({1, 1, 5, 5}, 1.0);
  const Tensor up = random_tensor({1, 1, 5, 5}, rng);
  const auto [gx1, gv1] = local_conv_backward(up, ones, v);
  for (int c = 0; c < 9; ++c)
    for (int i = 0; i < 25; ++i) CHECK(gv1.data()[c * 25 + i] == up.data()[i]);

  // Replicated reads accumulate into the border pixel they came from.
  const Tensor v_sum = Tensor::constant({1, 9, 5, 5}, 1.0);
  const auto [gx2, gv2] = local_conv_backward(Tensor::constant({1, 1, 5, 5}, 1.0), x, v_sum);
  double total = 0;
  for (double g : gx2.data()) total += g;
  CHECK(total == doctest::Approx(225.0));
  CHECK(gx2.data()[0] == doctest::Approx(9.0));  // corner: 3 source rows x 3 source columns
}

TEST_CASE("local_conv gradients match central differences") {
  std::mt19937_64 rng(5);
  for (int k : {3, 5}) {
    const Tensor x = random_tensor({1, 1, 6, 5}, rng);
    const Tensor v = random_tensor({1, k * k, 6, 5}, rng);
    const Tensor w = random_tensor({1, 1, 6, 5}, rng);
    const auto rx = grad_check([&](const Tensor& p) { return sum(mul(local_conv(p, v), w)); }, x, 1e-5, 1e-6);
    const auto rv = grad_check([&](const Tensor& p) { return sum(mul(local_conv(x, p), w)); }, v, 1e-5, 1e-6);
    CHECK(rx.passed);
    CHECK(rv.passed);
    CHECK(rx.max_rel_error < 1e-6);
    CHECK(rv.max_rel_error < 1e-6);
  }
}

TEST_CASE("kernel_at layout, round trip and range checks") {
  const int k = 5;
  std::vector<double> v(static_cast<std::size_t>(k * k * 3 * 4));
  for (int c = 0; c < k * k; ++c)
    for (int i = 0; i < 12; ++i) v[c * 12 + i] = (c + 1) + 0.01 * i;
  const KernelField field{Tensor::from_data({1, k * k, 3, 4}, v), k};
  const Eigen::MatrixXd km = kernel_at(field, 2, 1);
  CHECK(km.rows() == k);
  for (int s = -2; s <= 2; ++s)
    for (int t = -2; t <= 2; ++t) CHECK(km(s + 2, t + 2) == kernel_channel(s, t, k) + 0.01 * (2 * 4 + 1));
  for (int c = 0; c < k * k; ++c) CHECK(km(c / k, c % k) == v[c * 12 + 9]);

  const KernelField delta{delta_field(1, 3, 4, 4), 3};
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(3, 3);
  expected(1, 1) = 1.0;
  CHECK(kernel_at(delta, 3, 0) == expected);

  CHECK_THROWS_AS(kernel_at(field, 3, 0), std::out_of_range);
  CHECK_THROWS_AS(kernel_at(field, 0, -1), std::out_of_range);
  CHECK_THROWS_AS(kernel_at(field, 0, 0, 1), std::out_of_range);
}

TEST_CASE("model construction") {
  const KpnConfig cfg = tiny_config(5, 16, 2);
  CHECK(build_model(cfg, 3) == build_model(cfg, 3));
  CHECK_FALSE(build_model(cfg, 3) == build_model(cfg, 4));

  KpnConfig full;
  const auto layout = model_layout(full, ModelKind::kKpn);
  CHECK(layout.back().first == "head.bias");
  CHECK(layout.back().second == Shape{441});
  CHECK((layout.end() - 2)->second == Shape{441, 64, 1, 1});

  // stem 3x3 1->16, block 0 dense, block 1 grouped by 2, 1x1 head to 25.
  const std::int64_t stem = 16 * 1 * 3 * 3 + 16;
  const std::int64_t dense_conv = 16 * 16 * 3 * 3 + 16;
  const std::int64_t grouped_conv = 16 * (16 / 2) * 3 * 3 + 16;
  const std::int64_t head = 25 * 16 + 25;
  CHECK(build_model(cfg, 0).parameter_count() == stem + 2 * dense_conv + 2 * grouped_conv + head);
  CHECK(build_model(cfg, 0).parameter_count() == 7561);

  const ModelParams p = build_model(cfg, 9);
  for (const auto& e : p.entries()) {
    CHECK(e.value.requires_grad());
    if (e.name.ends_with(".bias")) {
      for (double b : e.value.data()) CHECK(b == 0.0);
    }
  }
  CHECK(p.at("res1.conv1.weight").shape() == Shape{16, 8, 3, 3});
  CHECK(p.at("res0.conv1.weight").shape() == Shape{16, 16, 3, 3});

  KpnConfig bad = cfg;
  bad.kernel_size = 4;
  CHECK_THROWS(bad.validate());
  bad.kernel_size = 1;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("He initialisation has the fan-in scale") {
  const ModelParams p = build_model(tiny_config(5, 32, 2), 11);
  const Tensor& w = p.at("res0.conv1.weight");
  double sq = 0;
  for (double v : w.data()) sq += v * v;
  const double var = sq / static_cast<double>(w.numel());
  CHECK(var == doctest::Approx(2.0 / (32 * 9)).epsilon(0.1));
}

TEST_CASE("parameter mismatches name the tensor") {
  const KpnConfig cfg = tiny_config(3, 8, 1);
  ModelParams p = build_model(cfg, 1);
  try {
    check_params(p, tiny_config(5, 8, 1), ModelKind::kKpn);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("head.weight") != std::string::npos);
  }
  CHECK_THROWS_AS(kpn_forward(Tensor::zeros({1, 1, 8, 8}), p, tiny_config(3, 16, 1)), ShapeError);
  CHECK_THROWS_AS(p.set("stem.bias", Tensor::zeros({3})), ShapeError);
}

TEST_CASE("kpn_forward shape contract and determinism") {
  const KpnConfig cfg = tiny_config(3, 8, 2);
  const ModelParams p = build_model(cfg, 2);
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor({2, 1, 9, 7}, rng, 0, 1);
  const KpnOutput a = kpn_forward(x, p, cfg);
  const KpnOutput b = kpn_forward(x, p, cfg);
  CHECK(a.yhat.shape() == x.shape());
  CHECK(a.field.values.shape() == Shape{2, 9, 9, 7});
  CHECK(testing::same_bits(a.yhat.data(), b.yhat.data()));
  CHECK(testing::same_bits(a.field.values.data(), b.field.values.data()));

  const Tensor x2 = random_tensor({2, 1, 9, 7}, rng, 0, 1);
  CHECK_FALSE(testing::same_bits(kpn_forward(x2, p, cfg).field.values.data(), a.field.values.data()));
}

TEST_CASE("identity-forced kernels reproduce the input") {
  const KpnConfig cfg = tiny_config(5, 8, 1);
  ModelParams p = build_model(cfg, 3);
  force_identity_kernels(p, cfg);
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor({1, 1, 8, 8}, rng, 0, 1);
  CHECK(testing::same_bits(kpn_forward(x, p, cfg).yhat.data(), x.data()));
}

TEST_CASE("softmax kernels are convex combinations") {
  KpnConfig cfg = tiny_config(3, 8, 1);
  cfg.softmax_kernels = true;
  const ModelParams p = build_model(cfg, 4);

  const Tensor c = Tensor::constant({1, 1, 8, 8}, 0.375);
  const KpnOutput flat = kpn_forward(c, p, cfg);
  for (double y : flat.yhat.data()) CHECK(std::abs(y - 0.375) <= 1e-15);

  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({1, 1, 8, 8}, rng, 0, 1);
  const KpnOutput out = kpn_forward(x, p, cfg);
  const Image img = x.image();
  for (int m = 0; m < 8; ++m)
    for (int n = 0; n < 8; ++n) {
      const Eigen::MatrixXd km = kernel_at(out.field, m, n);
      CHECK((km.array() >= 0.0).all());
      CHECK(km.sum() == doctest::Approx(1.0).epsilon(1e-14));
      const Image patch = replicated_patch(img, m, n, 3);
      CHECK(out.yhat.image()(m, n) >= patch.minCoeff() - 1e-15);
      CHECK(out.yhat.image()(m, n) <= patch.maxCoeff() + 1e-15);
    }
}

TEST_CASE("structure loss gradient through a tiny KPN matches finite differences") {
  const KpnConfig cfg = tiny_config(3, 8, 1);
  const ModelParams params = build_model(cfg, 5);
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor({1, 1, 8, 8}, rng, 0, 1);
  const std::vector<Image> targets{testing::random_image(8, 8, rng)};
  const std::vector<LossWeights> weights{loss_weights(stats_map(targets[0], 5))};
  SsimConstants consts;
  consts.window = 5;
  for (const auto& entry : params.entries()) {
    const auto rep = grad_check(
        [&](const Tensor& p) {
          ModelParams q = params;
          q.set(entry.name, p);
          return struct_loss(kpn_forward(x, q, cfg).yhat, targets, weights, consts);
        },
        entry.value, 1e-6, 1e-3);
    INFO(entry.name << " max rel error " << rep.max_rel_error);
    CHECK(rep.passed);
  }
}

TEST_CASE("plain CNN layout and residual form") {
  const KpnConfig cfg = tiny_config(5, 8, 2);
  ModelParams p = build_plain_cnn(cfg, 1);
  CHECK(p.at("head.weight").shape() == Shape{1, 8, 1, 1});
  p.set("head.weight", Tensor::zeros({1, 8, 1, 1}));
  std::mt19937_64 rng(10);
  const Tensor x = random_tensor({1, 1, 6, 6}, rng, 0, 1);
  CHECK(testing::same_bits(plain_cnn_forward(x, p, cfg).data(), x.data()));
  CHECK(parse_model_kind("plain-cnn") == ModelKind::kPlainCnn);
  CHECK_THROWS(parse_model_kind("unet"));
}
