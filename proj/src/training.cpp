#include "skpn/training.hpp"

#include "skpn/error.hpp"
#include "skpn/io.hpp"
#include "skpn/ops.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

namespace skpn {

using nlohmann::json;

LossKind parse_loss_kind(const std::string& name) {
  if (name == "L1") return LossKind::kL1;
  if (name == "L_S") return LossKind::kStructure;
  throw std::invalid_argument("unknown loss kind '" + name + "' (L1 | L_S)");
}

std::string to_string(LossKind kind) { return kind == LossKind::kL1 ? "L1" : "L_S"; }

void TrainConfig::validate() const {
  model.validate();
  noise.validate();
  if (k_r <= 0 || k_r % 2 == 0) throw ConfigError("k_r", "k_r must be a positive odd integer");
  if (patch_size < model.kernel_size + k_r) {
    throw ConfigError("patch_size", "patch_size " + std::to_string(patch_size) + " must be at least kernel_size + k_r = " +
                                        std::to_string(model.kernel_size + k_r));
  }
  if (batch_size < 1) throw ConfigError("batch_size", "batch_size must be positive");
  if (steps < 0) throw ConfigError("steps", "steps must be non-negative");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate", "learning_rate must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) throw ConfigError("beta1", "beta1 must lie in [0,1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw ConfigError("beta2", "beta2 must lie in [0,1)");
  if (!(adam_eps > 0)) throw ConfigError("adam_eps", "adam_eps must be positive");
  if (val_every < 1) throw ConfigError("val_every", "val_every must be positive");
}

namespace {

json to_json_object(const TrainConfig& c) {
  return json{{"patch_size", c.patch_size},
              {"batch_size", c.batch_size},
              {"steps", c.steps},
              {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"seed", c.seed},
              {"loss_kind", to_string(c.loss_kind)},
              {"model_kind", to_string(c.model_kind)},
              {"k_r", c.k_r},
              {"sigma_l2", c.sigma_l2},
              {"sigma_l1", c.sigma_l1},
              {"strength_norm", to_string(c.strength_norm)},
              {"ssim_window", to_string(c.ssim_window)},
              {"kernel_size", c.model.kernel_size},
              {"stem_channels", c.model.stem_channels},
              {"num_res_blocks", c.model.num_res_blocks},
              {"groups", c.model.groups},
              {"softmax_kernels", c.model.softmax_kernels},
              {"noise_kind", to_string(c.noise.kind)},
              {"noise_sigma", c.noise.gaussian_sigma},
              {"poisson_scale", c.noise.poisson_scale},
              {"val_every", c.val_every}};
}

TrainConfig from_json_object(const json& j) {
  TrainConfig c;
  auto field = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(out);
    } catch (const json::exception& e) {
      throw ConfigError(key, std::string("bad value for '") + key + "': " + e.what());
    }
  };
  auto enum_field = [&](const char* key, auto& out, auto parse) {
    if (!j.contains(key)) return;
    try {
      out = parse(j.at(key).get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(key, std::string("bad value for '") + key + "': " + e.what());
    }
  };
  for (const auto& [key, value] : j.items()) {
    if (!to_json_object(c).contains(key)) throw ConfigError(key, "unknown config key '" + key + "'");
  }
  field("patch_size", c.patch_size);
  field("batch_size", c.batch_size);
  field("steps", c.steps);
  field("learning_rate", c.learning_rate);
  field("beta1", c.beta1);
  field("beta2", c.beta2);
  field("adam_eps", c.adam_eps);
  field("seed", c.seed);
  enum_field("loss_kind", c.loss_kind, parse_loss_kind);
  enum_field("model_kind", c.model_kind, parse_model_kind);
  field("k_r", c.k_r);
  field("sigma_l2", c.sigma_l2);
  field("sigma_l1", c.sigma_l1);
  enum_field("strength_norm", c.strength_norm, parse_strength_norm);
  enum_field("ssim_window", c.ssim_window, parse_window_kind);
  field("kernel_size", c.model.kernel_size);
  field("stem_channels", c.model.stem_channels);
  field("num_res_blocks", c.model.num_res_blocks);
  field("groups", c.model.groups);
  field("softmax_kernels", c.model.softmax_kernels);
  enum_field("noise_kind", c.noise.kind, parse_noise_kind);
  field("noise_sigma", c.noise.gaussian_sigma);
  field("poisson_scale", c.noise.poisson_scale);
  field("val_every", c.val_every);
  return c;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

// Converts a text value to the JSON type of the key's default.
json typed_value(const std::string& key, const std::string& text, const json& like) {
  try {
    std::size_t used = 0;
    json out;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw std::invalid_argument("expected true or false");
    }
    if (like.is_number_unsigned()) {
      if (!text.empty() && text[0] == '-') throw std::invalid_argument("expected a non-negative integer");
      out = std::stoull(text, &used);
    } else if (like.is_number_integer()) {
      out = std::stoll(text, &used);
    } else if (like.is_number_float()) {
      out = std::stod(text, &used);
    } else {
      std::string s = text;
      if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
      return s;
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception& e) {
    throw ConfigError(key, "bad value '" + text + "' for '" + key + "': " + e.what());
  }
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

Tensor stack(std::span<const Image> images) {
  const auto h = images.front().rows(), w = images.front().cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(images.size() * h * w));
  for (const auto& img : images) data.insert(data.end(), img.data(), img.data() + img.size());
  return Tensor::from_data({static_cast<std::int64_t>(images.size()), 1, h, w}, std::move(data));
}

}  // namespace

TrainConfig parse_train_config(std::string_view text) {
  const json defaults = to_json_object(TrainConfig{});
  json merged = defaults;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(body, "expected key = value, got '" + body + "'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!defaults.contains(key)) throw ConfigError(key, "unknown config key '" + key + "'");
    merged[key] = typed_value(key, value, defaults.at(key));
  }
  TrainConfig config = from_json_object(merged);
  config.validate();
  return config;
}

std::string format_train_config(const TrainConfig& config) {
  std::string out;
  const json object = to_json_object(config);
  for (const auto& [key, value] : object.items()) {
    std::string text;
    if (value.is_string()) {
      text = value.get<std::string>();
    } else if (value.is_number_float()) {
      text = format_number(value.get<double>());
    } else {
      text = value.dump();
    }
    out += key + " = " + text + "\n";
  }
  return out;
}

std::string config_to_json(const TrainConfig& config) { return to_json_object(config).dump(); }

TrainConfig config_from_json(std::string_view text) {
  return from_json_object(json::parse(text.begin(), text.end()));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

std::vector<PatchSample> sample_patch_pairs(std::span<const Image> clean, const NoiseModel& noise,
                                            int patch_size, int count, std::uint64_t seed,
                                            const TrainConfig& structure) {
  std::vector<PatchSample> out;
  if (count <= 0) return out;
  if (clean.empty()) throw std::invalid_argument("sample_patch_pairs: empty corpus");
  for (const auto& img : clean) {
    if (img.rows() < patch_size || img.cols() < patch_size) {
      throw ShapeError("H,W", "image of " + std::to_string(img.rows()) + "x" + std::to_string(img.cols()) +
                                  " is smaller than patch_size " + std::to_string(patch_size));
    }
  }
  std::mt19937_64 rng(seed);
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const auto& src = clean[std::uniform_int_distribution<std::size_t>(0, clean.size() - 1)(rng)];
    const auto top = std::uniform_int_distribution<Eigen::Index>(0, src.rows() - patch_size)(rng);
    const auto left = std::uniform_int_distribution<Eigen::Index>(0, src.cols() - patch_size)(rng);
    PatchSample sample;
    sample.clean = src.block(top, left, patch_size, patch_size);
    sample.noisy = add_noise(sample.clean, noise, rng());
    sample.stats = stats_map(sample.clean, structure.k_r, structure.strength_norm);
    sample.weights = loss_weights(sample.stats, structure.sigma_l2, structure.sigma_l1);
    out.push_back(std::move(sample));
  }
  return out;
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState state;
  for (const auto& e : params.entries()) {
    state.m.push_back(Tensor::zeros(e.value.shape()));
    state.v.push_back(Tensor::zeros(e.value.shape()));
  }
  return state;
}

void adam_step(ModelParams& params, std::span<const Tensor> grads, AdamState& state, const AdamOptions& options) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("params", "adam_step: parameter, gradient and moment counts differ");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(options.beta1, t);
  const double correct2 = 1.0 - std::pow(options.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = params.entries()[i];
    const auto p = entry.value.data();
    const auto g = grads[i].data();
    if (grads[i].shape() != entry.value.shape()) {
      throw ShapeError(entry.name, "adam_step: gradient shape mismatch for '" + entry.name + "'");
    }
    std::vector<double> m(state.m[i].data().begin(), state.m[i].data().end());
    std::vector<double> v(state.v[i].data().begin(), state.v[i].data().end());
    std::vector<double> next(p.begin(), p.end());
    for (std::size_t j = 0; j < next.size(); ++j) {
      m[j] = options.beta1 * m[j] + (1.0 - options.beta1) * g[j];
      v[j] = options.beta2 * v[j] + (1.0 - options.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correct1;
      const double v_hat = v[j] / correct2;
      next[j] -= options.learning_rate * m_hat / (std::sqrt(v_hat) + options.eps);
    }
    const Shape shape = entry.value.shape();
    state.m[i] = Tensor::from_data(shape, std::move(m));
    state.v[i] = Tensor::from_data(shape, std::move(v));
    params.set(entry.name, Tensor::from_data(shape, std::move(next)));
  }
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
  std::string out = "SKPN";
  binary::put_u32(out, kCheckpointVersion);
  const json header{{"config", to_json_object(checkpoint.config)},
                    {"step", checkpoint.optimizer.step},
                    {"rng", {{"seed", checkpoint.config.seed}, {"scheme", "per-step-derived"}}}};
  const std::string text = header.dump();
  binary::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  auto put_tensor = [&](const std::string& name, const Tensor& t) {
    binary::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    binary::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) binary::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) binary::put_f64(out, v);
  };
  const auto entries = checkpoint.params.entries();
  for (const auto& e : entries) put_tensor("param/" + e.name, e.value);
  for (std::size_t i = 0; i < entries.size(); ++i) put_tensor("adam.m/" + entries[i].name, checkpoint.optimizer.m.at(i));
  for (std::size_t i = 0; i < entries.size(); ++i) put_tensor("adam.v/" + entries[i].name, checkpoint.optimizer.v.at(i));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  binary::Reader in(bytes);
  if (in.take(4) != "SKPN") throw std::runtime_error("not a checkpoint (bad magic)");
  const auto version = in.u32();
  if (version != kCheckpointVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto text = in.take(in.u32());
  const json header = json::parse(text.begin(), text.end());

  Checkpoint ckpt;
  ckpt.config = from_json_object(header.at("config"));
  ckpt.optimizer.step = header.at("step").get<std::int64_t>();

  std::vector<std::pair<std::string, Tensor>> moments_m, moments_v;
  while (!in.done()) {
    std::string name(in.take(in.u32()));
    Shape shape(in.u32());
    for (auto& d : shape) d = in.u32();
    std::vector<double> data(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : data) v = in.f64();
    Tensor t = Tensor::from_data(std::move(shape), std::move(data));
    if (name.starts_with("param/")) {
      ckpt.params.add(name.substr(6), std::move(t));
    } else if (name.starts_with("adam.m/")) {
      moments_m.emplace_back(name.substr(7), std::move(t));
    } else if (name.starts_with("adam.v/")) {
      moments_v.emplace_back(name.substr(7), std::move(t));
    } else {
      throw std::runtime_error("unexpected checkpoint tensor '" + name + "'");
    }
  }
  check_params(ckpt.params, ckpt.config.model, ckpt.config.model_kind);
  const auto entries = ckpt.params.entries();
  if (moments_m.size() != entries.size() || moments_v.size() != entries.size()) {
    throw std::runtime_error("checkpoint optimizer state does not cover every parameter");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (moments_m[i].first != entries[i].name || moments_v[i].first != entries[i].name) {
      throw std::runtime_error("checkpoint optimizer state out of order at '" + entries[i].name + "'");
    }
    ckpt.optimizer.m.push_back(std::move(moments_m[i].second));
    ckpt.optimizer.v.push_back(std::move(moments_v[i].second));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

Checkpoint initial_checkpoint(const TrainConfig& config) {
  config.validate();
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.params = build_params(config.model, config.model_kind, config.seed).detached(false);
  ckpt.optimizer = AdamState::zeros_like(ckpt.params);
  return ckpt;
}

Dataset split_dataset(std::vector<Image> images, std::vector<std::string> names) {
  if (images.size() < 2) throw std::invalid_argument("need at least two images to split train/validation");
  if (names.size() != images.size()) names.resize(images.size());
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.2 * images.size())));
  const auto n_train = images.size() - n_val;
  Dataset data;
  data.train.assign(std::make_move_iterator(images.begin()), std::make_move_iterator(images.begin() + n_train));
  data.validation.assign(std::make_move_iterator(images.begin() + n_train), std::make_move_iterator(images.end()));
  data.validation_names.assign(names.begin() + n_train, names.end());
  return data;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::vector<Image> images;
  std::vector<std::string> names;
  for (const auto& path : list_pgm_files(dir)) {
    images.push_back(read_pgm(path));
    names.push_back(path.filename().string());
  }
  if (images.empty()) throw std::invalid_argument("no .pgm images in '" + dir.string() + "'");
  return split_dataset(std::move(images), std::move(names));
}

std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::string out = "step,loss,val_psnr,val_ssim\n";
  char buf[128];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%lld,%.10g,", static_cast<long long>(p.step), p.loss);
    out += buf;
    if (p.val_psnr) {
      std::snprintf(buf, sizeof buf, "%.6f,%.6f", *p.val_psnr, *p.val_ssim);
      out += buf;
    } else {
      out += ",";
    }
    out += "\n";
  }
  return out;
}

Image denoise(const Checkpoint& checkpoint, const Image& noisy) {
  const auto& cfg = checkpoint.config;
  if (cfg.model_kind == ModelKind::kKpn && (noisy.rows() < cfg.model.kernel_size || noisy.cols() < cfg.model.kernel_size)) {
    throw ShapeError("H,W", "image smaller than the kernel size " + std::to_string(cfg.model.kernel_size));
  }
  return model_forward(Tensor::from_image(noisy), checkpoint.params, cfg.model, cfg.model_kind).image();
}

namespace {

struct Validation {
  std::vector<Image> noisy;
  double noisy_psnr = 0;
  double noisy_ssim = 0;
};

double mean_finite(const std::vector<double>& values) {
  double total = 0;
  int n = 0;
  for (double v : values) {
    if (std::isfinite(v)) {
      total += v;
      ++n;
    }
  }
  return n ? total / n : std::numeric_limits<double>::infinity();
}

std::pair<double, double> score(const Checkpoint& ckpt, const Dataset& data, const Validation& val) {
  std::vector<double> p, s;
  for (std::size_t i = 0; i < data.validation.size(); ++i) {
    const Image out = denoise(ckpt, val.noisy[i]);
    p.push_back(psnr(out, data.validation[i]));
    s.push_back(ssim_image(out, data.validation[i]));
  }
  return {mean_finite(p), mean_finite(s)};
}

}  // namespace

TrainResult train(const TrainConfig& config, const Dataset& data, const Checkpoint* resume,
                  const std::function<void(const CurvePoint&)>& progress) {
  config.validate();
  if (data.train.empty()) throw std::invalid_argument("training split is empty");
  if (data.validation.empty()) throw std::invalid_argument("validation split is empty");

  TrainResult result;
  result.checkpoint = resume ? *resume : initial_checkpoint(config);
  result.checkpoint.config = config;
  Checkpoint& ckpt = result.checkpoint;
  check_params(ckpt.params, config.model, config.model_kind);

  Validation val;
  {
    std::vector<double> p, s;
    for (std::size_t i = 0; i < data.validation.size(); ++i) {
      val.noisy.push_back(add_noise(data.validation[i], config.noise, derive_seed(config.seed, 0x76616cu, i)));
      p.push_back(psnr(val.noisy.back(), data.validation[i]));
      s.push_back(ssim_image(val.noisy.back(), data.validation[i]));
    }
    result.noisy_val_psnr = val.noisy_psnr = mean_finite(p);
    result.noisy_val_ssim = val.noisy_ssim = mean_finite(s);
  }
  std::tie(result.final_val_psnr, result.final_val_ssim) = score(ckpt, data, val);

  const AdamOptions adam{config.learning_rate, config.beta1, config.beta2, config.adam_eps};
  const SsimConstants ssim = config.loss_ssim();
  for (std::int64_t step = ckpt.optimizer.step; step < config.steps; ++step) {
    const auto batch = sample_patch_pairs(data.train, config.noise, config.patch_size, config.batch_size,
                                          derive_seed(config.seed, 0x747261696eu, static_cast<std::uint64_t>(step)),
                                          config);
    std::vector<Image> noisy, clean;
    std::vector<LossWeights> weights;
    for (const auto& s : batch) {
      noisy.push_back(s.noisy);
      clean.push_back(s.clean);
      weights.push_back(s.weights);
    }

    const ModelParams leaves = ckpt.params.detached(true);
    const Tensor yhat = model_forward(stack(noisy), leaves, config.model, config.model_kind);
    const Tensor loss = config.loss_kind == LossKind::kL1 ? l1_loss(yhat, stack(clean))
                                                          : struct_loss(yhat, clean, weights, ssim);
    if (!std::isfinite(loss.item())) {
      throw NumericError("non-finite loss at step " + std::to_string(step + 1));
    }
    const auto wrt = leaves.tensors();
    const auto grads = backward(loss, wrt);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      if (!grads[i].all_finite()) {
        throw NumericError("non-finite gradient for '" + leaves.entries()[i].name + "' at step " +
                           std::to_string(step + 1));
      }
    }
    adam_step(ckpt.params, grads, ckpt.optimizer, adam);

    CurvePoint point{ckpt.optimizer.step, loss.item(), std::nullopt, std::nullopt};
    if (ckpt.optimizer.step % config.val_every == 0 || ckpt.optimizer.step == config.steps) {
      std::tie(result.final_val_psnr, result.final_val_ssim) = score(ckpt, data, val);
      point.val_psnr = result.final_val_psnr;
      point.val_ssim = result.final_val_ssim;
    }
    result.curve.push_back(point);
    if (progress) progress(point);
  }
  return result;
}

EvalReport evaluate(const Checkpoint& checkpoint, std::span<const Image> clean, std::span<const std::string> names,
                    const NoiseModel& noise, std::uint64_t seed) {
  if (clean.empty()) throw std::invalid_argument("evaluation set is empty");
  EvalReport report;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const Image noisy = add_noise(clean[i], noise, derive_seed(seed, 0x6576616cu, i));
    const Image out = denoise(checkpoint, noisy);
    ImageScore s;
    s.file = i < names.size() ? names[i] : std::to_string(i);
    s.psnr_noisy = psnr(noisy, clean[i]);
    s.ssim_noisy = ssim_image(noisy, clean[i]);
    s.psnr_denoised = psnr(out, clean[i]);
    s.ssim_denoised = ssim_image(out, clean[i]);
    report.images.push_back(std::move(s));
  }
  summarize(report);
  return report;
}

EvalReport evaluate(const Checkpoint& checkpoint, const std::filesystem::path& dir, const NoiseModel& noise,
                    std::uint64_t seed) {
  std::vector<Image> images;
  std::vector<std::string> names;
  for (const auto& path : list_pgm_files(dir)) {
    images.push_back(read_pgm(path));
    names.push_back(path.filename().string());
  }
  if (images.empty()) throw std::invalid_argument("no .pgm images in '" + dir.string() + "'");
  return evaluate(checkpoint, images, names, noise, seed);
}

}  // namespace skpn
