#pragma once

#include "skpn/gradstats.hpp"
#include "skpn/kpn.hpp"
#include "skpn/losses.hpp"
#include "skpn/metrics.hpp"
#include "skpn/noise.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace skpn {

enum class LossKind { kL1, kStructure };

LossKind parse_loss_kind(const std::string& name);
std::string to_string(LossKind kind);

// Unknown key or unparsable value in a config file.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::invalid_argument(what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct TrainConfig {
  int patch_size = 64;
  int batch_size = 4;
  int steps = 1000;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::kStructure;
  ModelKind model_kind = ModelKind::kKpn;

  int k_r = 11;
  double sigma_l2 = 1.8;
  double sigma_l1 = 0.35;
  StrengthNorm strength_norm = StrengthNorm::kSqrtOverPatch;
  WindowKind ssim_window = WindowKind::kUniform;

  KpnConfig model;
  NoiseModel noise;
  int val_every = 50;

  void validate() const;
  SsimConstants loss_ssim() const { return SsimConstants::for_range(1.0, k_r, ssim_window); }
};

// Flat "key = value" text; '#' starts a comment. Keys not given keep their
// defaults. Throws ConfigError naming the offending key.
TrainConfig parse_train_config(std::string_view text);
std::string format_train_config(const TrainConfig& config);
std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(std::string_view json);

struct PatchSample {
  Image noisy;
  Image clean;
  GradStatsMap stats;
  LossWeights weights;
};

// Uniform random crops of the clean corpus with synthetic noise. Statistics
// and loss weights always come from the clean crop.
std::vector<PatchSample> sample_patch_pairs(std::span<const Image> clean, const NoiseModel& noise,
                                            int patch_size, int count, std::uint64_t seed,
                                            const TrainConfig& structure = TrainConfig{});

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m;  // aligned with ModelParams::entries()
  std::vector<Tensor> v;

  static AdamState zeros_like(const ModelParams& params);
};

// One bias-corrected Adam update, parameters visited in stored order.
void adam_step(ModelParams& params, std::span<const Tensor> grads, AdamState& state, const AdamOptions& options);

struct Checkpoint {
  TrainConfig config;
  ModelParams params;
  AdamState optimizer;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "SKPN", u32 version, u32 length + JSON text (config, step, rng), then
// named tensors until end of file.
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint initial_checkpoint(const TrainConfig& config);

struct Dataset {
  std::vector<Image> train;
  std::vector<Image> validation;
  std::vector<std::string> validation_names;
};

// Last 20% (at least one image) of `images` become the validation split.
Dataset split_dataset(std::vector<Image> images, std::vector<std::string> names);
Dataset load_dataset(const std::filesystem::path& dir);

struct CurvePoint {
  std::int64_t step = 0;
  double loss = 0;
  std::optional<double> val_psnr;
  std::optional<double> val_ssim;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<CurvePoint> curve;
  double noisy_val_psnr = 0;
  double noisy_val_ssim = 0;
  double final_val_psnr = 0;
  double final_val_ssim = 0;
};

// "step,loss,val_psnr,val_ssim"; validation columns empty between evaluations.
std::string curve_csv(const std::vector<CurvePoint>& curve);

// Runs steps [resume.step, config.steps). Throws NumericError naming the
// step if the loss or a gradient becomes non-finite.
TrainResult train(const TrainConfig& config, const Dataset& data, const Checkpoint* resume = nullptr,
                  const std::function<void(const CurvePoint&)>& progress = {});

Image denoise(const Checkpoint& checkpoint, const Image& noisy);

// Noisy copies are drawn per image from `seed`; metrics use the 11x11 window.
EvalReport evaluate(const Checkpoint& checkpoint, const std::filesystem::path& dir, const NoiseModel& noise,
                    std::uint64_t seed);
EvalReport evaluate(const Checkpoint& checkpoint, std::span<const Image> clean,
                    std::span<const std::string> names, const NoiseModel& noise, std::uint64_t seed);

// SplitMix64-style mixing of a seed with stream identifiers.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace skpn
