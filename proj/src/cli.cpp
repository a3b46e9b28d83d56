#include "skpn/cli.hpp"

#include "skpn/error.hpp"
#include "skpn/gradstats.hpp"
#include "skpn/io.hpp"
#include "skpn/losses.hpp"
#include "skpn/synth.hpp"
#include "skpn/training.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

namespace skpn {
namespace fs = std::filesystem;

namespace {

struct SynthArgs {
  std::string out;
  int count = 10;
  int size = 96;
  std::uint64_t seed = 0;
};

struct StatsArgs {
  std::string image;
  std::string out;
  int k_r = 11;
  double sigma_l2 = 1.8;
  double sigma_l1 = 0.35;
  std::string strength_norm = "sqrt-over-kr";
};

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string csv;
  std::optional<std::uint64_t> seed;
};

struct DenoiseArgs {
  std::string checkpoint;
  std::string in;
  std::string out;
  std::vector<std::int64_t> dump_kernels;
  std::string dump_field;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string noise = "gaussian";
  double sigma = 0.1;
  double poisson_scale = 1000.0;
  std::uint64_t seed = 0;
};

// Files next to `out` that share its stem, e.g. out_kernel_3_4.pgm.
fs::path sibling(const fs::path& out, const std::string& suffix) {
  return out.parent_path() / (out.stem().string() + suffix);
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec || !fs::is_directory(a.out)) throw std::runtime_error("cannot create output directory '" + a.out + "'");
  if (a.count < 0) throw std::invalid_argument("--count must be non-negative");
  for (int i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "synth_%03d.pgm", i);
    write_pgm(fs::path(a.out) / name, synth_image(a.size, a.seed, i), 16);
  }
  out << "wrote " << a.count << " images to " << a.out << "\n";
  return kExitOk;
}

int cmd_stats(const StatsArgs& a, std::ostream& out) {
  const Image img = read_pgm(a.image);
  const GradStatsMap stats = stats_map(img, a.k_r, parse_strength_norm(a.strength_norm));
  const fs::path prefix(a.out);
  auto named = [&](const std::string& suffix) { return fs::path(prefix.string() + suffix); };
  const auto lambda = write_normalized_pgm(named("_strength.pgm"), named("_strength.txt"), stats.strength);
  const auto mu = write_normalized_pgm(named("_coherence.pgm"), named("_coherence.txt"), stats.coherence);
  write_label_pgm(named("_regions.pgm"), region_class_map(stats, a.sigma_l2, a.sigma_l1));
  out << "strength in [" << lambda.min << ", " << lambda.max << "], coherence in [" << mu.min << ", " << mu.max
      << "]\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  TrainConfig config = parse_train_config(read_file(a.config));
  if (a.seed) config.seed = *a.seed;
  const Dataset data = load_dataset(a.data);
  const TrainResult result = train(config, data, nullptr, [&](const CurvePoint& p) {
    if (p.val_psnr) out << "step " << p.step << " loss " << p.loss << " val_psnr " << *p.val_psnr << "\n";
  });
  save_checkpoint(a.out, result.checkpoint);
  write_file(a.csv.empty() ? fs::path(a.out).string() + ".csv" : a.csv, curve_csv(result.curve));
  out << "noisy val psnr " << result.noisy_val_psnr << ", final val psnr " << result.final_val_psnr << "\n";
  return kExitOk;
}

int cmd_denoise(const DenoiseArgs& a, std::ostream& out) {
  if (a.dump_kernels.size() % 2 != 0) throw std::invalid_argument("--dump-kernels takes m,n pairs");
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const Image noisy = read_pgm(a.in);

  if (ckpt.config.model_kind != ModelKind::kKpn && (!a.dump_kernels.empty() || !a.dump_field.empty())) {
    throw std::invalid_argument("kernel dumps need a kpn checkpoint");
  }
  for (std::size_t i = 0; i < a.dump_kernels.size(); i += 2) {
    const auto m = a.dump_kernels[i], n = a.dump_kernels[i + 1];
    if (m < 0 || m >= noisy.rows() || n < 0 || n >= noisy.cols()) {
      throw std::out_of_range("pixel (" + std::to_string(m) + "," + std::to_string(n) + ") is outside the " +
                              std::to_string(noisy.rows()) + "x" + std::to_string(noisy.cols()) + " image");
    }
  }

  Image denoised;
  if (ckpt.config.model_kind == ModelKind::kKpn) {
    if (noisy.rows() < ckpt.config.model.kernel_size || noisy.cols() < ckpt.config.model.kernel_size) {
      throw ShapeError("H,W", "image smaller than the kernel size");
    }
    const KpnOutput result = kpn_forward(Tensor::from_image(noisy), ckpt.params, ckpt.config.model);
    denoised = result.yhat.image();
    for (std::size_t i = 0; i < a.dump_kernels.size(); i += 2) {
      const auto m = a.dump_kernels[i], n = a.dump_kernels[i + 1];
      const Image kernel = kernel_at(result.field, m, n).array();
      const std::string tag = "_kernel_" + std::to_string(m) + "_" + std::to_string(n);
      write_normalized_pgm(sibling(a.out, tag + ".pgm"), sibling(a.out, tag + ".txt"), kernel);
      write_raw_tensor(sibling(a.out, tag + ".sktd"),
                       Tensor::from_data({kernel.rows(), kernel.cols()}, {kernel.data(), kernel.data() + kernel.size()}));
    }
    if (!a.dump_field.empty()) write_raw_tensor(a.dump_field, result.field.values);
  } else {
    denoised = denoise(ckpt, noisy);
  }
  if (!denoised.allFinite()) throw NumericError("denoised image contains non-finite values");
  write_pgm(a.out, denoised, 16);
  out << "wrote " << a.out << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  NoiseModel noise;
  noise.kind = parse_noise_kind(a.noise);
  noise.gaussian_sigma = a.sigma;
  noise.poisson_scale = a.poisson_scale;
  const EvalReport report = evaluate(ckpt, a.data, noise, a.seed);
  write_file(a.out, report_csv(report));
  out << "mean psnr noisy " << report.mean_psnr_noisy << " denoised " << report.mean_psnr_denoised
      << "; mean ssim noisy " << report.mean_ssim_noisy << " denoised " << report.mean_ssim_denoised << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Kernel-prediction denoising toolkit with a structure-aware loss", "skpn"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write the procedural training corpus as 16-bit PGM");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--count", synth.count, "Number of images");
  synth_cmd->add_option("--size", synth.size, "Image side length");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "Export strength, coherence and region maps of a clean image");
  stats_cmd->add_option("--image", stats.image, "Input PGM")->required();
  stats_cmd->add_option("--out", stats.out, "Output prefix")->required();
  stats_cmd->add_option("--kr", stats.k_r, "Statistics patch size (odd)");
  stats_cmd->add_option("--sigma-l2", stats.sigma_l2, "L2 coherence scale");
  stats_cmd->add_option("--sigma-l1", stats.sigma_l1, "L1 constant logit");
  stats_cmd->add_option("--strength-norm", stats.strength_norm, "raw | sqrt-over-kr");
  std::uint64_t unused_seed = 0;
  stats_cmd->add_option("--seed", unused_seed, "Unused; accepted for uniformity");

  TrainArgs train_args;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a key=value config");
  train_cmd->add_option("--config", train_args.config, "Config file")->required();
  train_cmd->add_option("--data", train_args.data, "Directory of clean PGM images")->required();
  train_cmd->add_option("--out", train_args.out, "Checkpoint path")->required();
  train_cmd->add_option("--csv", train_args.csv, "Loss curve CSV (default: <out>.csv)");
  auto* seed_opt = train_cmd->add_option("--seed", train_seed, "Override the config seed");

  DenoiseArgs den;
  std::string dump_list;
  auto* den_cmd = app.add_subcommand("denoise", "Denoise one image, optionally dumping predicted kernels");
  den_cmd->add_option("--checkpoint", den.checkpoint, "Checkpoint")->required();
  den_cmd->add_option("--in", den.in, "Noisy PGM")->required();
  den_cmd->add_option("--out", den.out, "Denoised PGM")->required();
  den_cmd->add_option("--dump-kernels", dump_list, "Comma-separated m,n pairs");
  den_cmd->add_option("--dump-field", den.dump_field, "Write the full kernel field as a raw tensor");
  den_cmd->add_option("--seed", unused_seed, "Unused; accepted for uniformity");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of noisy and denoised images against clean ones");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Directory of clean PGM images")->required();
  eval_cmd->add_option("--out", ev.out, "Report CSV")->required();
  eval_cmd->add_option("--noise", ev.noise, "gaussian | poisson-gaussian");
  eval_cmd->add_option("--sigma", ev.sigma, "Gaussian noise sigma");
  eval_cmd->add_option("--poisson-scale", ev.poisson_scale, "Photon count at intensity 1");
  eval_cmd->add_option("--seed", ev.seed, "Noise seed");

  std::vector<std::string> storage{"skpn"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : storage) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*stats_cmd) return cmd_stats(stats, out);
    if (*train_cmd) {
      if (*seed_opt) train_args.seed = train_seed;
      return cmd_train(train_args, out);
    }
    if (*den_cmd) {
      std::stringstream list(dump_list);
      for (std::string item; std::getline(list, item, ',');) {
        if (!item.empty()) den.dump_kernels.push_back(std::stoll(item));
      }
      return cmd_denoise(den, out);
    }
    if (*eval_cmd) return cmd_eval(ev, out);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace skpn
