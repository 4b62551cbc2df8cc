// chroma: colorization toolkit CLI.
//
// Subcommands: prepare / train / colorize / evaluate / gradcheck.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
// Diagnostics go to stderr; data and summaries go to stdout.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chroma/chroma.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct PrepareArgs {
  std::string input, out;
  std::string manifest;
  int size = 64;
};

struct TrainArgs {
  std::string data, out;
  std::string mode = "makeup";
  std::string resume;
  bool epochs_given = false;
  chroma::TrainConfig config;
};

struct ColorizeArgs {
  std::string ckpt, input, out;
  std::uint64_t z_seed = 0;
  int variants = 1;
};

struct EvaluateArgs {
  std::string ckpt, data, report;
  std::string grid;
  std::uint64_t z_seed = 0;
};

struct GradcheckArgs {
  int size = 16;
  int width = 4;
  std::uint64_t seed = 0;
};

int run_prepare(const PrepareArgs& args) {
  std::optional<fs::path> sidecar;
  if (!args.manifest.empty()) sidecar = fs::path(args.manifest);
  const chroma::DatasetManifest manifest =
      chroma::scan(args.input, sidecar, args.size);
  const chroma::PrepareReport report =
      chroma::prepare(manifest, args.input, args.out);
  for (const std::string& err : report.errors) {
    std::cerr << "prepare: " << err << "\n";
  }
  std::cout << "prepared=" << report.prepared << " skipped=" << report.skipped
            << " failed=" << report.failed << "\n";
  return report.failed == 0 ? kExitOk : kExitRuntime;
}

int run_train(TrainArgs& args) {
  args.config.mode = chroma::mode_from_name(args.mode);
  args.config.validate();

  std::optional<chroma::Trainer> trainer;
  if (!args.resume.empty()) {
    // Resume keeps the checkpoint's config; only the epoch target moves.
    chroma::CheckpointData ckpt = chroma::load_checkpoint(args.resume);
    if (args.epochs_given) ckpt.config.epochs = args.config.epochs;
    trainer.emplace(ckpt);
  } else {
    trainer.emplace(args.config);
  }

  const chroma::Corpus corpus =
      chroma::Corpus::load(fs::path(args.data), trainer->config().image_size);
  std::cerr << "training on " << corpus.size() << " images at "
            << corpus.image_size() << "x" << corpus.image_size() << "\n";
  trainer->run(corpus, args.out, [](const chroma::StepRecord& rec) {
    std::fprintf(stderr, "epoch=%lld channel=%s step=%lld d_loss=%.6g g_loss=%.6g\n",
                 static_cast<long long>(rec.epoch + 1),
                 chroma::channel_name(rec.channel).c_str(),
                 static_cast<long long>(rec.step),
                 static_cast<double>(rec.d_loss),
                 static_cast<double>(rec.g_loss));
  });
  std::cout << "trained epochs=" << trainer->completed_epochs()
            << " steps_a=" << trainer->steps(chroma::ChannelTarget::A)
            << " steps_b=" << trainer->steps(chroma::ChannelTarget::B)
            << " out=" << args.out << "\n";
  return kExitOk;
}

int run_colorize(const ColorizeArgs& args) {
  const chroma::CheckpointData ckpt = chroma::load_checkpoint(args.ckpt);
  chroma::Trainer trainer(ckpt);
  const chroma::RgbImage input = chroma::read_png(args.input);

  const fs::path out_path(args.out);
  for (int k = 0; k < args.variants; ++k) {
    const std::uint64_t seed =
        args.variants == 1 ? args.z_seed
                           : chroma::derive_seed(args.z_seed,
                                                 static_cast<std::uint64_t>(k));
    const chroma::ColorizationResult result =
        chroma::colorize(trainer.model(), input, seed);
    fs::path target = out_path;
    if (args.variants > 1) {
      target = out_path.parent_path() /
               (out_path.stem().string() + "_v" + std::to_string(k) +
                out_path.extension().string());
    }
    chroma::write_png(target, result.output);
    std::cout << "wrote " << target.string() << "\n";
  }
  return kExitOk;
}

int run_evaluate(const EvaluateArgs& args) {
  const chroma::CheckpointData ckpt = chroma::load_checkpoint(args.ckpt);
  chroma::Trainer trainer(ckpt);

  std::vector<fs::path> files;
  if (!fs::is_directory(args.data)) {
    throw chroma::IoError("test corpus is not a directory: " + args.data);
  }
  for (const auto& entry : fs::directory_iterator(args.data)) {
    if (entry.is_regular_file() && chroma::is_supported_image(entry.path())) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw chroma::IoError("empty test split under " + args.data);
  }

  std::vector<chroma::GridItem> grid_items;
  const chroma::EvalReport report =
      chroma::evaluate(trainer.model(), files, args.z_seed,
                       args.grid.empty() ? nullptr : &grid_items);
  chroma::write_report_csv(args.report, report);
  if (!args.grid.empty()) chroma::emit_grid(grid_items, args.grid);
  std::printf(
      "images=%zu mean_ab_mse=%.6g median_ab_mse=%.6g mean_psnr_db=%.6g "
      "median_psnr_db=%.6g\n",
      report.rows.size(), report.mean_ab_mse, report.median_ab_mse,
      report.mean_psnr, report.median_psnr);
  return kExitOk;
}

int run_gradcheck(const GradcheckArgs& args) {
  double corrupt = 1.0;
  if (const char* hook = std::getenv("CHROMA_GRADCHECK_CORRUPT")) {
    // Test-only hook: damages one analytic gradient to prove the check can
    // fail.
    corrupt = std::atof(hook);
    if (corrupt == 0.0) corrupt = 1.0;
  }
  const chroma::ModelGradCheckReport report =
      chroma::run_model_gradcheck(args.size, args.width, args.seed, 4, corrupt);
  std::printf("max_rel_err=%.3e\n", report.max_rel_err);
  if (report.max_rel_err >= 1e-4) {
    std::cerr << "gradcheck failed at " << report.worst_coordinate << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chroma: per-channel GAN image colorization in CIELAB space"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Read options from a `key = value` file");

  PrepareArgs prepare_args;
  CLI::App* prepare = app.add_subcommand(
      "prepare", "Crop and resize a raw image directory into a corpus");
  prepare->add_option("--input", prepare_args.input, "Source image directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  prepare->add_option("--manifest", prepare_args.manifest,
                      "Crop sidecar: `path x y w h` per line")
      ->check(CLI::ExistingFile);
  prepare->add_option("--out", prepare_args.out, "Output corpus directory")
      ->required();
  prepare->add_option("--size", prepare_args.size, "Square output size")
      ->check(CLI::Range(16, 4096));

  TrainArgs train_args;
  CLI::App* train =
      app.add_subcommand("train", "Train both channel GANs on a corpus");
  train->add_option("--data", train_args.data, "Prepared corpus directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  train->add_option("--out", train_args.out, "Run directory for checkpoints and metrics")
      ->required();
  train->add_option("--mode", train_args.mode, "makeup|general")
      ->check(CLI::IsMember({"makeup", "general"}));
  train->add_option("--size", train_args.config.image_size,
                    "Training image side (multiple of 16)");
  train->add_option("--epochs", train_args.config.epochs, "Epoch count");
  train->add_option("--lr", train_args.config.learning_rate, "Learning rate");
  train->add_option("--momentum", train_args.config.momentum, "Momentum");
  train->add_option("--batch", train_args.config.batch_size, "Batch size");
  train->add_option("--w-adv", train_args.config.w_adv, "Adversarial weight");
  train->add_option("--seed", train_args.config.seed, "Base seed");
  train->add_option("--width", train_args.config.width,
                    "Base channel width of both networks");
  train->add_flag("--batchnorm", train_args.config.batchnorm,
                  "Enable batch normalization (recorded in checkpoints)");
  train->add_option("--resume", train_args.resume,
                    "Continue from a checkpoint");

  ColorizeArgs colorize_args;
  CLI::App* colorize =
      app.add_subcommand("colorize", "Colorize one image with a checkpoint");
  colorize->add_option("--ckpt", colorize_args.ckpt, "Checkpoint file")
      ->required();
  colorize->add_option("--input", colorize_args.input, "Input image (PNG)")
      ->required()
      ->check(CLI::ExistingFile);
  colorize->add_option("--out", colorize_args.out, "Output PNG")->required();
  colorize->add_option("--z-seed", colorize_args.z_seed, "Noise seed");
  colorize->add_option("--variants", colorize_args.variants,
                       "Emit K outputs with distinct noise draws")
      ->check(CLI::Range(1, 64));

  EvaluateArgs evaluate_args;
  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Score a checkpoint against a prepared test corpus");
  evaluate->add_option("--ckpt", evaluate_args.ckpt, "Checkpoint file")
      ->required();
  evaluate->add_option("--data", evaluate_args.data, "Test corpus directory")
      ->required();
  evaluate->add_option("--report", evaluate_args.report, "Metrics CSV path")
      ->required();
  evaluate->add_option("--grid", evaluate_args.grid,
                       "Optional comparison grid PNG");
  evaluate->add_option("--z-seed", evaluate_args.z_seed, "Noise seed");

  GradcheckArgs gradcheck_args;
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "Finite-difference check of the full training gradients");
  gradcheck->add_option("--size", gradcheck_args.size,
                        "Image side (multiple of 16)");
  gradcheck->add_option("--width", gradcheck_args.width, "Base channel width")
      ->check(CLI::Range(1, 64));
  gradcheck->add_option("--seed", gradcheck_args.seed, "Base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (prepare->parsed()) return run_prepare(prepare_args);
    if (train->parsed()) return run_train(train_args);
    if (colorize->parsed()) return run_colorize(colorize_args);
    if (evaluate->parsed()) return run_evaluate(evaluate_args);
    if (gradcheck->parsed()) return run_gradcheck(gradcheck_args);
  } catch (const chroma::ConfigError& e) {
    std::cerr << "chroma: " << e.what() << "\n";
    return kExitUsage;
  } catch (const chroma::PreconditionError& e) {
    std::cerr << "chroma: " << e.what() << "\n";
    return kExitUsage;
  } catch (const chroma::Error& e) {
    std::cerr << "chroma: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "chroma: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
