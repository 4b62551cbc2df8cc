#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "chroma/config.hpp"
#include "chroma/gradcheck.hpp"
#include "chroma/network.hpp"
#include "chroma/rng.hpp"
#include "chroma/training.hpp"

namespace chroma {

struct ModelGradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_coordinate;
  double seconds = 0.0;
};

// Builds a tiny generator/discriminator pair in 64-bit precision and runs
// the finite-difference check over sampled parameters of the full generator
// and discriminator objectives. corrupt_scale != 1 deliberately damages one
// analytic gradient so the failure path can be exercised.
inline ModelGradCheckReport run_model_gradcheck(int size, int width,
                                                std::uint64_t seed,
                                                int samples_per_tensor = 4,
                                                double corrupt_scale = 1.0) {
  const auto start = std::chrono::steady_clock::now();

  TrainConfig config;
  config.image_size = size;
  config.width = width;
  config.seed = seed;
  config.mode = Mode::kMakeup;
  config.validate();

  Model<double> model = Model<double>::build(config);
  ChannelGan<double>& gan = model.gan(ChannelTarget::A);

  // Frozen synthetic batch: inputs in network range, targets in [-1,1].
  RandomStream rs(derive_seed(seed, 0xfeedull));
  const std::int64_t b = 2;
  Tensor<double> L({b, 1, size, size});
  Tensor<double> z({b, 1, size, size});
  Tensor<double> target({b, 1, size, size});
  for (std::int64_t i = 0; i < L.size(); ++i) {
    L.data()[i] = rs.next_uniform(0.0, 1.0);
    z.data()[i] = rs.next_uniform(-1.0, 1.0);
    target.data()[i] = rs.next_uniform(-1.0, 1.0);
  }

  std::vector<std::pair<std::string, Tensor<double>*>> gen_params;
  for (auto& item : gan.gen.params().items()) {
    if (item.trainable) gen_params.emplace_back("gen." + item.name, &item.tensor);
  }
  std::vector<std::pair<std::string, Tensor<double>*>> disc_params;
  for (auto& item : gan.disc.params().items()) {
    if (item.trainable)
      disc_params.emplace_back("disc." + item.name, &item.tensor);
  }

  GradCheckOptions opt;
  opt.eps = 1e-5;
  opt.samples_per_tensor = samples_per_tensor;
  opt.seed = derive_seed(seed, 0xc0deull);
  opt.corrupt_scale = corrupt_scale;

  const double w_adv = 0.1;
  const auto gen_objective = [&] {
    return g_loss(gan.gen, gan.disc, L, z, target, w_adv, nullptr, false);
  };
  GradCheckReport gen_report = grad_check(gen_objective, gen_params, opt);

  // The discriminator objective scores a frozen fake against the target.
  const Tensor<double> fake = gan.gen.forward(L, z, nullptr, false);
  GradCheckOptions opt_d = opt;
  opt_d.corrupt_scale = 1.0;
  const auto disc_objective = [&] {
    return d_loss(gan.disc, L, target, fake, false);
  };
  GradCheckReport disc_report = grad_check(disc_objective, disc_params, opt_d);

  ModelGradCheckReport report;
  if (gen_report.max_rel_err >= disc_report.max_rel_err) {
    report.max_rel_err = gen_report.max_rel_err;
    report.worst_coordinate = gen_report.worst_coordinate;
  } else {
    report.max_rel_err = disc_report.max_rel_err;
    report.worst_coordinate = disc_report.worst_coordinate;
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return report;
}

}  // namespace chroma
