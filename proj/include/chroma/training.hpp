#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "chroma/checkpoint.hpp"
#include "chroma/config.hpp"
#include "chroma/dataset.hpp"
#include "chroma/network.hpp"
#include "chroma/ops.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

// Per-example pixel-mean squared error, averaged over the batch.
template <typename T>
Tensor<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  return l2_mean(pred, target);
}

// Arithmetic mean of per-example scalar losses.
template <typename T>
Tensor<T> minibatch_loss(std::span<const Tensor<T>> example_losses) {
  if (example_losses.empty()) {
    throw PreconditionError("minibatch_loss over an empty batch");
  }
  Tensor<T> total = example_losses[0];
  for (std::size_t i = 1; i < example_losses.size(); ++i) {
    total = add(total, example_losses[i]);
  }
  return scale(total, T{1} / static_cast<T>(example_losses.size()));
}

// Discriminator cross entropy from already-computed probabilities:
// mean(-log D(real)) + mean(-log(1 - D(fake))). Log arguments are clamped
// at 1e-12, so the value is always finite and nonnegative.
template <typename T>
Tensor<T> d_loss_values(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
  return add(mean_neg_log(d_real), mean_neg_log_complement(d_fake));
}

template <typename T>
Tensor<T> d_loss(const Discriminator<T>& disc, const Tensor<T>& L,
                 const Tensor<T>& real_chroma, const Tensor<T>& fake_chroma,
                 bool training = false) {
  return d_loss_values(disc.forward(L, real_chroma, training),
                       disc.forward(L, fake_chroma, training));
}

// Combined generator objective: reconstruction plus the non-saturating
// adversarial term, mean(-log D(fake)), weighted by w_adv. With w_adv = 0
// the adversarial branch is skipped entirely and the result is exactly the
// reconstruction loss.
template <typename T>
Tensor<T> g_loss(const Generator<T>& gen, const Discriminator<T>& disc,
                 const Tensor<T>& L, const Tensor<T>& z,
                 const Tensor<T>& target_chroma, T w_adv,
                 const Tensor<T>* global_features = nullptr,
                 bool training = false) {
  Tensor<T> fake = gen.forward(L, z, global_features, training);
  Tensor<T> recon = l2_mean(fake, target_chroma);
  if (w_adv == T{0}) return recon;
  Tensor<T> adv = mean_neg_log(disc.forward(L, fake, training));
  return add(recon, scale(adv, w_adv));
}

// Classical momentum: v <- mu * v + g, theta <- theta - lambda * v.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum)
      : lr_(learning_rate), mu_(momentum) {}

  // Registers a parameter (shared buffers) with a zero velocity.
  void attach(const std::string& name, Tensor<T> param) {
    velocity_.emplace_back(name, Tensor<T>(param.shape()));
    params_.push_back(std::move(param));
  }

  void step() {
    const T lr = static_cast<T>(lr_);
    const T mu = static_cast<T>(mu_);
    for (std::size_t p = 0; p < params_.size(); ++p) {
      Tensor<T>& theta = params_[p];
      Tensor<T>& vel = velocity_[p].second;
      const std::vector<T>& g = theta.grad();
      T* v = vel.data();
      T* w = theta.data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        v[i] = mu * v[i] + g[i];
        w[i] -= lr * v[i];
      }
    }
  }

  std::vector<std::pair<std::string, Tensor<T>>>& velocities() {
    return velocity_;
  }
  const std::vector<std::pair<std::string, Tensor<T>>>& velocities() const {
    return velocity_;
  }

 private:
  double lr_, mu_;
  std::vector<Tensor<T>> params_;
  std::vector<std::pair<std::string, Tensor<T>>> velocity_;
};

struct StepLosses {
  float d_loss = 0.0f;
  float g_loss = 0.0f;
};

// One adversarial update on one minibatch: a discriminator step against
// detached fakes, then a generator step on the same batch.
template <typename T>
StepLosses train_step(ChannelGan<T>& gan, SgdMomentum<T>& opt_g,
                      SgdMomentum<T>& opt_d, const Minibatch& batch,
                      const TrainConfig& config, std::int64_t step_index) {
  const bool is_a = gan.channel == ChannelTarget::A;
  Tensor<T> L = batch.inputs_L;
  Tensor<T> z = batch.noise_z;
  Tensor<T> target = is_a ? batch.targets_a : batch.targets_b;

  // Fakes for the discriminator phase are computed off-tape, which detaches
  // them from the generator parameters.
  std::optional<Tensor<T>> feats = gan.features(L, true);
  Tensor<T> fake_detached =
      gan.gen.forward(L, z, feats ? &*feats : nullptr, true);

  StepLosses losses;
  {
    gan.disc.params().zero_grad();
    Tape<T> tape;
    Tensor<T> dl = d_loss(gan.disc, L, target, fake_detached, true);
    losses.d_loss = static_cast<float>(dl.item());
    tape.backward(dl);
  }
  opt_d.step();

  {
    gan.gen.params().zero_grad();
    if (gan.extractor) gan.extractor->params().zero_grad();
    gan.disc.params().zero_grad();  // gradients flow through D; discard them
    Tape<T> tape;
    std::optional<Tensor<T>> feats_live = gan.features(L, true);
    Tensor<T> gl = g_loss(gan.gen, gan.disc, L, z, target,
                          static_cast<T>(config.w_adv),
                          feats_live ? &*feats_live : nullptr, true);
    losses.g_loss = static_cast<float>(gl.item());
    tape.backward(gl);
  }
  opt_g.step();

  if (!std::isfinite(losses.d_loss) || !std::isfinite(losses.g_loss)) {
    throw DivergenceError("non-finite loss at step " +
                          std::to_string(step_index) + " (channel " +
                          channel_name(gan.channel) +
                          "): d_loss=" + std::to_string(losses.d_loss) +
                          " g_loss=" + std::to_string(losses.g_loss));
  }
  return losses;
}

struct StepRecord {
  std::int64_t step = 0;
  ChannelTarget channel = ChannelTarget::A;
  float d_loss = 0.0f;
  float g_loss = 0.0f;
  std::int64_t epoch = 0;
};

namespace detail {

inline std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

}  // namespace detail

// Drives the full two-channel training loop: per-epoch shuffled batches per
// channel, metrics CSV rows per step, a checkpoint per epoch. Restoring from
// a checkpoint reproduces the uninterrupted run bit for bit.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& config)
      : config_(config), model_(Model<float>::build(config)) {
    build_optimizers();
  }

  explicit Trainer(const CheckpointData& ckpt)
      : config_(ckpt.config), model_(Model<float>::build(ckpt.config)) {
    build_optimizers();
    restore(ckpt);
  }

  Model<float>& model() { return model_; }
  const TrainConfig& config() const { return config_; }
  std::int64_t completed_epochs() const { return epoch_done_; }
  std::int64_t steps(ChannelTarget c) const {
    return c == ChannelTarget::A ? steps_a_ : steps_b_;
  }

  // Trains through config.epochs, appending to out_dir/metrics.csv and
  // writing out_dir/epoch_NNNN.ckpt after each epoch.
  void run(const Corpus& corpus, const std::filesystem::path& out_dir,
           const std::function<void(const StepRecord&)>& on_step = {}) {
    namespace fs = std::filesystem;
    if (corpus.image_size() != config_.image_size) {
      throw PreconditionError("corpus decoded at " +
                              std::to_string(corpus.image_size()) +
                              " but config.image_size is " +
                              std::to_string(config_.image_size));
    }
    fs::create_directories(out_dir);
    const fs::path csv_path = out_dir / "metrics.csv";
    const bool fresh = !fs::exists(csv_path) || fs::file_size(csv_path) == 0;
    std::ofstream csv(csv_path, std::ios::app);
    if (!csv) throw IoError("cannot open metrics log " + csv_path.string());
    if (fresh) csv << "step,channel,d_loss,g_loss\n";

    for (std::int64_t epoch = epoch_done_; epoch < config_.epochs; ++epoch) {
      for (ChannelTarget c : {ChannelTarget::A, ChannelTarget::B}) {
        ChannelGan<float>& gan = model_.gan(c);
        SgdMomentum<float>& opt_g =
            c == ChannelTarget::A ? *opt_g_a_ : *opt_g_b_;
        SgdMomentum<float>& opt_d =
            c == ChannelTarget::A ? *opt_d_a_ : *opt_d_b_;
        std::int64_t& steps = c == ChannelTarget::A ? steps_a_ : steps_b_;
        BatchStream stream(corpus, config_.batch_size, config_.seed,
                           channel_tag(c), epoch);
        while (auto batch = stream.next()) {
          ++steps;
          const StepLosses losses =
              train_step(gan, opt_g, opt_d, *batch, config_, steps);
          csv << steps << ',' << channel_name(c) << ','
              << detail::format_float(losses.d_loss) << ','
              << detail::format_float(losses.g_loss) << '\n';
          if (on_step) {
            on_step({steps, c, losses.d_loss, losses.g_loss, epoch});
          }
        }
      }
      csv.flush();
      epoch_done_ = epoch + 1;
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04lld.ckpt",
                    static_cast<long long>(epoch_done_));
      save_checkpoint(out_dir / name, to_checkpoint());
    }
  }

  CheckpointData to_checkpoint() {
    CheckpointData ckpt;
    ckpt.config = config_;
    ckpt.epoch = epoch_done_;
    ckpt.steps_a = steps_a_;
    ckpt.steps_b = steps_b_;
    for (auto& [name, item] : model_.named_items()) {
      ckpt.tensors.emplace_back(name, item->tensor);
    }
    for (SgdMomentum<float>* opt : {opt_g_a_.get(), opt_d_a_.get(),
                                    opt_g_b_.get(), opt_d_b_.get()}) {
      for (auto& [name, vel] : opt->velocities()) {
        ckpt.tensors.emplace_back(name + "#velocity", vel);
      }
    }
    return ckpt;
  }

 private:
  void build_optimizers() {
    opt_g_a_ = make_opt();
    opt_d_a_ = make_opt();
    opt_g_b_ = make_opt();
    opt_d_b_ = make_opt();
    for (auto& [name, item] : model_.named_items()) {
      if (!item->trainable) continue;
      const bool is_a = name.find("_a.") != std::string::npos;
      const bool is_disc = name.rfind("disc", 0) == 0;
      SgdMomentum<float>& opt = is_disc ? (is_a ? *opt_d_a_ : *opt_d_b_)
                                        : (is_a ? *opt_g_a_ : *opt_g_b_);
      opt.attach(name, item->tensor);
    }
  }

  std::unique_ptr<SgdMomentum<float>> make_opt() {
    return std::make_unique<SgdMomentum<float>>(config_.learning_rate,
                                                config_.momentum);
  }

  void restore(const CheckpointData& ckpt) {
    auto fill = [&](const std::string& name, Tensor<float>& dst) {
      const Tensor<float>* src = ckpt.find(name);
      if (!src) throw FormatError("checkpoint is missing tensor " + name);
      if (src->shape() != dst.shape()) {
        throw FormatError("checkpoint tensor " + name + " has shape " +
                          shape_str(src->shape()) + ", expected " +
                          shape_str(dst.shape()));
      }
      std::copy_n(src->data(), static_cast<std::size_t>(src->size()),
                  dst.data());
    };
    for (auto& [name, item] : model_.named_items()) fill(name, item->tensor);
    for (SgdMomentum<float>* opt : {opt_g_a_.get(), opt_d_a_.get(),
                                    opt_g_b_.get(), opt_d_b_.get()}) {
      for (auto& [name, vel] : opt->velocities()) {
        fill(name + "#velocity", vel);
      }
    }
    epoch_done_ = ckpt.epoch;
    steps_a_ = ckpt.steps_a;
    steps_b_ = ckpt.steps_b;
  }

  TrainConfig config_;
  Model<float> model_;
  std::unique_ptr<SgdMomentum<float>> opt_g_a_, opt_d_a_, opt_g_b_, opt_d_b_;
  std::int64_t epoch_done_ = 0;
  std::int64_t steps_a_ = 0;
  std::int64_t steps_b_ = 0;
};

}  // namespace chroma
