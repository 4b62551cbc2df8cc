#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chroma/config.hpp"
#include "chroma/ops.hpp"
#include "chroma/rng.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

enum class ChannelTarget { A, B };

inline std::string channel_name(ChannelTarget c) {
  return c == ChannelTarget::A ? "A" : "B";
}

inline std::uint64_t channel_tag(ChannelTarget c) {
  return c == ChannelTarget::A ? 0u : 1u;
}

// Named tensors owned by one network. Trainable entries carry gradient
// buffers; state entries (batchnorm running statistics) are persisted but
// never optimized.
template <typename T>
class ParamSet {
 public:
  struct Item {
    std::string name;
    Tensor<T> tensor;
    bool trainable;
  };

  Tensor<T>& add(std::string name, Tensor<T> tensor) {
    tensor.enable_grad();
    items_.push_back({std::move(name), std::move(tensor), true});
    return items_.back().tensor;
  }

  Tensor<T>& add_state(std::string name, Tensor<T> tensor) {
    items_.push_back({std::move(name), std::move(tensor), false});
    return items_.back().tensor;
  }

  std::vector<Item>& items() { return items_; }
  const std::vector<Item>& items() const { return items_; }

  void zero_grad() {
    for (auto& item : items_) item.tensor.zero_grad();
  }

  // Total scalar count across trainable tensors.
  std::int64_t trainable_size() const {
    std::int64_t n = 0;
    for (const auto& item : items_) {
      if (item.trainable) n += item.tensor.size();
    }
    return n;
  }

 private:
  std::vector<Item> items_;
};

namespace detail {

// Zero-mean uniform init with the He-style bound sqrt(2 / fan_in).
template <typename T>
void init_uniform(Tensor<T>& t, std::int64_t fan_in, RandomStream& rs) {
  const double bound = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    t.data()[i] = static_cast<T>(rs.next_uniform(-bound, bound));
  }
}

}  // namespace detail

// A convolution with optional batch normalization. apply() runs conv ->
// (bn) -> optional ReLU.
template <typename T>
struct ConvLayer {
  Tensor<T> weight;  // [Cout,Cin,k,k]
  Tensor<T> bias;    // [Cout]
  bool bn = false;
  Tensor<T> gamma, beta, running_mean, running_var;

  static ConvLayer make(ParamSet<T>& params, const std::string& name,
                        std::int64_t cin, std::int64_t cout, std::int64_t k,
                        bool batchnorm, RandomStream& rs) {
    ConvLayer layer;
    Tensor<T> w({cout, cin, k, k});
    detail::init_uniform(w, cin * k * k, rs);
    layer.weight = params.add(name + ".weight", std::move(w));
    layer.bias = params.add(name + ".bias", Tensor<T>({cout}));
    layer.bn = batchnorm;
    if (batchnorm) {
      layer.gamma = params.add(name + ".bn.gamma", Tensor<T>::full({cout}, T{1}));
      layer.beta = params.add(name + ".bn.beta", Tensor<T>({cout}));
      layer.running_mean =
          params.add_state(name + ".bn.running_mean", Tensor<T>({cout}));
      layer.running_var =
          params.add_state(name + ".bn.running_var", Tensor<T>::full({cout}, T{1}));
    }
    return layer;
  }

  Tensor<T> apply(const Tensor<T>& x, bool training, bool activate,
                  Padding padding = Padding::kSame) const {
    Tensor<T> y = conv2d(x, weight, bias, 1, padding);
    if (bn) {
      Tensor<T> rm = running_mean;  // shared buffers; updates land in place
      Tensor<T> rv = running_var;
      y = batchnorm(y, gamma, beta, rm, rv, training);
    }
    return activate ? relu(y) : y;
  }
};

struct GeneratorSpec {
  int base_width = 32;
  int input_channels = 2;  // L plus noise z
  int output_channels = 1;
  int feature_dim = 0;  // > 0 enables bottleneck fusion of global features
  bool batchnorm = false;
};

// Encoder-decoder generator: four downsampling blocks (conv, conv, pool),
// four upsampling blocks (conv, conv, upsample, merge with the matching
// pre-pool encoder activation), and a three-conv head whose last layer is
// linear and emits one chrominance plane.
template <typename T>
class Generator {
 public:
  Generator(GeneratorSpec spec, std::uint64_t seed) : spec_(spec) {
    RandomStream rs(derive_seed(seed, stream::kParamInit));
    const std::int64_t base = spec.base_width;
    for (int i = 0; i < 4; ++i) {
      const std::int64_t cin =
          i == 0 ? spec.input_channels : base << (i - 1);
      const std::int64_t cout = base << i;
      const std::string stem = "enc" + std::to_string(i + 1);
      enc_[i][0] = ConvLayer<T>::make(params_, stem + ".conv1", cin, cout, 3,
                                      spec.batchnorm, rs);
      enc_[i][1] = ConvLayer<T>::make(params_, stem + ".conv2", cout, cout, 3,
                                      spec.batchnorm, rs);
    }
    for (int j = 0; j < 4; ++j) {
      const std::int64_t width = base << (3 - j);
      const std::int64_t cin = j == 0 ? (base << 3) + spec.feature_dim
                                      : 2 * (base << (4 - j));
      const std::string stem = "dec" + std::to_string(j + 1);
      dec_[j][0] = ConvLayer<T>::make(params_, stem + ".conv1", cin, width, 3,
                                      spec.batchnorm, rs);
      dec_[j][1] = ConvLayer<T>::make(params_, stem + ".conv2", width, width, 3,
                                      spec.batchnorm, rs);
    }
    head_[0] = ConvLayer<T>::make(params_, "head.conv1", 2 * base, base, 3,
                                  spec.batchnorm, rs);
    head_[1] = ConvLayer<T>::make(params_, "head.conv2", base, base, 3,
                                  spec.batchnorm, rs);
    head_[2] = ConvLayer<T>::make(params_, "head.conv3", base,
                                  spec.output_channels, 3, false, rs);
  }

  // L, z: [B,1,S,S] with S divisible by 16. In general mode global_features
  // must be a [B,feature_dim] tensor; in makeup mode it must be absent.
  Tensor<T> forward(const Tensor<T>& L, const Tensor<T>& z,
                    const Tensor<T>* global_features = nullptr,
                    bool training = false) const {
    detail::check_rank(L, 4, "generator L input");
    detail::check_rank(z, 4, "generator z input");
    if (L.shape() != z.shape()) {
      throw ShapeError("generator inputs disagree: L is " +
                       shape_str(L.shape()) + ", z is " + shape_str(z.shape()));
    }
    const std::int64_t s = L.dim(2);
    if (L.dim(3) != s || s % 16 != 0 || s == 0) {
      throw PreconditionError(
          "generator input must be square with side divisible by 16, got " +
          std::to_string(s) + "x" + std::to_string(L.dim(3)));
    }
    if (spec_.feature_dim > 0 && global_features == nullptr) {
      throw PreconditionError("generator built with a feature hook requires "
                              "global features");
    }
    if (spec_.feature_dim == 0 && global_features != nullptr) {
      throw PreconditionError("generator built without a feature hook was "
                              "given global features");
    }

    Tensor<T> x = concat_channels(L, z);
    std::array<Tensor<T>, 4> skips;
    for (int i = 0; i < 4; ++i) {
      x = enc_[i][0].apply(x, training, true);
      x = enc_[i][1].apply(x, training, true);
      skips[static_cast<std::size_t>(i)] = x;
      x = maxpool2(x);
    }
    if (spec_.feature_dim > 0) {
      if (global_features->rank() != 2 ||
          global_features->dim(0) != L.dim(0) ||
          global_features->dim(1) != spec_.feature_dim) {
        throw ShapeError("global features must be [batch," +
                         std::to_string(spec_.feature_dim) + "], got " +
                         shape_str(global_features->shape()));
      }
      x = concat_channels(
          x, broadcast_spatial(*global_features, x.dim(2), x.dim(3)));
    }
    for (int j = 0; j < 4; ++j) {
      x = dec_[j][0].apply(x, training, true);
      x = dec_[j][1].apply(x, training, true);
      x = upsample2(x);
      x = concat_channels(x, skips[static_cast<std::size_t>(3 - j)]);
    }
    x = head_[0].apply(x, training, true);
    x = head_[1].apply(x, training, true);
    return head_[2].apply(x, training, false);  // linear output
  }

  const GeneratorSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

 private:
  GeneratorSpec spec_;
  ParamSet<T> params_;
  std::array<std::array<ConvLayer<T>, 2>, 4> enc_;
  std::array<std::array<ConvLayer<T>, 2>, 4> dec_;
  std::array<ConvLayer<T>, 3> head_;
};

struct DiscriminatorSpec {
  int base_width = 32;
  int input_channels = 2;  // L plus one chrominance plane
  int image_size = 64;     // fixes the flatten/dense geometry
  bool batchnorm = false;
};

// Four alternating conv/pool blocks, one more convolution (1x1, valid), a
// flatten, and a dense layer squashed through a sigmoid. Output is one
// probability per batch element, strictly inside (0,1).
template <typename T>
class Discriminator {
 public:
  Discriminator(DiscriminatorSpec spec, std::uint64_t seed) : spec_(spec) {
    if (spec.image_size < 16 || spec.image_size % 16 != 0) {
      throw PreconditionError("discriminator image_size must be a multiple "
                              "of 16, got " + std::to_string(spec.image_size));
    }
    RandomStream rs(derive_seed(seed, stream::kParamInit));
    const std::int64_t base = spec.base_width;
    for (int i = 0; i < 4; ++i) {
      const std::int64_t cin =
          i == 0 ? spec.input_channels : base << (i - 1);
      blocks_[i] = ConvLayer<T>::make(params_, "block" + std::to_string(i + 1) +
                                      ".conv", cin, base << i, 3,
                                      spec.batchnorm, rs);
    }
    final_conv_ = ConvLayer<T>::make(params_, "final.conv", base << 3,
                                     base << 3, 1, false, rs);
    const std::int64_t side = spec.image_size / 16;
    flat_size_ = (base << 3) * side * side;
    Tensor<T> w({flat_size_, 1});
    detail::init_uniform(w, flat_size_, rs);
    dense_w_ = params_.add("dense.weight", std::move(w));
    dense_b_ = params_.add("dense.bias", Tensor<T>({1}));
  }

  // L, chroma: [B,1,S,S] with S equal to the configured image_size.
  Tensor<T> forward(const Tensor<T>& L, const Tensor<T>& chroma,
                    bool training = false) const {
    detail::check_rank(L, 4, "discriminator L input");
    detail::check_rank(chroma, 4, "discriminator chroma input");
    if (L.shape() != chroma.shape()) {
      throw ShapeError("discriminator inputs disagree: L is " +
                       shape_str(L.shape()) + ", chroma is " +
                       shape_str(chroma.shape()));
    }
    if (L.dim(2) != spec_.image_size || L.dim(3) != spec_.image_size) {
      throw ShapeError("discriminator expects " +
                       std::to_string(spec_.image_size) + "x" +
                       std::to_string(spec_.image_size) + " inputs, got " +
                       std::to_string(L.dim(2)) + "x" +
                       std::to_string(L.dim(3)));
    }
    Tensor<T> x = concat_channels(L, chroma);
    for (int i = 0; i < 4; ++i) {
      x = blocks_[i].apply(x, training, true);
      x = maxpool2(x);
    }
    x = final_conv_.apply(x, training, true, Padding::kValid);
    x = flatten(x);
    return sigmoid(dense(x, dense_w_, dense_b_));
  }

  const DiscriminatorSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

 private:
  DiscriminatorSpec spec_;
  ParamSet<T> params_;
  std::array<ConvLayer<T>, 4> blocks_;
  ConvLayer<T> final_conv_;
  Tensor<T> dense_w_, dense_b_;
  std::int64_t flat_size_ = 0;
};

struct ExtractorSpec {
  int base_width = 8;
  int feature_dim = 32;
  int image_size = 64;
};

// Small trainable stand-in for a pretrained classification backbone: three
// conv/pool blocks and a dense projection to a fixed-length feature vector.
template <typename T>
class FeatureExtractor {
 public:
  FeatureExtractor(ExtractorSpec spec, std::uint64_t seed) : spec_(spec) {
    RandomStream rs(derive_seed(seed, stream::kParamInit));
    const std::int64_t base = spec.base_width;
    for (int i = 0; i < 3; ++i) {
      const std::int64_t cin = i == 0 ? 1 : base << (i - 1);
      blocks_[i] = ConvLayer<T>::make(params_, "block" + std::to_string(i + 1) +
                                      ".conv", cin, base << i, 3, false, rs);
    }
    const std::int64_t side = spec.image_size / 8;
    flat_size_ = (base << 2) * side * side;
    Tensor<T> w({flat_size_, spec.feature_dim});
    detail::init_uniform(w, flat_size_, rs);
    dense_w_ = params_.add("dense.weight", std::move(w));
    dense_b_ = params_.add("dense.bias", Tensor<T>({spec.feature_dim}));
  }

  // L: [B,1,S,S] -> features [B,feature_dim].
  Tensor<T> forward(const Tensor<T>& L, bool training = false) const {
    detail::check_rank(L, 4, "extractor input");
    if (L.dim(2) != spec_.image_size || L.dim(3) != spec_.image_size) {
      throw ShapeError("extractor expects " + std::to_string(spec_.image_size) +
                       "x" + std::to_string(spec_.image_size) +
                       " inputs, got " + std::to_string(L.dim(2)) + "x" +
                       std::to_string(L.dim(3)));
    }
    Tensor<T> x = L;
    for (int i = 0; i < 3; ++i) {
      x = blocks_[i].apply(x, training, true);
      x = maxpool2(x);
    }
    return relu(dense(flatten(x), dense_w_, dense_b_));
  }

  const ExtractorSpec& spec() const { return spec_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

 private:
  ExtractorSpec spec_;
  ParamSet<T> params_;
  std::array<ConvLayer<T>, 3> blocks_;
  Tensor<T> dense_w_, dense_b_;
  std::int64_t flat_size_ = 0;
};

// One adversarial pair for one chrominance channel, plus the optional
// global-feature branch in general mode.
template <typename T>
struct ChannelGan {
  ChannelTarget channel;
  Generator<T> gen;
  Discriminator<T> disc;
  std::optional<FeatureExtractor<T>> extractor;

  // Global features for a batch, or nullopt in makeup mode.
  std::optional<Tensor<T>> features(const Tensor<T>& L, bool training) const {
    if (!extractor) return std::nullopt;
    return extractor->forward(L, training);
  }
};

// The full trained artifact: two independent channel GANs sharing nothing
// but the data pipeline.
template <typename T>
class Model {
 public:
  static Model build(const TrainConfig& config) {
    config.validate();
    return Model(config);
  }

  const TrainConfig& config() const { return config_; }

  ChannelGan<T>& gan(ChannelTarget c) {
    return c == ChannelTarget::A ? *gan_a_ : *gan_b_;
  }
  const ChannelGan<T>& gan(ChannelTarget c) const {
    return c == ChannelTarget::A ? *gan_a_ : *gan_b_;
  }

  // Stable enumeration of every named tensor for persistence, prefixed by
  // its owning component.
  std::vector<std::pair<std::string, typename ParamSet<T>::Item*>>
  named_items() {
    std::vector<std::pair<std::string, typename ParamSet<T>::Item*>> out;
    for (ChannelTarget c : {ChannelTarget::A, ChannelTarget::B}) {
      ChannelGan<T>& g = gan(c);
      const std::string suffix = c == ChannelTarget::A ? "_a." : "_b.";
      for (auto& item : g.gen.params().items())
        out.emplace_back("gen" + suffix + item.name, &item);
      for (auto& item : g.disc.params().items())
        out.emplace_back("disc" + suffix + item.name, &item);
      if (g.extractor) {
        for (auto& item : g.extractor->params().items())
          out.emplace_back("ext" + suffix + item.name, &item);
      }
    }
    return out;
  }

 private:
  explicit Model(const TrainConfig& config) : config_(config) {
    const bool general = config.mode == Mode::kGeneral;
    GeneratorSpec gspec{config.width, 2, 1,
                        general ? config.feature_dim : 0, config.batchnorm};
    DiscriminatorSpec dspec{config.width, 2, config.image_size,
                            config.batchnorm};
    ExtractorSpec espec{config.extractor_width, config.feature_dim,
                        config.image_size};
    for (ChannelTarget c : {ChannelTarget::A, ChannelTarget::B}) {
      const std::uint64_t tag = channel_tag(c);
      auto gan = std::make_unique<ChannelGan<T>>(ChannelGan<T>{
          c,
          Generator<T>(gspec, derive_seed(config.seed, stream::kParamInit,
                                          tag, 0)),
          Discriminator<T>(dspec, derive_seed(config.seed, stream::kParamInit,
                                              tag, 1)),
          std::nullopt});
      if (general) {
        gan->extractor.emplace(espec, derive_seed(config.seed,
                                                  stream::kParamInit, tag, 2));
      }
      (c == ChannelTarget::A ? gan_a_ : gan_b_) = std::move(gan);
    }
  }

  TrainConfig config_;
  std::unique_ptr<ChannelGan<T>> gan_a_, gan_b_;
};

}  // namespace chroma
