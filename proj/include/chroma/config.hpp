#pragma once

#include <cstdint>
#include <string>

#include "chroma/errors.hpp"

namespace chroma {

// Makeup mode drops the global-feature branch; the generator then depends
// only on (L, z) and its parameters. General mode fuses a trainable
// global-feature vector at the bottleneck.
enum class Mode { kMakeup, kGeneral };

inline std::string mode_name(Mode m) {
  return m == Mode::kMakeup ? "makeup" : "general";
}

inline Mode mode_from_name(const std::string& s) {
  if (s == "makeup") return Mode::kMakeup;
  if (s == "general") return Mode::kGeneral;
  throw ConfigError("mode must be `makeup` or `general`, got `" + s + "`");
}

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 16;
  double w_adv = 0.01;
  int epochs = 1;
  std::uint64_t seed = 0;
  int image_size = 64;
  Mode mode = Mode::kMakeup;
  int width = 32;            // base channel width of both networks
  int extractor_width = 8;   // general mode only
  int feature_dim = 32;      // general mode only
  bool batchnorm = false;

  void validate() const {
    if (!(learning_rate > 0.0)) {
      throw ConfigError("learning_rate must be > 0, got " +
                        std::to_string(learning_rate));
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw ConfigError("momentum must lie in [0,1), got " +
                        std::to_string(momentum));
    }
    if (batch_size < 1) {
      throw ConfigError("batch_size must be >= 1, got " +
                        std::to_string(batch_size));
    }
    if (!(w_adv >= 0.0)) {
      throw ConfigError("w_adv must be >= 0, got " + std::to_string(w_adv));
    }
    if (epochs < 1) {
      throw ConfigError("epochs must be >= 1, got " + std::to_string(epochs));
    }
    if (image_size < 16 || image_size % 16 != 0) {
      throw ConfigError("image_size must be a positive multiple of 16, got " +
                        std::to_string(image_size));
    }
    if (width < 1) {
      throw ConfigError("width must be >= 1, got " + std::to_string(width));
    }
    if (extractor_width < 1) {
      throw ConfigError("extractor_width must be >= 1, got " +
                        std::to_string(extractor_width));
    }
    if (feature_dim < 1) {
      throw ConfigError("feature_dim must be >= 1, got " +
                        std::to_string(feature_dim));
    }
  }
};

}  // namespace chroma
