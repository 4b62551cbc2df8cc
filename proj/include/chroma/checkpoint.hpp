#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "chroma/config.hpp"
#include "chroma/errors.hpp"
#include "chroma/tensor.hpp"

namespace chroma {

inline constexpr char kCheckpointMagic[] = "CHROMACKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Everything a training run needs to continue exactly where it stopped:
// config snapshot, progress counters, and every named tensor (parameters,
// batchnorm state, optimizer velocities).
struct CheckpointData {
  TrainConfig config;
  std::int64_t epoch = 0;    // completed epochs
  std::int64_t steps_a = 0;  // per-channel step counters
  std::int64_t steps_b = 0;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
      if (n == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size)
      : data_(data), size_(size) {}

  std::size_t offset() const { return off_; }
  std::size_t remaining() const { return size_ - off_; }

  void take(void* dst, std::size_t n) {
    if (n > remaining()) throw FormatError("checkpoint truncated");
    std::memcpy(dst, data_ + off_, n);
    off_ += n;
  }

  std::uint32_t u32() {
    std::uint8_t b[4];
    take(b, 4);
    return static_cast<std::uint32_t>(b[0]) |
           static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 |
           static_cast<std::uint32_t>(b[3]) << 24;
  }

  std::uint64_t u64() {
    std::uint64_t v = 0;
    std::uint8_t b[8];
    take(b, 8);
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }

  std::string str(std::size_t n) {
    if (n > remaining()) throw FormatError("checkpoint truncated");
    std::string s(reinterpret_cast<const char*>(data_ + off_), n);
    off_ += n;
    return s;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t off_ = 0;
};

inline nlohmann::json config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"batch_size", c.batch_size},
                        {"batchnorm", c.batchnorm},
                        {"epochs", c.epochs},
                        {"extractor_width", c.extractor_width},
                        {"feature_dim", c.feature_dim},
                        {"image_size", c.image_size},
                        {"learning_rate", c.learning_rate},
                        {"mode", mode_name(c.mode)},
                        {"momentum", c.momentum},
                        {"seed", c.seed},
                        {"w_adv", c.w_adv},
                        {"width", c.width}};
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.batchnorm = j.at("batchnorm").get<bool>();
  c.epochs = j.at("epochs").get<int>();
  c.extractor_width = j.at("extractor_width").get<int>();
  c.feature_dim = j.at("feature_dim").get<int>();
  c.image_size = j.at("image_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.mode = mode_from_name(j.at("mode").get<std::string>());
  c.momentum = j.at("momentum").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.w_adv = j.at("w_adv").get<double>();
  c.width = j.at("width").get<int>();
  return c;
}

}  // namespace detail

// Layout: magic, u32 format version, length-prefixed UTF-8 metadata, then
// per-tensor records (u64 name length, name bytes, u64 rank, u64 dims,
// raw little-endian f32 data), and a trailing CRC-32 of all preceding bytes.
inline void save_checkpoint(const std::filesystem::path& path,
                            const CheckpointData& ckpt) {
  std::vector<std::uint8_t> buf;
  const std::size_t magic_len = sizeof(kCheckpointMagic) - 1;
  buf.insert(buf.end(), kCheckpointMagic, kCheckpointMagic + magic_len);
  detail::put_u32(buf, kCheckpointVersion);

  nlohmann::json meta{{"config", detail::config_to_json(ckpt.config)},
                      {"epoch", ckpt.epoch},
                      {"steps_a", ckpt.steps_a},
                      {"steps_b", ckpt.steps_b}};
  const std::string meta_text = meta.dump();
  detail::put_u64(buf, meta_text.size());
  buf.insert(buf.end(), meta_text.begin(), meta_text.end());

  for (const auto& [name, tensor] : ckpt.tensors) {
    detail::put_u64(buf, name.size());
    buf.insert(buf.end(), name.begin(), name.end());
    detail::put_u64(buf, static_cast<std::uint64_t>(tensor.rank()));
    for (std::int64_t d : tensor.shape()) {
      detail::put_u64(buf, static_cast<std::uint64_t>(d));
    }
    for (std::int64_t i = 0; i < tensor.size(); ++i) {
      detail::put_f32(buf, tensor.data()[i]);
    }
  }

  const auto crc = static_cast<std::uint32_t>(
      ::crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
  detail::put_u32(buf, crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write on checkpoint " + path.string());
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in) throw IoError("short read on checkpoint " + path.string());

  const std::size_t magic_len = sizeof(kCheckpointMagic) - 1;
  if (buf.size() < magic_len + 8 ||
      std::memcmp(buf.data(), kCheckpointMagic, magic_len) != 0) {
    throw FormatError("not a checkpoint file: " + path.string());
  }
  const auto stored_crc = [&] {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | buf[buf.size() - 4 + i];
    return v;
  }();
  const auto computed_crc = static_cast<std::uint32_t>(
      ::crc32(0L, buf.data(), static_cast<uInt>(buf.size() - 4)));
  if (stored_crc != computed_crc) {
    throw FormatError("checkpoint checksum mismatch in " + path.string());
  }

  detail::ByteReader r(buf.data(), buf.size() - 4);
  r.str(magic_len);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) +
                      ", expected " + std::to_string(kCheckpointVersion));
  }

  CheckpointData ckpt;
  const std::uint64_t meta_len = r.u64();
  nlohmann::json meta = nlohmann::json::parse(r.str(meta_len));
  ckpt.config = detail::config_from_json(meta.at("config"));
  ckpt.epoch = meta.at("epoch").get<std::int64_t>();
  ckpt.steps_a = meta.at("steps_a").get<std::int64_t>();
  ckpt.steps_b = meta.at("steps_b").get<std::int64_t>();

  while (r.remaining() > 0) {
    const std::uint64_t name_len = r.u64();
    std::string name = r.str(name_len);
    const std::uint64_t rank = r.u64();
    if (rank > 8) throw FormatError("implausible tensor rank in checkpoint");
    Shape shape(rank);
    for (std::uint64_t i = 0; i < rank; ++i) {
      shape[i] = static_cast<std::int64_t>(r.u64());
    }
    Tensor<float> t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) {
      t.data()[i] = std::bit_cast<float>(r.u32());
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

}  // namespace chroma
