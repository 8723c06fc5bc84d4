#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "deft/model.hpp"

namespace deft {

// Checkpoint: "DEFTCKP1", u32 version, net channels c1..c4+dim (i32 x5),
// variant u8, sddh K,M (i32), head tag u8, u64 seed, u32 param count, then
// per parameter: u16 name length, name bytes, u8 rank, i32 dims, f64 data.
// Raw doubles, little-endian; save/load round-trips bitwise.

namespace detail {

inline constexpr char kCkptMagic[8] = {'D', 'E', 'F', 'T', 'C', 'K', 'P', '1'};

template <typename T>
void ckpt_write(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T ckpt_read(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const ModelConfig& cfg = model.config();
  out.write(detail::kCkptMagic, 8);
  detail::ckpt_write<uint32_t>(out, 1);
  for (int v : {cfg.net.c1, cfg.net.c2, cfg.net.c3, cfg.net.c4, cfg.net.dim})
    detail::ckpt_write<int32_t>(out, v);
  detail::ckpt_write<uint8_t>(out, static_cast<uint8_t>(cfg.net.tag()));
  detail::ckpt_write<int32_t>(out, cfg.sddh_k);
  detail::ckpt_write<int32_t>(out, cfg.sddh_m);
  detail::ckpt_write<uint8_t>(out, static_cast<uint8_t>(head_tag(cfg.head_type)));
  detail::ckpt_write<uint64_t>(out, cfg.seed);

  const auto& entries = model.params().entries();
  detail::ckpt_write<uint32_t>(out, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, var] : entries) {
    detail::ckpt_write<uint16_t>(out, static_cast<uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const Tensor& t = var.value();
    detail::ckpt_write<uint8_t>(out, static_cast<uint8_t>(t.rank()));
    for (int d : t.shape()) detail::ckpt_write<int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(sizeof(double) * t.size()));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed");
}

inline std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kCkptMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic");
  if (detail::ckpt_read<uint32_t>(in) != 1)
    throw std::runtime_error("load_checkpoint: unsupported version");

  ModelConfig cfg;
  cfg.net.c1 = detail::ckpt_read<int32_t>(in);
  cfg.net.c2 = detail::ckpt_read<int32_t>(in);
  cfg.net.c3 = detail::ckpt_read<int32_t>(in);
  cfg.net.c4 = detail::ckpt_read<int32_t>(in);
  cfg.net.dim = detail::ckpt_read<int32_t>(in);
  cfg.net.variant = static_cast<Variant>(detail::ckpt_read<uint8_t>(in));
  cfg.sddh_k = detail::ckpt_read<int32_t>(in);
  cfg.sddh_m = detail::ckpt_read<int32_t>(in);
  cfg.head_type = head_from_tag(static_cast<char>(detail::ckpt_read<uint8_t>(in)));
  cfg.seed = detail::ckpt_read<uint64_t>(in);

  auto model = std::make_unique<Model>(cfg);
  uint32_t count = detail::ckpt_read<uint32_t>(in);
  auto& entries = model->params().entries();
  if (count != entries.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch");
  for (auto& [name, var] : entries) {
    uint16_t len = detail::ckpt_read<uint16_t>(in);
    std::string got(len, '\0');
    in.read(got.data(), len);
    if (got != name)
      throw std::runtime_error("load_checkpoint: parameter order mismatch: " +
                               got + " vs " + name);
    uint8_t rank = detail::ckpt_read<uint8_t>(in);
    std::vector<int> shape;
    for (int i = 0; i < rank; ++i) shape.push_back(detail::ckpt_read<int32_t>(in));
    if (shape != var.value().shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    Tensor& t = var.mutable_value();
    in.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(double) * t.size()));
    if (!in) throw std::runtime_error("load_checkpoint: truncated data");
  }
  return model;
}

}  // namespace deft
