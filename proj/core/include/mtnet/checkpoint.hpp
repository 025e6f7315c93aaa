#ifndef MTNET_CHECKPOINT_HPP_
#define MTNET_CHECKPOINT_HPP_

#include <cstring>
#include <fstream>

#include "mtnet/config.hpp"

namespace mtnet {

// "MTCK" model container, version 1:
//   magic "MTCK" | u32 version | u32 config length | config JSON (model
//   config + input dims) | u32 tensor count | per tensor in declaration
//   order: u32 rank, u32 dims..., f32 little-endian payload.
namespace detail {

constexpr char kCheckpointMagic[4] = {'M', 'T', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void ck_write(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T ck_read(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is)
    throw DataError(std::string("checkpoint truncated while reading ") + what);
  return v;
}

}  // namespace detail

template <class T>
void save_checkpoint(const MultiTaskModel<T>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint " + path + " for writing");
  nlohmann::json cfg;
  cfg["model"] = model.cfg;
  cfg["input_dims"] = model.input_dims;
  const std::string cfg_str = cfg.dump();
  os.write(detail::kCheckpointMagic, 4);
  detail::ck_write<std::uint32_t>(os, detail::kCheckpointVersion);
  detail::ck_write<std::uint32_t>(os, std::uint32_t(cfg_str.size()));
  os.write(cfg_str.data(), std::streamsize(cfg_str.size()));
  const auto params = model.params();
  detail::ck_write<std::uint32_t>(os, std::uint32_t(params.size()));
  for (const auto& [name, p] : params) {
    detail::ck_write<std::uint32_t>(os, std::uint32_t(p->shape.size()));
    for (int d : p->shape) detail::ck_write<std::uint32_t>(os, std::uint32_t(d));
    for (T v : p->data) detail::ck_write<float>(os, float(v));
  }
  if (!os) throw DataError("write failure on checkpoint " + path);
}

template <class T>
MultiTaskModel<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, detail::kCheckpointMagic, 4) != 0)
    throw DataError("bad magic in " + path + ": not an MTCK checkpoint");
  const auto version = detail::ck_read<std::uint32_t>(is, "version");
  if (version != detail::kCheckpointVersion)
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  const auto cfg_len = detail::ck_read<std::uint32_t>(is, "config length");
  std::string cfg_str(cfg_len, '\0');
  is.read(cfg_str.data(), cfg_len);
  if (!is) throw DataError("checkpoint truncated while reading config");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(cfg_str);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("corrupt checkpoint config: ") + e.what());
  }
  MultiTaskConfig mcfg = cfg.at("model").get<MultiTaskConfig>();
  std::array<int, 3> dims = cfg.at("input_dims").get<std::array<int, 3>>();
  // the stem rewrites branch in_channels during build; restore the original
  if (mcfg.shared_stem) {
    mcfg.synthesis.in_channels = kInputChannels;
    mcfg.diagnosis.in_channels = kInputChannels;
  }
  auto model = build_multitask<T>(mcfg, dims, 0);
  const auto params = model.params();
  const auto count = detail::ck_read<std::uint32_t>(is, "tensor count");
  if (count != params.size())
    throw DataError("checkpoint/config mismatch: expected " +
                    std::to_string(params.size()) + " tensors, file has " +
                    std::to_string(count));
  for (const auto& [name, p] : params) {
    const auto rank = detail::ck_read<std::uint32_t>(is, "tensor rank");
    Shape shape(rank);
    for (auto& d : shape)
      d = int(detail::ck_read<std::uint32_t>(is, "tensor dims"));
    if (shape != p->shape)
      throw DataError("checkpoint tensor " + name + " has shape " +
                      shape_str(shape) + ", model expects " +
                      shape_str(p->shape));
    for (auto& v : p->data) v = T(detail::ck_read<float>(is, "tensor payload"));
  }
  return model;
}

}  // namespace mtnet

#endif  // MTNET_CHECKPOINT_HPP_
