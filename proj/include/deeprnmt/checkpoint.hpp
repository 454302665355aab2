#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "deeprnmt/config.hpp"
#include "deeprnmt/model.hpp"

namespace deeprnmt {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'D', 'E', 'E', 'P', 'R', 'N', 'M', 'T'};
constexpr uint64_t kCheckpointVersion = 1;

inline void write_u64(std::ostream& out, uint64_t x) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void write_f64(std::ostream& out, double x) {
  write_u64(out, std::bit_cast<uint64_t>(x));
}

inline uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw CheckpointError("checkpoint: unexpected end of file");
  uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<uint64_t>(b[i]) << (8 * i);
  return x;
}

inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_u64(in)); }

}  // namespace detail

// Binary layout: magic, version, canonical config text, then one record per
// tensor (name length + bytes, rank, extents, raw 64-bit floats), all
// integers and floats little-endian 64-bit.
inline void save_checkpoint(const ParameterSet& params, const ModelConfig& cfg,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint file: " + path);
  out.write(detail::kCheckpointMagic, 8);
  detail::write_u64(out, detail::kCheckpointVersion);
  const std::string config_text = model_config_text(cfg);
  detail::write_u64(out, config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  detail::write_u64(out, params.size());
  for (const std::string& name : params.names()) {
    const Tensor& t = params.at(name);
    detail::write_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u64(out, t.shape().size());
    for (int64_t e : t.shape()) detail::write_u64(out, static_cast<uint64_t>(e));
    for (Real x : t.values()) detail::write_f64(out, static_cast<double>(x));
  }
  if (!out) throw CheckpointError("write failed for checkpoint file: " + path);
}

struct Checkpoint {
  ModelConfig config;
  ParameterSet params;
};

// Loads and validates against the embedded config's parameter plan; the
// first record that does not line up is named in the error.
inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint file: " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::kCheckpointMagic, 8) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  const uint64_t version = detail::read_u64(in);
  if (version != detail::kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const uint64_t config_len = detail::read_u64(in);
  std::string config_text(config_len, '\0');
  if (!in.read(config_text.data(), static_cast<std::streamsize>(config_len)))
    throw CheckpointError("checkpoint: unexpected end of file");

  Checkpoint ckpt;
  ckpt.config = model_config_parse(config_text);
  const std::vector<ParamSpec> plan = parameter_plan(ckpt.config);

  const uint64_t count = detail::read_u64(in);
  if (count != plan.size())
    throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors but the config expects " +
                          std::to_string(plan.size()));
  for (size_t i = 0; i < plan.size(); ++i) {
    const uint64_t name_len = detail::read_u64(in);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name_len)))
      throw CheckpointError("checkpoint: unexpected end of file");
    const uint64_t rank = detail::read_u64(in);
    Shape shape(rank);
    for (uint64_t r = 0; r < rank; ++r) shape[r] = static_cast<int64_t>(detail::read_u64(in));
    if (name != plan[i].name || shape != plan[i].shape)
      throw CheckpointError("checkpoint tensor '" + name + "' " + shape_str(shape) +
                            " does not match expected '" + plan[i].name + "' " +
                            shape_str(plan[i].shape));
    Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
    for (Real& x : t.values()) x = static_cast<Real>(detail::read_f64(in));
    ckpt.params.add(name, std::move(t));
  }
  return ckpt;
}

}  // namespace deeprnmt
