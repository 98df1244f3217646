#ifndef SSSA_IO_HPP
#define SSSA_IO_HPP

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sssa/blocks.hpp"
#include "sssa/tensor.hpp"
#include "sssa/version.hpp"

namespace sssa {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  std::size_t epoch = 0;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  ModelConfig config;
  ModelParams params;
  CheckpointMeta meta;
};

namespace io_detail {

// Tensors are stored as nested numeric arrays; the shape is the nesting.
inline nlohmann::json tensor_to_json(const RealTensor& t) {
  const std::function<nlohmann::json(std::size_t, std::size_t, std::size_t)> nest =
      [&](std::size_t axis, std::size_t offset, std::size_t span) -> nlohmann::json {
    nlohmann::json arr = nlohmann::json::array();
    if (axis + 1 == t.rank()) {
      for (std::size_t i = 0; i < t.shape[axis]; ++i) arr.push_back(t.data[offset + i]);
      return arr;
    }
    const std::size_t child = span / t.shape[axis];
    for (std::size_t i = 0; i < t.shape[axis]; ++i)
      arr.push_back(nest(axis + 1, offset + i * child, child));
    return arr;
  };
  return nest(0, 0, t.numel());
}

inline RealTensor tensor_from_json(const nlohmann::json& j, const std::string& name) {
  Shape shape;
  const nlohmann::json* level = &j;
  while (level->is_array()) {
    shape.push_back(level->size());
    if (level->empty())
      throw CheckpointError("corrupt checkpoint: tensor '" + name + "' has an empty axis");
    level = &(*level)[0];
  }
  if (shape.empty())
    throw CheckpointError("corrupt checkpoint: tensor '" + name + "' is not an array");

  RealTensor out(shape);
  std::size_t cursor = 0;
  const std::function<void(const nlohmann::json&, std::size_t)> fill =
      [&](const nlohmann::json& node, std::size_t axis) {
        if (!node.is_array() || node.size() != shape[axis])
          throw CheckpointError("corrupt checkpoint: tensor '" + name + "' is ragged");
        for (const auto& child : node) {
          if (axis + 1 == shape.size()) {
            if (!child.is_number())
              throw CheckpointError("corrupt checkpoint: tensor '" + name + "' has a non-number");
            const double v = child.get<double>();
            if (!std::isfinite(v))
              throw CheckpointError("corrupt checkpoint: tensor '" + name +
                                    "' has non-finite values");
            out.data[cursor++] = v;
          } else {
            fill(child, axis + 1);
          }
        }
      };
  fill(j, 0);
  return out;
}

inline const char* variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::SsaBaseline: return "ssa-baseline";
    case AttentionVariant::SssaV1: return "sssa-v1";
    default: return "sssa-v2";
  }
}

inline AttentionVariant variant_from_name(const std::string& s) {
  if (s == "ssa-baseline") return AttentionVariant::SsaBaseline;
  if (s == "sssa-v1") return AttentionVariant::SssaV1;
  if (s == "sssa-v2") return AttentionVariant::SssaV2;
  throw ConfigError("unknown attention variant '" + s + "'");
}

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"t_steps", cfg.t_steps},
          {"in_channels", cfg.in_channels},
          {"image_hw", cfg.image_hw},
          {"stem_kernel", cfg.stem_kernel},
          {"stem_channels", cfg.stem_channels},
          {"dim", cfg.dim},
          {"blocks", cfg.blocks},
          {"classes", cfg.classes},
          {"variant", variant_name(cfg.variant)},
          {"alpha_mode", cfg.alpha_mode == AlphaMode::Learned ? "learned" : "computed"},
          {"mw_diag_clamp", cfg.mw_diag_clamp},
          {"lif", {{"tau", cfg.lif.tau}, {"v_th", cfg.lif.v_th}, {"v_reset", cfg.lif.v_reset}}},
          {"surrogate_width", cfg.surrogate.width}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.t_steps = j.at("t_steps").get<std::size_t>();
  cfg.in_channels = j.at("in_channels").get<std::size_t>();
  cfg.image_hw = j.at("image_hw").get<std::size_t>();
  cfg.stem_kernel = j.at("stem_kernel").get<std::size_t>();
  cfg.stem_channels = j.at("stem_channels").get<std::size_t>();
  cfg.dim = j.at("dim").get<std::size_t>();
  cfg.blocks = j.at("blocks").get<std::size_t>();
  cfg.classes = j.at("classes").get<std::size_t>();
  cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  cfg.alpha_mode =
      j.at("alpha_mode").get<std::string>() == "learned" ? AlphaMode::Learned : AlphaMode::Computed;
  cfg.mw_diag_clamp = j.at("mw_diag_clamp").get<double>();
  cfg.lif.tau = j.at("lif").at("tau").get<double>();
  cfg.lif.v_th = j.at("lif").at("v_th").get<double>();
  cfg.lif.v_reset = j.at("lif").at("v_reset").get<double>();
  cfg.surrogate.width = j.at("surrogate_width").get<double>();
  return cfg;
}

}

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg, ModelParams& params,
                            const CheckpointMeta& meta = {}) {
  nlohmann::json j;
  j["format_version"] = kCheckpointVersion;
  j["artifact_version"] = kVersion;
  j["model"] = io_detail::config_to_json(cfg);
  j["meta"] = {{"epoch", meta.epoch}, {"seed", meta.seed}};
  nlohmann::json tensors = nlohmann::json::object();
  nlohmann::json scalars = nlohmann::json::object();
  visit_params(
      params, [&](const std::string& name, RealTensor& t) { tensors[name] = io_detail::tensor_to_json(t); },
      [&](const std::string& name, double& s) { scalars[name] = s; });
  visit_running_stats(
      params, [&](const std::string& name, RealTensor& t) { tensors[name] = io_detail::tensor_to_json(t); });
  j["tensors"] = std::move(tensors);
  j["scalars"] = std::move(scalars);

  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot open '" + path + "' for writing");
  out << j.dump(1) << "\n";
}

// Loads and fully validates a checkpoint: format version, every tensor shape
// against the stored config, and the saccadic invariants (triangularity,
// diagonal clamp, positive alpha).
inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open '" + path + "' for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint: not valid JSON: ") + e.what());
  }

  const int version = j.value("format_version", -1);
  if (version != kCheckpointVersion)
    throw MigrationError("unsupported checkpoint format_version " + std::to_string(version) +
                         " (this reader supports version " + std::to_string(kCheckpointVersion) +
                         "); no migration path is available");

  Checkpoint ckpt;
  ckpt.version = version;
  ckpt.config = io_detail::config_from_json(j.at("model"));
  ckpt.config.validate();
  ckpt.meta.epoch = j.at("meta").value("epoch", std::size_t{0});
  ckpt.meta.seed = j.at("meta").value("seed", std::uint64_t{0});

  // Reference layout for shape checking.
  RngState shape_rng(0);
  ckpt.params = init_model_params(ckpt.config, shape_rng);

  const auto& tensors = j.at("tensors");
  const auto& scalars = j.at("scalars");
  const auto load_tensor = [&](const std::string& name, RealTensor& dst) {
    if (!tensors.contains(name))
      throw CheckpointError("corrupt checkpoint: missing tensor '" + name + "'");
    RealTensor t = io_detail::tensor_from_json(tensors.at(name), name);
    if (t.shape != dst.shape)
      throw CheckpointError("corrupt checkpoint: tensor '" + name + "' has shape " +
                            shape_str(t.shape) + ", expected " + shape_str(dst.shape));
    dst = std::move(t);
  };
  visit_params(
      ckpt.params, load_tensor,
      [&](const std::string& name, double& dst) {
        if (!scalars.contains(name))
          throw CheckpointError("corrupt checkpoint: missing scalar '" + name + "'");
        dst = scalars.at(name).get<double>();
      });
  visit_running_stats(ckpt.params, load_tensor);

  for (std::size_t b = 0; b < ckpt.params.blocks.size(); ++b) {
    const auto& sac = ckpt.params.blocks[b].saccade;
    const std::size_t t = sac.t_steps();
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t jj = i + 1; jj < t; ++jj)
        if (sac.m_w.at(i, jj) != 0.0)
          throw CheckpointError("corrupt checkpoint: block " + std::to_string(b) +
                                " mixer is not lower triangular");
      if (sac.m_w.at(i, i) < ckpt.config.mw_diag_clamp)
        throw CheckpointError("corrupt checkpoint: block " + std::to_string(b) +
                              " mixer diagonal below the clamp");
    }
    if (!(sac.alpha > 0.0))
      throw CheckpointError("corrupt checkpoint: block " + std::to_string(b) +
                            " alpha is not positive");
  }
  return ckpt;
}

// IDX image container (magic 0x00000803): big-endian dims, then row-major
// unsigned bytes. Intensities are returned scaled to [0, 1].
inline std::vector<RealTensor> read_idx_images(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open IDX file '" + path + "'");
  const auto read_u32 = [&]() {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw ConfigError("IDX file truncated");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
  };
  if (read_u32() != 0x00000803u)
    throw ConfigError("IDX magic mismatch: expected 0x00000803 (unsigned-byte images)");
  const std::uint32_t count = read_u32(), h = read_u32(), w = read_u32();
  std::vector<RealTensor> out;
  out.reserve(count);
  std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
  for (std::uint32_t i = 0; i < count; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw ConfigError("IDX file truncated in image " + std::to_string(i));
    RealTensor img({1, h, w});
    for (std::size_t e = 0; e < buf.size(); ++e) img.data[e] = buf[e] / 255.0;
    out.push_back(std::move(img));
  }
  return out;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
  out << "\n";
  out.precision(17);
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << "\n";
  }
}

}

#endif
