#ifndef SSSA_BLOCKS_HPP
#define SSSA_BLOCKS_HPP

#include <cmath>
#include <string>
#include <vector>

#include "sssa/attention.hpp"
#include "sssa/neurons.hpp"
#include "sssa/tensor.hpp"

namespace sssa {

struct ConvParams {
  RealTensor weights;  // [C_out, C_in, k, k]
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;

  std::size_t kernel() const { return weights.shape.at(2); }
  std::size_t out_channels() const { return weights.shape.at(0); }
  std::size_t in_channels() const { return weights.shape.at(1); }

  void validate() const {
    if (weights.rank() != 4 || weights.shape[2] != weights.shape[3])
      throw ConfigError("conv weights must be [C_out, C_in, k, k]");
    if (kernel() < 1 || stride < 1 || dilation < 1)
      throw ConfigError("conv kernel, stride and dilation must all be >= 1");
  }
};

struct BNParams {
  RealTensor gamma;         // [C]
  RealTensor beta;          // [C]
  RealTensor running_mean;  // [C]
  RealTensor running_var;   // [C]
  double epsilon = 1e-5;
  double momentum = 0.1;

  explicit BNParams(std::size_t channels = 0)
      : gamma({channels}, 1.0),
        beta({channels}, 0.0),
        running_mean({channels}, 0.0),
        running_var({channels}, 1.0) {}

  std::size_t channels() const { return gamma.numel(); }

  void validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("BN epsilon must be positive");
    for (double v : running_var.data)
      if (v < 0.0) throw ConfigError("BN running variance must be nonnegative");
  }
};

enum class BNMode { Train, Infer };

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t dilation, std::size_t pad) {
  const std::size_t span = dilation * (k - 1) + 1;
  if (in + 2 * pad < span) throw ShapeError("conv2d output extent would be < 1");
  return (in + 2 * pad - span) / stride + 1;
}

// Cross-correlation over [B, C_in, H, W] with zero padding. The leading axis
// is whatever batch flattening the caller chose (T*B in the model).
inline RealTensor conv2d(const RealTensor& x, const ConvParams& p) {
  p.validate();
  if (x.rank() != 4) throw ShapeError("conv2d expects [B, C, H, W], got " + shape_str(x.shape));
  if (x.shape[1] != p.in_channels())
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(x.shape[1]) +
                     ", weights expect " + std::to_string(p.in_channels()));
  const std::size_t batch = x.shape[0], c_in = x.shape[1], h = x.shape[2], w = x.shape[3];
  const std::size_t k = p.kernel(), c_out = p.out_channels();
  const std::size_t h_out = conv_out_extent(h, k, p.stride, p.dilation, p.padding);
  const std::size_t w_out = conv_out_extent(w, k, p.stride, p.dilation, p.padding);

  RealTensor out({batch, c_out, h_out, w_out});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < c_out; ++co)
      for (std::size_t oy = 0; oy < h_out; ++oy)
        for (std::size_t ox = 0; ox < w_out; ++ox) {
          double acc = 0.0;
          for (std::size_t ci = 0; ci < c_in; ++ci)
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * p.stride) +
                                        static_cast<std::ptrdiff_t>(ky * p.dilation) -
                                        static_cast<std::ptrdiff_t>(p.padding);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * p.stride) +
                                          static_cast<std::ptrdiff_t>(kx * p.dilation) -
                                          static_cast<std::ptrdiff_t>(p.padding);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += x.at(b, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) *
                       p.weights.at(co, ci, ky, kx);
              }
            }
          out.at(b, co, oy, ox) = acc;
        }
  return out;
}

// Batch normalization over an arbitrary channel axis. Train mode normalizes
// by the current batch statistics (biased variance) and folds them into the
// running estimates; infer mode uses the running estimates.
inline RealTensor batchnorm(const RealTensor& x, BNParams& p, BNMode mode,
                            std::size_t channel_axis = 1) {
  p.validate();
  if (channel_axis >= x.rank()) throw ShapeError("batchnorm channel axis out of range");
  const std::size_t c = x.shape[channel_axis];
  if (c != p.channels())
    throw ShapeError("batchnorm channel extent " + std::to_string(c) + " vs params " +
                     std::to_string(p.channels()));

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < channel_axis; ++i) outer *= x.shape[i];
  for (std::size_t i = channel_axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
  const double per_channel = static_cast<double>(outer * inner);

  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (mode == BNMode::Train) {
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t in = 0; in < inner; ++in)
          mean[ch] += x.data[(o * c + ch) * inner + in];
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= per_channel;
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t in = 0; in < inner; ++in) {
          const double d = x.data[(o * c + ch) * inner + in] - mean[ch];
          var[ch] += d * d;
        }
    for (std::size_t ch = 0; ch < c; ++ch) var[ch] /= per_channel;
    for (std::size_t ch = 0; ch < c; ++ch) {
      p.running_mean.data[ch] = (1.0 - p.momentum) * p.running_mean.data[ch] + p.momentum * mean[ch];
      p.running_var.data[ch] = (1.0 - p.momentum) * p.running_var.data[ch] + p.momentum * var[ch];
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = p.running_mean.data[ch];
      var[ch] = p.running_var.data[ch];
    }
  }

  RealTensor out(x.shape);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double scale = p.gamma.data[ch] / std::sqrt(var[ch] + p.epsilon);
    const double shift = p.beta.data[ch] - scale * mean[ch];
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t idx = (o * c + ch) * inner + in;
        out.data[idx] = scale * x.data[idx] + shift;
      }
  }
  if (!out.all_finite()) throw ConfigError("batchnorm produced non-finite values");
  return out;
}

// Global-local patch embedding: BN(Conv(x)) + BN(DConv(x)). Both branches
// must emit identical shapes; pad = dilation*(k-1)/2 keeps them SAME-sized.
inline RealTensor gl_sps(const RealTensor& x, const ConvParams& conv_p,
                         const ConvParams& dconv_p, BNParams& bn1, BNParams& bn2, BNMode mode) {
  RealTensor a = conv2d(x, conv_p);
  RealTensor b = conv2d(x, dconv_p);
  if (a.shape != b.shape)
    throw ConfigError("gl_sps branch shapes differ: " + shape_str(a.shape) + " vs " +
                      shape_str(b.shape));
  a = batchnorm(a, bn1, mode);
  b = batchnorm(b, bn2, mode);
  for (std::size_t i = 0; i < a.numel(); ++i) a.data[i] += b.data[i];
  return a;
}

// Single-stage model layout: stem downsample, GL-SPS embedding, a stack of
// SSSA transformer blocks, then GAP and the classification head.
struct ModelConfig {
  std::size_t t_steps = 4;
  std::size_t in_channels = 1;
  std::size_t image_hw = 16;
  std::size_t stem_kernel = 3;  // 3 for desk-scale inputs, 7 for the wide stem
  std::size_t stem_channels = 8;
  std::size_t dim = 8;
  std::size_t blocks = 1;
  std::size_t classes = 2;
  AttentionVariant variant = AttentionVariant::SssaV2;
  AlphaMode alpha_mode = AlphaMode::Learned;
  double mw_diag_clamp = 0.1;
  LIFParams lif;
  SurrogateSpec surrogate;

  std::size_t grid() const { return image_hw / 2; }
  std::size_t n_tokens() const { return grid() * grid(); }

  void validate() const {
    if (t_steps < 1 || blocks < 1 || classes < 2 || dim < 1 || stem_channels < 1)
      throw ConfigError("model dims must be positive (and classes >= 2)");
    if (image_hw < 2 || image_hw % 2 != 0)
      throw ConfigError("image size must be even and >= 2 for the stride-2 stem");
    if (stem_kernel != 3 && stem_kernel != 7)
      throw ConfigError("stem kernel must be 3 or 7");
    if (!(mw_diag_clamp > 0.0)) throw ConfigError("mixer diagonal clamp must be positive");
    lif.validate();
    surrogate.validate();
  }
};

struct BlockParams {
  ConvParams conv_q, conv_k, conv_v, conv_o;
  BNParams bn_o;
  RealTensor w_mlp;  // [D, D]
  BNParams bn_mlp;
  SaccadicParams saccade;
};

struct ModelParams {
  ConvParams stem;
  ConvParams glsps_conv, glsps_dconv;
  BNParams glsps_bn1, glsps_bn2;
  std::vector<BlockParams> blocks;
  RealTensor w_head;  // [D, classes]
  RealTensor b_head;  // [classes]
};

namespace detail {

inline RealTensor gaussian_tensor(const Shape& shape, double stddev, RngState& rng) {
  RealTensor out(shape);
  for (double& v : out.data) v = stddev * rng.next_gaussian();
  return out;
}

inline ConvParams make_conv(std::size_t c_out, std::size_t c_in, std::size_t k,
                            std::size_t stride, std::size_t dilation, std::size_t pad,
                            RngState& rng) {
  // He-style init widened for sparse spike inputs (low effective fan-in).
  const double stddev = std::sqrt(2.0 / (0.25 * static_cast<double>(c_in * k * k)));
  return ConvParams{gaussian_tensor({c_out, c_in, k, k}, stddev, rng), stride, dilation, pad};
}

}

inline ModelParams init_model_params(const ModelConfig& cfg, RngState& rng) {
  cfg.validate();
  ModelParams p;
  p.stem = detail::make_conv(cfg.stem_channels, cfg.in_channels, cfg.stem_kernel, 2, 1,
                             (cfg.stem_kernel - 1) / 2, rng);
  p.glsps_conv = detail::make_conv(cfg.dim, cfg.stem_channels, 3, 1, 1, 1, rng);
  p.glsps_dconv = detail::make_conv(cfg.dim, cfg.stem_channels, 3, 1, 2, 2, rng);
  p.glsps_bn1 = BNParams(cfg.dim);
  p.glsps_bn2 = BNParams(cfg.dim);

  const double p0 = 0.15;  // typical firing rate the thresholds are sized for
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    BlockParams blk;
    blk.conv_q = detail::make_conv(cfg.dim, cfg.dim, 3, 1, 1, 1, rng);
    blk.conv_k = detail::make_conv(cfg.dim, cfg.dim, 3, 1, 1, 1, rng);
    blk.conv_v = detail::make_conv(cfg.dim, cfg.dim, 3, 1, 1, 1, rng);
    blk.conv_o = detail::make_conv(cfg.dim, cfg.dim, 3, 1, 1, 1, rng);
    blk.bn_o = BNParams(cfg.dim);
    blk.w_mlp = detail::gaussian_tensor({cfg.dim, cfg.dim},
                                        std::sqrt(2.0 / (0.25 * static_cast<double>(cfg.dim))), rng);
    blk.bn_mlp = BNParams(cfg.dim);

    // Identity mixer plus small strictly-lower noise keeps the fold well
    // conditioned at the start of training.
    blk.saccade.m_w = RealTensor({cfg.t_steps, cfg.t_steps});
    for (std::size_t i = 0; i < cfg.t_steps; ++i) {
      blk.saccade.m_w.at(i, i) = 1.0;
      for (std::size_t j = 0; j < i; ++j) blk.saccade.m_w.at(i, j) = 0.01 * rng.next_gaussian();
    }
    blk.saccade.alpha = static_cast<double>(cfg.n_tokens()) * p0;
    blk.saccade.v_th = RealTensor({cfg.t_steps},
                                  blk.saccade.alpha * static_cast<double>(cfg.dim) * p0);
    p.blocks.push_back(std::move(blk));
  }

  p.w_head = detail::gaussian_tensor({cfg.dim, cfg.classes},
                                     std::sqrt(1.0 / static_cast<double>(cfg.dim)), rng);
  p.b_head = RealTensor({cfg.classes});
  return p;
}

// Visits every trainable tensor (scalar alpha separately); used by the
// optimizer, the checkpoint writer and the tape builder.
template <class FnTensor, class FnScalar>
void visit_params(ModelParams& p, FnTensor&& tensor_fn, FnScalar&& scalar_fn) {
  tensor_fn("stem.w", p.stem.weights);
  tensor_fn("glsps.conv.w", p.glsps_conv.weights);
  tensor_fn("glsps.dconv.w", p.glsps_dconv.weights);
  tensor_fn("glsps.bn1.gamma", p.glsps_bn1.gamma);
  tensor_fn("glsps.bn1.beta", p.glsps_bn1.beta);
  tensor_fn("glsps.bn2.gamma", p.glsps_bn2.gamma);
  tensor_fn("glsps.bn2.beta", p.glsps_bn2.beta);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    BlockParams& blk = p.blocks[b];
    tensor_fn(prefix + "conv_q.w", blk.conv_q.weights);
    tensor_fn(prefix + "conv_k.w", blk.conv_k.weights);
    tensor_fn(prefix + "conv_v.w", blk.conv_v.weights);
    tensor_fn(prefix + "conv_o.w", blk.conv_o.weights);
    tensor_fn(prefix + "bn_o.gamma", blk.bn_o.gamma);
    tensor_fn(prefix + "bn_o.beta", blk.bn_o.beta);
    tensor_fn(prefix + "mlp.w", blk.w_mlp);
    tensor_fn(prefix + "bn_mlp.gamma", blk.bn_mlp.gamma);
    tensor_fn(prefix + "bn_mlp.beta", blk.bn_mlp.beta);
    tensor_fn(prefix + "saccade.m_w", blk.saccade.m_w);
    tensor_fn(prefix + "saccade.v_th", blk.saccade.v_th);
    scalar_fn(prefix + "saccade.alpha", blk.saccade.alpha);
  }
  tensor_fn("head.w", p.w_head);
  tensor_fn("head.b", p.b_head);
}

// Non-trainable state (BN running estimates); checkpointed alongside params.
template <class FnTensor>
void visit_running_stats(ModelParams& p, FnTensor&& tensor_fn) {
  tensor_fn("glsps.bn1.running_mean", p.glsps_bn1.running_mean);
  tensor_fn("glsps.bn1.running_var", p.glsps_bn1.running_var);
  tensor_fn("glsps.bn2.running_mean", p.glsps_bn2.running_mean);
  tensor_fn("glsps.bn2.running_var", p.glsps_bn2.running_var);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    BlockParams& blk = p.blocks[b];
    tensor_fn(prefix + "bn_o.running_mean", blk.bn_o.running_mean);
    tensor_fn(prefix + "bn_o.running_var", blk.bn_o.running_var);
    tensor_fn(prefix + "bn_mlp.running_mean", blk.bn_mlp.running_mean);
    tensor_fn(prefix + "bn_mlp.running_var", blk.bn_mlp.running_var);
  }
}

namespace detail {

// Run a LIF layer along axis 0 of [T, ...]; membrane state starts at zero.
inline SpikeTensor lif_sequence(const RealTensor& x, const LIFParams& params) {
  const std::size_t t_steps = x.shape.at(0);
  std::size_t rest = x.numel() / t_steps;
  Shape slice_shape(x.shape.begin() + 1, x.shape.end());
  LIFState state{RealTensor(slice_shape)};
  SpikeTensor out(x.shape);
  for (std::size_t t = 0; t < t_steps; ++t) {
    RealTensor xt(slice_shape);
    std::copy(x.data.begin() + t * rest, x.data.begin() + (t + 1) * rest, xt.data.begin());
    LifStepResult step = lif_step(params, state, xt);
    std::copy(step.spikes.data.begin(), step.spikes.data.end(), out.data.begin() + t * rest);
    state = std::move(step.state);
  }
  return out;
}

// [T,N,D] tokens <-> [T,D,h,w] grid with n = y*w + x.
inline RealTensor tokens_to_grid(const RealTensor& u, std::size_t h, std::size_t w) {
  const std::size_t t_steps = u.shape[0], n = u.shape[1], d = u.shape[2];
  if (n != h * w) throw ShapeError("token count does not match grid");
  RealTensor out({t_steps, d, h, w});
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < d; ++c) out.at(t, c, y, x) = u.at(t, y * w + x, c);
  return out;
}

inline RealTensor grid_to_tokens(const RealTensor& g) {
  const std::size_t t_steps = g.shape[0], d = g.shape[1], h = g.shape[2], w = g.shape[3];
  RealTensor out({t_steps, h * w, d});
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        for (std::size_t c = 0; c < d; ++c) out.at(t, y * w + x, c) = g.at(t, c, y, x);
  return out;
}

inline SpikeTensor real_to_spikes(const RealTensor& r) {
  SpikeTensor out(r.shape);
  for (std::size_t i = 0; i < r.numel(); ++i) {
    if (r.data[i] != 0.0 && r.data[i] != 1.0)
      throw DomainError("tensor is not binary where spikes are required");
    out.data[i] = r.data[i] != 0.0 ? 1 : 0;
  }
  return out;
}

}

// One SSSA transformer block over token-space membrane potentials:
//   U1 = U0 + BN(Conv(SSSA(SN(U0))))
//   U2 = U1 + BN(Linear(SN(U1)))
// Residual adds stay on membrane potentials; spikes exist only between SN
// layers and the ops consuming them.
inline RealTensor sssa_block(const RealTensor& u0, const ModelConfig& cfg, BlockParams& params,
                             BNMode mode) {
  const std::size_t t_steps = u0.shape.at(0), n = u0.shape.at(1), d = u0.shape.at(2);
  if (t_steps != cfg.t_steps || n != cfg.n_tokens() || d != cfg.dim)
    throw ConfigError("sssa_block input " + shape_str(u0.shape) + " does not match the config");
  const std::size_t grid = cfg.grid();

  const SpikeTensor s0 = detail::lif_sequence(u0, cfg.lif);
  const RealTensor s0_grid = detail::tokens_to_grid(s0.to_real(), grid, grid);
  const auto project = [&](const ConvParams& conv) {
    return detail::lif_sequence(detail::grid_to_tokens(conv2d(s0_grid, conv)), cfg.lif);
  };
  const SpikeTensor q = project(params.conv_q);
  const SpikeTensor k = project(params.conv_k);
  const SpikeTensor v = project(params.conv_v);

  SpikeTensor masked({t_steps, n, d});
  if (cfg.variant == AttentionVariant::SsaBaseline) {
    // The baseline mixes V with real-valued scores; spikes are recovered by
    // a LIF layer so the rest of the block stays binary-fed.
    OpCounter c;
    masked = detail::lif_sequence(ssa_baseline(q, k, v, c), cfg.lif);
  } else {
    const AttentionConfig att_cfg{t_steps, n, d, cfg.variant, cfg.alpha_mode};
    masked = sssa_forward(att_cfg, q, k, v, params.saccade).masked_v;
  }

  const RealTensor att_grid = detail::tokens_to_grid(masked.to_real(), grid, grid);
  RealTensor u1 = detail::grid_to_tokens(batchnorm(conv2d(att_grid, params.conv_o), params.bn_o,
                                                   mode, 1));
  for (std::size_t i = 0; i < u1.numel(); ++i) u1.data[i] += u0.data[i];

  const SpikeTensor s2 = detail::lif_sequence(u1, cfg.lif);
  RealTensor lin({t_steps, n, d});
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < d; ++o) {
        double acc = 0.0;
        for (std::size_t e = 0; e < d; ++e) acc += s2.at(t, i, e) * params.w_mlp.at(e, o);
        lin.at(t, i, o) = acc;
      }
  RealTensor u2 = batchnorm(lin, params.bn_mlp, mode, 2);
  for (std::size_t i = 0; i < u2.numel(); ++i) u2.data[i] += u1.data[i];
  return u2;
}

// Full forward pass: stem downsample, GL-SPS, token flattening, SSSA blocks,
// SN, GAP over tokens and timesteps, classification head.
inline RealTensor model_forward(const RealTensor& image, const ModelConfig& cfg,
                                ModelParams& params, BNMode mode = BNMode::Infer) {
  cfg.validate();
  if (image.rank() != 4 || image.shape[0] != cfg.t_steps || image.shape[1] != cfg.in_channels ||
      image.shape[2] != cfg.image_hw || image.shape[3] != cfg.image_hw)
    throw ConfigError("model_forward expects [T,C,H,W] matching the config, got " +
                      shape_str(image.shape));

  const RealTensor stem_out = conv2d(image, params.stem);
  const RealTensor embedded = gl_sps(stem_out, params.glsps_conv, params.glsps_dconv,
                                     params.glsps_bn1, params.glsps_bn2, mode);
  RealTensor u = detail::grid_to_tokens(embedded);
  for (auto& blk : params.blocks) u = sssa_block(u, cfg, blk, mode);

  const SpikeTensor s_out = detail::lif_sequence(u, cfg.lif);
  RealTensor feat({cfg.dim});
  const std::size_t t_steps = cfg.t_steps, n = cfg.n_tokens();
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cfg.dim; ++c) feat.at(c) += s_out.at(t, i, c);
  for (double& v : feat.data) v /= static_cast<double>(t_steps * n);

  RealTensor logits({cfg.classes});
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    double acc = params.b_head.at(c);
    for (std::size_t e = 0; e < cfg.dim; ++e) acc += feat.at(e) * params.w_head.at(e, c);
    logits.at(c) = acc;
  }
  if (!logits.all_finite()) throw ConfigError("model_forward produced non-finite logits");
  return logits;
}

inline RealTensor model_forward(const SpikeTensor& image, const ModelConfig& cfg,
                                ModelParams& params, BNMode mode = BNMode::Infer) {
  return model_forward(image.to_real(), cfg, params, mode);
}

}

#endif
