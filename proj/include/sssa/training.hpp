#ifndef SSSA_TRAINING_HPP
#define SSSA_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "sssa/autodiff.hpp"
#include "sssa/blocks.hpp"
#include "sssa/tensor.hpp"

namespace sssa {

// Synthetic two-class task: a horizontal bar vs a vertical bar at a random
// interior position, rate-encoded into spike trains. Bars stay `margin`
// pixels away from the border so the classes are linearly separable in
// rate space (which the logistic oracle verifies before training is judged).
struct ToyTaskSpec {
  std::size_t image_hw = 16;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 100;
  std::size_t t_steps = 4;
  double peak_rate = 0.5;  // encoding cap; keeps inputs in the low-rate regime
  std::size_t margin = 2;
  std::size_t thickness = 2;
  std::uint64_t seed = 42;

  void validate() const {
    if (image_hw < 8) throw ConfigError("toy images must be at least 8x8");
    if (margin + thickness >= image_hw - margin)
      throw ConfigError("bar margin/thickness leave no valid positions");
    if (!(peak_rate > 0.0 && peak_rate <= 0.5))
      throw ConfigError("peak rate must be in (0, 0.5]");
    if (train_per_class < 1 || test_per_class < 1) throw ConfigError("empty split");
    if (t_steps < 1) throw ConfigError("t_steps must be >= 1");
  }
};

struct OptimSpec {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t epochs = 200;
  std::size_t batch = 20;
  double mw_diag_clamp = 0.1;
  double early_stop_acc = 0.0;  // 0 = run all epochs

  void validate() const {
    if (lr < 0.0) throw ConfigError("learning rate must be >= 0");
    if (epochs < 1 || batch < 1) throw ConfigError("epochs and batch must be >= 1");
    if (!(mw_diag_clamp > 0.0)) throw ConfigError("diagonal clamp must be positive");
  }
};

struct ToySample {
  RealTensor intensity;  // [1, H, W] in [0, 1]
  SpikeTensor spikes;    // [T, 1, H, W]
  int label = 0;         // 0 = horizontal bar, 1 = vertical bar
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> curve;
  ModelConfig config;
  ModelParams params;
  double final_test_acc = 0.0;
};

// Pixel intensity -> Bernoulli spike probability per timestep, capped at the
// peak rate.
inline SpikeTensor rate_encode(const RealTensor& intensity, std::size_t t_steps, double peak_rate,
                               RngState& rng) {
  if (intensity.rank() != 3) throw ShapeError("rate_encode expects [C, H, W]");
  Shape shape = {t_steps, intensity.shape[0], intensity.shape[1], intensity.shape[2]};
  SpikeTensor out(shape);
  const std::size_t per_t = intensity.numel();
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < per_t; ++i) {
      const double p = std::min(std::clamp(intensity.data[i], 0.0, 1.0) * peak_rate, 0.5);
      out.data[t * per_t + i] = rng.next_double() < p ? 1 : 0;
    }
  return out;
}

namespace detail {

inline std::vector<ToySample> make_toy_samples(const ToyTaskSpec& task, std::size_t per_class,
                                               RngState rng) {
  const std::size_t hw = task.image_hw;
  const std::size_t lo = task.margin;
  const std::size_t hi = hw - task.margin - task.thickness;  // inclusive upper position
  std::vector<ToySample> out;
  for (int label = 0; label < 2; ++label)
    for (std::size_t s = 0; s < per_class; ++s) {
      ToySample sample;
      sample.label = label;
      sample.intensity = RealTensor({1, hw, hw});
      const auto pos = lo + static_cast<std::size_t>(rng.next_double() *
                                                     static_cast<double>(hi - lo + 1));
      for (std::size_t t = 0; t < task.thickness; ++t)
        for (std::size_t i = 0; i < hw; ++i) {
          if (label == 0)
            sample.intensity.at(0, std::min(pos + t, hw - 1), i) = 1.0;
          else
            sample.intensity.at(0, i, std::min(pos + t, hw - 1)) = 1.0;
        }
      sample.spikes = rate_encode(sample.intensity, task.t_steps, task.peak_rate, rng);
      out.push_back(std::move(sample));
    }
  return out;
}

}

// Train/test splits come from disjoint RNG substreams, so they never share a
// sample.
inline std::vector<ToySample> make_toy_data(const ToyTaskSpec& task, bool test_split) {
  task.validate();
  RngState base(task.seed);
  return detail::make_toy_samples(task, test_split ? task.test_per_class : task.train_per_class,
                                  test_split ? base.stream(2) : base.stream(1));
}

namespace detail {

// Tape-side forward of the model over a batch, mirroring model_forward but
// with a leading batch axis and train-mode BN. Returns the loss node and
// fills `bindings` with (external tensor, tape node) pairs for the update.
struct ParamBinding {
  RealTensor* tensor = nullptr;
  double* scalar = nullptr;
  int node = -1;
};

inline int build_batch_loss(autodiff::Tape& tape, const ModelConfig& cfg, ModelParams& params,
                            const RealTensor& batch /* [T,B,C,H,W] */,
                            const std::vector<int>& labels, std::vector<ParamBinding>& bindings) {
  const std::size_t t_steps = cfg.t_steps, b = batch.shape.at(1);
  const std::size_t hw = cfg.image_hw, grid = cfg.grid(), n = cfg.n_tokens(), d = cfg.dim;
  const bool learned = cfg.alpha_mode == AlphaMode::Learned;

  const auto bind_tensor = [&](RealTensor& t) {
    const int id = tape.param(t);
    bindings.push_back({&t, nullptr, id});
    return id;
  };
  const auto bind_scalar = [&](double& s) {
    const int id = tape.param(RealTensor({1}, {s}));
    bindings.push_back({nullptr, &s, id});
    return id;
  };

  const int x_in = tape.input(batch);
  // stem + GL-SPS over the flattened [T*B, C, H, W] layout
  const int x_flat = tape.reshape(x_in, {t_steps * b, cfg.in_channels, hw, hw});
  const int stem_w = bind_tensor(params.stem.weights);
  const int stem_out = tape.conv2d(x_flat, stem_w, 2, 1, (cfg.stem_kernel - 1) / 2);

  const int g1_w = bind_tensor(params.glsps_conv.weights);
  const int g2_w = bind_tensor(params.glsps_dconv.weights);
  const int bn1_g = bind_tensor(params.glsps_bn1.gamma);
  const int bn1_b = bind_tensor(params.glsps_bn1.beta);
  const int bn2_g = bind_tensor(params.glsps_bn2.gamma);
  const int bn2_b = bind_tensor(params.glsps_bn2.beta);
  const int branch1 = tape.batchnorm(tape.conv2d(stem_out, g1_w, 1, 1, 1), bn1_g, bn1_b, 1,
                                     &params.glsps_bn1, true);
  const int branch2 = tape.batchnorm(tape.conv2d(stem_out, g2_w, 1, 2, 2), bn2_g, bn2_b, 1,
                                     &params.glsps_bn2, true);
  const int embedded = tape.add(branch1, branch2);

  const auto grid_to_tokens = [&](int img_flat) {
    const int split = tape.reshape(img_flat, {t_steps, b, d, grid, grid});
    const int moved = tape.permute(split, {0, 1, 3, 4, 2});
    return tape.reshape(moved, {t_steps, b, n, d});
  };
  const auto tokens_to_grid = [&](int tokens) {
    const int split = tape.reshape(tokens, {t_steps, b, grid, grid, d});
    const int moved = tape.permute(split, {0, 1, 4, 2, 3});
    return tape.reshape(moved, {t_steps * b, d, grid, grid});
  };

  int u = grid_to_tokens(embedded);  // [T,B,N,D]
  for (auto& blk : params.blocks) {
    const int s0 = tape.lif(u, cfg.lif, cfg.surrogate);
    const int s0_grid = tokens_to_grid(s0);
    const auto project = [&](ConvParams& conv) {
      const int w = bind_tensor(conv.weights);
      return tape.lif(grid_to_tokens(tape.conv2d(s0_grid, w, 1, 1, 1)), cfg.lif, cfg.surrogate);
    };
    const int q = project(blk.conv_q);
    const int v = project(blk.conv_v);

    const int mw = bind_tensor(blk.saccade.m_w);
    const int vth = bind_tensor(blk.saccade.v_th);
    const int q_sum = tape.sum_last(q);  // [T,B,N]
    int spikes;
    if (cfg.variant == AttentionVariant::SssaV1) {
      const int k = project(blk.conv_k);
      const int k_sum = tape.sum_last(k);
      const int cro = tape.cro_att(q_sum, k_sum);
      const int patch = tape.sum_last(cro);
      const int mixed = tape.temporal_mix(patch, mw);
      spikes = tape.theta_per_t(mixed, vth, cfg.surrogate);
    } else if (!learned) {  // V2 computed alpha: drive = (M_w Q') . (sum_n K')
      const int k = project(blk.conv_k);
      const int k_sum = tape.sum_last(k);
      const int alpha_vec = tape.sum_last(k_sum);  // [T,B]
      const int mixed = tape.temporal_mix(q_sum, mw);
      const int drive = tape.scale_leading(mixed, alpha_vec);
      spikes = tape.theta_per_t(drive, vth, cfg.surrogate);
    } else {  // V2 learned alpha: the K path drops out entirely
      const int alpha = bind_scalar(blk.saccade.alpha);
      const int mixed = tape.temporal_mix(q_sum, mw);
      const int drive = tape.scale_scalar(mixed, alpha);
      spikes = tape.theta_per_t(drive, vth, cfg.surrogate);
    }
    const int masked = tape.mask_last(spikes, v);

    const int o_w = bind_tensor(blk.conv_o.weights);
    const int bno_g = bind_tensor(blk.bn_o.gamma);
    const int bno_b = bind_tensor(blk.bn_o.beta);
    const int o = grid_to_tokens(tape.batchnorm(tape.conv2d(tokens_to_grid(masked), o_w, 1, 1, 1),
                                                bno_g, bno_b, 1, &blk.bn_o, true));
    const int u1 = tape.add(u, o);

    const int s2 = tape.lif(u1, cfg.lif, cfg.surrogate);
    const int mlp_w = bind_tensor(blk.w_mlp);
    const int bnm_g = bind_tensor(blk.bn_mlp.gamma);
    const int bnm_b = bind_tensor(blk.bn_mlp.beta);
    const int lin = tape.batchnorm(tape.linear(s2, mlp_w), bnm_g, bnm_b, 3, &blk.bn_mlp, true);
    u = tape.add(u1, lin);
  }

  const int s_out = tape.lif(u, cfg.lif, cfg.surrogate);
  const int feat = tape.gap_tokens_time(s_out);  // [B,D]
  const int head_w = bind_tensor(params.w_head);
  const int head_b = bind_tensor(params.b_head);
  const int logits = tape.bias_last(tape.linear(feat, head_w), head_b);
  return tape.softmax_cross_entropy(logits, labels);
}

struct MomentumState {
  std::vector<std::vector<double>> buffers;
};

inline void sgd_step(std::vector<ParamBinding>& bindings, const autodiff::Tape& tape,
                     const OptimSpec& optim, MomentumState& state) {
  if (state.buffers.empty()) {
    for (auto& b : bindings)
      state.buffers.emplace_back(b.tensor ? b.tensor->numel() : 1, 0.0);
  }
  for (std::size_t i = 0; i < bindings.size(); ++i) {
    const auto& g = tape.grad(bindings[i].node).data;
    auto& buf = state.buffers[i];
    if (bindings[i].tensor) {
      auto& w = bindings[i].tensor->data;
      for (std::size_t e = 0; e < w.size(); ++e) {
        buf[e] = optim.momentum * buf[e] + g[e] + optim.weight_decay * w[e];
        w[e] -= optim.lr * buf[e];
      }
    } else {
      buf[0] = optim.momentum * buf[0] + g[0];
      *bindings[i].scalar -= optim.lr * buf[0];
    }
  }
}

// The strictly-upper triangle is never a parameter; the diagonal is clamped
// after every step to keep the mixer invertible.
inline void clamp_mixer(ModelParams& params, double clamp) {
  for (auto& blk : params.blocks) {
    const std::size_t t = blk.saccade.t_steps();
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = i + 1; j < t; ++j) blk.saccade.m_w.at(i, j) = 0.0;
      if (blk.saccade.m_w.at(i, i) < clamp) blk.saccade.m_w.at(i, i) = clamp;
    }
    blk.saccade.alpha = std::max(blk.saccade.alpha, 1e-6);
    blk.saccade.folded.reset();  // stale after any update
  }
}

inline double accuracy(const std::vector<ToySample>& samples, const ModelConfig& cfg,
                       ModelParams& params) {
  std::size_t hits = 0;
  for (const auto& s : samples) {
    const RealTensor logits = model_forward(s.spikes, cfg, params, BNMode::Infer);
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.numel(); ++c)
      if (logits.data[c] > logits.data[best]) best = c;
    hits += static_cast<int>(best) == s.label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

}

// Surrogate-gradient SGD on the toy bar task. Deterministic given the task
// and config seeds; throws TrainingError when the loss diverges.
inline TrainResult train_toy(const ToyTaskSpec& task, const ModelConfig& cfg,
                             const OptimSpec& optim) {
  task.validate();
  cfg.validate();
  optim.validate();
  if (cfg.image_hw != task.image_hw || cfg.t_steps != task.t_steps)
    throw ConfigError("model config and task disagree on image size or timesteps");

  std::vector<ToySample> train = make_toy_data(task, false);
  std::vector<ToySample> test = make_toy_data(task, true);

  RngState init_rng = RngState(task.seed).stream(3);
  TrainResult result;
  result.config = cfg;
  result.params = init_model_params(cfg, init_rng);

  RngState shuffle_rng = RngState(task.seed).stream(4);
  detail::MomentumState momentum;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < optim.epochs; ++epoch) {
    // deterministic Fisher-Yates reshuffle per epoch
    RngState r = shuffle_rng.stream(epoch);
    for (std::size_t i = order.size(); i-- > 1;) {
      const auto j = static_cast<std::size_t>(r.next_double() * static_cast<double>(i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }

    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += optim.batch) {
      const std::size_t bsz = std::min(optim.batch, order.size() - start);
      RealTensor batch({cfg.t_steps, bsz, cfg.in_channels, cfg.image_hw, cfg.image_hw});
      std::vector<int> labels(bsz);
      const std::size_t per_t = cfg.in_channels * cfg.image_hw * cfg.image_hw;
      for (std::size_t bi = 0; bi < bsz; ++bi) {
        const ToySample& s = train[order[start + bi]];
        labels[bi] = s.label;
        for (std::size_t t = 0; t < cfg.t_steps; ++t)
          for (std::size_t i = 0; i < per_t; ++i)
            batch.data[(t * bsz + bi) * per_t + i] = s.spikes.data[t * per_t + i];
      }

      autodiff::Tape tape;
      std::vector<detail::ParamBinding> bindings;
      const int loss = detail::build_batch_loss(tape, cfg, result.params, batch, labels, bindings);
      const double loss_val = tape.value(loss).data[0];
      if (!std::isfinite(loss_val))
        throw TrainingError("loss diverged at epoch " + std::to_string(epoch) + " (value " +
                            std::to_string(loss_val) + "); lower the learning rate");
      tape.backward(loss);
      detail::sgd_step(bindings, tape, optim, momentum);
      detail::clamp_mixer(result.params, optim.mw_diag_clamp);
      loss_sum += loss_val;
      ++steps;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(steps);
    m.train_acc = detail::accuracy(train, cfg, result.params);
    m.test_acc = detail::accuracy(test, cfg, result.params);
    result.curve.push_back(m);
    result.final_test_acc = m.test_acc;
    if (optim.early_stop_acc > 0.0 && m.test_acc >= optim.early_stop_acc) break;
  }
  return result;
}

// Logistic regression on per-pixel mean firing rates; the independent
// separability check run before the SNN result is judged.
inline double logistic_oracle(const std::vector<ToySample>& train,
                              const std::vector<ToySample>& test, std::size_t iterations = 1000,
                              double lr = 2.0) {
  if (train.empty() || test.empty()) throw ConfigError("logistic_oracle: empty split");
  const std::size_t t_steps = train.front().spikes.shape[0];
  const std::size_t dim = train.front().spikes.numel() / t_steps;
  const auto features = [&](const ToySample& s) {
    std::vector<double> f(dim, 0.0);
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t i = 0; i < dim; ++i) f[i] += s.spikes.data[t * dim + i];
    for (double& v : f) v /= static_cast<double>(t_steps);
    return f;
  };

  std::vector<double> w(dim, 0.0);
  double bias = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<double> gw(dim, 0.0);
    double gb = 0.0;
    for (const auto& s : train) {
      const auto f = features(s);
      double z = bias;
      for (std::size_t i = 0; i < dim; ++i) z += w[i] * f[i];
      const double p = 1.0 / (1.0 + std::exp(-z));
      const double err = p - static_cast<double>(s.label);
      for (std::size_t i = 0; i < dim; ++i) gw[i] += err * f[i];
      gb += err;
    }
    const double scale = lr / static_cast<double>(train.size());
    for (std::size_t i = 0; i < dim; ++i) w[i] -= scale * gw[i];
    bias -= scale * gb;
  }

  std::size_t hits = 0;
  for (const auto& s : test) {
    const auto f = features(s);
    double z = bias;
    for (std::size_t i = 0; i < dim; ++i) z += w[i] * f[i];
    hits += (z >= 0.0 ? 1 : 0) == s.label ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

}

#endif
