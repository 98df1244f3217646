#ifndef SSSA_ATTENTION_HPP
#define SSSA_ATTENTION_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sssa/neurons.hpp"
#include "sssa/opcounter.hpp"
#include "sssa/tensor.hpp"

namespace sssa {

enum class AttentionVariant { SsaBaseline, SssaV1, SssaV2 };
enum class AlphaMode { Computed, Learned };

struct AttentionConfig {
  std::size_t t_steps = 1;
  std::size_t n_tokens = 1;
  std::size_t d_model = 1;
  AttentionVariant variant = AttentionVariant::SssaV2;
  AlphaMode alpha_mode = AlphaMode::Learned;

  void validate() const {
    if (t_steps < 1 || n_tokens < 1 || d_model < 1)
      throw ConfigError("attention dims must all be >= 1");
  }
};

// Result of a saccadic attention pass: the per-token firing decision and V
// masked by it (broadcast over the feature dimension).
struct AttentionOutput {
  SpikeTensor spikes;    // [T,N]
  SpikeTensor masked_v;  // [T,N,D]
  OpCounter counters;
};

// Per-token spike counts over the feature dimension: [T,N,D] -> [T,N].
// This is Q' (or K'); equal to D times the token's firing rate.
inline RealTensor spike_sum(const SpikeTensor& x, OpCounter* c = nullptr) {
  if (x.rank() != 3) throw ShapeError("spike_sum expects [T,N,D], got " + shape_str(x.shape));
  if (c) c->ac += x.numel();  // one accumulate per element
  return sum_axis(x, 2);
}

// Distribution relevance between two spike trains via their firing rates:
//   -[p_q log p_k + (1-p_q) log(1-p_k)]
// Rates are clamped to [eps, 1-eps] so degenerate trains stay finite.
inline double cross_entropy_relevance(const SpikeTensor& q, const SpikeTensor& k) {
  if (q.rank() != 1 || k.rank() != 1 || q.numel() != k.numel() || q.numel() < 1)
    throw ShapeError("cross_entropy_relevance expects two equal-length vectors");
  constexpr double eps = 1e-12;
  const auto rate = [&](const SpikeTensor& v) {
    double count = 0.0;
    for (std::uint8_t s : v.data) count += s;
    return std::clamp(count / static_cast<double>(v.numel()), eps, 1.0 - eps);
  };
  const double pq = rate(q), pk = rate(k);
  return -(pq * std::log(pk) + (1.0 - pq) * std::log(1.0 - pk));
}

// Per-timestep outer product of the count vectors: CroAtt[t] = Q'[t] K'[t]^T.
inline RealTensor cro_att(const RealTensor& q_sum, const RealTensor& k_sum,
                          OpCounter* c = nullptr) {
  if (q_sum.rank() != 2 || q_sum.shape != k_sum.shape)
    throw ShapeError("cro_att expects matching [T,N] inputs, got " + shape_str(q_sum.shape) +
                     " and " + shape_str(k_sum.shape));
  const std::size_t t_steps = q_sum.shape[0], n = q_sum.shape[1];
  RealTensor out({t_steps, n, n});
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        out.at(t, i, j) = q_sum.at(t, i) * k_sum.at(t, j);
  if (c) c->mac += t_steps * n * n;
  return out;
}

// Row sums of the relevance matrix: Patch[t,i] = sum_j CroAtt[t,i,j].
// Identically CroAtt[t] * L with L the all-ones column.
inline RealTensor patch_salience(const RealTensor& cro, OpCounter* c = nullptr) {
  if (cro.rank() != 3 || cro.shape[1] != cro.shape[2])
    throw ShapeError("patch_salience expects [T,N,N], got " + shape_str(cro.shape));
  if (c) c->ac += cro.numel();
  return sum_axis(cro, 2);
}

namespace detail {

inline void check_qkv(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v) {
  if (q.rank() != 3 || q.shape != k.shape || q.shape != v.shape)
    throw ShapeError("attention expects Q, K, V of identical [T,N,D] shape");
}

// Lower-triangular temporal mix: out[t] = sum_{s<=t} m_w[t,s] x[s], per token.
inline RealTensor lower_tri_mix(const RealTensor& m_w, const RealTensor& x, OpCounter* c) {
  const std::size_t t_steps = x.shape[0], n = x.shape[1];
  RealTensor out({t_steps, n});
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t s = 0; s <= t; ++s) acc += m_w.at(t, s) * x.at(s, i);
      out.at(t, i) = acc;
    }
  if (c) c->mac += (t_steps * (t_steps + 1) / 2) * n;
  return out;
}

// Threshold the mixed salience and mask V with the firing decision. The mask
// is a broadcast select, counted as zero-cost.
inline AttentionOutput threshold_and_mask(const RealTensor& drive, const RealTensor& v_th,
                                          const SpikeTensor& v, OpCounter counters) {
  const std::size_t t_steps = drive.shape[0], n = drive.shape[1], d = v.shape[2];
  AttentionOutput out{SpikeTensor({t_steps, n}), SpikeTensor({t_steps, n, d}), counters};
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      const bool fire = drive.at(t, i) >= v_th.at(t);
      out.spikes.data[t * n + i] = fire ? 1 : 0;
      if (fire)
        for (std::size_t j = 0; j < d; ++j)
          out.masked_v.data[(t * n + i) * d + j] = v.at(t, i, j);
    }
  out.counters.cmp += t_steps * n;
  return out;
}

}

// SSSA-V1: S = Theta(M_w (Q'K'^T) L - V_th), output V masked by S.
inline AttentionOutput sssa_v1(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v,
                               const SaccadicParams& params, OpCounter* external = nullptr) {
  detail::check_qkv(q, k, v);
  params.validate();
  if (q.shape[0] != params.t_steps())
    throw ShapeError("sssa_v1: T mismatch between inputs and saccadic params");
  OpCounter c;
  const RealTensor q_sum = spike_sum(q, &c);
  const RealTensor k_sum = spike_sum(k, &c);
  const RealTensor cro = cro_att(q_sum, k_sum, &c);
  const RealTensor patch = patch_salience(cro, &c);
  const RealTensor mixed = detail::lower_tri_mix(params.m_w, patch, &c);
  AttentionOutput out = detail::threshold_and_mask(mixed, params.v_th, v, c);
  if (external) external->merge(out.counters);
  return out;
}

// SSSA-V2, the reassociated form of V1.
//   Computed mode: alpha[t] = sum_n K'[t,n];  S = Theta((M_w Q') . alpha - V_th).
//   Learned mode (inference): S[t] = Theta(Q'[t] - (1/alpha)(M_w^{-1} V_th)[t]);
//   the K path drops out entirely and the Q->S path is multiplication-free.
inline AttentionOutput sssa_v2(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v,
                               SaccadicParams& params, AlphaMode mode,
                               OpCounter* external = nullptr) {
  detail::check_qkv(q, k, v);
  params.validate();
  const std::size_t t_steps = q.shape[0], n = q.shape[1], d = v.shape[2];
  if (t_steps != params.t_steps())
    throw ShapeError("sssa_v2: T mismatch between inputs and saccadic params");

  OpCounter c;
  AttentionOutput out;
  if (mode == AlphaMode::Computed) {
    const RealTensor q_sum = spike_sum(q, &c);
    const RealTensor k_sum = spike_sum(k, &c);
    RealTensor alpha({t_steps});
    for (std::size_t t = 0; t < t_steps; ++t) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += k_sum.at(t, i);
      alpha.at(t) = acc;
    }
    c.ac += t_steps * n;
    RealTensor drive = detail::lower_tri_mix(params.m_w, q_sum, &c);
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t i = 0; i < n; ++i) drive.at(t, i) *= alpha.at(t);
    c.mac += t_steps * n;
    out = detail::threshold_and_mask(drive, params.v_th, v, c);
  } else {
    if (!(params.alpha > 0.0)) throw ParamError("sssa_v2 learned mode requires alpha > 0");
    if (!params.folded) fold_thresholds(params);  // threshold prep, not Q->S work
    const RealTensor q_sum = spike_sum(q, &c);
    RealTensor folded_eff({t_steps});
    for (std::size_t t = 0; t < t_steps; ++t)
      folded_eff.at(t) = params.folded->at(t) / params.alpha;
    out = detail::threshold_and_mask(q_sum, folded_eff, v, c);
    (void)d;
  }
  if (external) external->merge(out.counters);
  return out;
}

// Variant dispatch for the spiking family described by an AttentionConfig.
// The dot-product baseline emits real scores and keeps its own signature.
inline AttentionOutput sssa_forward(const AttentionConfig& cfg, const SpikeTensor& q,
                                    const SpikeTensor& k, const SpikeTensor& v,
                                    SaccadicParams& params, OpCounter* external = nullptr) {
  cfg.validate();
  const Shape want{cfg.t_steps, cfg.n_tokens, cfg.d_model};
  if (q.shape != want || k.shape != want || v.shape != want)
    throw ShapeError("attention inputs do not match the configured " + shape_str(want));
  switch (cfg.variant) {
    case AttentionVariant::SssaV1:
      return sssa_v1(q, k, v, params, external);
    case AttentionVariant::SssaV2:
      return sssa_v2(q, k, v, params, cfg.alpha_mode, external);
    default:
      throw ConfigError("ssa-baseline emits real scores; call ssa_baseline directly");
  }
}

// Dot-product baseline, spiking convention (no softmax, no sqrt(D) scale):
// per timestep, (Q K^T) V.
inline RealTensor ssa_baseline(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v,
                               OpCounter& c) {
  detail::check_qkv(q, k, v);
  const std::size_t t_steps = q.shape[0], n = q.shape[1], d = q.shape[2];
  RealTensor out({t_steps, n, d});
  std::vector<double> scores(n * n);
  for (std::size_t t = 0; t < t_steps; ++t) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t e = 0; e < d; ++e) acc += q.at(t, i, e) * k.at(t, j, e);
        scores[i * n + j] = acc;
      }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t e = 0; e < d; ++e) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += scores[i * n + j] * v.at(t, j, e);
        out.at(t, i, e) = acc;
      }
  }
  c.mac += 2 * t_steps * n * n * d;
  return out;
}

// Checks the monotonicity-preservation claim behind the log(x) -> x
// simplification: ranking keys by the exact first-term relevance
// p_q log(p_k) must equal ranking by the simplified score p_q * p_k.
struct OrderingResult {
  bool agree = false;
  bool degenerate = false;  // p_q = 0 collapses every simplified score to zero
};

inline OrderingResult ordering_oracle(const SpikeTensor& q, const std::vector<SpikeTensor>& ks) {
  if (q.rank() != 1 || q.numel() < 1) throw ShapeError("ordering_oracle: q must be a vector");
  constexpr double eps = 1e-12;
  const auto rate = [&](const SpikeTensor& v) {
    double count = 0.0;
    for (std::uint8_t s : v.data) count += s;
    return std::clamp(count / static_cast<double>(v.numel()), eps, 1.0 - eps);
  };
  double pq_raw = 0.0;
  for (std::uint8_t s : q.data) pq_raw += s;
  pq_raw /= static_cast<double>(q.numel());
  if (pq_raw == 0.0) return {true, true};

  const double pq = std::clamp(pq_raw, eps, 1.0 - eps);
  std::vector<double> exact, simplified;
  for (const auto& k : ks) {
    if (k.numel() != q.numel()) throw ShapeError("ordering_oracle: key length mismatch");
    const double pk = rate(k);
    exact.push_back(pq * std::log(pk));
    simplified.push_back(pq * pk);
  }
  const auto ranking = [](const std::vector<double>& scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;  // ties broken by index
    });
    return order;
  };
  return {ranking(exact) == ranking(simplified), false};
}

}

#endif
