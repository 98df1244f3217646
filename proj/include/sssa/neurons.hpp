#ifndef SSSA_NEURONS_HPP
#define SSSA_NEURONS_HPP

#include <cmath>
#include <cstdlib>
#include <optional>
#include <utility>

#include "sssa/tensor.hpp"

namespace sssa {

// Leaky integrate-and-fire constants. tau is the per-step decay multiplier.
struct LIFParams {
  double tau = 0.5;
  double v_th = 1.0;
  double v_reset = 0.0;

  void validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw ParamError("LIF tau must satisfy 0 < tau <= 1");
    if (!(v_th > v_reset)) throw ParamError("LIF v_th must exceed v_reset");
  }
};

// Pre-synaptic membrane potential carried between timesteps.
struct LIFState {
  RealTensor h;
};

// Triangular surrogate used as the backward relaxation of the step function.
struct SurrogateSpec {
  double width = 1.0;

  void validate() const {
    if (!(width > 0.0)) throw ParamError("surrogate width must be positive");
  }
};

// Saccadic spiking neuron parameters: lower-triangular temporal mixer with
// nonzero diagonal, per-timestep thresholds, and the V2 threshold scale.
struct SaccadicParams {
  RealTensor m_w;   // [T,T]
  RealTensor v_th;  // [T]
  double alpha = 1.0;
  std::optional<RealTensor> folded;  // [T], m_w^{-1} v_th once computed

  std::size_t t_steps() const { return v_th.numel(); }

  void validate() const {
    const std::size_t t = t_steps();
    if (m_w.rank() != 2 || m_w.shape[0] != t || m_w.shape[1] != t)
      throw ParamError("mixer must be [T,T] matching the threshold vector");
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = i + 1; j < t; ++j)
        if (m_w.at(i, j) != 0.0)
          throw ParamError("mixer must be lower triangular; entry (" + std::to_string(i) + "," +
                           std::to_string(j) + ") is nonzero");
      if (m_w.at(i, i) == 0.0)
        throw SingularMixerError("mixer diagonal entry " + std::to_string(i) + " is zero");
    }
    if (!(alpha > 0.0)) throw ParamError("alpha must be positive");
    if (folded) {
      require_shape(*folded, {t}, "folded thresholds");
      for (std::size_t i = 0; i < t; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j <= i; ++j) acc += m_w.at(i, j) * folded->at(j);
        if (std::abs(acc - v_th.at(i)) > 1e-10)
          throw ParamError("cached folded thresholds are inconsistent with m_w and v_th");
      }
    }
  }
};

// 1 where u >= v_th, else 0. The boundary fires: Theta(0) = 1, shared by the
// parallel and asynchronous formulations.
inline SpikeTensor heaviside(const RealTensor& u, double v_th) {
  SpikeTensor out(u.shape);
  for (std::size_t i = 0; i < u.numel(); ++i) out.data[i] = u.data[i] >= v_th ? 1 : 0;
  return out;
}

struct LifStepResult {
  SpikeTensor spikes;
  LIFState state;
};

// One LIF update: charge, fire, then reset-or-decay.
//   U = H + X;  S = Theta(U - v_th);  H' = v_reset*S + tau*U*(1-S)
inline LifStepResult lif_step(const LIFParams& params, const LIFState& state,
                              const RealTensor& x) {
  if (state.h.shape != x.shape)
    throw ShapeError("lif_step: state " + shape_str(state.h.shape) + " vs input " +
                     shape_str(x.shape));
  LifStepResult out{SpikeTensor(x.shape), LIFState{RealTensor(x.shape)}};
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double u = state.h.data[i] + x.data[i];
    const bool fire = u >= params.v_th;
    out.spikes.data[i] = fire ? 1 : 0;
    out.state.h.data[i] = fire ? params.v_reset : params.tau * u;
  }
  return out;
}

// Parallel-training branch: mix the full salience history through m_w, then
// threshold per timestep. patch is [T,N]; the t-th threshold broadcasts
// across N.
inline SpikeTensor saccadic_train(const SaccadicParams& params, const RealTensor& patch) {
  params.validate();
  if (patch.rank() != 2 || patch.shape[0] != params.t_steps())
    throw ShapeError("saccadic_train: patch must be [T,N] with T = " +
                     std::to_string(params.t_steps()) + ", got " + shape_str(patch.shape));
  const std::size_t t_steps = patch.shape[0], n = patch.shape[1];
  SpikeTensor out({t_steps, n});
  for (std::size_t t = 0; t < t_steps; ++t)
    for (std::size_t i = 0; i < n; ++i) {
      double h = 0.0;
      for (std::size_t s = 0; s <= t; ++s) h += params.m_w.at(t, s) * patch.at(s, i);
      out.data[t * n + i] = h >= params.v_th.at(t) ? 1 : 0;
    }
  return out;
}

// Solves m_w * folded = v_th by forward substitution (exact for triangular
// systems) and caches the result.
inline const RealTensor& fold_thresholds(SaccadicParams& params) {
  const std::size_t t_steps = params.t_steps();
  if (params.m_w.rank() != 2 || params.m_w.shape[0] != t_steps ||
      params.m_w.shape[1] != t_steps)
    throw ParamError("fold_thresholds: mixer must be [T,T]");
  RealTensor folded({t_steps});
  for (std::size_t i = 0; i < t_steps; ++i) {
    const double diag = params.m_w.at(i, i);
    if (diag == 0.0)
      throw SingularMixerError("fold_thresholds: zero diagonal at " + std::to_string(i));
    double acc = params.v_th.at(i);
    for (std::size_t j = 0; j < i; ++j) acc -= params.m_w.at(i, j) * folded.at(j);
    folded.at(i) = acc / diag;
  }
  params.folded = std::move(folded);
  return *params.folded;
}

// Asynchronous-inference branch: stateless per timestep, comparing the raw
// salience against the pre-folded threshold.
inline SpikeTensor saccadic_infer_step(const SaccadicParams& params, const RealTensor& patch_t,
                                       std::size_t t) {
  if (!params.folded)
    throw StateError("saccadic_infer_step: fold_thresholds has not been called");
  if (t >= params.t_steps())
    throw ShapeError("saccadic_infer_step: timestep " + std::to_string(t) + " out of range");
  if (patch_t.rank() != 1)
    throw ShapeError("saccadic_infer_step: patch_t must be rank 1");
  const double threshold = params.folded->at(t);
  SpikeTensor out(patch_t.shape);
  for (std::size_t i = 0; i < patch_t.numel(); ++i)
    out.data[i] = patch_t.data[i] >= threshold ? 1 : 0;
  return out;
}

// Empirical check of the training/inference decoupling claim: fraction of
// random patch tensors on which both branches emit identical spikes.
// Patches are drawn uniformly from [-1, 3], wide enough to straddle typical
// thresholds on both sides.
inline double train_infer_agreement(SaccadicParams& params, std::size_t trials, RngState rng) {
  if (trials < 1) throw DomainError("train_infer_agreement: trials must be >= 1");
  params.validate();
  fold_thresholds(params);
  const std::size_t t_steps = params.t_steps();
  const std::size_t n = 4;
  std::size_t agree = 0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    RngState r = rng.stream(trial);
    RealTensor patch({t_steps, n});
    for (double& v : patch.data) v = -1.0 + 4.0 * r.next_double();
    const SpikeTensor trained = saccadic_train(params, patch);
    bool same = true;
    for (std::size_t t = 0; t < t_steps && same; ++t) {
      RealTensor row({n});
      for (std::size_t i = 0; i < n; ++i) row.at(i) = patch.at(t, i);
      const SpikeTensor inferred = saccadic_infer_step(params, row, t);
      for (std::size_t i = 0; i < n; ++i)
        if (inferred.data[i] != trained.at(t, i)) {
          same = false;
          break;
        }
    }
    if (same) ++agree;
  }
  return static_cast<double>(agree) / static_cast<double>(trials);
}

// Triangular surrogate derivative: max(0, 1 - |u - v_th|/width) / width.
inline RealTensor surrogate_grad(const RealTensor& u, double v_th, const SurrogateSpec& spec) {
  spec.validate();
  RealTensor out(u.shape);
  for (std::size_t i = 0; i < u.numel(); ++i) {
    const double d = std::abs(u.data[i] - v_th) / spec.width;
    out.data[i] = d >= 1.0 ? 0.0 : (1.0 - d) / spec.width;
  }
  return out;
}

inline double surrogate_grad_scalar(double u, double v_th, const SurrogateSpec& spec) {
  const double d = std::abs(u - v_th) / spec.width;
  return d >= 1.0 ? 0.0 : (1.0 - d) / spec.width;
}

}

#endif
