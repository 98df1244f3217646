#ifndef SSSA_AUTODIFF_HPP
#define SSSA_AUTODIFF_HPP

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "sssa/blocks.hpp"
#include "sssa/neurons.hpp"
#include "sssa/tensor.hpp"

namespace sssa::autodiff {

// Eager reverse-mode tape. Nodes are appended in construction order, which
// is a topological order by construction (an op may only reference ids that
// already exist), so replaying backward in reverse id order visits every op
// after all of its consumers.
class Tape {
 public:
  int input(RealTensor v) { return push(std::move(v), {}, nullptr, false); }

  int param(RealTensor v) { return push(std::move(v), {}, nullptr, true); }

  const RealTensor& value(int id) const { return nodes_[check(id)].value; }
  const RealTensor& grad(int id) const { return nodes_[check(id)].grad; }

  int add(int a, int b) {
    const RealTensor& x = value(a);
    const RealTensor& y = value(b);
    if (x.shape != y.shape) throw ShapeError("tape add: shapes differ");
    RealTensor out(x.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = x.data[i] + y.data[i];
    return push(std::move(out), {a, b}, [a, b](Tape& t, const Node& n) {
      t.accumulate(a, n.grad.data);
      t.accumulate(b, n.grad.data);
    });
  }

  int conv2d(int x_id, int w_id, std::size_t stride, std::size_t dilation, std::size_t padding) {
    ConvParams geom{value(w_id), stride, dilation, padding};
    RealTensor out = sssa::conv2d(value(x_id), geom);
    return push(std::move(out), {x_id, w_id},
                [x_id, w_id, stride, dilation, padding](Tape& t, const Node& n) {
                  t.conv2d_backward(n, x_id, w_id, stride, dilation, padding);
                });
  }

  // Batch normalization over channel_axis. Train mode uses batch statistics
  // (biased variance) and, when `running` is given, folds them into the
  // running estimates as a side effect. Infer mode normalizes by `running`.
  int batchnorm(int x_id, int gamma_id, int beta_id, std::size_t channel_axis,
                BNParams* running, bool train) {
    const RealTensor& x = value(x_id);
    if (channel_axis >= x.rank()) throw ShapeError("tape batchnorm: channel axis out of range");
    const std::size_t c = x.shape[channel_axis];
    if (value(gamma_id).numel() != c || value(beta_id).numel() != c)
      throw ShapeError("tape batchnorm: gamma/beta extent mismatch");
    const double eps = running ? running->epsilon : 1e-5;

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < channel_axis; ++i) outer *= x.shape[i];
    for (std::size_t i = channel_axis + 1; i < x.rank(); ++i) inner *= x.shape[i];
    const double m = static_cast<double>(outer * inner);

    std::vector<double> mean(c, 0.0), var(c, 0.0);
    if (train) {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t in = 0; in < inner; ++in) mean[ch] += x.data[(o * c + ch) * inner + in];
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] /= m;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t in = 0; in < inner; ++in) {
            const double d = x.data[(o * c + ch) * inner + in] - mean[ch];
            var[ch] += d * d;
          }
      for (std::size_t ch = 0; ch < c; ++ch) var[ch] /= m;
      if (running) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          running->running_mean.data[ch] =
              (1.0 - running->momentum) * running->running_mean.data[ch] +
              running->momentum * mean[ch];
          running->running_var.data[ch] =
              (1.0 - running->momentum) * running->running_var.data[ch] +
              running->momentum * var[ch];
        }
      }
    } else {
      if (!running) throw TapeError("tape batchnorm: infer mode requires running stats");
      for (std::size_t ch = 0; ch < c; ++ch) {
        mean[ch] = running->running_mean.data[ch];
        var[ch] = running->running_var.data[ch];
      }
    }

    auto inv_std = std::make_shared<std::vector<double>>(c);
    for (std::size_t ch = 0; ch < c; ++ch) (*inv_std)[ch] = 1.0 / std::sqrt(var[ch] + eps);
    auto x_hat = std::make_shared<std::vector<double>>(x.numel());
    RealTensor out(x.shape);
    const RealTensor& gamma = value(gamma_id);
    const RealTensor& beta = value(beta_id);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t idx = (o * c + ch) * inner + in;
          (*x_hat)[idx] = (x.data[idx] - mean[ch]) * (*inv_std)[ch];
          out.data[idx] = gamma.data[ch] * (*x_hat)[idx] + beta.data[ch];
        }

    return push(std::move(out), {x_id, gamma_id, beta_id},
                [x_id, gamma_id, beta_id, outer, c, inner, m, train, x_hat,
                 inv_std](Tape& t, const Node& n) {
                  const RealTensor& gamma = t.value(gamma_id);
                  std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t in = 0; in < inner; ++in) {
                        const std::size_t idx = (o * c + ch) * inner + in;
                        sum_g[ch] += n.grad.data[idx];
                        sum_gx[ch] += n.grad.data[idx] * (*x_hat)[idx];
                      }
                  t.accumulate_fn(beta_id, [&](std::vector<double>& g) {
                    for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_g[ch];
                  });
                  t.accumulate_fn(gamma_id, [&](std::vector<double>& g) {
                    for (std::size_t ch = 0; ch < c; ++ch) g[ch] += sum_gx[ch];
                  });
                  t.accumulate_fn(x_id, [&](std::vector<double>& g) {
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t ch = 0; ch < c; ++ch) {
                        const double scale = gamma.data[ch] * (*inv_std)[ch];
                        for (std::size_t in = 0; in < inner; ++in) {
                          const std::size_t idx = (o * c + ch) * inner + in;
                          double gx = n.grad.data[idx];
                          if (train) gx -= (sum_g[ch] + (*x_hat)[idx] * sum_gx[ch]) / m;
                          g[idx] += scale * gx;
                        }
                      }
                  });
                });
  }

  // Matmul over the last axis: y[..., o] = sum_e x[..., e] * w[e, o].
  int linear(int x_id, int w_id) {
    const RealTensor& x = value(x_id);
    const RealTensor& w = value(w_id);
    if (w.rank() != 2 || x.shape.back() != w.shape[0])
      throw ShapeError("tape linear: inner extents differ");
    const std::size_t d_in = w.shape[0], d_out = w.shape[1];
    const std::size_t rows = x.numel() / d_in;
    Shape out_shape(x.shape.begin(), x.shape.end() - 1);
    out_shape.push_back(d_out);
    RealTensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < d_out; ++o) {
        double acc = 0.0;
        for (std::size_t e = 0; e < d_in; ++e) acc += x.data[r * d_in + e] * w.data[e * d_out + o];
        out.data[r * d_out + o] = acc;
      }
    return push(std::move(out), {x_id, w_id},
                [x_id, w_id, rows, d_in, d_out](Tape& t, const Node& n) {
                  const RealTensor& x = t.value(x_id);
                  const RealTensor& w = t.value(w_id);
                  t.accumulate_fn(x_id, [&](std::vector<double>& g) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t e = 0; e < d_in; ++e) {
                        double acc = 0.0;
                        for (std::size_t o = 0; o < d_out; ++o)
                          acc += n.grad.data[r * d_out + o] * w.data[e * d_out + o];
                        g[r * d_in + e] += acc;
                      }
                  });
                  t.accumulate_fn(w_id, [&](std::vector<double>& g) {
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t e = 0; e < d_in; ++e)
                        for (std::size_t o = 0; o < d_out; ++o)
                          g[e * d_out + o] += x.data[r * d_in + e] * n.grad.data[r * d_out + o];
                  });
                });
  }

  int bias_last(int x_id, int b_id) {
    const RealTensor& x = value(x_id);
    const RealTensor& b = value(b_id);
    if (b.numel() != x.shape.back()) throw ShapeError("tape bias_last: extent mismatch");
    const std::size_t d = b.numel(), rows = x.numel() / d;
    RealTensor out(x.shape);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < d; ++o) out.data[r * d + o] = x.data[r * d + o] + b.data[o];
    return push(std::move(out), {x_id, b_id}, [x_id, b_id, rows, d](Tape& t, const Node& n) {
      t.accumulate(x_id, n.grad.data);
      t.accumulate_fn(b_id, [&](std::vector<double>& g) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < d; ++o) g[o] += n.grad.data[r * d + o];
      });
    });
  }

  // LIF layer along axis 0, trained with backprop-through-time; the step
  // function's derivative is replaced by the triangular surrogate.
  int lif(int x_id, const LIFParams& p, const SurrogateSpec& spec) {
    p.validate();
    spec.validate();
    const RealTensor& x = value(x_id);
    if (x.rank() < 1) throw ShapeError("tape lif: input must have a time axis");
    const std::size_t t_steps = x.shape[0];
    const std::size_t rest = x.numel() / t_steps;
    auto u_saved = std::make_shared<std::vector<double>>(x.numel());
    RealTensor out(x.shape);
    std::vector<double> h(rest, 0.0);
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t i = 0; i < rest; ++i) {
        const double u = h[i] + x.data[t * rest + i];
        (*u_saved)[t * rest + i] = u;
        const bool fire = u >= p.v_th;
        out.data[t * rest + i] = fire ? 1.0 : 0.0;
        h[i] = fire ? p.v_reset : p.tau * u;
      }
    return push(std::move(out), {x_id},
                [x_id, p, spec, t_steps, rest, u_saved](Tape& t, const Node& n) {
                  t.accumulate_fn(x_id, [&](std::vector<double>& g) {
                    std::vector<double> g_h(rest, 0.0);
                    for (std::size_t step = t_steps; step-- > 0;) {
                      for (std::size_t i = 0; i < rest; ++i) {
                        const std::size_t idx = step * rest + i;
                        const double u = (*u_saved)[idx];
                        const double s = n.value.data[idx];
                        const double sg = surrogate_grad_scalar(u, p.v_th, spec);
                        const double dh_du = p.tau * (1.0 - s) + (p.v_reset - p.tau * u) * sg;
                        const double g_u = n.grad.data[idx] * sg + g_h[i] * dh_du;
                        g[idx] += g_u;
                        g_h[i] = g_u;  // flows into H[step-1]
                      }
                    }
                  });
                });
  }

  int sum_last(int x_id) {
    const RealTensor& x = value(x_id);
    if (x.rank() < 2) throw ShapeError("tape sum_last: rank must be >= 2");
    const std::size_t d = x.shape.back(), rows = x.numel() / d;
    Shape out_shape(x.shape.begin(), x.shape.end() - 1);
    RealTensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t e = 0; e < d; ++e) acc += x.data[r * d + e];
      out.data[r] = acc;
    }
    return push(std::move(out), {x_id}, [x_id, rows, d](Tape& t, const Node& n) {
      t.accumulate_fn(x_id, [&](std::vector<double>& g) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t e = 0; e < d; ++e) g[r * d + e] += n.grad.data[r];
      });
    });
  }

  // Row-wise outer product: y[row, i, j] = q[row, i] * k[row, j].
  int cro_att(int q_id, int k_id) {
    const RealTensor& q = value(q_id);
    const RealTensor& k = value(k_id);
    if (q.shape != k.shape || q.rank() < 1) throw ShapeError("tape cro_att: shape mismatch");
    const std::size_t n = q.shape.back(), rows = q.numel() / n;
    Shape out_shape = q.shape;
    out_shape.push_back(n);
    RealTensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          out.data[(r * n + i) * n + j] = q.data[r * n + i] * k.data[r * n + j];
    return push(std::move(out), {q_id, k_id}, [q_id, k_id, rows, n](Tape& t, const Node& node) {
      const RealTensor& q = t.value(q_id);
      const RealTensor& k = t.value(k_id);
      t.accumulate_fn(q_id, [&](std::vector<double>& g) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j)
              acc += node.grad.data[(r * n + i) * n + j] * k.data[r * n + j];
            g[r * n + i] += acc;
          }
      });
      t.accumulate_fn(k_id, [&](std::vector<double>& g) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i)
              acc += node.grad.data[(r * n + i) * n + j] * q.data[r * n + i];
            g[r * n + j] += acc;
          }
      });
    });
  }

  // Lower-triangular temporal mixing: y[t, r] = sum_{s<=t} m_w[t,s] x[s, r].
  // Strictly-upper entries of m_w never receive gradient.
  int temporal_mix(int x_id, int mw_id) {
    const RealTensor& x = value(x_id);
    const RealTensor& mw = value(mw_id);
    const std::size_t t_steps = x.shape.at(0);
    if (mw.rank() != 2 || mw.shape[0] != t_steps || mw.shape[1] != t_steps)
      throw ShapeError("tape temporal_mix: mixer must be [T,T]");
    const std::size_t rest = x.numel() / t_steps;
    RealTensor out(x.shape);
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t r = 0; r < rest; ++r) {
        double acc = 0.0;
        for (std::size_t s = 0; s <= t; ++s) acc += mw.at(t, s) * x.data[s * rest + r];
        out.data[t * rest + r] = acc;
      }
    return push(std::move(out), {x_id, mw_id},
                [x_id, mw_id, t_steps, rest](Tape& t, const Node& n) {
                  const RealTensor& x = t.value(x_id);
                  const RealTensor& mw = t.value(mw_id);
                  t.accumulate_fn(x_id, [&](std::vector<double>& g) {
                    for (std::size_t s = 0; s < t_steps; ++s)
                      for (std::size_t r = 0; r < rest; ++r) {
                        double acc = 0.0;
                        for (std::size_t tt = s; tt < t_steps; ++tt)
                          acc += mw.at(tt, s) * n.grad.data[tt * rest + r];
                        g[s * rest + r] += acc;
                      }
                  });
                  t.accumulate_fn(mw_id, [&](std::vector<double>& g) {
                    for (std::size_t tt = 0; tt < t_steps; ++tt)
                      for (std::size_t s = 0; s <= tt; ++s) {
                        double acc = 0.0;
                        for (std::size_t r = 0; r < rest; ++r)
                          acc += n.grad.data[tt * rest + r] * x.data[s * rest + r];
                        g[tt * t_steps + s] += acc;
                      }
                  });
                });
  }

  // y = a[0] * x with a scalar parameter stored as a [1] tensor.
  int scale_scalar(int x_id, int a_id) {
    const RealTensor& x = value(x_id);
    const RealTensor& a = value(a_id);
    if (a.numel() != 1) throw ShapeError("tape scale_scalar: scale must be a [1] tensor");
    RealTensor out(x.shape);
    for (std::size_t i = 0; i < x.numel(); ++i) out.data[i] = a.data[0] * x.data[i];
    return push(std::move(out), {x_id, a_id}, [x_id, a_id](Tape& t, const Node& n) {
      const RealTensor& x = t.value(x_id);
      const double a0 = t.value(a_id).data[0];
      t.accumulate_fn(x_id, [&](std::vector<double>& g) {
        for (std::size_t i = 0; i < x.numel(); ++i) g[i] += a0 * n.grad.data[i];
      });
      t.accumulate_fn(a_id, [&](std::vector<double>& g) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.numel(); ++i) acc += n.grad.data[i] * x.data[i];
        g[0] += acc;
      });
    });
  }

  // y[t, b, ...] = x[t, b, ...] * a[t, b]: the computed-alpha scaling.
  int scale_leading(int x_id, int a_id) {
    const RealTensor& x = value(x_id);
    const RealTensor& a = value(a_id);
    if (a.rank() + 1 != x.rank() ||
        !std::equal(a.shape.begin(), a.shape.end(), x.shape.begin()))
      throw ShapeError("tape scale_leading: scale must match the leading axes");
    const std::size_t lead = a.numel(), inner = x.numel() / lead;
    RealTensor out(x.shape);
    for (std::size_t l = 0; l < lead; ++l)
      for (std::size_t i = 0; i < inner; ++i)
        out.data[l * inner + i] = x.data[l * inner + i] * a.data[l];
    return push(std::move(out), {x_id, a_id}, [x_id, a_id, lead, inner](Tape& t, const Node& n) {
      const RealTensor& x = t.value(x_id);
      const RealTensor& a = t.value(a_id);
      t.accumulate_fn(x_id, [&](std::vector<double>& g) {
        for (std::size_t l = 0; l < lead; ++l)
          for (std::size_t i = 0; i < inner; ++i)
            g[l * inner + i] += n.grad.data[l * inner + i] * a.data[l];
      });
      t.accumulate_fn(a_id, [&](std::vector<double>& g) {
        for (std::size_t l = 0; l < lead; ++l) {
          double acc = 0.0;
          for (std::size_t i = 0; i < inner; ++i)
            acc += n.grad.data[l * inner + i] * x.data[l * inner + i];
          g[l] += acc;
        }
      });
    });
  }

  // Per-timestep threshold step with surrogate backward; vth is a [T]
  // parameter broadcast over everything after axis 0.
  int theta_per_t(int u_id, int vth_id, const SurrogateSpec& spec) {
    spec.validate();
    const RealTensor& u = value(u_id);
    const RealTensor& vth = value(vth_id);
    const std::size_t t_steps = u.shape.at(0);
    if (vth.numel() != t_steps) throw ShapeError("tape theta_per_t: threshold extent mismatch");
    const std::size_t rest = u.numel() / t_steps;
    RealTensor out(u.shape);
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t i = 0; i < rest; ++i)
        out.data[t * rest + i] = u.data[t * rest + i] >= vth.data[t] ? 1.0 : 0.0;
    return push(std::move(out), {u_id, vth_id},
                [u_id, vth_id, spec, t_steps, rest](Tape& t, const Node& n) {
                  const RealTensor& u = t.value(u_id);
                  const RealTensor& vth = t.value(vth_id);
                  t.accumulate_fn(u_id, [&](std::vector<double>& g) {
                    for (std::size_t tt = 0; tt < t_steps; ++tt)
                      for (std::size_t i = 0; i < rest; ++i) {
                        const std::size_t idx = tt * rest + i;
                        g[idx] += n.grad.data[idx] *
                                  surrogate_grad_scalar(u.data[idx], vth.data[tt], spec);
                      }
                  });
                  t.accumulate_fn(vth_id, [&](std::vector<double>& g) {
                    for (std::size_t tt = 0; tt < t_steps; ++tt) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < rest; ++i) {
                        const std::size_t idx = tt * rest + i;
                        acc -= n.grad.data[idx] *
                               surrogate_grad_scalar(u.data[idx], vth.data[tt], spec);
                      }
                      g[tt] += acc;
                    }
                  });
                });
  }

  // y[..., n, d] = s[..., n] * v[..., n, d]: mask V by the firing decision.
  int mask_last(int s_id, int v_id) {
    const RealTensor& s = value(s_id);
    const RealTensor& v = value(v_id);
    if (v.rank() != s.rank() + 1 ||
        !std::equal(s.shape.begin(), s.shape.end(), v.shape.begin()))
      throw ShapeError("tape mask_last: v must extend s by one trailing axis");
    const std::size_t rows = s.numel(), d = v.shape.back();
    RealTensor out(v.shape);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t e = 0; e < d; ++e) out.data[r * d + e] = s.data[r] * v.data[r * d + e];
    return push(std::move(out), {s_id, v_id}, [s_id, v_id, rows, d](Tape& t, const Node& n) {
      const RealTensor& s = t.value(s_id);
      const RealTensor& v = t.value(v_id);
      t.accumulate_fn(s_id, [&](std::vector<double>& g) {
        for (std::size_t r = 0; r < rows; ++r) {
          double acc = 0.0;
          for (std::size_t e = 0; e < d; ++e) acc += n.grad.data[r * d + e] * v.data[r * d + e];
          g[r] += acc;
        }
      });
      t.accumulate_fn(v_id, [&](std::vector<double>& g) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t e = 0; e < d; ++e) g[r * d + e] += n.grad.data[r * d + e] * s.data[r];
      });
    });
  }

  int reshape(int x_id, Shape shape) {
    RealTensor out = value(x_id).reshaped(std::move(shape));
    return push(std::move(out), {x_id},
                [x_id](Tape& t, const Node& n) { t.accumulate(x_id, n.grad.data); });
  }

  int permute(int x_id, std::vector<std::size_t> perm) {
    const RealTensor& x = value(x_id);
    if (perm.size() != x.rank()) throw ShapeError("tape permute: perm rank mismatch");
    Shape out_shape(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) out_shape[i] = x.shape.at(perm[i]);
    RealTensor out(out_shape);
    const auto mapping = std::make_shared<std::vector<std::size_t>>(x.numel());
    std::vector<std::size_t> in_strides(x.rank(), 1), out_strides(x.rank(), 1);
    for (std::size_t i = x.rank() - 1; i-- > 0;) {
      in_strides[i] = in_strides[i + 1] * x.shape[i + 1];
      out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    }
    std::vector<std::size_t> idx(x.rank(), 0);
    for (std::size_t flat = 0; flat < x.numel(); ++flat) {
      std::size_t rem = flat, out_flat = 0;
      for (std::size_t i = 0; i < x.rank(); ++i) {
        idx[i] = rem / in_strides[i];
        rem %= in_strides[i];
      }
      for (std::size_t i = 0; i < x.rank(); ++i) out_flat += idx[perm[i]] * out_strides[i];
      out.data[out_flat] = x.data[flat];
      (*mapping)[flat] = out_flat;  // input flat -> output flat
    }
    return push(std::move(out), {x_id}, [x_id, mapping](Tape& t, const Node& n) {
      t.accumulate_fn(x_id, [&](std::vector<double>& g) {
        for (std::size_t flat = 0; flat < g.size(); ++flat) g[flat] += n.grad.data[(*mapping)[flat]];
      });
    });
  }

  // Mean over timesteps and tokens: [T, B, N, D] -> [B, D].
  int gap_tokens_time(int x_id) {
    const RealTensor& x = value(x_id);
    if (x.rank() != 4) throw ShapeError("tape gap: expects [T,B,N,D]");
    const std::size_t t_steps = x.shape[0], b = x.shape[1], n = x.shape[2], d = x.shape[3];
    const double denom = static_cast<double>(t_steps * n);
    RealTensor out({b, d});
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t bb = 0; bb < b; ++bb)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t e = 0; e < d; ++e) out.at(bb, e) += x.at(t, bb, i, e);
    for (double& v : out.data) v /= denom;
    return push(std::move(out), {x_id}, [x_id, t_steps, b, n, d, denom](Tape& t, const Node& node) {
      t.accumulate_fn(x_id, [&](std::vector<double>& g) {
        for (std::size_t tt = 0; tt < t_steps; ++tt)
          for (std::size_t bb = 0; bb < b; ++bb)
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t e = 0; e < d; ++e)
                g[((tt * b + bb) * n + i) * d + e] += node.grad.data[bb * d + e] / denom;
      });
    });
  }

  // Mean cross-entropy of softmaxed logits against integer labels.
  int softmax_cross_entropy(int logits_id, std::vector<int> labels) {
    const RealTensor& logits = value(logits_id);
    if (logits.rank() != 2 || logits.shape[0] != labels.size())
      throw ShapeError("tape softmax_ce: logits must be [B, classes] matching labels");
    const std::size_t b = logits.shape[0], c = logits.shape[1];
    auto probs = std::make_shared<std::vector<double>>(logits.numel());
    double loss = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
      double mx = logits.data[r * c];
      for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits.data[r * c + j]);
      double z = 0.0;
      for (std::size_t j = 0; j < c; ++j) z += std::exp(logits.data[r * c + j] - mx);
      for (std::size_t j = 0; j < c; ++j)
        (*probs)[r * c + j] = std::exp(logits.data[r * c + j] - mx) / z;
      const int label = labels[r];
      if (label < 0 || static_cast<std::size_t>(label) >= c)
        throw DomainError("softmax_ce label out of range");
      loss -= std::log(std::max((*probs)[r * c + label], 1e-300));
    }
    loss /= static_cast<double>(b);
    RealTensor out({1}, {loss});
    auto lbl = std::make_shared<std::vector<int>>(std::move(labels));
    return push(std::move(out), {logits_id}, [logits_id, b, c, probs, lbl](Tape& t, const Node& n) {
      t.accumulate_fn(logits_id, [&](std::vector<double>& g) {
        const double gscale = n.grad.data[0] / static_cast<double>(b);
        for (std::size_t r = 0; r < b; ++r)
          for (std::size_t j = 0; j < c; ++j) {
            const double target = static_cast<std::size_t>((*lbl)[r]) == j ? 1.0 : 0.0;
            g[r * c + j] += gscale * ((*probs)[r * c + j] - target);
          }
      });
    });
  }

  int sum_all(int x_id) {
    const RealTensor& x = value(x_id);
    double acc = 0.0;
    for (double v : x.data) acc += v;
    RealTensor out({1}, {acc});
    return push(std::move(out), {x_id}, [x_id](Tape& t, const Node& n) {
      t.accumulate_fn(x_id, [&](std::vector<double>& g) {
        for (double& v : g) v += n.grad.data[0];
      });
    });
  }

  // Seeds the scalar loss with gradient 1 and replays every op in exact
  // reverse topological order. Disconnected parameters keep zero gradients.
  void backward(int loss_id) {
    check(loss_id);
    if (value(loss_id).numel() != 1) throw TapeError("backward: loss must be a scalar node");
    for (auto& n : nodes_) std::fill(n.grad.data.begin(), n.grad.data.end(), 0.0);
    nodes_[loss_id].grad.data[0] = 1.0;
    for (std::size_t i = loss_id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (n.backward_fn) n.backward_fn(*this, n);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    RealTensor value;
    RealTensor grad;
    std::vector<int> inputs;
    std::function<void(Tape&, const Node&)> backward_fn;
    bool requires_grad = false;
  };

  int check(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw TapeError("tape node id out of range");
    return id;
  }

  int push(RealTensor value, std::vector<int> inputs,
           std::function<void(Tape&, const Node&)> backward_fn, bool leaf_requires = false) {
    const int id = static_cast<int>(nodes_.size());
    bool needs_grad = leaf_requires;
    for (int in : inputs) {
      check(in);
      if (in >= id) throw TapeError("tape op references a node that does not exist yet");
      needs_grad = needs_grad || nodes_[in].requires_grad;
    }
    Node n;
    n.grad = RealTensor(value.shape);
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.backward_fn = std::move(backward_fn);
    n.requires_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return id;
  }

  void accumulate(int id, const std::vector<double>& g) {
    if (!nodes_[check(id)].requires_grad) return;
    auto& dst = nodes_[id].grad.data;
    if (dst.size() != g.size()) throw TapeError("gradient shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

  template <class Fn>
  void accumulate_fn(int id, Fn&& fn) {
    if (!nodes_[check(id)].requires_grad) return;  // skip work feeding pure inputs
    fn(nodes_[id].grad.data);
  }

  void conv2d_backward(const Node& n, int x_id, int w_id, std::size_t stride,
                       std::size_t dilation, std::size_t padding) {
    const RealTensor& x = value(x_id);
    const RealTensor& w = value(w_id);
    const std::size_t batch = x.shape[0], c_in = x.shape[1], h = x.shape[2], ww = x.shape[3];
    const std::size_t c_out = w.shape[0], k = w.shape[2];
    const std::size_t h_out = n.value.shape[2], w_out = n.value.shape[3];
    const bool need_x = nodes_[x_id].requires_grad;
    const bool need_w = nodes_[w_id].requires_grad;
    if (!need_x && !need_w) return;
    auto& gx = nodes_[x_id].grad.data;
    auto& gw = nodes_[w_id].grad.data;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t co = 0; co < c_out; ++co)
        for (std::size_t oy = 0; oy < h_out; ++oy)
          for (std::size_t ox = 0; ox < w_out; ++ox) {
            const double g = n.grad.data[((b * c_out + co) * h_out + oy) * w_out + ox];
            if (g == 0.0) continue;
            for (std::size_t ci = 0; ci < c_in; ++ci)
              for (std::size_t ky = 0; ky < k; ++ky) {
                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride) +
                                          static_cast<std::ptrdiff_t>(ky * dilation) -
                                          static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride) +
                                            static_cast<std::ptrdiff_t>(kx * dilation) -
                                            static_cast<std::ptrdiff_t>(padding);
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(ww)) continue;
                  const std::size_t x_idx =
                      ((b * c_in + ci) * h + static_cast<std::size_t>(iy)) * ww +
                      static_cast<std::size_t>(ix);
                  const std::size_t w_idx = ((co * c_in + ci) * k + ky) * k + kx;
                  if (need_x) gx[x_idx] += g * w.data[w_idx];
                  if (need_w) gw[w_idx] += g * x.data[x_idx];
                }
              }
          }
  }

  std::vector<Node> nodes_;
};

// Central finite differences against tape gradients over a caller-built
// subgraph. `build` receives the tape and the parameter node ids and returns
// the scalar loss node. Returns the max over parameter elements of
// |g_fd - g_tape| / max(1, |g_fd|).
template <class BuildFn>
double grad_check(BuildFn&& build, const std::vector<RealTensor>& point, double h) {
  if (!(h > 0.0)) throw DomainError("grad_check requires h > 0");

  const auto loss_at = [&](const std::vector<RealTensor>& p) {
    Tape tape;
    std::vector<int> ids;
    ids.reserve(p.size());
    for (const auto& tensor : p) ids.push_back(tape.param(tensor));
    const int loss = build(tape, ids);
    return tape.value(loss).data[0];
  };

  Tape tape;
  std::vector<int> ids;
  for (const auto& tensor : point) ids.push_back(tape.param(tensor));
  const int loss = build(tape, ids);
  if (tape.value(loss).numel() != 1) throw TapeError("grad_check: loss must be scalar");
  tape.backward(loss);

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < point.size(); ++pi) {
    for (std::size_t ei = 0; ei < point[pi].numel(); ++ei) {
      std::vector<RealTensor> plus = point, minus = point;
      plus[pi].data[ei] += h;
      minus[pi].data[ei] -= h;
      const double g_fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
      const double g_tape = tape.grad(ids[pi]).data[ei];
      const double err = std::abs(g_fd - g_tape) / std::max(1.0, std::abs(g_fd));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}

#endif
