#ifndef SSSA_ANALYSIS_HPP
#define SSSA_ANALYSIS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sssa/opcounter.hpp"
#include "sssa/tensor.hpp"

namespace sssa {

enum class RatioMode { BinomialSpike, Gaussian };

// Configuration for the magnitude-ratio distribution study.
struct RatioStudyConfig {
  RatioMode mode = RatioMode::BinomialSpike;
  double p = 0.15;        // spike firing rate
  std::size_t d = 128;    // vector dimension
  double mu = 35.0;       // gaussian mean
  double sigma = 10.0;    // gaussian spread
  bool sigma_is_variance = false;
  std::size_t trials = 1'000'000;
  std::uint64_t seed = 0;
  bool fold = true;  // report max/min ratio >= 1
  std::size_t bins = 60;

  void validate() const {
    if (mode == RatioMode::BinomialSpike && !(p > 0.0 && p < 1.0))
      throw DomainError("spike mode requires 0 < p < 1");
    if (d < 1) throw DomainError("dimension must be >= 1");
    if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  }
};

struct RatioMoments {
  double mean = 0.0;
  double variance = 0.0;
  std::uint64_t kept = 0;
  std::uint64_t excluded = 0;
};

struct Histogram {
  std::vector<double> edges;          // bins+1 edges
  std::vector<std::uint64_t> counts;  // bins entries
};

struct RatioMcResult {
  RatioMoments moments;
  Histogram hist;
};

// Exact moments of the folded magnitude ratio sqrt(max(k,l)/min(k,l)) with
// k, l independent Binomial(D, p) squared norms. Pairs where either count is
// zero are excluded and the remaining mass renormalized.
inline RatioMoments ratio_var_exact(double p, std::size_t d) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("ratio_var_exact requires 0 < p < 1");
  // pmf in log space; extreme rates underflow harmlessly to zero mass
  std::vector<double> pmf(d + 1);
  const double log_p = std::log(p), log_q = std::log1p(-p);
  const double lg_n = std::lgamma(static_cast<double>(d) + 1.0);
  for (std::size_t k = 0; k <= d; ++k) {
    const double lchoose = lg_n - std::lgamma(static_cast<double>(k) + 1.0) -
                           std::lgamma(static_cast<double>(d - k) + 1.0);
    pmf[k] = std::exp(lchoose + static_cast<double>(k) * log_p +
                      static_cast<double>(d - k) * log_q);
  }

  double z = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t k = 1; k <= d; ++k)
    for (std::size_t l = 1; l <= d; ++l) {
      const double w = pmf[k] * pmf[l];
      const double r2 = static_cast<double>(std::max(k, l)) / static_cast<double>(std::min(k, l));
      z += w;
      m1 += w * std::sqrt(r2);
      m2 += w * r2;
    }
  RatioMoments out;
  out.mean = m1 / z;
  out.variance = m2 / z - out.mean * out.mean;
  return out;
}

// Monte Carlo companion of ratio_var_exact, also covering the gaussian
// (ANN-like) mode. Trials draw from per-trial substreams so results do not
// depend on how the trial range is partitioned.
inline RatioMcResult ratio_var_mc(const RatioStudyConfig& cfg) {
  cfg.validate();
  if (cfg.trials < 10'000) throw DomainError("ratio_var_mc requires at least 1e4 trials");

  const double sigma = cfg.sigma_is_variance ? std::sqrt(cfg.sigma) : cfg.sigma;
  RngState base(cfg.seed);
  std::vector<double> ratios;
  ratios.reserve(cfg.trials);
  std::uint64_t excluded = 0;
  for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
    RngState r = base.stream(trial);
    double nq2 = 0.0, nk2 = 0.0;
    if (cfg.mode == RatioMode::BinomialSpike) {
      for (std::size_t i = 0; i < cfg.d; ++i) nq2 += r.next_double() < cfg.p ? 1.0 : 0.0;
      for (std::size_t i = 0; i < cfg.d; ++i) nk2 += r.next_double() < cfg.p ? 1.0 : 0.0;
    } else {
      for (std::size_t i = 0; i < cfg.d; ++i) {
        const double x = cfg.mu + sigma * r.next_gaussian();
        nq2 += x * x;
      }
      for (std::size_t i = 0; i < cfg.d; ++i) {
        const double x = cfg.mu + sigma * r.next_gaussian();
        nk2 += x * x;
      }
    }
    const double denom = cfg.fold ? std::min(nq2, nk2) : nk2;
    const double numer = cfg.fold ? std::max(nq2, nk2) : nq2;
    if (denom == 0.0) {
      ++excluded;
      continue;
    }
    ratios.push_back(std::sqrt(numer / denom));
  }
  if (excluded * 2 > cfg.trials)
    throw StatsError("ratio_var_mc: more than half of all trials drew a zero denominator");

  RatioMcResult out;
  out.moments.kept = ratios.size();
  out.moments.excluded = excluded;
  double m1 = 0.0, m2 = 0.0;
  for (double v : ratios) {
    m1 += v;
    m2 += v * v;
  }
  const double n = static_cast<double>(ratios.size());
  out.moments.mean = m1 / n;
  out.moments.variance = m2 / n - out.moments.mean * out.moments.mean;

  const auto [lo_it, hi_it] = std::minmax_element(ratios.begin(), ratios.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi == lo) hi = lo + 1.0;  // degenerate spread still gets one usable bin
  out.hist.edges.resize(cfg.bins + 1);
  out.hist.counts.assign(cfg.bins, 0);
  for (std::size_t i = 0; i <= cfg.bins; ++i)
    out.hist.edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.bins);
  for (double v : ratios) {
    auto bin = static_cast<std::size_t>((v - lo) / (hi - lo) * static_cast<double>(cfg.bins));
    if (bin >= cfg.bins) bin = cfg.bins - 1;
    ++out.hist.counts[bin];
  }
  return out;
}

// First-order expansion of log(x) at x0 and its worst error over [a, b].
struct TaylorStudy {
  double x0 = 0.0, a = 0.0, b = 0.0;
  double k_hat = 0.0;  // 1/x0
  double b_hat = 0.0;  // log(x0) - 1
  double max_abs_error = 0.0;
  double argmax = 0.0;
};

inline TaylorStudy taylor_study(double x0, double a, double b, std::size_t grid_points) {
  if (!(a > 0.0)) throw DomainError("taylor_study requires a > 0");
  if (!(a <= x0 && x0 <= b)) throw DomainError("taylor_study requires a <= x0 <= b");
  if (grid_points < 2 && a != b) throw DomainError("taylor_study needs at least 2 grid points");
  TaylorStudy out;
  out.x0 = x0;
  out.a = a;
  out.b = b;
  out.k_hat = 1.0 / x0;
  out.b_hat = std::log(x0) - 1.0;
  out.argmax = x0;
  const auto err_at = [&](double x) { return std::abs(std::log(x) - (out.k_hat * x + out.b_hat)); };
  if (a == b) {
    out.max_abs_error = err_at(a);
    out.argmax = a;
    return out;
  }
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double x =
        a + (b - a) * static_cast<double>(i) / static_cast<double>(grid_points - 1);
    const double e = err_at(x);
    if (e > out.max_abs_error) {
      out.max_abs_error = e;
      out.argmax = x;
    }
  }
  return out;
}

// Least-squares slope of log(count) against log(size); the empirical scaling
// exponent behind the complexity claims.
inline double scaling_fit(const std::vector<double>& sizes, const std::vector<double>& counts) {
  if (sizes.size() != counts.size() || sizes.size() < 4)
    throw DomainError("scaling_fit needs >= 4 matched (size, count) pairs");
  const auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  if (*lo <= 0.0 || *hi / *lo < 8.0)
    throw DomainError("scaling_fit sizes must be positive and span at least an 8x range");
  for (double c : counts)
    if (!(c > 0.0)) throw DomainError("scaling_fit counts must all be positive");

  const std::size_t n = sizes.size();
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::log(sizes[i]), y = std::log(counts[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double dn = static_cast<double>(n);
  return (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
}

// 45nm-process energy constants; overridable, always echoed into reports.
struct EnergyConstants {
  double e_ac = 0.9e-12;   // joules per accumulate
  double e_mac = 4.6e-12;  // joules per multiply-accumulate
};

struct EnergyReport {
  double ac_energy = 0.0;
  double mac_energy = 0.0;
  double total = 0.0;
  EnergyConstants constants;
  OpCounter counts;
};

inline EnergyReport energy_estimate(const OpCounter& c, EnergyConstants k = {}) {
  EnergyReport out;
  out.constants = k;
  out.counts = c;
  out.ac_energy = static_cast<double>(c.ac) * k.e_ac;
  out.mac_energy = static_cast<double>(c.mac) * k.e_mac;
  out.total = out.ac_energy + out.mac_energy;
  return out;
}

}

#endif
