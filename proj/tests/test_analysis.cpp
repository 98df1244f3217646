#include <catch2/catch_amalgamated.hpp>

#include "sssa/analysis.hpp"
#include "sssa/attention.hpp"

using namespace sssa;

// Exact folded-ratio variance at the reference parameters (p=0.15, D=128),
// frozen from an exhaustive 50-digit enumeration of the same double sum.
static constexpr double kGoldenSpikeVariance = 0.013237125425970278;
static constexpr double kGoldenSpikeMean = 1.1350385453564587;

TEST_CASE("ratio_var_exact golden value at the reference parameters") {
  RatioMoments m = ratio_var_exact(0.15, 128);
  CHECK(m.variance == Catch::Approx(kGoldenSpikeVariance).epsilon(1e-9));
  CHECK(m.mean == Catch::Approx(kGoldenSpikeMean).epsilon(1e-9));
}

TEST_CASE("ratio_var_exact degenerate cases") {
  RatioMoments near_one = ratio_var_exact(1.0 - 1e-12, 128);
  CHECK(near_one.variance < 1e-9);  // all mass on k = l = D, ratio pinned at 1

  RatioMoments forced = ratio_var_exact(0.5, 1);
  CHECK(forced.mean == Catch::Approx(1.0));
  CHECK(std::abs(forced.variance) < 1e-15);

  CHECK_THROWS_AS(ratio_var_exact(0.0, 8), DomainError);
  CHECK_THROWS_AS(ratio_var_exact(1.0, 8), DomainError);
}

TEST_CASE("ratio_var_mc matches the exact enumeration in spike mode") {
  RatioStudyConfig cfg;
  cfg.trials = 100'000;
  cfg.seed = 11;
  RatioMcResult r = ratio_var_mc(cfg);
  CHECK(r.moments.variance ==
        Catch::Approx(kGoldenSpikeVariance).epsilon(0.05));  // 1e5 trials, loose window
  CHECK(r.moments.kept + r.moments.excluded == cfg.trials);

  // histogram covers every kept sample, edges folded at >= 1
  std::uint64_t total = 0;
  for (auto c : r.hist.counts) total += c;
  CHECK(total == r.moments.kept);
  CHECK(r.hist.edges.front() >= 1.0);
}

TEST_CASE("ratio_var_mc is deterministic given the seed") {
  RatioStudyConfig cfg;
  cfg.trials = 20'000;
  cfg.seed = 3;
  RatioMcResult a = ratio_var_mc(cfg);
  RatioMcResult b = ratio_var_mc(cfg);
  CHECK(a.moments.variance == b.moments.variance);
  CHECK(a.moments.mean == b.moments.mean);
}

TEST_CASE("ratio_var_mc near-deterministic rate has vanishing variance") {
  RatioStudyConfig cfg;
  cfg.p = 1.0 - 1e-12;
  cfg.trials = 10'000;
  RatioMcResult r = ratio_var_mc(cfg);
  CHECK(r.moments.variance < 1e-6);
}

TEST_CASE("gaussian mode variance sits far below spike mode") {
  RatioStudyConfig cfg;
  cfg.mode = RatioMode::Gaussian;
  cfg.trials = 100'000;
  cfg.seed = 17;
  RatioMcResult gauss = ratio_var_mc(cfg);
  CHECK(gauss.moments.variance < kGoldenSpikeVariance / 10.0);

  // variance interpretation of the spread parameter is also exposed
  cfg.sigma_is_variance = true;
  RatioMcResult tighter = ratio_var_mc(cfg);
  CHECK(tighter.moments.variance < gauss.moments.variance);
}

TEST_CASE("unfolded mode reports raw ratios on both sides of 1") {
  RatioStudyConfig cfg;
  cfg.fold = false;
  cfg.trials = 20'000;
  cfg.seed = 19;
  RatioMcResult r = ratio_var_mc(cfg);
  CHECK(r.hist.edges.front() < 1.0);
  CHECK(r.hist.edges.back() > 1.0);
  CHECK(r.moments.mean == Catch::Approx(1.0).margin(0.05));
}

TEST_CASE("mostly-degenerate draws raise a statistics error") {
  RatioStudyConfig cfg;
  cfg.p = 0.001;
  cfg.d = 1;  // zero counts dominate
  cfg.trials = 10'000;
  CHECK_THROWS_AS(ratio_var_mc(cfg), StatsError);
}

TEST_CASE("mc estimate converges toward the exact value with more trials") {
  RatioStudyConfig small;
  small.trials = 10'000;
  small.seed = 29;
  RatioStudyConfig big = small;
  big.trials = 1'000'000;
  const double err_small = std::abs(ratio_var_mc(small).moments.variance - kGoldenSpikeVariance);
  const double err_big = std::abs(ratio_var_mc(big).moments.variance - kGoldenSpikeVariance);
  CHECK(err_big < err_small);
  CHECK(err_big < 0.02 * kGoldenSpikeVariance);
}

TEST_CASE("taylor study reference numbers") {
  TaylorStudy t = taylor_study(0.15, 0.1, 0.2, 10'001);
  CHECK(t.k_hat == Catch::Approx(6.6666666667).epsilon(1e-9));
  CHECK(t.b_hat == Catch::Approx(-2.8971199849).epsilon(1e-9));
  CHECK(t.max_abs_error == Catch::Approx(0.0721317748).margin(1e-7));
  CHECK(t.argmax == Catch::Approx(0.1).margin(1e-6));
}

TEST_CASE("taylor study degenerate and error cases") {
  TaylorStudy at_x0 = taylor_study(0.15, 0.15, 0.15, 1);
  CHECK(at_x0.max_abs_error == 0.0);

  // the expansion point itself has zero error on the grid
  TaylorStudy t = taylor_study(0.5, 0.25, 0.75, 5);  // grid contains 0.5
  CHECK(std::abs(std::log(0.5) - (t.k_hat * 0.5 + t.b_hat)) < 1e-15);

  CHECK_THROWS_AS(taylor_study(0.15, -0.1, 0.2, 100), DomainError);
  CHECK_THROWS_AS(taylor_study(0.15, 0.2, 0.3, 100), DomainError);
}

TEST_CASE("taylor error is monotone in range width") {
  double prev = 0.0;
  for (double w : {0.01, 0.02, 0.05, 0.08, 0.1}) {
    TaylorStudy t = taylor_study(0.15, 0.15 - w * 0.5, 0.15 + w, 4001);
    CHECK(t.max_abs_error >= prev);
    prev = t.max_abs_error;
  }
}

TEST_CASE("scaling_fit recovers synthetic exponents") {
  std::vector<double> sizes = {16, 32, 64, 128};
  std::vector<double> quad, lin;
  for (double s : sizes) {
    quad.push_back(3.0 * s * s);
    lin.push_back(7.0 * s);
  }
  CHECK(scaling_fit(sizes, quad) == Catch::Approx(2.0).margin(1e-9));
  CHECK(scaling_fit(sizes, lin) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("scaling_fit input validation") {
  CHECK_THROWS_AS(scaling_fit({1, 2, 3}, {1, 2, 3}), DomainError);
  CHECK_THROWS_AS(scaling_fit({16, 24, 32, 40}, {1, 2, 3, 4}), DomainError);  // < 8x span
  CHECK_THROWS_AS(scaling_fit({1, 2, 4, 16}, {1, 2, 0, 4}), DomainError);
}

TEST_CASE("energy estimate basics") {
  EnergyReport empty = energy_estimate(OpCounter{});
  CHECK(empty.total == 0.0);

  OpCounter c;
  c.ac = 1'000'000'000;
  EnergyReport r = energy_estimate(c);
  CHECK(r.total == Catch::Approx(0.9e-3).epsilon(1e-12));
  CHECK(r.total == r.ac_energy + r.mac_energy);

  EnergyConstants custom{1.0e-12, 2.0e-12};
  c.mac = 5;
  EnergyReport r2 = energy_estimate(c, custom);
  CHECK(r2.mac_energy == Catch::Approx(1.0e-11));
}

TEST_CASE("v2 forward costs less energy than the baseline and the gap widens with N") {
  RngState rng(67);
  const std::size_t t = 4, d = 32;
  double prev_ratio = 0.0;
  for (std::size_t n : {std::size_t{16}, std::size_t{32}, std::size_t{64}, std::size_t{128}}) {
    SpikeTensor q = bernoulli_spikes({t, n, d}, 0.15, rng);
    SpikeTensor k = bernoulli_spikes({t, n, d}, 0.15, rng);
    SpikeTensor v = bernoulli_spikes({t, n, d}, 0.15, rng);

    SaccadicParams p;
    p.m_w = RealTensor({t, t});
    for (std::size_t i = 0; i < t; ++i) p.m_w.at(i, i) = 1.0;
    p.v_th = RealTensor({t}, 2.0);
    p.alpha = static_cast<double>(n) * 0.15;

    OpCounter v2_counter;
    sssa_v2(q, k, v, p, AlphaMode::Learned, &v2_counter);
    OpCounter ssa_counter;
    ssa_baseline(q, k, v, ssa_counter);

    const double e_v2 = energy_estimate(v2_counter).total;
    const double e_ssa = energy_estimate(ssa_counter).total;
    CHECK(e_v2 < e_ssa);
    const double ratio = e_ssa / e_v2;
    CHECK(ratio > prev_ratio);
    prev_ratio = ratio;
  }
}
