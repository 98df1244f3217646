#ifndef SSSA_CLI_HPP
#define SSSA_CLI_HPP

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sssa/analysis.hpp"
#include "sssa/attention.hpp"
#include "sssa/autodiff.hpp"
#include "sssa/io.hpp"
#include "sssa/training.hpp"
#include "sssa/version.hpp"

namespace sssa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerificationFailed = 1;
inline constexpr int kExitUsage = 2;

namespace detail {

inline std::string resolve_out_dir(const std::string& flag_value) {
  std::string dir = flag_value;
  if (dir.empty()) {
    if (const char* env = std::getenv("SSSA_OUT_DIR")) dir = env;
  }
  if (dir.empty()) dir = ".";
  std::filesystem::create_directories(dir);
  return dir;
}

// Every report carries the resolved configuration, the master seed and the
// artifact version, so it can be interpreted without the invoking shell.
inline nlohmann::json base_report(const std::string& command, std::uint64_t seed,
                                  nlohmann::json config) {
  return {{"artifact_version", kVersion},
          {"command", command},
          {"master_seed", seed},
          {"config", std::move(config)}};
}

inline void write_report(const std::string& dir, const std::string& file,
                         const nlohmann::json& j) {
  const std::string path = dir + "/" + file;
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write report '" + path + "'");
  out << j.dump(1) << "\n";
  std::cout << "wrote " << path << "\n";
}

inline SaccadicParams identity_saccade(std::size_t t, double v_th, double alpha) {
  SaccadicParams p;
  p.m_w = RealTensor({t, t});
  for (std::size_t i = 0; i < t; ++i) p.m_w.at(i, i) = 1.0;
  p.v_th = RealTensor({t}, v_th);
  p.alpha = alpha;
  return p;
}

// Expands `--config file.json` into option tokens. The file holds a JSON
// object keyed by option names (without dashes); options given explicitly on
// the command line win over config-file values.
inline std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string path;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config expects a file path");
      path = args[++i];
    } else if (a.rfind("--config=", 0) == 0) {
      path = a.substr(9);
    } else {
      out.push_back(a);
    }
  }
  if (path.empty()) return out;

  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config file must hold a JSON object of option values");

  for (const auto& [key, value] : j.items()) {
    const std::string flag = "--" + key;
    bool given_explicitly = false;
    for (const auto& a : out)
      if (a == flag || a.rfind(flag + "=", 0) == 0) {
        given_explicitly = true;
        break;
      }
    if (given_explicitly) continue;
    if (value.is_array()) {
      out.push_back(flag);
      for (const auto& e : value)
        out.push_back(e.is_string() ? e.get<std::string>() : e.dump());
    } else if (value.is_string()) {
      out.push_back(flag + "=" + value.get<std::string>());
    } else {
      out.push_back(flag + "=" + value.dump());
    }
  }
  return out;
}

}

// ---------------------------------------------------------------------------
// analyze-ratio
// ---------------------------------------------------------------------------

struct RatioArgs {
  std::string mode = "spike";
  double p = 0.15;
  std::size_t d = 128;
  double mu = 35.0;
  double sigma = 10.0;
  bool sigma_is_variance = false;
  std::size_t trials = 1'000'000;
  std::size_t bins = 60;
  bool fold = true;
  std::uint64_t seed = 0;
  std::string out;
};

inline constexpr double kReferenceSnnVariance = 0.2322;
inline constexpr double kReferenceAnnVariance = 0.00844;

inline int run_analyze_ratio(const RatioArgs& a) {
  RatioStudyConfig cfg;
  cfg.mode = a.mode == "gaussian" ? RatioMode::Gaussian : RatioMode::BinomialSpike;
  cfg.p = a.p;
  cfg.d = a.d;
  cfg.mu = a.mu;
  cfg.sigma = a.sigma;
  cfg.sigma_is_variance = a.sigma_is_variance;
  cfg.trials = a.trials;
  cfg.seed = a.seed;
  cfg.fold = a.fold;
  cfg.bins = a.bins;

  const std::string dir = detail::resolve_out_dir(a.out);
  RatioMcResult mc = ratio_var_mc(cfg);

  nlohmann::json report = detail::base_report(
      "analyze-ratio", a.seed,
      {{"mode", a.mode},
       {"p", a.p},
       {"d", a.d},
       {"mu", a.mu},
       {"sigma", a.sigma},
       {"sigma_is_variance", a.sigma_is_variance},
       {"trials", a.trials},
       {"bins", a.bins},
       {"fold", a.fold}});
  report["monte_carlo"] = {{"mean", mc.moments.mean},
                           {"variance", mc.moments.variance},
                           {"kept", mc.moments.kept},
                           {"excluded", mc.moments.excluded}};

  if (cfg.mode == RatioMode::BinomialSpike) {
    RatioMoments exact = ratio_var_exact(a.p, a.d);
    const bool reference_agrees = std::abs(exact.variance - kReferenceSnnVariance) <= 0.07;
    report["exact"] = {{"mean", exact.mean}, {"variance", exact.variance}};
    report["mc_vs_exact_relative_error"] =
        std::abs(mc.moments.variance - exact.variance) / exact.variance;
    report["reference"] = {{"snn_variance", kReferenceSnnVariance},
                           {"agrees_within_0.07", reference_agrees}};
    if (!reference_agrees)
      report["reference"]["estimator_note"] =
          "The exhaustive enumeration here folds the ratio as sqrt(max/min) over "
          "squared binomial norms, excludes zero-count pairs, and renormalizes; "
          "under that convention the exact variance differs from the published "
          "reference estimate, which evidently used a different folding or "
          "exclusion convention. The enumeration is this artifact's ground truth "
          "and both values are reported side by side.";
  } else {
    report["reference"] = {{"ann_variance", kReferenceAnnVariance}};
  }

  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < mc.hist.counts.size(); ++i)
    rows.push_back({mc.hist.edges[i], mc.hist.edges[i + 1],
                    static_cast<double>(mc.hist.counts[i])});
  write_csv(dir + "/ratio_hist.csv", {"bin_left", "bin_right", "count"}, rows);
  detail::write_report(dir, "ratio_report.json", report);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// analyze-taylor
// ---------------------------------------------------------------------------

struct TaylorArgs {
  double x0 = 0.15;
  std::vector<double> range = {0.1, 0.2};
  std::size_t grid = 10'000;
  std::string out;
};

inline int run_analyze_taylor(const TaylorArgs& a) {
  if (a.range.size() != 2) throw ConfigError("--range expects exactly two values");
  const std::string dir = detail::resolve_out_dir(a.out);
  TaylorStudy t = taylor_study(a.x0, a.range[0], a.range[1], a.grid);
  nlohmann::json report = detail::base_report(
      "analyze-taylor", 0,
      {{"x0", a.x0}, {"range", a.range}, {"grid_points", a.grid}});
  report["k_hat"] = t.k_hat;
  report["b_hat"] = t.b_hat;
  report["max_abs_error"] = t.max_abs_error;
  report["argmax"] = t.argmax;
  detail::write_report(dir, "taylor_report.json", report);
  std::cout << "max |log x - (k x + b)| = " << t.max_abs_error << " at x = " << t.argmax << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify-equivalence
// ---------------------------------------------------------------------------

struct EquivalenceArgs {
  std::string variant = "v1v2";
  std::size_t trials = 1000;
  std::size_t max_t = 4;
  std::size_t max_n = 8;
  std::size_t max_d = 8;
  std::uint64_t seed = 7;
  std::string out;
};

// Random instances in the certified-equivalence regime: either T = 1 with
// arbitrary K, or T > 1 with K built to give a constant per-timestep alpha.
inline int run_verify_equivalence(const EquivalenceArgs& a) {
  if (a.variant != "v1v2") throw ConfigError("--variant supports only 'v1v2'");
  const std::string dir = detail::resolve_out_dir(a.out);
  RngState base(a.seed);
  std::size_t identical = 0;
  for (std::size_t trial = 0; trial < a.trials; ++trial) {
    RngState rng = base.stream(trial);
    const bool single_step = trial % 2 == 0;
    const std::size_t t =
        single_step ? 1 : 2 + static_cast<std::size_t>(rng.next_double() * (a.max_t - 1));
    const std::size_t n = 2 + static_cast<std::size_t>(rng.next_double() * (a.max_n - 1));
    const std::size_t d = 1 + static_cast<std::size_t>(rng.next_double() * a.max_d);

    SpikeTensor q = bernoulli_spikes({t, n, d}, 0.4, rng);
    SpikeTensor v = bernoulli_spikes({t, n, d}, 0.4, rng);
    SpikeTensor k({t, n, d});
    if (single_step) {
      k = bernoulli_spikes({t, n, d}, 0.4, rng);
    } else {
      const std::size_t count = 1 + static_cast<std::size_t>(rng.next_double() * (n * d - 1));
      for (std::size_t tt = 0; tt < t; ++tt) {
        std::size_t placed = 0;
        while (placed < count) {
          const auto pos =
              std::min(static_cast<std::size_t>(rng.next_double() * (n * d)), n * d - 1);
          auto& cell = k.data[tt * n * d + pos];
          if (cell == 0) {
            cell = 1;
            ++placed;
          }
        }
      }
    }

    SaccadicParams p;
    p.m_w = RealTensor({t, t});
    for (std::size_t i = 0; i < t; ++i) {
      p.m_w.at(i, i) = 0.3 + rng.next_double() * 2.0;
      for (std::size_t j = 0; j < i; ++j) p.m_w.at(i, j) = rng.next_double() - 0.5;
    }
    p.v_th = RealTensor({t});
    for (double& vt : p.v_th.data)
      vt = rng.next_double() * static_cast<double>(n * d);

    AttentionOutput lhs = sssa_v1(q, k, v, p);
    AttentionOutput rhs = sssa_v2(q, k, v, p, AlphaMode::Computed);
    if (lhs.spikes.data == rhs.spikes.data && lhs.masked_v.data == rhs.masked_v.data)
      ++identical;
  }

  const bool pass = identical == a.trials;
  std::cout << identical << "/" << a.trials << " identical\n";
  nlohmann::json report = detail::base_report(
      "verify-equivalence", a.seed,
      {{"variant", a.variant},
       {"trials", a.trials},
       {"max_t", a.max_t},
       {"max_n", a.max_n},
       {"max_d", a.max_d}});
  report["identical"] = identical;
  report["pass"] = pass;
  detail::write_report(dir, "equivalence_report.json", report);
  return pass ? kExitOk : kExitVerificationFailed;
}

// ---------------------------------------------------------------------------
// verify-agreement
// ---------------------------------------------------------------------------

struct AgreementArgs {
  std::size_t trials = 1000;
  std::size_t t = 4;
  std::uint64_t seed = 0;
  std::string out;
};

inline int run_verify_agreement(const AgreementArgs& a) {
  const std::string dir = detail::resolve_out_dir(a.out);
  RngState base(a.seed);

  // diagonal-positive mixers: agreement must be exact
  bool diagonal_pass = true;
  for (std::size_t trial = 0; trial < 20; ++trial) {
    RngState rng = base.stream(trial);
    SaccadicParams p;
    p.m_w = RealTensor({a.t, a.t});
    for (std::size_t i = 0; i < a.t; ++i) p.m_w.at(i, i) = 0.1 + rng.next_double() * 3.0;
    p.v_th = RealTensor({a.t});
    for (double& v : p.v_th.data) v = rng.next_double() * 2.0;
    if (train_infer_agreement(p, a.trials / 20 + 1, base.stream(1000 + trial)) != 1.0)
      diagonal_pass = false;
  }

  // general lower-triangular mixer: agreement is reported, not asserted
  SaccadicParams general;
  general.m_w = RealTensor({a.t, a.t});
  RngState grand = base.stream(77);
  for (std::size_t i = 0; i < a.t; ++i) {
    general.m_w.at(i, i) = 0.5 + grand.next_double();
    for (std::size_t j = 0; j < i; ++j) general.m_w.at(i, j) = grand.next_double() - 0.25;
  }
  general.v_th = RealTensor({a.t});
  for (double& v : general.v_th.data) v = grand.next_double() * 2.0;
  const double general_agreement = train_infer_agreement(general, a.trials, base.stream(88));

  // the documented counterexample must reproduce exactly
  SaccadicParams ce;
  ce.m_w = RealTensor({2, 2}, {1, 0, 0.5, 1});
  ce.v_th = RealTensor({2}, {1.5, 0.9});
  RealTensor patch({2, 1}, {2, 0});
  SpikeTensor trained = saccadic_train(ce, patch);
  fold_thresholds(ce);
  SpikeTensor i0 = saccadic_infer_step(ce, RealTensor({1}, {2}), 0);
  SpikeTensor i1 = saccadic_infer_step(ce, RealTensor({1}, {0}), 1);
  const bool counterexample_pass = trained.data == std::vector<std::uint8_t>{1, 1} &&
                                   i0.data[0] == 1 && i1.data[0] == 0;

  std::cout << "diagonal agreement: " << (diagonal_pass ? "1.0 exact" : "BROKEN") << "\n"
            << "general agreement: " << general_agreement << "\n"
            << "counterexample reproduces: " << (counterexample_pass ? "yes" : "NO") << "\n";

  nlohmann::json report = detail::base_report("verify-agreement", a.seed,
                                              {{"trials", a.trials}, {"t", a.t}});
  report["diagonal_agreement_exact"] = diagonal_pass;
  report["general_agreement"] = general_agreement;
  report["counterexample"] = {{"m_w", {1.0, 0.0, 0.5, 1.0}},
                              {"v_th", {1.5, 0.9}},
                              {"patch", {2.0, 0.0}},
                              {"train_spikes", {1, 1}},
                              {"infer_spikes", {1, 0}},
                              {"reproduced", counterexample_pass}};
  detail::write_report(dir, "agreement_report.json", report);
  return diagonal_pass && counterexample_pass ? kExitOk : kExitVerificationFailed;
}

// ---------------------------------------------------------------------------
// bench-scaling
// ---------------------------------------------------------------------------

struct ScalingArgs {
  std::size_t t = 4;
  std::vector<std::size_t> n_list = {16, 32, 64, 128};
  std::vector<std::size_t> d_list = {8, 16, 32, 64};
  std::size_t d_fixed = 32;
  std::size_t n_fixed = 64;
  double rate = 0.15;
  std::uint64_t seed = 0;
  std::string out;
};

struct ScalingOutcome {
  double v2_vs_n = 0.0;
  double ssa_vs_n = 0.0;
  double v2_vs_d = 0.0;
  std::vector<std::uint64_t> v2_n_counts, ssa_n_counts, v2_d_counts;
  bool pass = false;
};

inline ScalingOutcome run_scaling_study(const ScalingArgs& a) {
  RngState base(a.seed);
  ScalingOutcome out;

  const auto v2_total = [&](std::size_t t, std::size_t n, std::size_t d, RngState rng) {
    SpikeTensor q = bernoulli_spikes({t, n, d}, a.rate, rng);
    SpikeTensor k = bernoulli_spikes({t, n, d}, a.rate, rng);
    SpikeTensor v = bernoulli_spikes({t, n, d}, a.rate, rng);
    SaccadicParams p = detail::identity_saccade(t, 1.0, static_cast<double>(n) * a.rate);
    OpCounter c;
    sssa_v2(q, k, v, p, AlphaMode::Learned, &c);
    return c.total();
  };
  const auto ssa_total = [&](std::size_t t, std::size_t n, std::size_t d, RngState rng) {
    SpikeTensor q = bernoulli_spikes({t, n, d}, a.rate, rng);
    SpikeTensor k = bernoulli_spikes({t, n, d}, a.rate, rng);
    SpikeTensor v = bernoulli_spikes({t, n, d}, a.rate, rng);
    OpCounter c;
    ssa_baseline(q, k, v, c);
    return c.total();
  };

  std::vector<double> sizes, counts;
  for (std::size_t i = 0; i < a.n_list.size(); ++i) {
    const auto c = v2_total(a.t, a.n_list[i], a.d_fixed, base.stream(i));
    out.v2_n_counts.push_back(c);
    sizes.push_back(static_cast<double>(a.n_list[i]));
    counts.push_back(static_cast<double>(c));
  }
  out.v2_vs_n = scaling_fit(sizes, counts);

  counts.clear();
  for (std::size_t i = 0; i < a.n_list.size(); ++i) {
    const auto c = ssa_total(a.t, a.n_list[i], a.d_fixed, base.stream(100 + i));
    out.ssa_n_counts.push_back(c);
    counts.push_back(static_cast<double>(c));
  }
  out.ssa_vs_n = scaling_fit(sizes, counts);

  sizes.clear();
  counts.clear();
  for (std::size_t i = 0; i < a.d_list.size(); ++i) {
    const auto c = v2_total(a.t, a.n_fixed, a.d_list[i], base.stream(200 + i));
    out.v2_d_counts.push_back(c);
    sizes.push_back(static_cast<double>(a.d_list[i]));
    counts.push_back(static_cast<double>(c));
  }
  out.v2_vs_d = scaling_fit(sizes, counts);

  out.pass = out.v2_vs_n >= 0.8 && out.v2_vs_n <= 1.2 && out.ssa_vs_n >= 1.8 &&
             out.ssa_vs_n <= 2.2 && out.v2_vs_d >= 0.8 && out.v2_vs_d <= 1.2;
  return out;
}

inline int run_bench_scaling(const ScalingArgs& a) {
  const std::string dir = detail::resolve_out_dir(a.out);
  ScalingOutcome r = run_scaling_study(a);

  std::cout << "v2 learned-mode ops vs N: exponent " << r.v2_vs_n << " (expect [0.8, 1.2])\n"
            << "baseline ops vs N:        exponent " << r.ssa_vs_n << " (expect [1.8, 2.2])\n"
            << "v2 learned-mode ops vs D: exponent " << r.v2_vs_d << " (expect [0.8, 1.2])\n";

  nlohmann::json report = detail::base_report(
      "bench-scaling", a.seed,
      {{"t", a.t},
       {"n_list", a.n_list},
       {"d_list", a.d_list},
       {"d_fixed", a.d_fixed},
       {"n_fixed", a.n_fixed},
       {"rate", a.rate}});
  report["v2_vs_n"] = {{"exponent", r.v2_vs_n}, {"counts", r.v2_n_counts}};
  report["ssa_vs_n"] = {{"exponent", r.ssa_vs_n}, {"counts", r.ssa_n_counts}};
  report["v2_vs_d"] = {{"exponent", r.v2_vs_d}, {"counts", r.v2_d_counts}};
  report["pass"] = r.pass;
  detail::write_report(dir, "scaling_report.json", report);
  return r.pass ? kExitOk : kExitVerificationFailed;
}

// ---------------------------------------------------------------------------
// count-energy
// ---------------------------------------------------------------------------

struct EnergyArgs {
  std::size_t t = 4;
  std::size_t n = 64;
  std::size_t d = 32;
  double rate = 0.15;
  double e_ac = 0.9e-12;
  double e_mac = 4.6e-12;
  std::uint64_t seed = 0;
  std::string out;
};

inline int run_count_energy(const EnergyArgs& a) {
  const std::string dir = detail::resolve_out_dir(a.out);
  RngState rng(a.seed);
  SpikeTensor q = bernoulli_spikes({a.t, a.n, a.d}, a.rate, rng);
  SpikeTensor k = bernoulli_spikes({a.t, a.n, a.d}, a.rate, rng);
  SpikeTensor v = bernoulli_spikes({a.t, a.n, a.d}, a.rate, rng);

  SaccadicParams p = detail::identity_saccade(a.t, 1.0, static_cast<double>(a.n) * a.rate);
  OpCounter v2_counter, ssa_counter;
  sssa_v2(q, k, v, p, AlphaMode::Learned, &v2_counter);
  ssa_baseline(q, k, v, ssa_counter);

  const EnergyConstants constants{a.e_ac, a.e_mac};
  const EnergyReport v2_energy = energy_estimate(v2_counter, constants);
  const EnergyReport ssa_energy = energy_estimate(ssa_counter, constants);

  const auto counter_json = [](const OpCounter& c) {
    return nlohmann::json{{"ac", c.ac}, {"mac", c.mac}, {"cmp", c.cmp}};
  };
  const auto energy_json = [](const EnergyReport& e) {
    return nlohmann::json{
        {"ac_energy_j", e.ac_energy}, {"mac_energy_j", e.mac_energy}, {"total_j", e.total}};
  };

  nlohmann::json report = detail::base_report(
      "count-energy", a.seed,
      {{"t", a.t}, {"n", a.n}, {"d", a.d}, {"rate", a.rate}});
  report["constants"] = {{"e_ac_j", constants.e_ac}, {"e_mac_j", constants.e_mac},
                         {"process", "45nm"}};
  report["sssa_v2_learned"] = {{"counts", counter_json(v2_counter)},
                               {"energy", energy_json(v2_energy)}};
  report["ssa_baseline"] = {{"counts", counter_json(ssa_counter)},
                            {"energy", energy_json(ssa_energy)}};
  report["baseline_over_v2_energy_ratio"] = ssa_energy.total / v2_energy.total;
  detail::write_report(dir, "energy_report.json", report);
  std::cout << "v2 " << v2_energy.total << " J vs baseline " << ssa_energy.total << " J\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train-toy / infer
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::size_t epochs = 200;
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t batch = 20;
  std::size_t train_per_class = 50;
  std::size_t test_per_class = 100;
  std::size_t image_hw = 16;
  std::size_t t = 4;
  std::size_t dim = 8;
  std::size_t stem_channels = 8;
  std::size_t stem_kernel = 3;
  std::size_t blocks = 1;
  double peak_rate = 0.5;
  std::string variant = "sssa-v2";
  std::string alpha_mode = "learned";
  double early_stop = 0.0;
  double clamp = 0.1;
  std::uint64_t seed = 42;
  std::string out;
};

inline ModelConfig model_config_from(const TrainArgs& a) {
  ModelConfig cfg;
  cfg.t_steps = a.t;
  cfg.image_hw = a.image_hw;
  cfg.stem_channels = a.stem_channels;
  cfg.stem_kernel = a.stem_kernel;
  cfg.dim = a.dim;
  cfg.blocks = a.blocks;
  cfg.classes = 2;
  cfg.variant = io_detail::variant_from_name(a.variant);
  cfg.alpha_mode = a.alpha_mode == "computed" ? AlphaMode::Computed : AlphaMode::Learned;
  cfg.mw_diag_clamp = a.clamp;
  return cfg;
}

inline int run_train_toy(const TrainArgs& a) {
  const std::string dir = detail::resolve_out_dir(a.out);
  ToyTaskSpec task;
  task.image_hw = a.image_hw;
  task.train_per_class = a.train_per_class;
  task.test_per_class = a.test_per_class;
  task.t_steps = a.t;
  task.peak_rate = a.peak_rate;
  task.seed = a.seed;

  ModelConfig cfg = model_config_from(a);
  OptimSpec optim;
  optim.lr = a.lr;
  optim.momentum = a.momentum;
  optim.weight_decay = a.weight_decay;
  optim.epochs = a.epochs;
  optim.batch = a.batch;
  optim.mw_diag_clamp = a.clamp;
  optim.early_stop_acc = a.early_stop;

  const double oracle = logistic_oracle(make_toy_data(task, false), make_toy_data(task, true));
  std::cout << "logistic oracle test accuracy: " << oracle << "\n";

  TrainResult r = train_toy(task, cfg, optim);

  std::vector<std::vector<double>> rows;
  for (const auto& m : r.curve)
    rows.push_back({static_cast<double>(m.epoch), m.train_acc, m.test_acc, m.loss});
  write_csv(dir + "/train_curve.csv", {"epoch", "train_acc", "test_acc", "loss"}, rows);

  CheckpointMeta meta{r.curve.size(), a.seed};
  save_checkpoint(dir + "/checkpoint.json", cfg, r.params, meta);

  nlohmann::json report = detail::base_report(
      "train-toy", a.seed,
      {{"epochs", a.epochs},
       {"lr", a.lr},
       {"momentum", a.momentum},
       {"weight_decay", a.weight_decay},
       {"batch", a.batch},
       {"train_per_class", a.train_per_class},
       {"test_per_class", a.test_per_class},
       {"image_hw", a.image_hw},
       {"t_steps", a.t},
       {"dim", a.dim},
       {"stem_channels", a.stem_channels},
       {"stem_kernel", a.stem_kernel},
       {"blocks", a.blocks},
       {"peak_rate", a.peak_rate},
       {"variant", a.variant},
       {"alpha_mode", a.alpha_mode},
       {"early_stop", a.early_stop},
       {"mw_diag_clamp", a.clamp}});
  report["logistic_oracle_accuracy"] = oracle;
  report["epochs_run"] = r.curve.size();
  report["final_train_acc"] = r.curve.empty() ? 0.0 : r.curve.back().train_acc;
  report["final_test_acc"] = r.final_test_acc;
  report["final_loss"] = r.curve.empty() ? 0.0 : r.curve.back().loss;
  report["checkpoint"] = dir + "/checkpoint.json";
  detail::write_report(dir, "train_report.json", report);
  std::cout << "final test accuracy: " << r.final_test_acc << " after " << r.curve.size()
            << " epochs\n";
  return kExitOk;
}

struct InferArgs {
  std::string checkpoint;
  std::string idx_file;
  std::size_t idx_index = 0;
  std::string synthetic = "horizontal";
  std::uint64_t seed = 0;
  std::string out;
};

inline int run_infer(const InferArgs& a) {
  const std::string dir = detail::resolve_out_dir(a.out);
  Checkpoint ckpt = load_checkpoint(a.checkpoint);

  RealTensor intensity({ckpt.config.in_channels, ckpt.config.image_hw, ckpt.config.image_hw});
  std::string source;
  if (!a.idx_file.empty()) {
    auto images = read_idx_images(a.idx_file);
    if (a.idx_index >= images.size())
      throw ConfigError("IDX index " + std::to_string(a.idx_index) + " out of range (file has " +
                        std::to_string(images.size()) + " images)");
    const RealTensor& img = images[a.idx_index];
    if (img.shape[1] != ckpt.config.image_hw || img.shape[2] != ckpt.config.image_hw)
      throw ConfigError("IDX image is " + shape_str(img.shape) + ", model expects " +
                        std::to_string(ckpt.config.image_hw) + "x" +
                        std::to_string(ckpt.config.image_hw));
    intensity = img;
    source = a.idx_file + "[" + std::to_string(a.idx_index) + "]";
  } else {
    const std::size_t hw = ckpt.config.image_hw;
    const std::size_t pos = hw / 2;
    for (std::size_t i = 0; i < hw; ++i) {
      if (a.synthetic == "vertical")
        intensity.at(0, i, pos) = 1.0;
      else
        intensity.at(0, pos, i) = 1.0;
    }
    source = "synthetic:" + a.synthetic;
  }

  RngState rng(a.seed);
  SpikeTensor spikes = rate_encode(intensity, ckpt.config.t_steps, 0.5, rng);
  RealTensor logits = model_forward(spikes, ckpt.config, ckpt.params, BNMode::Infer);
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.numel(); ++c)
    if (logits.data[c] > logits.data[best]) best = c;

  nlohmann::json report = detail::base_report(
      "infer", a.seed,
      {{"checkpoint", a.checkpoint}, {"input", source}});
  report["model"] = io_detail::config_to_json(ckpt.config);
  report["logits"] = logits.data;
  report["prediction"] = best;
  report["class_names"] = {"horizontal-bar", "vertical-bar"};
  detail::write_report(dir, "infer_report.json", report);
  std::cout << "prediction: class " << best << " logits [";
  for (std::size_t c = 0; c < logits.numel(); ++c)
    std::cout << (c ? ", " : "") << logits.data[c];
  std::cout << "]\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// grad-check
// ---------------------------------------------------------------------------

struct GradCheckArgs {
  std::size_t instances = 20;
  double h = 1e-5;
  double tol = 1e-4;
  std::uint64_t seed = 0;
  std::string out;
};

struct GradBatteryResult {
  double worst = 0.0;
  std::string worst_case;
};

// Rotates through the step-free subgraphs (conv+BN, matmul, relevance and
// salience) and returns the worst central-difference discrepancy.
inline GradBatteryResult run_grad_battery(std::size_t instances, double h, std::uint64_t seed) {
  RngState base(seed);
  const auto random_tensor = [](const Shape& shape, RngState& rng, double scale = 1.0) {
    RealTensor t(shape);
    for (double& v : t.data) v = scale * (rng.next_double() * 2.0 - 1.0);
    return t;
  };

  GradBatteryResult out;
  for (std::size_t i = 0; i < instances; ++i) {
    RngState rng = base.stream(i);
    double err = 0.0;
    std::string label;
    switch (i % 3) {
      case 0: {
        label = "conv2d+batchnorm";
        const RealTensor x = random_tensor({2, 2, 4, 4}, rng);
        const RealTensor w = random_tensor({2, 2, 3, 3}, rng);
        RealTensor gamma({2}, {1.0, 1.1});
        RealTensor beta({2}, {0.0, 0.1});
        err = autodiff::grad_check(
            [](autodiff::Tape& t, const std::vector<int>& ids) {
              const int conv = t.conv2d(ids[0], ids[1], 1, 1, 1);
              const int bn = t.batchnorm(conv, ids[2], ids[3], 1, nullptr, true);
              return t.sum_all(t.cro_att(bn, bn));
            },
            {x, w, gamma, beta}, h);
        break;
      }
      case 1: {
        label = "matmul";
        const RealTensor x = random_tensor({3, 4}, rng, 0.5);
        const RealTensor w = random_tensor({4, 3}, rng, 0.5);
        err = autodiff::grad_check(
            [](autodiff::Tape& t, const std::vector<int>& ids) {
              return t.sum_all(t.cro_att(t.linear(ids[0], ids[1]), t.linear(ids[0], ids[1])));
            },
            {x, w}, h);
        break;
      }
      default: {
        label = "cro_att+patch_salience";
        const RealTensor qs = random_tensor({2, 5}, rng, 2.0);
        const RealTensor ks = random_tensor({2, 5}, rng, 2.0);
        err = autodiff::grad_check(
            [](autodiff::Tape& t, const std::vector<int>& ids) {
              const int patch = t.sum_last(t.cro_att(ids[0], ids[1]));
              return t.sum_all(t.cro_att(patch, patch));
            },
            {qs, ks}, h);
        break;
      }
    }
    if (err > out.worst) {
      out.worst = err;
      out.worst_case = label + " instance " + std::to_string(i);
    }
  }
  return out;
}

inline int run_grad_check(const GradCheckArgs& a) {
  const std::string dir = detail::resolve_out_dir(a.out);
  const GradBatteryResult battery = run_grad_battery(a.instances, a.h, a.seed);
  const double worst = battery.worst;
  const std::string& worst_case = battery.worst_case;
  const bool pass = worst < a.tol;
  std::cout << "max relative error " << worst << " (" << worst_case << "), tolerance " << a.tol
            << (pass ? " -> ok" : " -> FAILED") << "\n";
  nlohmann::json report = detail::base_report(
      "grad-check", a.seed,
      {{"instances", a.instances}, {"h", a.h}, {"tolerance", a.tol}});
  report["max_relative_error"] = worst;
  report["worst_case"] = worst_case;
  report["pass"] = pass;
  detail::write_report(dir, "gradcheck_report.json", report);
  return pass ? kExitOk : kExitVerificationFailed;
}

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

inline int run(std::vector<std::string> args) {
  CLI::App app{"Saccadic spike self-attention computation engine"};
  app.require_subcommand(1);

  int exit_code = kExitOk;
  const auto announce = [](std::uint64_t seed) { std::cout << "master seed: " << seed << "\n"; };
  std::string config_doc;  // --config is expanded before parsing; shown in help
  const auto add_config_flag = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_doc,
                    "JSON file with option defaults (explicit flags win)");
  };

  RatioArgs ratio;
  auto* ratio_cmd = app.add_subcommand("analyze-ratio", "Magnitude-ratio distribution study");
  ratio_cmd->add_option("--mode", ratio.mode, "spike | gaussian")
      ->check(CLI::IsMember({"spike", "gaussian"}))
      ->capture_default_str();
  ratio_cmd->add_option("--p", ratio.p, "spike firing rate")->capture_default_str();
  ratio_cmd->add_option("--d", ratio.d, "vector dimension")->capture_default_str();
  ratio_cmd->add_option("--mu", ratio.mu, "gaussian mean")->capture_default_str();
  ratio_cmd->add_option("--sigma", ratio.sigma, "gaussian spread")->capture_default_str();
  ratio_cmd->add_flag("--sigma-is-variance", ratio.sigma_is_variance,
                      "interpret --sigma as a variance");
  ratio_cmd->add_option("--trials", ratio.trials)->capture_default_str();
  ratio_cmd->add_option("--bins", ratio.bins)->capture_default_str();
  ratio_cmd->add_flag("!--no-fold", ratio.fold, "report the raw (unfolded) ratio");
  ratio_cmd->add_option("--seed", ratio.seed)->capture_default_str();
  ratio_cmd->add_option("--out", ratio.out, "report directory (default $SSSA_OUT_DIR or .)");
  add_config_flag(ratio_cmd);
  ratio_cmd->callback([&]() {
    announce(ratio.seed);
    exit_code = run_analyze_ratio(ratio);
  });

  TaylorArgs taylor;
  auto* taylor_cmd = app.add_subcommand("analyze-taylor", "First-order log(x) expansion error");
  taylor_cmd->add_option("--x0", taylor.x0)->capture_default_str();
  taylor_cmd->add_option("--range", taylor.range, "interval endpoints a b")
      ->expected(2)
      ->capture_default_str();
  taylor_cmd->add_option("--grid", taylor.grid)->capture_default_str();
  taylor_cmd->add_option("--out", taylor.out);
  add_config_flag(taylor_cmd);
  taylor_cmd->callback([&]() {
    announce(0);
    exit_code = run_analyze_taylor(taylor);
  });

  EquivalenceArgs equiv;
  auto* equiv_cmd =
      app.add_subcommand("verify-equivalence", "V1 vs V2 agreement in the certified regime");
  equiv_cmd->add_option("--variant", equiv.variant)->capture_default_str();
  equiv_cmd->add_option("--trials", equiv.trials)->capture_default_str();
  equiv_cmd->add_option("--max-t", equiv.max_t)->capture_default_str();
  equiv_cmd->add_option("--max-n", equiv.max_n)->capture_default_str();
  equiv_cmd->add_option("--max-d", equiv.max_d)->capture_default_str();
  equiv_cmd->add_option("--seed", equiv.seed)->capture_default_str();
  equiv_cmd->add_option("--out", equiv.out);
  add_config_flag(equiv_cmd);
  equiv_cmd->callback([&]() {
    announce(equiv.seed);
    exit_code = run_verify_equivalence(equiv);
  });

  AgreementArgs agree;
  auto* agree_cmd =
      app.add_subcommand("verify-agreement", "Saccadic train/inference duality check");
  agree_cmd->add_option("--trials", agree.trials)->capture_default_str();
  agree_cmd->add_option("--t", agree.t)->capture_default_str();
  agree_cmd->add_option("--seed", agree.seed)->capture_default_str();
  agree_cmd->add_option("--out", agree.out);
  add_config_flag(agree_cmd);
  agree_cmd->callback([&]() {
    announce(agree.seed);
    exit_code = run_verify_agreement(agree);
  });

  ScalingArgs scaling;
  auto* scaling_cmd = app.add_subcommand("bench-scaling", "Operation-count scaling exponents");
  scaling_cmd->add_option("--t", scaling.t)->capture_default_str();
  scaling_cmd->add_option("--n-list", scaling.n_list)->capture_default_str();
  scaling_cmd->add_option("--d-list", scaling.d_list)->capture_default_str();
  scaling_cmd->add_option("--d-fixed", scaling.d_fixed)->capture_default_str();
  scaling_cmd->add_option("--n-fixed", scaling.n_fixed)->capture_default_str();
  scaling_cmd->add_option("--rate", scaling.rate)->capture_default_str();
  scaling_cmd->add_option("--seed", scaling.seed)->capture_default_str();
  scaling_cmd->add_option("--out", scaling.out);
  add_config_flag(scaling_cmd);
  scaling_cmd->callback([&]() {
    announce(scaling.seed);
    exit_code = run_bench_scaling(scaling);
  });

  EnergyArgs energy;
  auto* energy_cmd = app.add_subcommand("count-energy", "Energy estimate for one forward");
  energy_cmd->add_option("--t", energy.t)->capture_default_str();
  energy_cmd->add_option("--n", energy.n)->capture_default_str();
  energy_cmd->add_option("--d", energy.d)->capture_default_str();
  energy_cmd->add_option("--rate", energy.rate)->capture_default_str();
  energy_cmd->add_option("--e-ac", energy.e_ac, "joules per accumulate")->capture_default_str();
  energy_cmd->add_option("--e-mac", energy.e_mac, "joules per multiply-accumulate")
      ->capture_default_str();
  energy_cmd->add_option("--seed", energy.seed)->capture_default_str();
  energy_cmd->add_option("--out", energy.out);
  add_config_flag(energy_cmd);
  energy_cmd->callback([&]() {
    announce(energy.seed);
    exit_code = run_count_energy(energy);
  });

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train-toy", "Train the tiny SNN-ViT on the bar task");
  train_cmd->add_option("--epochs", train.epochs)->capture_default_str();
  train_cmd->add_option("--lr", train.lr)->capture_default_str();
  train_cmd->add_option("--momentum", train.momentum)->capture_default_str();
  train_cmd->add_option("--weight-decay", train.weight_decay)->capture_default_str();
  train_cmd->add_option("--batch", train.batch)->capture_default_str();
  train_cmd->add_option("--train-per-class", train.train_per_class)->capture_default_str();
  train_cmd->add_option("--test-per-class", train.test_per_class)->capture_default_str();
  train_cmd->add_option("--image-hw", train.image_hw)->capture_default_str();
  train_cmd->add_option("--t", train.t)->capture_default_str();
  train_cmd->add_option("--dim", train.dim)->capture_default_str();
  train_cmd->add_option("--stem-channels", train.stem_channels)->capture_default_str();
  train_cmd->add_option("--stem-kernel", train.stem_kernel)->capture_default_str();
  train_cmd->add_option("--blocks", train.blocks)->capture_default_str();
  train_cmd->add_option("--peak-rate", train.peak_rate)->capture_default_str();
  train_cmd->add_option("--variant", train.variant)
      ->check(CLI::IsMember({"sssa-v1", "sssa-v2", "ssa-baseline"}))
      ->capture_default_str();
  train_cmd->add_option("--alpha-mode", train.alpha_mode)
      ->check(CLI::IsMember({"learned", "computed"}))
      ->capture_default_str();
  train_cmd->add_option("--early-stop", train.early_stop,
                        "stop once test accuracy reaches this (0 = never)")
      ->capture_default_str();
  train_cmd->add_option("--clamp", train.clamp, "mixer diagonal clamp")->capture_default_str();
  train_cmd->add_option("--seed", train.seed)->capture_default_str();
  train_cmd->add_option("--out", train.out);
  add_config_flag(train_cmd);
  train_cmd->callback([&]() {
    announce(train.seed);
    exit_code = run_train_toy(train);
  });

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Run a checkpoint on one image");
  infer_cmd->add_option("--checkpoint", infer.checkpoint)->required();
  infer_cmd->add_option("--idx", infer.idx_file, "IDX image file");
  infer_cmd->add_option("--index", infer.idx_index, "image index within the IDX file")
      ->capture_default_str();
  infer_cmd->add_option("--synthetic", infer.synthetic, "horizontal | vertical")
      ->check(CLI::IsMember({"horizontal", "vertical"}))
      ->capture_default_str();
  infer_cmd->add_option("--seed", infer.seed)->capture_default_str();
  infer_cmd->add_option("--out", infer.out);
  add_config_flag(infer_cmd);
  infer_cmd->callback([&]() {
    announce(infer.seed);
    exit_code = run_infer(infer);
  });

  GradCheckArgs gc;
  auto* gc_cmd = app.add_subcommand("grad-check", "Finite differences vs tape gradients");
  gc_cmd->add_option("--instances", gc.instances)->capture_default_str();
  gc_cmd->add_option("--step", gc.h, "finite-difference step")->capture_default_str();
  gc_cmd->add_option("--tol", gc.tol)->capture_default_str();
  gc_cmd->add_option("--seed", gc.seed)->capture_default_str();
  gc_cmd->add_option("--out", gc.out);
  add_config_flag(gc_cmd);
  gc_cmd->callback([&]() {
    announce(gc.seed);
    exit_code = run_grad_check(gc);
  });

  try {
    args = detail::apply_config_file(std::move(args));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  std::vector<std::string> argv_fwd;
  argv_fwd.push_back("sssa");
  argv_fwd.insert(argv_fwd.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& s : argv_fwd) argv.push_back(s.data());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return exit_code;
}

}

#endif
