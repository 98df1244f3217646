#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "sssa/cli.hpp"
#include "sssa/io.hpp"

using namespace sssa;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("sssa_test_" + std::to_string(RngState(::getpid()).next_u64() % 1000000));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.t_steps = 2;
  cfg.image_hw = 8;
  cfg.stem_channels = 3;
  cfg.dim = 4;
  cfg.blocks = 1;
  cfg.classes = 2;
  return cfg;
}

}

TEST_CASE("checkpoint round-trip reproduces forwards bit-identically") {
  TempDir tmp;
  ModelConfig cfg = tiny_config();
  RngState rng(5);
  ModelParams params = init_model_params(cfg, rng);
  // make running stats non-trivial so they are exercised by the round-trip
  RngState enc(9);
  for (int i = 0; i < 3; ++i) {
    SpikeTensor warm = bernoulli_spikes({cfg.t_steps, 1, 8, 8}, 0.4, enc);
    model_forward(warm, cfg, params, BNMode::Train);
  }

  SpikeTensor probe = bernoulli_spikes({cfg.t_steps, 1, 8, 8}, 0.4, enc);
  RealTensor before = model_forward(probe, cfg, params, BNMode::Infer);

  save_checkpoint(tmp.file("ckpt.json"), cfg, params, {3, 5});
  Checkpoint loaded = load_checkpoint(tmp.file("ckpt.json"));
  CHECK(loaded.meta.epoch == 3);
  CHECK(loaded.meta.seed == 5);

  RealTensor after = model_forward(probe, loaded.config, loaded.params, BNMode::Infer);
  CHECK(before.data == after.data);
}

TEST_CASE("version-0 checkpoints raise an explicit migration error") {
  TempDir tmp;
  // a version-0 fixture as an earlier prototype would have written it
  std::ofstream out(tmp.file("v0.json"));
  out << R"({"format_version": 0, "model": {}, "tensors": {}, "scalars": {}})";
  out.close();

  try {
    load_checkpoint(tmp.file("v0.json"));
    FAIL("expected MigrationError");
  } catch (const MigrationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("unsupported checkpoint format_version 0") != std::string::npos);
    CHECK(msg.find("no migration path") != std::string::npos);
  }
}

TEST_CASE("hand-edited upper-triangular mixer entry is rejected") {
  TempDir tmp;
  ModelConfig cfg = tiny_config();
  RngState rng(6);
  ModelParams params = init_model_params(cfg, rng);
  save_checkpoint(tmp.file("ckpt.json"), cfg, params);

  nlohmann::json j;
  {
    std::ifstream in(tmp.file("ckpt.json"));
    in >> j;
  }
  j["tensors"]["block0.saccade.m_w"][0][1] = 0.75;  // (0,1): strictly upper
  {
    std::ofstream out(tmp.file("bad.json"));
    out << j.dump();
  }
  CHECK_THROWS_AS(load_checkpoint(tmp.file("bad.json")), CheckpointError);
  CHECK_THROWS_MATCHES(load_checkpoint(tmp.file("bad.json")), CheckpointError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("not lower triangular")));
}

TEST_CASE("corrupt checkpoints are rejected with specific messages") {
  TempDir tmp;
  ModelConfig cfg = tiny_config();
  RngState rng(7);
  ModelParams params = init_model_params(cfg, rng);
  save_checkpoint(tmp.file("ckpt.json"), cfg, params);

  nlohmann::json j;
  {
    std::ifstream in(tmp.file("ckpt.json"));
    in >> j;
  }

  SECTION("wrong tensor shape") {
    j["tensors"]["head.b"] = {0.0, 0.0, 0.0};
    std::ofstream out(tmp.file("bad.json"));
    out << j.dump();
    out.close();
    CHECK_THROWS_AS(load_checkpoint(tmp.file("bad.json")), CheckpointError);
  }
  SECTION("missing tensor") {
    j["tensors"].erase("head.w");
    std::ofstream out(tmp.file("bad.json"));
    out << j.dump();
    out.close();
    CHECK_THROWS_AS(load_checkpoint(tmp.file("bad.json")), CheckpointError);
  }
  SECTION("diagonal below the clamp") {
    j["tensors"]["block0.saccade.m_w"][0][0] = 0.01;
    std::ofstream out(tmp.file("bad.json"));
    out << j.dump();
    out.close();
    CHECK_THROWS_AS(load_checkpoint(tmp.file("bad.json")), CheckpointError);
  }
  SECTION("negative alpha") {
    j["scalars"]["block0.saccade.alpha"] = -2.0;
    std::ofstream out(tmp.file("bad.json"));
    out << j.dump();
    out.close();
    CHECK_THROWS_AS(load_checkpoint(tmp.file("bad.json")), CheckpointError);
  }
  SECTION("not json at all") {
    std::ofstream out(tmp.file("bad.json"));
    out << "definitely not json{{{";
    out.close();
    CHECK_THROWS_AS(load_checkpoint(tmp.file("bad.json")), CheckpointError);
  }
  SECTION("ragged nested tensor") {
    j["tensors"]["block0.saccade.m_w"][0] = {1.0};  // row 0 shorter than row 1
    std::ofstream out(tmp.file("bad.json"));
    out << j.dump();
    out.close();
    CHECK_THROWS_AS(load_checkpoint(tmp.file("bad.json")), CheckpointError);
  }
}

TEST_CASE("checkpoint tensors are nested numeric arrays") {
  TempDir tmp;
  ModelConfig cfg = tiny_config();
  RngState rng(8);
  ModelParams params = init_model_params(cfg, rng);
  save_checkpoint(tmp.file("ckpt.json"), cfg, params);

  nlohmann::json j;
  std::ifstream in(tmp.file("ckpt.json"));
  in >> j;
  const auto& mw = j["tensors"]["block0.saccade.m_w"];
  REQUIRE(mw.is_array());
  REQUIRE(mw.size() == cfg.t_steps);
  REQUIRE(mw[0].is_array());
  REQUIRE(mw[0].size() == cfg.t_steps);
  CHECK(mw[0][0].is_number());
  // rank-4 conv weights nest four deep
  const auto& stem = j["tensors"]["stem.w"];
  CHECK(stem[0][0][0][0].is_number());
}

TEST_CASE("idx reader round-trips the documented format") {
  TempDir tmp;
  // magic 0x00000803, 2 images of 4x3, raw bytes
  std::ofstream out(tmp.file("imgs.idx3-ubyte"), std::ios::binary);
  const auto put_u32 = [&](std::uint32_t v) {
    char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b, 4);
  };
  put_u32(0x00000803u);
  put_u32(2);
  put_u32(4);
  put_u32(3);
  for (int i = 0; i < 24; ++i) out.put(static_cast<char>(i * 10));
  out.close();

  auto images = read_idx_images(tmp.file("imgs.idx3-ubyte"));
  REQUIRE(images.size() == 2);
  CHECK(images[0].shape == (Shape{1, 4, 3}));
  CHECK(images[0].data[0] == 0.0);
  CHECK(images[0].data[1] == Catch::Approx(10.0 / 255.0));
  CHECK(images[1].data[11] == Catch::Approx(230.0 / 255.0));

  SECTION("wrong magic is rejected") {
    std::ofstream bad(tmp.file("bad.idx"), std::ios::binary);
    put_u32(0x00000801u);
    CHECK_THROWS_AS(read_idx_images(tmp.file("bad.idx")), ConfigError);
  }
  SECTION("truncated file is rejected") {
    std::ofstream bad(tmp.file("trunc.idx"), std::ios::binary);
    char header[16] = {0, 0, 8, 3, 0, 0, 0, 5, 0, 0, 0, 4, 0, 0, 0, 3};
    bad.write(header, 16);
    bad.close();
    CHECK_THROWS_AS(read_idx_images(tmp.file("trunc.idx")), ConfigError);
  }
}

TEST_CASE("cli usage errors exit with code 2") {
  CHECK(cli::run({}) == 2);
  CHECK(cli::run({"not-a-command"}) == 2);
  CHECK(cli::run({"analyze-ratio", "--mode", "sideways"}) == 2);
  CHECK(cli::run({"infer"}) == 2);  // --checkpoint required
}

TEST_CASE("cli analyze-taylor writes a self-describing report") {
  TempDir tmp;
  CHECK(cli::run({"analyze-taylor", "--x0", "0.15", "--range", "0.1", "0.2", "--out",
                  tmp.path.string()}) == 0);
  std::ifstream in(tmp.file("taylor_report.json"));
  REQUIRE(in.good());
  nlohmann::json j;
  in >> j;
  CHECK(j["max_abs_error"].get<double>() == Catch::Approx(0.072132).margin(1e-4));
  CHECK(j["argmax"].get<double>() == Catch::Approx(0.1).margin(1e-5));
  CHECK(j["artifact_version"] == kVersion);
  CHECK(j.contains("config"));
  CHECK(j.contains("master_seed"));
}

TEST_CASE("cli verify-equivalence succeeds in the certified regime") {
  TempDir tmp;
  CHECK(cli::run({"verify-equivalence", "--variant", "v1v2", "--trials", "200", "--seed", "7",
                  "--out", tmp.path.string()}) == 0);
  std::ifstream in(tmp.file("equivalence_report.json"));
  nlohmann::json j;
  in >> j;
  CHECK(j["identical"] == 200);
  CHECK(j["pass"] == true);
}

TEST_CASE("cli rejects unsupported equivalence variants") {
  CHECK(cli::run({"verify-equivalence", "--variant", "v2v3"}) == 2);
}

TEST_CASE("cli bench-scaling passes the expected windows") {
  TempDir tmp;
  CHECK(cli::run({"bench-scaling", "--out", tmp.path.string()}) == 0);
  std::ifstream in(tmp.file("scaling_report.json"));
  nlohmann::json j;
  in >> j;
  CHECK(j["pass"] == true);
  CHECK(j["v2_vs_n"]["exponent"].get<double>() == Catch::Approx(1.0).margin(0.2));
  CHECK(j["ssa_vs_n"]["exponent"].get<double>() == Catch::Approx(2.0).margin(0.2));
}

TEST_CASE("cli train/infer round trip on a small run") {
  TempDir tmp;
  CHECK(cli::run({"train-toy", "--epochs", "3", "--train-per-class", "10", "--test-per-class",
                  "10", "--batch", "10", "--dim", "4", "--stem-channels", "4", "--out",
                  tmp.path.string()}) == 0);
  REQUIRE(fs::exists(tmp.file("checkpoint.json")));
  REQUIRE(fs::exists(tmp.file("train_curve.csv")));
  REQUIRE(fs::exists(tmp.file("train_report.json")));

  // curve has the spec column order
  std::ifstream csv(tmp.file("train_curve.csv"));
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,train_acc,test_acc,loss");

  CHECK(cli::run({"infer", "--checkpoint", tmp.file("checkpoint.json"), "--synthetic",
                  "vertical", "--out", tmp.path.string()}) == 0);
  std::ifstream in(tmp.file("infer_report.json"));
  nlohmann::json j;
  in >> j;
  CHECK(j["logits"].size() == 2);
  CHECK(j.contains("prediction"));
}

TEST_CASE("cli infer reads idx images") {
  TempDir tmp;
  CHECK(cli::run({"train-toy", "--epochs", "2", "--train-per-class", "6", "--test-per-class",
                  "6", "--batch", "6", "--dim", "4", "--stem-channels", "4", "--out",
                  tmp.path.string()}) == 0);

  // 16x16 idx file with one vertical bar image
  std::ofstream out(tmp.file("bar.idx"), std::ios::binary);
  const auto put_u32 = [&](std::uint32_t v) {
    char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                 static_cast<char>(v >> 8), static_cast<char>(v)};
    out.write(b, 4);
  };
  put_u32(0x00000803u);
  put_u32(1);
  put_u32(16);
  put_u32(16);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) out.put(x == 8 ? char(255) : char(0));
  out.close();

  CHECK(cli::run({"infer", "--checkpoint", tmp.file("checkpoint.json"), "--idx", tmp.file("bar.idx"),
                  "--out", tmp.path.string()}) == 0);
  CHECK(cli::run({"infer", "--checkpoint", tmp.file("checkpoint.json"), "--idx", tmp.file("bar.idx"),
                  "--index", "5", "--out", tmp.path.string()}) == 2);  // out of range
}

TEST_CASE("cli grad-check emits its verdict") {
  TempDir tmp;
  CHECK(cli::run({"grad-check", "--instances", "6", "--out", tmp.path.string()}) == 0);
  std::ifstream in(tmp.file("gradcheck_report.json"));
  nlohmann::json j;
  in >> j;
  CHECK(j["pass"] == true);
  CHECK(j["max_relative_error"].get<double>() < 1e-4);
}

TEST_CASE("config file supplies defaults and explicit flags win") {
  TempDir tmp;
  {
    std::ofstream cfg(tmp.file("run.json"));
    cfg << R"({"x0": 0.2, "grid": 500, "range": [0.15, 0.3]})";
  }
  CHECK(cli::run({"analyze-taylor", "--config", tmp.file("run.json"), "--out",
                  tmp.path.string()}) == 0);
  {
    nlohmann::json j;
    std::ifstream in(tmp.file("taylor_report.json"));
    in >> j;
    CHECK(j["config"]["x0"].get<double>() == 0.2);
    CHECK(j["config"]["grid_points"].get<std::size_t>() == 500);
  }

  CHECK(cli::run({"analyze-taylor", "--config", tmp.file("run.json"), "--x0", "0.18", "--out",
                  tmp.path.string()}) == 0);
  {
    nlohmann::json j;
    std::ifstream in(tmp.file("taylor_report.json"));
    in >> j;
    CHECK(j["config"]["x0"].get<double>() == 0.18);  // flag overrides config
  }

  CHECK(cli::run({"analyze-taylor", "--config", tmp.file("missing.json")}) == 2);
  {
    std::ofstream cfg(tmp.file("broken.json"));
    cfg << "[1,2,3]";
  }
  CHECK(cli::run({"analyze-taylor", "--config", tmp.file("broken.json")}) == 2);
}

TEST_CASE("out directory falls back to the environment variable") {
  TempDir tmp;
  const std::string env_dir = tmp.file("env_out");
  ::setenv("SSSA_OUT_DIR", env_dir.c_str(), 1);
  CHECK(cli::run({"analyze-taylor"}) == 0);
  ::unsetenv("SSSA_OUT_DIR");
  CHECK(fs::exists(env_dir + "/taylor_report.json"));
}
