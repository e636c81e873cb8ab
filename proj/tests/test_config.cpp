#include <doctest.h>

#include <fstream>

#include "clothfit/config.hpp"
#include "clothfit/error.hpp"
#include "test_util.hpp"

using namespace clothfit;

namespace {

void write(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

}  // namespace

TEST_CASE("defaults are the reference configuration") {
  const RunConfig c;
  CHECK(c.coarse.lambda_sil == 1.0);
  CHECK(c.coarse.lambda_temp == 1.0);
  CHECK(c.coarse.lambda_reg == 0.01);
  CHECK(c.coarse.first_iterations == 200);
  CHECK(c.fine.lambda_fine == 650.0);
  CHECK(c.fine.lambda_temp == 1e6);
  CHECK(c.fine.lambda_edge == 1e4);
  CHECK(c.fine.lambda_reg == 0.1);
  CHECK(c.train.epochs == 100);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.lr_start == 5e-3);
  CHECK(c.train.lr_end == 1e-5);
  CHECK(c.width == 512);
  c.validate();
}

TEST_CASE("config file round trip") {
  testing::TempDir dir("config");
  RunConfig c;
  c.seed = 42;
  c.paths.assets = "some dir/assets";
  c.coarse.lambda_reg = 0.1 + 0.2;
  c.fine.enabled = false;
  c.train.weights.normal = 0.0;
  c.synth.frames = 7;
  save_run_config(dir / "a.ini", c);
  const RunConfig back = load_run_config(dir / "a.ini");
  CHECK(back.seed == 42);
  CHECK(back.paths.assets == c.paths.assets);
  CHECK(back.coarse.lambda_reg == c.coarse.lambda_reg);
  CHECK(back.fine.enabled == false);
  CHECK(back.train.weights.normal == 0.0);
  CHECK(back.synth.frames == 7);
  // Saving again reproduces the file byte for byte.
  save_run_config(dir / "b.ini", back);
  std::ifstream a(dir / "a.ini"), b(dir / "b.ini");
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
  CHECK(config_keys().size() == 46);
}

TEST_CASE("partial files keep defaults") {
  testing::TempDir dir("config");
  write(dir / "c.ini", "# comment\n[fine]\nlambda_reg = 0\n\n[run]\nseed = 3\n");
  const RunConfig c = load_run_config(dir / "c.ini");
  CHECK(c.fine.lambda_reg == 0.0);
  CHECK(c.seed == 3);
  CHECK(c.fine.lambda_temp == 1e6);
}

TEST_CASE("bad config files") {
  testing::TempDir dir("config");
  auto fails_with = [&](const std::string& text, const std::string& needle) {
    write(dir / "bad.ini", text);
    try {
      load_run_config(dir / "bad.ini");
      FAIL("no error for: " << text);
    } catch (const ParseError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  fails_with("[coarse]\nlambda_sill = 1\n", "coarse.lambda_sill");
  fails_with("[cooarse]\nstep = 1\n", "cooarse.step");
  fails_with("seed = 1\n", "outside a section");
  fails_with("[fine]\nstep = fast\n", "fine.step");
  fails_with("[fine]\nenabled = maybe\n", "fine.enabled");
  fails_with("[train]\nepochs = 1.5\n", "train.epochs");
  fails_with("[run]\nseed = -1\n", "run.seed");
  fails_with("[run]\nseed = 1\nseed = 2\n", "bad.ini");
  CHECK_THROWS_AS(load_run_config(dir / "missing.ini"), ParseError);
}

TEST_CASE("settings and validation") {
  RunConfig c;
  apply_setting(c, "fine.eta_max", "0.01");
  CHECK(c.fine.eta_max == 0.01);
  apply_setting(c, "animate.collide", "false");
  CHECK_FALSE(c.collide);
  CHECK_THROWS_AS(apply_setting(c, "fine.eta", "1"), InvalidArgument);
  CHECK_THROWS_AS(apply_setting(c, "fine.eta_max", ""), InvalidArgument);
  apply_setting(c, "fine.eta_max", "-1");
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = RunConfig{};
  apply_setting(c, "synth.frames", "0");
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = RunConfig{};
  apply_setting(c, "run.width", "0");
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
