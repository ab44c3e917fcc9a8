#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "ecrl/checkpoint.hpp"
#include "ecrl/config.hpp"

using namespace ecrl;

TEST_SUITE_BEGIN("config");

TEST_CASE("defaults load from empty text") {
  RunConfig c = run_config_from_string("");
  CHECK(c.train.n_envs == 256);
  CHECK(c.train.rollout_len == 32);
  CHECK(c.train.rho0 == 1.0);
  CHECK(c.train.delta_rho == doctest::Approx(1e-3));
  CHECK(c.ppo.clip == doctest::Approx(0.2));
  CHECK(c.ppo.entropy_coef == doctest::Approx(1e-3));
  CHECK(c.ppo.tau == doctest::Approx(0.95));
  CHECK(c.ppo.gamma == doctest::Approx(0.99));
  CHECK(c.estimator.latent_dim == 32);
  CHECK(c.estimator.lr == doctest::Approx(5e-4));
  CHECK(c.estimator.data_reuse_k == 2);
  CHECK(c.env.goal_interval_steps() == 50);
  CHECK(c.env.episode_timeout_steps() == 200);
  CHECK(c.env.obs_dim() == 144);
}

TEST_CASE("paper-scale widths and desk scaling") {
  RunConfig c = run_config_from_string("");
  CHECK(c.ppo.hidden == std::vector<int>{512, 512, 256, 128});
  CHECK(c.estimator.hidden == std::vector<int>{512, 512, 512, 512});
  CHECK(c.train.net_scale == doctest::Approx(0.25));
  CHECK(c.policy_hidden() == std::vector<int>{128, 128, 64, 32});
  CHECK(c.estimator_hidden() == std::vector<int>{128, 128, 128, 128});
}

TEST_CASE("file values override and sections parse") {
  RunConfig c = run_config_from_string(
      "[train]\nmode = naive\nn_envs = 8\n[env]\ngain = 1.25  # comment\n[object]\nname = apple\n");
  CHECK(c.train.mode == TrainMode::kNaive);
  CHECK(c.train.n_envs == 8);
  CHECK(c.env.gain == doctest::Approx(1.25));
  CHECK(c.object.name == "apple");
  CHECK(c.object.drift_susceptibility > 2.0);
}

TEST_CASE("unknown field is a named error") {
  CHECK_THROWS_WITH_AS(run_config_from_string("[env]\ngian = 2.0\n"),
                       doctest::Contains("env.gian"), std::runtime_error);
}

TEST_CASE("bad value names the field and line") {
  CHECK_THROWS_WITH_AS(run_config_from_string("[train]\nn_envs = many\n"),
                       doctest::Contains("train.n_envs"), std::runtime_error);
}

TEST_CASE("invalid mode lists valid modes") {
  CHECK_THROWS_WITH_AS(run_config_from_string("[train]\nmode = blorp\n"),
                       doctest::Contains("ecrl, naive, estimada, oracle"), std::runtime_error);
}

TEST_CASE("object presets") {
  ObjectSpec cube = ObjectSpec::preset("cube");
  CHECK(cube.symmetry.size() == 24);
  ObjectSpec cuboid = ObjectSpec::preset("cuboid");
  CHECK(cuboid.symmetry.size() == 8);
  ObjectSpec l = ObjectSpec::preset("l");
  CHECK(l.symmetry.size() == 1);
  ObjectSpec apple = ObjectSpec::preset("apple");
  CHECK(apple.drift_susceptibility > cube.drift_susceptibility);
  CHECK_THROWS(ObjectSpec::preset("banana"));
  // symmetry sets are closed under composition
  const auto& g = octahedral_group();
  for (int a : cuboid.symmetry)
    for (int b : cuboid.symmetry) {
      Quat q = quat_compose(g[a], g[b]);
      bool found = false;
      for (int c : cuboid.symmetry) found |= geodesic_distance(g[c], q) < 1e-6;
      CHECK(found);
    }
}

TEST_CASE("config hash is stable and value-sensitive") {
  RunConfig a = run_config_from_string("");
  RunConfig b = run_config_from_string("");
  CHECK(a.hash8() == b.hash8());
  RunConfig c = run_config_from_string("[env]\ngain = 1.9\n");
  CHECK(a.hash8() != c.hash8());
}

TEST_CASE("checkpoint round trip is exact") {
  Checkpoint ck;
  Eigen::MatrixXd m(3, 2);
  m << 1.0, -2.5, 3.125e-7, 4.0, 5.0, 1.0 / 3.0;
  ck.put("a.w0", m);
  ck.meta["iteration"] = 42;
  ck.meta["rho"] = 0.625;
  std::string path = (std::filesystem::temp_directory_path() / "ecrl_ck_test.ckpt").string();
  ck.save(path);
  Checkpoint got = Checkpoint::load(path);
  CHECK(got.meta["iteration"] == 42);
  CHECK(got.meta["rho"] == 0.625);
  CHECK((got.get("a.w0") - m).cwiseAbs().maxCoeff() == 0.0);
  CHECK(got.has("a.w0"));
  CHECK_FALSE(got.has("missing"));
  CHECK_THROWS_WITH_AS((void)got.get("missing"), doctest::Contains("missing"),
                       std::runtime_error);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint rejects missing and corrupt files") {
  CHECK_THROWS(Checkpoint::load("/nonexistent/path.ckpt"));
  std::string path = (std::filesystem::temp_directory_path() / "ecrl_ck_bad.ckpt").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint at all";
  }
  CHECK_THROWS_WITH_AS(Checkpoint::load(path), doctest::Contains("magic"), std::runtime_error);
  std::remove(path.c_str());
}

TEST_SUITE_END();
