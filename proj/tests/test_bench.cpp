#include <doctest.h>

#include "ecrl/bench.hpp"
#include "test_util.hpp"

using namespace ecrl;

TEST_SUITE_BEGIN("bench");

TEST_CASE("quantiles: constants, order statistics, sort oracle") {
  SUBCASE("all equal") {
    std::vector<double> s(25, 3.25);
    auto q = final_angle_distribution(s);
    for (double v : q) CHECK(v == doctest::Approx(3.25));
  }
  SUBCASE("1..100 median") {
    std::vector<double> s;
    for (int i = 1; i <= 100; ++i) s.push_back(i);
    auto q = final_angle_distribution(s);
    CHECK(q[2] == doctest::Approx(50.5));
  }
  SUBCASE("random data matches an independent sort-based oracle") {
    Rng rng(71, 0);
    std::vector<double> s;
    for (int i = 0; i < 137; ++i) s.push_back(rng.normal());
    auto q = final_angle_distribution(s);
    std::vector<double> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    const double ps[5] = {0.05, 0.25, 0.5, 0.75, 0.95};
    for (int k = 0; k < 5; ++k) {
      double pos = ps[k] * (sorted.size() - 1);
      size_t lo = static_cast<size_t>(std::floor(pos));
      size_t hi = static_cast<size_t>(std::ceil(pos));
      double want = sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
      CHECK(std::abs(q[k] - want) < 1e-12);
    }
  }
  SUBCASE("too few samples is an error") {
    std::vector<double> s(19, 1.0);
    CHECK_THROWS(final_angle_distribution(s));
  }
}

TEST_CASE("median") {
  CHECK(median_of({5, 1, 3}) == doctest::Approx(3));
  CHECK(median_of({4, 1, 3, 2}) == doctest::Approx(2.5));
  CHECK(median_of({}) == doctest::Approx(0));
}

namespace {

RunConfig bench_config() {
  return run_config_from_string(
      "[train]\nn_envs = 4\nrollout_len = 8\nnet_scale = 0.02\nseed = 5\n"
      "[estimator]\nlatent_dim = 4\n");
}

}  // namespace

TEST_CASE("untrained policy scores near the chance floor and totals add up") {
  RunConfig cfg = bench_config();
  Rng rng(72, 0);
  Estimator<double> est(cfg.estimator, cfg.estimator_hidden(), cfg.env.obs_dim(),
                        cfg.env.n_dof, rng);
  Policy<double> pol(cfg.ppo, cfg.policy_hidden(), cfg.env.obs_dim() + 15, cfg.env.n_dof,
                     cfg.env.joint_limit, rng);
  RunningNorm norm(cfg.env.obs_dim() + 15);

  int trials = 3;
  BenchmarkReport rep = run_benchmark(pol, est, norm, cfg, TrainMode::kEcrl, trials, 123);
  CHECK(rep.total_rollouts == 24 * trials);
  CHECK(rep.per_goal_success.size() == 24);
  int angle_count = 0;
  for (const auto& g : rep.final_angles) angle_count += g.size();
  CHECK(angle_count == 24 * trials);
  CHECK(rep.overall_B < 10.0);
  CHECK(rep.est_err_mean >= 0.0);

  ConsecutiveReport con =
      run_consecutive(pol, est, norm, cfg, TrainMode::kEcrl, 5, 20, 124);
  CHECK(con.counts.size() == 5);
  CHECK(con.median == doctest::Approx(0.0));  // always-failing policy
  CHECK(consecutive_counts_string(con) == "[0, 0, 0, 0, 0]");
}

TEST_CASE("benchmark is reproducible for a fixed evaluation seed") {
  RunConfig cfg = bench_config();
  Rng rng(73, 0);
  Estimator<double> est(cfg.estimator, cfg.estimator_hidden(), cfg.env.obs_dim(),
                        cfg.env.n_dof, rng);
  Policy<double> pol(cfg.ppo, cfg.policy_hidden(), cfg.env.obs_dim() + 15, cfg.env.n_dof,
                     cfg.env.joint_limit, rng);
  RunningNorm norm(cfg.env.obs_dim() + 15);
  BenchmarkReport a = run_benchmark(pol, est, norm, cfg, TrainMode::kOracle, 2, 55);
  BenchmarkReport b = run_benchmark(pol, est, norm, cfg, TrainMode::kOracle, 2, 55);
  CHECK(a.overall_B == b.overall_B);
  CHECK(a.est_err_mean == b.est_err_mean);
  for (int g = 0; g < 24; ++g)
    for (int t = 0; t < 2; ++t) CHECK(a.final_angles[g][t] == b.final_angles[g][t]);
}

TEST_CASE("report files") {
  BenchmarkReport rep;
  rep.mode_label = "ecrl";
  rep.object = "cube";
  rep.n_trials = 2;
  rep.total_rollouts = 48;
  rep.overall_B = 50.0;
  rep.per_goal_success.assign(24, 0.5);
  rep.final_angles.assign(24, {0.1, 0.3});
  auto dir = std::filesystem::temp_directory_path();
  auto j = (dir / "ecrl_rep.json").string();
  auto c1 = (dir / "ecrl_goal.csv").string();
  auto c2 = (dir / "ecrl_ang.csv").string();
  write_benchmark_report(rep, j, c1, c2);
  CHECK(std::filesystem::exists(j));
  CHECK(std::filesystem::exists(c1));
  CHECK(std::filesystem::exists(c2));
  std::ifstream f(c1);
  std::string header;
  std::getline(f, header);
  CHECK(header == "goal_index,success_rate,mode,object");
  std::filesystem::remove(j);
  std::filesystem::remove(c1);
  std::filesystem::remove(c2);
}

TEST_SUITE_END();
