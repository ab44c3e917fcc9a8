#include <doctest.h>

#include "ecrl/env.hpp"
#include "test_util.hpp"

using namespace ecrl;

TEST_SUITE_BEGIN("env");

namespace {

RunConfig base_config() { return run_config_from_string(""); }

VecX zero_action(const EnvConfig& cfg) { return VecX::Zero(cfg.n_dof); }

// scripted tangential sweep with n_lift fingers lifted at a time; returns
// the final orientation
Quat run_gait(PivotEnv& env, int n_lift, int steps, double stroke = 1.0) {
  const EnvConfig cfg_dummy{};
  (void)cfg_dummy;
  int n_dof = static_cast<int>(env.state().q.size());
  VecX a = VecX::Zero(n_dof);
  int phase_len = 8;
  for (int t = 0; t < steps; ++t) {
    int phase = (t / phase_len) % 4;
    a.setZero();
    for (int f = 0; f < 4; ++f) {
      bool lifted;
      if (n_lift == 2) lifted = (phase % 2 == 0) ? (f % 2 == 0) : (f % 2 == 1);
      else lifted = (f == phase);
      if (lifted) {
        a[3 * f] = -1.1;      // open
        a[3 * f + 1] = -stroke;  // sweep back
      } else {
        a[3 * f] = 0.3;       // press
        a[3 * f + 1] = stroke;   // drive
      }
    }
    env.step(a);
  }
  return env.state().R;
}

}  // namespace

TEST_CASE("fixed seed gives identical resets and trajectories") {
  RunConfig c = base_config();
  PivotEnv a(c.env, c.object, 7, 3, EnvMode::kTrain);
  PivotEnv b(c.env, c.object, 7, 3, EnvMode::kTrain);
  CHECK((a.obs() - b.obs()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.goal_index() == b.goal_index());
  Rng act_rng(9, 0);
  for (int t = 0; t < 20; ++t) {
    VecX act(c.env.n_dof);
    for (int i = 0; i < act.size(); ++i) act[i] = act_rng.uniform(-1.0, 1.0);
    StepResult ra = a.step(act), rb = b.step(act);
    CHECK((ra.obs - rb.obs).cwiseAbs().maxCoeff() == 0.0);
    CHECK(ra.reward == rb.reward);
    CHECK(geodesic_distance(a.state().R, b.state().R) == 0.0);
  }
}

TEST_CASE("nominal pose: origin, identity, all fingers engaged") {
  RunConfig c = base_config();
  GraspSet gs = GraspSet::build(c.env);
  CHECK(gs.poses[0].x.norm() == 0.0);
  CHECK(geodesic_distance(gs.poses[0].R, Quat{}) == 0.0);
  DomainRandomization none = DomainRandomization::none(c.env);
  PivotEnv env(c.env, c.object, 1, 0, EnvMode::kTrain, &none);
  CHECK(env.engaged_count() == 4);
}

TEST_CASE("zero action holds the grasp") {
  RunConfig c = base_config();
  DomainRandomization none = DomainRandomization::none(c.env);
  PivotEnv env(c.env, c.object, 3, 0, EnvMode::kTrain, &none);
  Quat r0 = env.state().R;
  Vec3 x0 = env.state().x;
  for (int t = 0; t < 50; ++t) env.step(zero_action(c.env));
  CHECK(geodesic_distance(env.state().R, r0) < 1e-3);
  CHECK((env.state().x - x0).norm() < 1e-3);
}

TEST_CASE("initial grasp set is stable under zero action") {
  RunConfig c = base_config();
  int drops = 0;
  for (int s = 0; s < 100; ++s) {
    PivotEnv env(c.env, c.object, 1000 + s, s, EnvMode::kTrain);
    for (int r = 0; r < 10; ++r) {
      env.reset();
      for (int t = 0; t < 10; ++t) {
        StepResult sr = env.step(zero_action(c.env));
        if (sr.flags.dropped) ++drops;
      }
    }
  }
  CHECK(drops == 0);  // 1000 resets total
}

TEST_CASE("commanding all fingers open drops the object quickly") {
  RunConfig c = base_config();
  PivotEnv env(c.env, c.object, 5, 0, EnvMode::kTrain);
  VecX open = VecX::Zero(c.env.n_dof);
  for (int f = 0; f < 4; ++f) open[3 * f] = -c.env.joint_limit;
  bool dropped = false;
  for (int t = 0; t < 20 && !dropped; ++t) dropped = env.step(open).flags.dropped;
  CHECK(dropped);
}

TEST_CASE("sample_goal excludes current and is uniform over the rest") {
  Rng rng(11, 0);
  const auto& group = octahedral_group();
  int current = 5;
  std::vector<int> counts(24, 0);
  int n = 100000;
  for (int i = 0; i < n; ++i) {
    int idx = -1;
    Quat q = sample_goal(rng, current, &idx);
    CHECK(idx != current);
    CHECK(geodesic_distance(q, group[idx]) < 1e-9);
    counts[idx]++;
  }
  CHECK(counts[current] == 0);
  double p = 1.0 / 23.0, sigma = std::sqrt(n * p * (1 - p));
  for (int i = 0; i < 24; ++i) {
    if (i == current) continue;
    CHECK(std::abs(counts[i] - n * p) < 3.0 * sigma);
  }
}

TEST_CASE("x3 observability is attenuated by alpha3") {
  RunConfig c = base_config();
  DomainRandomization none = DomainRandomization::none(c.env);
  PivotEnv env(c.env, c.object, 2, 0, EnvMode::kTrain, &none);
  const double h = 1e-6;
  auto sensitivity = [&](int axis) {
    SystemState& s = env.mutable_state();
    double orig = s.x[axis];
    s.x[axis] = orig + h;
    VecX up = env.noiseless_obs_map();
    s.x[axis] = orig - h;
    VecX dn = env.noiseless_obs_map();
    s.x[axis] = orig;
    return ((up - dn) / (2 * h)).norm();
  };
  double sx1 = sensitivity(0), sx3 = sensitivity(2);
  CHECK(sx1 > 1e-6);  // x1 is actually observable
  CHECK(sx3 <= c.env.alpha3 * sx1 * (1.0 + 1e-6));
  CHECK(sx3 > 0.0);  // weakly observable, not invisible
}

TEST_CASE("two-finger gaits are far noisier across seeds than four-finger gaits") {
  RunConfig c = base_config();
  auto final_angles = [&](int n_lift) {
    std::vector<double> a;
    for (int s = 0; s < 60; ++s) {
      PivotEnv env(c.env, c.object, 400 + s, s, EnvMode::kEval);
      Quat r0 = env.state().R;
      Quat rf = run_gait(env, n_lift, 40);
      a.push_back(geodesic_distance(r0, rf));
    }
    return a;
  };
  auto variance = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    m /= v.size();
    double acc = 0;
    for (double x : v) acc += (x - m) * (x - m);
    return acc / (v.size() - 1);
  };
  std::vector<double> two = final_angles(2), four = final_angles(1);
  CHECK(variance(two) >= 5.0 * variance(four));
}

TEST_CASE("reward closed forms") {
  VecX q0 = VecX::Zero(12);
  Vec3 x0 = Vec3::Zero();
  SUBCASE("within clip") {
    CHECK(reorientation_reward(0.30, 0.25, x0, x0, q0, q0) == doctest::Approx(50.0));
  }
  SUBCASE("rotation term caps at 100 per step") {
    CHECK(reorientation_reward(1.0, 0.5, x0, x0, q0, q0) == doctest::Approx(100.0));
  }
  SUBCASE("no motion at nominal") {
    CHECK(reorientation_reward(0.5, 0.5, x0, x0, q0, q0) == doctest::Approx(0.0));
  }
  SUBCASE("pure penalties") {
    Vec3 x = Vec3(0.0, 0.0, 0.04);
    VecX q = q0;
    q[0] = 0.3;
    // position: 0.1*(50*0.04)^4 = 1.6 ; joints: 2000/12 * 0.3^4 = 1.35
    double want = -0.1 * std::pow(50 * 0.04, 4) - 2000.0 / 12.0 * std::pow(0.3, 4);
    CHECK(reorientation_reward(0.2, 0.2, x, x0, q, q0) == doctest::Approx(want));
  }
  SUBCASE("position deviation clips at 0.3 m") {
    double at_clip = reorientation_reward(0, 0, Vec3(0.3, 0, 0), x0, q0, q0);
    double beyond = reorientation_reward(0, 0, Vec3(5.0, 0, 0), x0, q0, q0);
    CHECK(at_clip == doctest::Approx(beyond));
  }
}

TEST_CASE("termination rules") {
  RunConfig c = base_config();
  SystemState s;
  s.q = VecX::Zero(12);
  s.q_free = s.q;
  s.q_d_filt = s.q;
  Quat goal = octahedral_group()[4];

  SUBCASE("drop radius") {
    s.x = Vec3(0.11, 0, 0);
    CHECK(check_termination(s, nullptr, goal, EnvMode::kTrain, c.env).dropped);
    s.x = Vec3(0.09, 0, 0);
    CHECK_FALSE(check_termination(s, nullptr, goal, EnvMode::kTrain, c.env).dropped);
  }
  SUBCASE("success at interval end just under the threshold") {
    s.t_in_goal = c.env.goal_interval_steps();
    s.R = quat_compose(quat_exp(Tangent3(0.39, 0, 0)), goal);
    auto f = check_termination(s, nullptr, goal, EnvMode::kTrain, c.env);
    CHECK(f.interval_end);
    CHECK(f.interval_success);
    CHECK_FALSE(f.goal_timeout);
    s.R = quat_compose(quat_exp(Tangent3(0.41, 0, 0)), goal);
    auto f2 = check_termination(s, nullptr, goal, EnvMode::kTrain, c.env);
    CHECK(f2.goal_timeout);
  }
  SUBCASE("divergence is train-only") {
    Quat est = quat_compose(quat_exp(Tangent3(M_PI / 2, 0, 0)), s.R);
    CHECK(check_termination(s, &est, goal, EnvMode::kTrain, c.env).estimator_divergence);
    CHECK_FALSE(check_termination(s, &est, goal, EnvMode::kEval, c.env).estimator_divergence);
    Quat close = quat_compose(quat_exp(Tangent3(0.5, 0, 0)), s.R);
    CHECK_FALSE(check_termination(s, &close, goal, EnvMode::kTrain, c.env).estimator_divergence);
  }
  SUBCASE("episode timeout") {
    s.episode_t = c.env.episode_timeout_steps();
    CHECK(check_termination(s, nullptr, goal, EnvMode::kTrain, c.env).episode_timeout);
  }
}

TEST_CASE("goal bookkeeping: new goal exactly at the interval or on success") {
  RunConfig c = base_config();
  DomainRandomization none = DomainRandomization::none(c.env);
  PivotEnv env(c.env, c.object, 21, 0, EnvMode::kTrain, &none);
  // hold still: success only if goal happens to be within threshold (it is
  // not, by construction of reset goals), so the first interval must end in
  // a goal timeout exactly at 50 steps
  int goal0 = env.goal_index();
  for (int t = 0; t < c.env.goal_interval_steps() - 1; ++t) {
    StepResult sr = env.step(zero_action(c.env));
    CHECK(env.goal_index() == goal0);
    CHECK_FALSE(sr.flags.interval_end);
  }
  StepResult last = env.step(zero_action(c.env));
  CHECK(last.flags.interval_end);
  CHECK(last.flags.goal_timeout);
  CHECK(last.done);
}

TEST_CASE("vectorized stepping equals per-env sequential stepping") {
  RunConfig c = base_config();
  int n = 4;
  VecEnv vec(c.env, c.object, 77, n, EnvMode::kTrain);
  std::vector<PivotEnv> seq;
  for (int i = 0; i < n; ++i) seq.emplace_back(c.env, c.object, 77, i, EnvMode::kTrain);

  Eigen::MatrixXd actions(n, c.env.n_dof);
  Rng rng(5, 0);
  for (int t = 0; t < 10; ++t) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < c.env.n_dof; ++j) actions(i, j) = rng.uniform(-1, 1);
    Eigen::MatrixXd obs;
    VecX rew;
    std::vector<TerminationFlags> flags;
    vec.step_all(actions, &obs, &rew, &flags);
    for (int i = 0; i < n; ++i) {
      StepResult sr = seq[i].step(actions.row(i).transpose());
      CHECK((obs.row(i).transpose() - sr.obs).cwiseAbs().maxCoeff() == 0.0);
      CHECK(rew[i] == sr.reward);
    }
  }
}

TEST_CASE("deterministic with three engaged fingers and zero noise") {
  RunConfig c = run_config_from_string(
      "[env]\nobs_noise = 0\nobs_bias = 0\nsigma_x3 = 0\nsize_lo = 1\nsize_hi = 1\n"
      "gain_jitter = 0\n");
  PivotEnv a(c.env, c.object, 9, 0, EnvMode::kTrain);
  PivotEnv b(c.env, c.object, 9, 0, EnvMode::kTrain);
  VecX act = VecX::Zero(c.env.n_dof);
  act[1] = 0.8;  // drive one finger, all four stay engaged
  for (int t = 0; t < 30; ++t) {
    StepResult ra = a.step(act), rb = b.step(act);
    CHECK(geodesic_distance(a.state().R, b.state().R) == 0.0);
    CHECK((ra.obs - rb.obs).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(a.engaged_count() >= 3);
}

TEST_CASE("env fault on non-finite action") {
  RunConfig c = base_config();
  PivotEnv env(c.env, c.object, 1, 4, EnvMode::kTrain);
  VecX bad = VecX::Constant(c.env.n_dof, std::nan(""));
  CHECK_THROWS_AS(env.step(bad), EnvFault);
  try {
    env.step(bad);
  } catch (const EnvFault& f) {
    CHECK(f.env_id == 4);
  }
}

TEST_SUITE_END();
