#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "ecrl/config.hpp"
#include "ecrl/env.hpp"
#include "ecrl/estimator.hpp"
#include "ecrl/policy.hpp"
#include "ecrl/trainer.hpp"

namespace ecrl {

struct BenchmarkReport {
  std::string mode_label;
  std::string object;
  int n_trials = 0;
  std::vector<double> per_goal_success;            // fraction, indexed by goal
  std::vector<std::vector<double>> final_angles;   // per goal, rad
  double overall_B = 0.0;                          // percent
  double est_err_mean = 0.0;                       // rad, per-step geodesic
  double est_err_std = 0.0;
  int total_rollouts = 0;
};

struct ConsecutiveReport {
  std::string mode_label;
  std::vector<int> counts;
  double median = 0.0;
  int cap = 0;
};

// exact order statistics with linear interpolation; throws below 20 samples
std::vector<double> final_angle_distribution(const std::vector<double>& samples);
double median_of(std::vector<double> v);

void write_benchmark_report(const BenchmarkReport& r, const std::string& json_path,
                            const std::string& per_goal_csv, const std::string& angles_csv);
void write_consecutive_report(const ConsecutiveReport& r, const std::string& json_path);
std::string consecutive_counts_string(const ConsecutiveReport& r);  // "[a, b, ...]"

// Single-goal reorientation benchmark: n_trials rollouts of one goal
// interval for each of the 24 goals, fresh domain randomization per trial.
template <class T>
BenchmarkReport run_benchmark(Policy<T>& policy, Estimator<T>& estimator,
                              const RunningNorm& norm, const RunConfig& cfg,
                              TrainMode eval_mode, int n_trials, uint64_t eval_seed) {
  const auto& group = octahedral_group();
  int n_goals = static_cast<int>(group.size());
  int n = n_goals * n_trials;
  bool oracle = eval_mode == TrainMode::kOracle;
  int latent = estimator.latent_dim();
  double act_scale = cfg.env.joint_limit;

  std::vector<PivotEnv> envs;
  envs.reserve(n);
  for (int g = 0; g < n_goals; ++g)
    for (int tr = 0; tr < n_trials; ++tr)
      envs.emplace_back(cfg.env, cfg.object, eval_seed, (1 << 20) + g * n_trials + tr,
                        EnvMode::kEval);

  Eigen::MatrixXd obs(n, cfg.env.obs_dim());
  Eigen::MatrixXd u_prev(n, cfg.env.n_dof);
  EstimateBatch bg = EstimateBatch::zeros(n, latent);
  std::vector<Quat> goals(n);
  std::vector<uint8_t> active(n, 1), succeeded(n, 0);
  std::vector<double> final_angle(n, 0.0);

  for (int i = 0; i < n; ++i) {
    obs.row(i) = envs[i].obs().transpose();
    envs[i].set_goal(group[i / n_trials]);
    goals[i] = envs[i].goal();
    bg.set_row(i, init_estimate(envs[i].state(), latent));
    u_prev.row(i) = envs[i].last_q_d().transpose() / act_scale;
    final_angle[i] = envs[i].theta_to_goal();
  }

  Rng rng(eval_seed, 0xBE9C);
  double err_sum = 0.0, err_sq = 0.0;
  int64_t err_count = 0;
  int steps = cfg.env.goal_interval_steps();

  for (int t = 0; t < steps; ++t) {
    bg = estimator.predict(obs, u_prev, bg);
    for (int i = 0; i < n; ++i) {
      Quat rhat{bg.q(i, 0), bg.q(i, 1), bg.q(i, 2), bg.q(i, 3)};
      double err = geodesic_distance(rhat, envs[i].state().R);
      if (active[i]) {
        err_sum += err;
        err_sq += err * err;
        ++err_count;
      }
    }
    EstimateBatch fed = bg;
    if (oracle) {
      for (int i = 0; i < n; ++i) {
        const SystemState& s = envs[i].state();
        fed.x.row(i) = s.x.transpose();
        fed.q.row(i) = quat_canonicalize(s.R).coeffs().transpose();
        fed.v.row(i) = s.v.transpose();
        fed.w.row(i) = s.w.transpose();
        fed.l.row(i).setZero();
      }
    }
    Eigen::MatrixXd input = norm.normalize(assemble_policy_input(obs, fed, goals));
    ActResult act = policy.act(input, rng, /*deterministic=*/true);
    for (int i = 0; i < n; ++i) {
      if (!active[i]) continue;
      try {
        StepResult sr = envs[i].step(act.action.row(i).transpose());
        obs.row(i) = sr.obs.transpose();
        u_prev.row(i) = act.action.row(i) / act_scale;
        final_angle[i] = geodesic_distance(envs[i].state().R, goals[i]);
        if (sr.flags.dropped) {
          active[i] = 0;
        } else if (sr.flags.interval_end) {
          succeeded[i] = sr.flags.interval_success ? 1 : 0;
          active[i] = 0;
        }
      } catch (const EnvFault&) {
        active[i] = 0;  // component fault counts as a failed trial
      }
    }
  }

  BenchmarkReport rep;
  rep.mode_label = mode_name(eval_mode);
  rep.object = cfg.object.name;
  rep.n_trials = n_trials;
  rep.total_rollouts = n;
  rep.per_goal_success.assign(n_goals, 0.0);
  rep.final_angles.assign(n_goals, {});
  int wins = 0;
  for (int i = 0; i < n; ++i) {
    int g = i / n_trials;
    rep.per_goal_success[g] += succeeded[i] ? 1.0 : 0.0;
    rep.final_angles[g].push_back(final_angle[i]);
    wins += succeeded[i];
  }
  for (double& s : rep.per_goal_success) s /= n_trials;
  rep.overall_B = 100.0 * wins / n;
  if (err_count > 0) {
    rep.est_err_mean = err_sum / err_count;
    rep.est_err_std =
        std::sqrt(std::max(0.0, err_sq / err_count - rep.est_err_mean * rep.est_err_mean));
  }
  return rep;
}

// Consecutive reorientation: goals resampled uniformly after each success,
// stop at first failure or the cap. The training timeout does not apply.
template <class T>
ConsecutiveReport run_consecutive(Policy<T>& policy, Estimator<T>& estimator,
                                  const RunningNorm& norm, const RunConfig& cfg,
                                  TrainMode eval_mode, int n_trials, int cap,
                                  uint64_t eval_seed) {
  bool oracle = eval_mode == TrainMode::kOracle;
  int latent = estimator.latent_dim();
  double act_scale = cfg.env.joint_limit;
  int steps = cfg.env.goal_interval_steps();

  ConsecutiveReport rep;
  rep.mode_label = mode_name(eval_mode);
  rep.cap = cap;

  std::vector<PivotEnv> envs;
  envs.reserve(n_trials);
  for (int tr = 0; tr < n_trials; ++tr)
    envs.emplace_back(cfg.env, cfg.object, eval_seed, (1 << 21) + tr, EnvMode::kEval);

  int n = n_trials;
  Eigen::MatrixXd obs(n, cfg.env.obs_dim());
  Eigen::MatrixXd u_prev(n, cfg.env.n_dof);
  EstimateBatch bg = EstimateBatch::zeros(n, latent);
  std::vector<Quat> goals(n);
  std::vector<uint8_t> active(n, 1);
  std::vector<int> counts(n, 0);
  Rng rng(eval_seed, 0xC0235);

  for (int i = 0; i < n; ++i) {
    obs.row(i) = envs[i].obs().transpose();
    bg.set_row(i, init_estimate(envs[i].state(), latent));
    u_prev.row(i) = envs[i].last_q_d().transpose() / act_scale;
    goals[i] = envs[i].goal();
  }

  for (int round = 0; round < cap; ++round) {
    bool any = false;
    for (int i = 0; i < n; ++i) any |= active[i];
    if (!any) break;
    std::vector<uint8_t> round_success(n, 0);
    for (int t = 0; t < steps; ++t) {
      bg = estimator.predict(obs, u_prev, bg);
      EstimateBatch fed = bg;
      if (oracle) {
        for (int i = 0; i < n; ++i) {
          const SystemState& s = envs[i].state();
          fed.x.row(i) = s.x.transpose();
          fed.q.row(i) = quat_canonicalize(s.R).coeffs().transpose();
          fed.v.row(i) = s.v.transpose();
          fed.w.row(i) = s.w.transpose();
          fed.l.row(i).setZero();
        }
      }
      Eigen::MatrixXd input = norm.normalize(assemble_policy_input(obs, fed, goals));
      ActResult act = policy.act(input, rng, true);
      for (int i = 0; i < n; ++i) {
        if (!active[i]) continue;
        try {
          StepResult sr = envs[i].step(act.action.row(i).transpose());
          obs.row(i) = sr.obs.transpose();
          u_prev.row(i) = act.action.row(i) / act_scale;
          if (sr.flags.dropped) active[i] = 0;
          else if (sr.flags.interval_end) round_success[i] = sr.flags.interval_success;
        } catch (const EnvFault&) {
          active[i] = 0;
        }
      }
    }
    for (int i = 0; i < n; ++i) {
      if (!active[i]) continue;
      if (round_success[i]) {
        counts[i] += 1;
        // the env resampled its goal on success; adopt it
        goals[i] = envs[i].goal();
      } else {
        active[i] = 0;
      }
    }
  }

  rep.counts = counts;
  std::vector<double> c(counts.begin(), counts.end());
  rep.median = median_of(c);
  return rep;
}

}  // namespace ecrl
