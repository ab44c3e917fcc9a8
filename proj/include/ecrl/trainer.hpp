#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ecrl/checkpoint.hpp"
#include "ecrl/csv.hpp"
#include "ecrl/config.hpp"
#include "ecrl/env.hpp"
#include "ecrl/estimator.hpp"
#include "ecrl/policy.hpp"
#include "ecrl/rollout.hpp"

namespace ecrl {

// policy/value input row: z | x_hat | 6d(Rg^-1 * R_hat) | v_hat | w_hat
inline Eigen::MatrixXd assemble_policy_input(const Eigen::MatrixXd& z,
                                             const EstimateBatch& fed,
                                             const std::vector<Quat>& goals) {
  int n = static_cast<int>(z.rows());
  Eigen::MatrixXd in(n, z.cols() + 15);
  in.middleCols(0, z.cols()) = z;
  int at = static_cast<int>(z.cols());
  in.middleCols(at, 3) = fed.x;
  for (int i = 0; i < n; ++i) {
    Quat rhat{fed.q(i, 0), fed.q(i, 1), fed.q(i, 2), fed.q(i, 3)};
    Quat rel = relative_rotation(goals[i], rhat);
    in.block(i, at + 3, 1, 6) = rotation_to_6d(rel).transpose();
  }
  in.middleCols(at + 9, 3) = fed.v;
  in.middleCols(at + 12, 3) = fed.w;
  return in;
}

struct IterationMetrics {
  int iteration = 0;
  double rho = 0.0;
  double reward_mean = 0.0;
  double episode_len_mean = 0.0;
  double success_rate = 0.0;  // goal intervals won during the rollout
  double approx_kl = 0.0;
  double lr = 0.0;
  double entropy = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double divergence_rate = 0.0;
  EstimatorMetrics est;
};

// Writes manifest/metrics/checkpoints under a deterministic run directory.
struct RunPaths {
  std::filesystem::path dir;
  std::filesystem::path manifest() const { return dir / "manifest.json"; }
  std::filesystem::path metrics() const { return dir / "metrics.csv"; }
  std::filesystem::path estimator_metrics() const { return dir / "estimator_metrics.csv"; }
  std::filesystem::path checkpoint_last() const { return dir / "checkpoint_last.ckpt"; }
  std::filesystem::path checkpoint_at(int iter) const {
    return dir / ("checkpoint_" + std::to_string(iter) + ".ckpt");
  }
};

std::string run_dir_name(const RunConfig& cfg);
void write_manifest(const RunConfig& cfg, const RunPaths& paths);
std::string kv_from_config(const RunConfig& cfg);  // reload-able key=value dump

template <class T>
class Trainer;

// Main training loop: metrics CSVs, periodic checkpoints, final checkpoint.
template <class T>
void run_training(Trainer<T>& trainer, const RunPaths& paths, bool verbose);

// Alternating rollout collection and learning (Algorithm-1 style) over the
// vectorized environment set.
template <class T>
class Trainer {
 public:
  explicit Trainer(const RunConfig& cfg)
      : cfg_(cfg),
        rng_(cfg.train.seed, 0xC011ec7),
        envs_(cfg.env, cfg.object, cfg.train.seed, cfg.train.n_envs, EnvMode::kTrain),
        rho_(initial_rho(cfg)) {
    Rng init_rng(cfg.train.seed, 0x1217);
    int obs_dim = cfg.env.obs_dim();
    estimator_ = Estimator<T>(cfg.estimator, cfg.estimator_hidden(), obs_dim,
                              cfg.env.n_dof, init_rng);
    policy_ = Policy<T>(cfg.ppo, cfg.policy_hidden(), obs_dim + 15, cfg.env.n_dof,
                        cfg.env.joint_limit, init_rng);
    norm_ = RunningNorm(obs_dim + 15);
    init_envs();
  }

  static double initial_rho(const RunConfig& cfg) {
    switch (cfg.train.mode) {
      case TrainMode::kNaive:
      case TrainMode::kOracle: return 1.0;
      case TrainMode::kEstimAda: return 0.0;
      case TrainMode::kEcrl: return cfg.train.rho0;
    }
    return cfg.train.rho0;
  }

  void init_envs() {
    int n = envs_.size();
    obs_.resize(n, cfg_.env.obs_dim());
    for (int i = 0; i < n; ++i) obs_.row(i) = envs_.env(i).reset().transpose();
    cur_est_ = EstimateBatch::zeros(n, cfg_.estimator.latent_dim);
    u_prev_.resize(n, cfg_.env.n_dof);
    episode_start_.assign(n, 1);
    episode_len_.assign(n, 0);
    for (int i = 0; i < n; ++i) {
      cur_est_.set_row(i, init_estimate(envs_.env(i).state(), cfg_.estimator.latent_dim));
      u_prev_.row(i) = envs_.env(i).last_q_d().transpose() / cfg_.env.joint_limit;
    }
  }

  // One Algorithm-1 collection segment.
  RolloutBuffer collect_rollout() {
    int n = envs_.size(), len = cfg_.train.rollout_len;
    int obs_dim = cfg_.env.obs_dim();
    RolloutBuffer buf;
    buf.allocate(n, len, obs_dim, cfg_.env.n_dof, obs_dim + 15, cfg_.estimator.latent_dim);

    std::vector<double> coin(n);
    for (int e = 0; e < n; ++e) coin[e] = rng_.uniform();

    bool update_norm = cfg_.train.mode != TrainMode::kEstimAda;
    finished_episode_lens_.clear();
    interval_ends_ = 0;
    interval_wins_ = 0;
    divergences_ = 0;

    for (int t = 0; t < len; ++t) {
      // snapshot ground truth and recursion inputs
      std::vector<Quat> goals(n);
      EstimateBatch gt = EstimateBatch::zeros(n, 0);
      for (int e = 0; e < n; ++e) {
        const SystemState& s = envs_.env(e).state();
        gt.x.row(e) = s.x.transpose();
        gt.q.row(e) = quat_canonicalize(s.R).coeffs().transpose();
        gt.v.row(e) = s.v.transpose();
        gt.w.row(e) = s.w.transpose();
        goals[e] = envs_.env(e).goal();
        int r = buf.row(e, t);
        buf.est_prev_x.row(r) = cur_est_.x.row(e);
        buf.est_prev_q.row(r) = cur_est_.q.row(e);
        buf.est_prev_v.row(r) = cur_est_.v.row(e);
        buf.est_prev_w.row(r) = cur_est_.w.row(e);
        buf.est_prev_l.row(r) = cur_est_.l.row(e);
        buf.episode_start[r] = episode_start_[e];
      }

      // recursion step; skipped when every env gets ground truth anyway
      EstimateBatch pred = cur_est_;
      bool need_predict = false;
      for (int e = 0; e < n; ++e)
        need_predict |= !(coin[e] < rho_ || episode_start_[e]);
      if (need_predict) pred = estimator_.predict(obs_, u_prev_, cur_est_);

      // feed selection (Algorithm 1): ground truth on the coin or at episode
      // starts, the estimate otherwise
      EstimateBatch fed = pred;
      std::vector<uint8_t> diverged(n, 0);
      for (int e = 0; e < n; ++e) {
        int r = buf.row(e, t);
        bool use_gt = coin[e] < rho_ || episode_start_[e];
        buf.fed_gt[r] = use_gt ? 1 : 0;
        if (use_gt) {
          fed.x.row(e) = gt.x.row(e);
          fed.q.row(e) = gt.q.row(e);
          fed.v.row(e) = gt.v.row(e);
          fed.w.row(e) = gt.w.row(e);
          fed.l.row(e).setZero();
        } else {
          Quat rhat{fed.q(e, 0), fed.q(e, 1), fed.q(e, 2), fed.q(e, 3)};
          TerminationFlags tf = check_termination(envs_.env(e).state(), &rhat, goals[e],
                                                  EnvMode::kTrain, cfg_.env);
          diverged[e] = tf.estimator_divergence ? 1 : 0;
        }
        buf.fed_q.row(buf.row(e, t)) = fed.q.row(e);
      }

      Eigen::MatrixXd input_raw = assemble_policy_input(obs_, fed, goals);
      if (update_norm) norm_.update(input_raw);
      Eigen::MatrixXd input = norm_.normalize(input_raw);
      ActResult act = policy_.act(input, rng_, /*deterministic=*/false);

      for (int e = 0; e < n; ++e) {
        int r = buf.row(e, t);
        buf.z.row(r) = obs_.row(e);
        buf.u_prev.row(r) = u_prev_.row(e);
        buf.policy_input.row(r) = input.row(e);
        buf.u_raw.row(r) = act.raw.row(e);
        buf.gt_x.row(r) = gt.x.row(e);
        buf.gt_q.row(r) = gt.q.row(e);
        buf.gt_v.row(r) = gt.v.row(e);
        buf.gt_w.row(r) = gt.w.row(e);
        buf.logprob[r] = act.logprob[e];
        buf.value[r] = act.value[e];
        buf.episode_start[r] = episode_start_[e];
      }

      // step every environment; faults invalidate the row and force a reset
      for (int e = 0; e < n; ++e) {
        int r = buf.row(e, t);
        episode_start_[e] = 0;
        bool done = false;
        try {
          StepResult sr = envs_.env(e).step(act.action.row(e).transpose());
          obs_.row(e) = sr.obs.transpose();
          buf.reward[r] = sr.reward;
          if (sr.flags.interval_end) {
            ++interval_ends_;
            if (sr.flags.interval_success) ++interval_wins_;
          }
          done = sr.done;
          if (diverged[e]) {
            done = true;
            ++divergences_;
          }
          episode_len_[e] += 1;
        } catch (const EnvFault&) {
          buf.valid[r] = 0;
          buf.reward[r] = 0.0;
          done = true;
        }
        buf.done[r] = done ? 1 : 0;
        if (done) {
          finished_episode_lens_.push_back(episode_len_[e]);
          episode_len_[e] = 0;
          obs_.row(e) = envs_.env(e).reset().transpose();
          cur_est_.set_row(e, init_estimate(envs_.env(e).state(), cfg_.estimator.latent_dim));
          u_prev_.row(e) = envs_.env(e).last_q_d().transpose() / cfg_.env.joint_limit;
          episode_start_[e] = 1;
        } else {
          cur_est_.x.row(e) = fed.x.row(e);
          cur_est_.q.row(e) = fed.q.row(e);
          cur_est_.v.row(e) = fed.v.row(e);
          cur_est_.w.row(e) = fed.w.row(e);
          cur_est_.l.row(e) = fed.l.row(e);
          u_prev_.row(e) = act.action.row(e) / cfg_.env.joint_limit;
        }
        if (cfg_.estimator.start_from_truth && buf.episode_start[r] == 0) {
          // alternative sequence-start distribution: ground truth at t-1
          int rp = t > 0 ? buf.row(e, t - 1) : -1;
          if (rp >= 0) {
            buf.est_prev_x.row(r) = buf.gt_x.row(rp);
            buf.est_prev_q.row(r) = buf.gt_q.row(rp);
            buf.est_prev_v.row(r) = buf.gt_v.row(rp);
            buf.est_prev_w.row(r) = buf.gt_w.row(rp);
          }
        }
      }
    }

    // bootstrap values for truncation
    {
      std::vector<Quat> goals(n);
      EstimateBatch gt = EstimateBatch::zeros(n, 0);
      for (int e = 0; e < n; ++e) {
        const SystemState& s = envs_.env(e).state();
        gt.x.row(e) = s.x.transpose();
        gt.q.row(e) = quat_canonicalize(s.R).coeffs().transpose();
        gt.v.row(e) = s.v.transpose();
        gt.w.row(e) = s.w.transpose();
        goals[e] = envs_.env(e).goal();
      }
      EstimateBatch pred = cur_est_;
      bool need_predict = false;
      for (int e = 0; e < n; ++e)
        need_predict |= !(coin[e] < rho_ || episode_start_[e]);
      if (need_predict) pred = estimator_.predict(obs_, u_prev_, cur_est_);
      EstimateBatch fed = pred;
      for (int e = 0; e < n; ++e) {
        if (coin[e] < rho_ || episode_start_[e]) {
          fed.x.row(e) = gt.x.row(e);
          fed.q.row(e) = gt.q.row(e);
          fed.v.row(e) = gt.v.row(e);
          fed.w.row(e) = gt.w.row(e);
          fed.l.row(e).setZero();
        }
      }
      Eigen::MatrixXd input = norm_.normalize(assemble_policy_input(obs_, fed, goals));
      buf.bootstrap_value = policy_.values(input);
    }
    return buf;
  }

  IterationMetrics train_iteration() {
    IterationMetrics m;
    m.iteration = iteration_;
    m.rho = rho_;

    RolloutBuffer buf = collect_rollout();
    m.reward_mean = 0.0;
    int vc = 0;
    for (int r = 0; r < buf.rows(); ++r)
      if (buf.valid[r]) {
        m.reward_mean += buf.reward[r];
        ++vc;
      }
    if (vc) m.reward_mean /= vc;
    m.success_rate = interval_ends_ ? double(interval_wins_) / interval_ends_ : 0.0;
    m.divergence_rate = double(divergences_) / buf.rows();
    if (!finished_episode_lens_.empty()) {
      double s = 0;
      for (int l : finished_episode_lens_) s += l;
      m.episode_len_mean = s / finished_episode_lens_.size();
    }

    m.est = estimator_.train_epoch(buf, rng_);

    if (cfg_.train.mode != TrainMode::kEstimAda) {
      int n = buf.n_envs, len = buf.rollout_len;
      Eigen::MatrixXd rew(n, len), val(n, len);
      Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic> don(n, len);
      for (int e = 0; e < n; ++e)
        for (int t = 0; t < len; ++t) {
          int r = buf.row(e, t);
          rew(e, t) = buf.reward[r];
          val(e, t) = buf.value[r];
          don(e, t) = buf.done[r];
        }
      Eigen::MatrixXd adv, ret;
      gae(rew, val, don, buf.bootstrap_value, cfg_.ppo.gamma, cfg_.ppo.tau, &adv, &ret);

      std::vector<int> rows;
      rows.reserve(buf.rows());
      for (int r = 0; r < buf.rows(); ++r)
        if (buf.valid[r]) rows.push_back(r);
      Eigen::MatrixXd inputs(rows.size(), buf.policy_input.cols());
      Eigen::MatrixXd raw(rows.size(), buf.u_raw.cols());
      Eigen::VectorXd oldlp(rows.size()), advv(rows.size()), retv(rows.size()),
          oldv(rows.size());
      for (size_t i = 0; i < rows.size(); ++i) {
        int r = rows[i];
        int e = r / len, t = r % len;
        inputs.row(i) = buf.policy_input.row(r);
        raw.row(i) = buf.u_raw.row(r);
        oldlp[i] = buf.logprob[r];
        advv[i] = adv(e, t);
        retv[i] = ret(e, t);
        oldv[i] = buf.value[r];
      }
      PpoMetrics pm = policy_.ppo_update(inputs, raw, oldlp, advv, retv, oldv, rng_);
      m.approx_kl = pm.approx_kl;
      m.entropy = pm.entropy;
      m.policy_loss = pm.policy_loss;
      m.value_loss = pm.value_loss;
      policy_.set_lr(adapt_lr(policy_.lr(), pm.approx_kl, cfg_.ppo));
    }
    m.lr = policy_.lr();

    if (cfg_.train.mode == TrainMode::kEcrl)
      rho_ = std::max(rho_ - cfg_.train.delta_rho, 0.0);
    ++iteration_;
    return m;
  }

  void save_checkpoint(const std::string& path) {
    Checkpoint ck;
    ck.meta["kind"] = "ecrl_trainer";
    ck.meta["mode"] = mode_name(cfg_.train.mode);
    ck.meta["object"] = cfg_.object.name;
    ck.meta["iteration"] = iteration_;
    ck.meta["rho"] = rho_;
    ck.meta["seed"] = cfg_.train.seed;
    ck.meta["config_kv"] = kv_from_config(cfg_);
    ck.meta["config_hash"] = cfg_.hash8();
    policy_.save(&ck, "policy");
    estimator_.save(&ck, "estimator");
    norm_.save(&ck, "norm");
    ck.save(path);
  }

  void restore_checkpoint(const std::string& path) {
    Checkpoint ck = Checkpoint::load(path);
    if (ck.meta.value("kind", "") != "ecrl_trainer")
      throw std::runtime_error("checkpoint: not a trainer checkpoint: " + path);
    policy_.restore(ck, "policy");
    estimator_.restore(ck, "estimator");
    norm_.restore(ck, "norm");
    iteration_ = ck.meta.value("iteration", 0);
    rho_ = ck.meta.value("rho", rho_);
  }

  // estimada starts from a converged naive/oracle policy
  void init_policy_from(const std::string& checkpoint_path) {
    Checkpoint ck = Checkpoint::load(checkpoint_path);
    policy_.restore(ck, "policy");
    norm_.restore(ck, "norm");
  }

  void init_estimator_from(const std::string& checkpoint_path) {
    Checkpoint ck = Checkpoint::load(checkpoint_path);
    estimator_.restore(ck, "estimator");
  }

  const RunConfig& config() const { return cfg_; }
  Policy<T>& policy() { return policy_; }
  Estimator<T>& estimator() { return estimator_; }
  RunningNorm& norm() { return norm_; }
  double rho() const { return rho_; }
  int iteration() const { return iteration_; }

 private:
  RunConfig cfg_;
  Rng rng_;
  VecEnv envs_;
  Estimator<T> estimator_;
  Policy<T> policy_;
  RunningNorm norm_;
  double rho_ = 1.0;
  int iteration_ = 0;

  Eigen::MatrixXd obs_;
  EstimateBatch cur_est_;
  Eigen::MatrixXd u_prev_;
  std::vector<uint8_t> episode_start_;
  std::vector<int> episode_len_;
  std::vector<int> finished_episode_lens_;
  int interval_ends_ = 0, interval_wins_ = 0, divergences_ = 0;
};

template <class T>
void run_training(Trainer<T>& trainer, const RunPaths& paths, bool verbose) {
  CsvWriter metrics(paths.metrics().string(),
                    {"iteration", "rho", "reward_mean", "episode_len_mean", "success_rate",
                     "approx_kl", "lr", "entropy", "policy_loss", "value_loss",
                     "divergence_rate"},
                    /*append=*/true);
  CsvWriter est(paths.estimator_metrics().string(),
                {"iteration", "rmse_pos", "rmse_rot", "rmse_vel", "loss_before", "loss_after",
                 "grad_clip_events", "rejected_steps"},
                /*append=*/true);
  const TrainConfig& tc = trainer.config().train;
  auto t0 = std::chrono::steady_clock::now();
  while (trainer.iteration() < tc.iterations) {
    IterationMetrics m = trainer.train_iteration();
    metrics.row() << m.iteration << m.rho << m.reward_mean << m.episode_len_mean
                  << m.success_rate << m.approx_kl << m.lr << m.entropy << m.policy_loss
                  << m.value_loss << m.divergence_rate;
    est.row() << m.iteration << m.est.rmse_pos << m.est.rmse_rot << m.est.rmse_vel
              << m.est.loss_before << m.est.loss_after << m.est.grad_clip_events
              << m.est.rejected_steps;
    if (tc.checkpoint_every > 0 && (m.iteration + 1) % tc.checkpoint_every == 0)
      trainer.save_checkpoint(paths.checkpoint_at(m.iteration + 1).string());
    if (verbose && (m.iteration % 25 == 0 || m.iteration + 1 == tc.iterations)) {
      double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      printf("iter %5d  rho %.3f  reward %9.2f  win %5.1f%%  est_rot %.3f  kl %.4f  lr %.1e  [%.1fs]\n",
             m.iteration, m.rho, m.reward_mean, 100.0 * m.success_rate, m.est.rmse_rot,
             m.approx_kl, m.lr, el);
      fflush(stdout);
    }
    metrics.flush();
    est.flush();
  }
  trainer.save_checkpoint(paths.checkpoint_last().string());
}

}  // namespace ecrl
