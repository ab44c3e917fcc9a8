#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace ecrl {

// One collection segment: n_envs sequences of rollout_len steps, env-major
// (row of (env e, step t) = e * rollout_len + t). The estimator recursion
// fields hold the estimate that entered step t (the previous fed state, or
// the initial estimate on episode starts), so BPTT windows can re-unroll
// the collection exactly.
struct RolloutBuffer {
  int n_envs = 0;
  int rollout_len = 0;

  Eigen::MatrixXd z;             // [N*T x obs_dim] raw observations
  Eigen::MatrixXd u_prev;        // [N*T x n_dof] previous command, normalized
  Eigen::MatrixXd policy_input;  // [N*T x input_dim] normalized, as fed
  Eigen::MatrixXd u_raw;         // [N*T x n_dof] pre-squash policy sample
  Eigen::MatrixXd est_prev_x;    // [N*T x 3]
  Eigen::MatrixXd est_prev_q;    // [N*T x 4]
  Eigen::MatrixXd est_prev_v;    // [N*T x 3]
  Eigen::MatrixXd est_prev_w;    // [N*T x 3]
  Eigen::MatrixXd est_prev_l;    // [N*T x d_l]
  Eigen::MatrixXd fed_q;         // [N*T x 4] rotation actually fed to the policy
  Eigen::MatrixXd gt_x, gt_q, gt_v, gt_w;  // ground truth at step t
  Eigen::VectorXd reward, value, logprob;
  std::vector<uint8_t> done, episode_start, fed_gt, valid;
  Eigen::VectorXd bootstrap_value;  // [n_envs]

  int rows() const { return n_envs * rollout_len; }
  int row(int env, int t) const { return env * rollout_len + t; }

  void allocate(int envs, int len, int obs_dim, int n_dof, int input_dim, int latent_dim) {
    n_envs = envs;
    rollout_len = len;
    int n = rows();
    z.setZero(n, obs_dim);
    u_prev.setZero(n, n_dof);
    policy_input.setZero(n, input_dim);
    u_raw.setZero(n, n_dof);
    est_prev_x.setZero(n, 3);
    est_prev_q.setZero(n, 4);
    est_prev_v.setZero(n, 3);
    est_prev_w.setZero(n, 3);
    est_prev_l.setZero(n, latent_dim);
    fed_q.setZero(n, 4);
    gt_x.setZero(n, 3);
    gt_q.setZero(n, 4);
    gt_v.setZero(n, 3);
    gt_w.setZero(n, 3);
    reward.setZero(n);
    value.setZero(n);
    logprob.setZero(n);
    done.assign(n, 0);
    episode_start.assign(n, 0);
    fed_gt.assign(n, 0);
    valid.assign(n, 1);
    bootstrap_value.setZero(envs);
  }

  int valid_count() const {
    int c = 0;
    for (uint8_t v : valid) c += v;
    return c;
  }
};

}  // namespace ecrl
