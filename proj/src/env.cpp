#include "ecrl/env.hpp"

#include <cmath>

namespace ecrl {

namespace {

constexpr uint64_t kGraspSeed = 0xec51;  // internal, independent of run seed

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// contact angle of finger i given the object offset; x3 enters attenuated
double contact_angle(const EnvConfig& cfg, int finger, const Vec3& x, double size_scale) {
  double phi = finger * M_PI / 2.0;
  double c = std::cos(phi), s = std::sin(phi);
  double mix = (c + s) * M_SQRT1_2;
  double proj = c * x.x() + s * x.y() + cfg.alpha3 * mix * x.z();
  return cfg.theta_c_base * size_scale - cfg.contact_k * proj;
}

// measured joint vector after contact compliance on the closing joints
VecX apply_compliance(const EnvConfig& cfg, const VecX& q_free, const Vec3& x,
                      double size_scale) {
  VecX q = q_free;
  for (int i = 0; i < 4; ++i) {
    double tc = contact_angle(cfg, i, x, size_scale);
    double& qc = q[3 * i];
    if (qc > tc) qc = tc + cfg.compress * (qc - tc);
  }
  return q;
}

}  // namespace

TerminationFlags check_termination(const SystemState& s, const Quat* estimate_R,
                                   const Quat& goal, EnvMode mode, const EnvConfig& cfg) {
  TerminationFlags f;
  f.dropped = s.x.norm() > cfg.drop_radius;
  f.interval_end = s.t_in_goal >= cfg.goal_interval_steps();
  if (f.interval_end)
    f.interval_success = geodesic_distance(s.R, goal) < cfg.success_threshold;
  f.goal_timeout = f.interval_end && !f.interval_success;
  f.episode_timeout = s.episode_t >= cfg.episode_timeout_steps();
  if (mode == EnvMode::kTrain && estimate_R != nullptr)
    f.estimator_divergence =
        geodesic_distance(*estimate_R, s.R) > cfg.divergence_threshold;
  return f;
}

DomainRandomization DomainRandomization::sample(const EnvConfig& cfg, Rng& rng) {
  DomainRandomization dr;
  dr.tip_scale = rng.uniform(cfg.tip_scale_lo, cfg.tip_scale_hi);
  dr.obs_noise = cfg.obs_noise * rng.uniform(0.5, 1.5);
  dr.obs_bias = VecX(2 * cfg.n_dof);
  for (int i = 0; i < dr.obs_bias.size(); ++i)
    dr.obs_bias[i] = rng.uniform(-cfg.obs_bias, cfg.obs_bias);
  dr.size_scale = rng.uniform(cfg.size_lo, cfg.size_hi);
  dr.gain_scale = 1.0 + rng.uniform(-cfg.gain_jitter, cfg.gain_jitter);
  return dr;
}

DomainRandomization DomainRandomization::none(const EnvConfig& cfg) {
  DomainRandomization dr;
  dr.tip_scale = 1.0;
  dr.obs_noise = 0.0;
  dr.obs_bias = VecX::Zero(2 * cfg.n_dof);
  dr.size_scale = 1.0;
  dr.gain_scale = 1.0;
  return dr;
}

GraspSet GraspSet::build(const EnvConfig& cfg) {
  GraspSet gs;
  Rng rng(kGraspSeed, 0);
  for (int p = 0; p < cfg.grasp_set_size; ++p) {
    GraspPose pose;
    pose.q_free = VecX::Zero(cfg.n_dof);
    pose.q_d = VecX::Zero(cfg.n_dof);
    if (p > 0) {
      for (int k = 0; k < 3; ++k) pose.x[k] = rng.uniform(-0.005, 0.005);
      Tangent3 rj;
      for (int k = 0; k < 3; ++k) rj[k] = rng.uniform(-0.04, 0.04);
      pose.R = quat_exp(rj);
      for (int i = 0; i < 4; ++i) {
        pose.q_free[3 * i] = rng.uniform(-0.08, 0.08);
        pose.q_free[3 * i + 1] = rng.uniform(-0.08, 0.08);
        pose.q_free[3 * i + 2] = rng.uniform(-0.08, 0.08);
      }
      pose.q_d = pose.q_free;
    }
    gs.poses.push_back(pose);
  }
  // nominal references for the reward, means over the set at nominal size
  gs.q_nominal = VecX::Zero(cfg.n_dof);
  gs.x_nominal = Vec3::Zero();
  for (const auto& pose : gs.poses) {
    gs.q_nominal += apply_compliance(cfg, pose.q_free, pose.x, 1.0);
    gs.x_nominal += pose.x;
  }
  gs.q_nominal /= static_cast<double>(gs.poses.size());
  gs.x_nominal /= static_cast<double>(gs.poses.size());
  return gs;
}

double reorientation_reward(double theta_prev, double theta_now, const Vec3& x,
                            const Vec3& x_nominal, const VecX& q, const VecX& q_nominal) {
  const double lambda_theta = 1000.0, lambda_xp = 0.1, lambda_x = 50.0, lambda_q = 2000.0;
  const double theta_clip = 0.1, x_clip = 0.3;
  double rot = lambda_theta * std::min(theta_prev - theta_now, theta_clip);
  double xdev = lambda_x * std::min((x - x_nominal).norm(), x_clip);
  double pos = lambda_xp * xdev * xdev * xdev * xdev;
  double jnt = 0.0;
  for (int i = 0; i < q.size(); ++i) {
    double d = q[i] - q_nominal[i];
    jnt += d * d * d * d;
  }
  jnt *= lambda_q / static_cast<double>(q.size());
  return rot - pos - jnt;
}

Quat sample_goal(Rng& rng, int current_goal_index, int* index_out) {
  const auto& group = octahedral_group();
  int n = static_cast<int>(group.size());
  int idx;
  if (current_goal_index < 0) {
    idx = rng.uniform_int(n);
  } else {
    idx = rng.uniform_int(n - 1);
    if (idx >= current_goal_index) ++idx;
  }
  if (index_out) *index_out = idx;
  return group[idx];
}

PivotEnv::PivotEnv(const EnvConfig& cfg, const ObjectSpec& object, uint64_t seed,
                   int env_id, EnvMode mode, const DomainRandomization* dr_override)
    : cfg_(cfg),
      object_(object),
      mode_(mode),
      env_id_(env_id),
      rng_(seed, static_cast<uint64_t>(env_id)),
      grasp_(GraspSet::build(cfg)) {
  dr_ = dr_override ? *dr_override : DomainRandomization::sample(cfg_, rng_);
  double tau = cfg_.contact_tilt_deg * M_PI / 180.0;
  for (int i = 0; i < 4; ++i) {
    double phi = i * M_PI / 2.0;
    Vec3 c(std::cos(phi) * std::cos(tau), std::sin(phi) * std::cos(tau), -std::sin(tau));
    Vec3 t(-std::sin(phi), std::cos(phi), 0.0);
    c_dir_.push_back(c);
    t_dir_.push_back(t);
    v_dir_.push_back(c.cross(t));
  }
  reset();
}

void PivotEnv::compute_contacts(Eigen::Vector4d* theta_c, Eigen::Vector4d* g) const {
  for (int i = 0; i < 4; ++i) {
    double tc = contact_angle(cfg_, i, s_.x, dr_.size_scale);
    (*theta_c)[i] = tc;
    (*g)[i] = sigmoid((s_.q[3 * i] - tc) / cfg_.engage_width);
  }
}

VecX PivotEnv::measured_q() const {
  return apply_compliance(cfg_, s_.q_free, s_.x, dr_.size_scale);
}

int PivotEnv::engaged_count() const {
  Eigen::Vector4d tc, g;
  compute_contacts(&tc, &g);
  return static_cast<int>((g.array() > 0.5).count());
}

void PivotEnv::capture_frame(int k) {
  int n = cfg_.n_dof;
  for (int j = 0; j < n; ++j) {
    double nq = dr_.obs_noise > 0 ? dr_.obs_noise * rng_.normal() : 0.0;
    obs_[k * 2 * n + j] = s_.q[j] + dr_.obs_bias[j] + nq;
  }
  for (int j = 0; j < n; ++j) {
    double ne = dr_.obs_noise > 0 ? dr_.obs_noise * rng_.normal() : 0.0;
    obs_[k * 2 * n + n + j] = (s_.q[j] - q_d_raw_[j]) + dr_.obs_bias[n + j] + ne;
  }
}

const VecX& PivotEnv::reset() {
  int idx = rng_.uniform_int(static_cast<int>(grasp_.poses.size()));
  const GraspPose& pose = grasp_.poses[idx];
  s_ = SystemState{};
  s_.x = pose.x;
  s_.R = pose.R;
  s_.q_free = pose.q_free;
  q_d_raw_ = pose.q_d;
  s_.q = measured_q();
  s_.q_d_filt = s_.q;
  int near = octahedral_nearest(s_.R);
  s_.goal = sample_goal(rng_, near, &s_.goal_index);
  theta_prev_ = geodesic_distance(s_.R, s_.goal);
  tipping_active_ = false;
  tip_vec_.setZero();
  obs_.resize(cfg_.obs_dim());
  for (int k = 0; k < cfg_.substeps; ++k) capture_frame(k);
  return obs_;
}

void PivotEnv::set_goal(const Quat& g) {
  s_.goal = quat_canonicalize(g);
  s_.goal_index = octahedral_nearest(s_.goal);
  s_.t_in_goal = 0;
  theta_prev_ = geodesic_distance(s_.R, s_.goal);
}

void PivotEnv::resample_goal_internal() {
  s_.goal = sample_goal(rng_, s_.goal_index, &s_.goal_index);
  s_.t_in_goal = 0;
  theta_prev_ = geodesic_distance(s_.R, s_.goal);
}

StepResult PivotEnv::step(const VecX& action_qd) {
  if (action_qd.size() != cfg_.n_dof)
    throw EnvFault(env_id_, "action dimension mismatch");
  if (!action_qd.allFinite()) throw EnvFault(env_id_, "non-finite action");
  q_d_raw_ = action_qd.cwiseMax(-cfg_.joint_limit).cwiseMin(cfg_.joint_limit);

  double dt = cfg_.substep_dt();
  double gain = cfg_.gain * dr_.gain_scale * cfg_.tangent_scale;
  for (int k = 0; k < cfg_.substeps; ++k) {
    s_.q_d_filt += cfg_.lowpass_alpha * (q_d_raw_ - s_.q_d_filt);
    VecX dq = (s_.q_d_filt - s_.q_free).cwiseMax(-cfg_.rate_limit).cwiseMin(cfg_.rate_limit);
    s_.q_free = (s_.q_free + dq).cwiseMax(-cfg_.joint_limit).cwiseMin(cfg_.joint_limit);
    s_.q = measured_q();

    Eigen::Vector4d theta_c, g;
    compute_contacts(&theta_c, &g);

    Vec3 w = Vec3::Zero();
    for (int i = 0; i < 4; ++i) {
      double r1 = q_d_raw_[3 * i + 1] - s_.q[3 * i + 1];
      double r2 = q_d_raw_[3 * i + 2] - s_.q[3 * i + 2];
      w += g[i] * (r1 * v_dir_[i] - r2 * t_dir_[i]);
    }
    w *= gain;

    int engaged = static_cast<int>((g.array() > 0.5).count());
    if (engaged < 3) {
      if (!tipping_active_) {
        double scale = cfg_.sigma_tip * dr_.tip_scale * object_.tipping_susceptibility;
        tip_vec_ = Vec3(rng_.normal(), rng_.normal(), rng_.normal()) * scale;
        tipping_active_ = true;
      }
      w += tip_vec_;
    } else {
      tipping_active_ = false;
    }
    s_.v = engaged < 2 ? Vec3(0, 0, -cfg_.gravity_drop) : Vec3::Zero();

    if (cfg_.wrench_enabled && rng_.uniform() < cfg_.wrench_prob) {
      Vec3 kick(rng_.normal(), rng_.normal(), rng_.normal());
      double n = kick.norm();
      if (n > 1e-12) w += kick / n * rng_.uniform(0.0, cfg_.wrench_mag);
    }
    s_.w = w;

    double wn = w.norm();
    if (cfg_.sigma_x3 > 0 && wn > 0)
      s_.x[2] += cfg_.sigma_x3 * object_.drift_susceptibility * wn * dt * rng_.normal();

    s_.R = quat_compose(quat_exp(Tangent3(w * dt)), s_.R);
    s_.x += s_.v * dt;

    capture_frame(k);
  }

  if (!s_.q.allFinite() || !s_.x.allFinite() || !std::isfinite(s_.R.norm()))
    throw EnvFault(env_id_, "non-finite state in env " + std::to_string(env_id_));

  s_.episode_t += 1;
  s_.t_in_goal += 1;

  double theta_now = geodesic_distance(s_.R, s_.goal);
  StepResult out;
  out.reward = reorientation_reward(theta_prev_, theta_now, s_.x, grasp_.x_nominal,
                                    s_.q, grasp_.q_nominal);
  theta_prev_ = theta_now;
  out.flags = check_termination(s_, nullptr, s_.goal, mode_, cfg_);
  if (out.flags.interval_success && !out.flags.dropped && !out.flags.episode_timeout)
    resample_goal_internal();
  out.done = out.flags.terminal();
  out.obs = obs_;
  return out;
}

VecX PivotEnv::noiseless_obs_map() const {
  VecX q = measured_q();
  int n = cfg_.n_dof;
  VecX out(cfg_.obs_dim());
  for (int k = 0; k < cfg_.substeps; ++k) {
    for (int j = 0; j < n; ++j) out[k * 2 * n + j] = q[j];
    for (int j = 0; j < n; ++j) out[k * 2 * n + n + j] = q[j] - q_d_raw_[j];
  }
  return out;
}

VecEnv::VecEnv(const EnvConfig& cfg, const ObjectSpec& object, uint64_t seed, int n_envs,
               EnvMode mode) {
  envs_.reserve(n_envs);
  for (int i = 0; i < n_envs; ++i) envs_.emplace_back(cfg, object, seed, i, mode);
}

Eigen::MatrixXd VecEnv::reset_all() {
  Eigen::MatrixXd obs(size(), envs_[0].obs().size());
  for (int i = 0; i < size(); ++i) obs.row(i) = envs_[i].reset().transpose();
  return obs;
}

void VecEnv::step_all(const Eigen::MatrixXd& actions, Eigen::MatrixXd* obs, VecX* rewards,
                      std::vector<TerminationFlags>* flags) {
  obs->resize(size(), envs_[0].obs().size());
  rewards->resize(size());
  flags->assign(size(), TerminationFlags{});
  for (int i = 0; i < size(); ++i) {
    StepResult r = envs_[i].step(actions.row(i).transpose());
    obs->row(i) = r.obs.transpose();
    (*rewards)[i] = r.reward;
    (*flags)[i] = r.flags;
  }
}

}  // namespace ecrl
