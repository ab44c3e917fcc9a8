#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

#include "ecrl/config.hpp"
#include "ecrl/manifold.hpp"
#include "ecrl/rng.hpp"

namespace ecrl {

using VecX = Eigen::VectorXd;

// Ground-truth state of one hand-object system. Joint coordinates are
// measured relative to the nominal grasp command, so a zero command holds
// the grasp.
struct SystemState {
  Vec3 x = Vec3::Zero();
  Quat R;
  Vec3 v = Vec3::Zero();
  Vec3 w = Vec3::Zero();
  VecX q;         // measured joints (after contact compliance)
  VecX q_free;    // rate-limited tracker, before contact
  VecX q_d_filt;  // low-passed targets
  Quat goal;
  int goal_index = -1;
  int t_in_goal = 0;
  int episode_t = 0;
};

struct TerminationFlags {
  bool dropped = false;
  bool goal_timeout = false;
  bool episode_timeout = false;
  bool estimator_divergence = false;
  bool interval_end = false;
  bool interval_success = false;

  bool terminal() const {
    return dropped || goal_timeout || episode_timeout || estimator_divergence;
  }
};

enum class EnvMode { kTrain, kEval };

// All checks that can end an episode, in one place; success counting in the
// benchmark goes through this same function. estimate_R may be null (no
// divergence check); the divergence rule applies in train mode only.
TerminationFlags check_termination(const SystemState& s, const Quat* estimate_R,
                                   const Quat& goal, EnvMode mode, const EnvConfig& cfg);

// Per-environment-instance randomization, sampled once at construction.
struct DomainRandomization {
  double tip_scale = 1.0;
  double obs_noise = 0.0;
  VecX obs_bias;  // 24 channels: q then e_q
  double size_scale = 1.0;
  double gain_scale = 1.0;

  static DomainRandomization sample(const EnvConfig& cfg, Rng& rng);
  static DomainRandomization none(const EnvConfig& cfg);
};

// One jittered stable grasp: joint tracker positions, commanded targets and
// object pose.
struct GraspPose {
  Vec3 x = Vec3::Zero();
  Quat R;
  VecX q_free;
  VecX q_d;
};

// The precomputed initial-grasp set plus the nominal references used by the
// reward. Deterministic: built from a fixed internal seed, independent of
// the run seed.
struct GraspSet {
  std::vector<GraspPose> poses;
  Vec3 x_nominal = Vec3::Zero();
  VecX q_nominal;

  static GraspSet build(const EnvConfig& cfg);
};

struct StepResult {
  VecX obs;
  double reward = 0.0;
  TerminationFlags flags;
  bool done = false;
};

struct EnvFault : std::runtime_error {
  int env_id;
  explicit EnvFault(int id, const std::string& what)
      : std::runtime_error(what), env_id(id) {}
};

// Eq. 4-style reward against the nominal references; exposed standalone for
// direct evaluation.
double reorientation_reward(double theta_prev, double theta_now, const Vec3& x,
                            const Vec3& x_nominal, const VecX& q, const VecX& q_nominal);

// Uniform draw over the octahedral goals, excluding the current one.
Quat sample_goal(Rng& rng, int current_goal_index, int* index_out = nullptr);

// Blind in-hand reorientation with four fingers at 90-degree increments.
// Contacts gate a residual-driven torque on the object; holding with fewer
// than three fingers adds an unobservable tipping rate and the vertical
// object position random-walks under rotation while being only weakly
// visible in the contacts.
class PivotEnv {
 public:
  PivotEnv(const EnvConfig& cfg, const ObjectSpec& object, uint64_t seed, int env_id,
           EnvMode mode, const DomainRandomization* dr_override = nullptr);

  const VecX& reset();
  StepResult step(const VecX& action_qd);

  const SystemState& state() const { return s_; }
  SystemState& mutable_state() { return s_; }
  const VecX& obs() const { return obs_; }
  const Quat& goal() const { return s_.goal; }
  int goal_index() const { return s_.goal_index; }
  int env_id() const { return env_id_; }
  const DomainRandomization& dr() const { return dr_; }
  const GraspSet& grasp_set() const { return grasp_; }
  double theta_to_goal() const { return geodesic_distance(s_.R, s_.goal); }
  const VecX& last_q_d() const { return q_d_raw_; }

  // Overrides the goal (benchmark / scripted schedules) and restarts the
  // goal interval.
  void set_goal(const Quat& g);

  // Instantaneous noise-free observation map at the current state; contact
  // compliance is re-derived from (q_free, x) so probes can differentiate
  // through the object position.
  VecX noiseless_obs_map() const;

  // engaged-finger count at the current state
  int engaged_count() const;

 private:
  void compute_contacts(Eigen::Vector4d* theta_c, Eigen::Vector4d* g) const;
  VecX measured_q() const;
  void capture_frame(int k);
  void resample_goal_internal();

  EnvConfig cfg_;
  ObjectSpec object_;
  EnvMode mode_;
  int env_id_ = 0;
  Rng rng_;
  DomainRandomization dr_;
  GraspSet grasp_;
  SystemState s_;
  VecX q_d_raw_;
  VecX obs_;
  double theta_prev_ = 0.0;
  bool tipping_active_ = false;
  Vec3 tip_vec_ = Vec3::Zero();
  // contact geometry, fixed
  std::vector<Vec3> c_dir_, t_dir_, v_dir_;
};

// Vectorized front: independently seeded environments stepped as a batch.
class VecEnv {
 public:
  VecEnv(const EnvConfig& cfg, const ObjectSpec& object, uint64_t seed, int n_envs,
         EnvMode mode);

  int size() const { return static_cast<int>(envs_.size()); }
  PivotEnv& env(int i) { return envs_[i]; }
  const PivotEnv& env(int i) const { return envs_[i]; }

  // obs matrix [n_envs x obs_dim]
  Eigen::MatrixXd reset_all();
  // actions [n_envs x n_dof]; out-params are resized as needed
  void step_all(const Eigen::MatrixXd& actions, Eigen::MatrixXd* obs, VecX* rewards,
                std::vector<TerminationFlags>* flags);

 private:
  std::vector<PivotEnv> envs_;
};

}  // namespace ecrl
