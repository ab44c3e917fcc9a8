#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace ecrl {

// INI-style key-value file with [section] headers. Lookups go through typed
// getters; after loading a RunConfig every key must have been consumed, and
// leftovers raise an error naming the offending field and line.
class KvFile {
 public:
  KvFile() = default;
  static KvFile parse_file(const std::string& path);
  static KvFile parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;

  // keys present in the file but never read by any getter
  std::vector<std::string> unconsumed() const;
  void check_fully_consumed() const;  // throws naming stray fields

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> consumed_;
  std::string origin_;
};

enum class TrainMode { kEcrl, kNaive, kEstimAda, kOracle };

std::string mode_name(TrainMode m);
TrainMode mode_from_string(const std::string& s);  // throws listing valid modes

enum class ObjectKind { kCube, kCuboid, kL, kApple };

struct ObjectSpec {
  std::string name = "cube";
  ObjectKind kind = ObjectKind::kCube;
  std::vector<int> symmetry;        // octahedral indices mapping the shape to itself
  double tipping_susceptibility = 1.0;
  double drift_susceptibility = 1.0;

  static ObjectSpec preset(const std::string& name);  // throws on unknown name
};

struct EnvConfig {
  int n_dof = 12;
  double joint_limit = 1.2;       // rad
  int substeps = 6;
  double control_dt = 0.1;        // s, 10 Hz commands, 60 Hz frames
  double lowpass_alpha = 0.3;     // per-substep target filter
  double rate_limit = 0.05;       // rad per substep joint motion cap
  double gain = 2.0;              // torque gain
  double tangent_scale = 0.55;    // tangential-map magnitude inside T_i
  double contact_tilt_deg = 30.0; // contact directions tilt below horizontal
  double theta_c_base = -0.5;     // contact angle at nominal pose, rad
  double contact_k = 2.0;         // rad per m of in-plane object offset
  double alpha3 = 0.1;            // x3 observability attenuation
  double compress = 0.3;          // fraction of overdrive passed through contact
  double engage_width = 0.05;     // sigmoid width of the engagement gate
  double sigma_tip = 0.5;         // rad/s tipping rate scale, <3 fingers
  double sigma_x3 = 0.02;         // m drift-walk scale per rad of rotation
  double gravity_drop = 0.5;      // m/s fall speed, <2 fingers
  double goal_interval_s = 5.0;
  double episode_timeout_s = 20.0;
  double success_threshold = 0.4;  // rad
  double drop_radius = 0.1;        // m
  double divergence_threshold = 0.7853981633974483;  // pi/4
  // per-environment randomization ranges
  double obs_noise = 0.01;   // rad, per channel per frame
  double obs_bias = 0.02;    // rad, bias magnitude range
  double size_lo = 0.9, size_hi = 1.1;
  double gain_jitter = 0.1;
  double tip_scale_lo = 0.5, tip_scale_hi = 1.5;
  bool wrench_enabled = false;
  double wrench_prob = 0.01;  // per substep
  double wrench_mag = 1.0;    // rad/s kick cap
  int grasp_set_size = 16;

  int goal_interval_steps() const { return static_cast<int>(goal_interval_s / control_dt + 0.5); }
  int episode_timeout_steps() const { return static_cast<int>(episode_timeout_s / control_dt + 0.5); }
  int obs_dim() const { return substeps * 2 * n_dof; }
  double substep_dt() const { return control_dt / substeps; }
};

struct EstimatorConfig {
  int latent_dim = 32;
  std::vector<int> hidden = {512, 512, 512, 512};  // scaled by net_scale
  double lr = 5e-4;
  int data_reuse_k = 2;
  int minibatches_b = 4;
  double w_x = 1.0, w_rot = 1.0, w_v = 0.1, w_w = 0.1;
  double grad_norm_report = 100.0;  // above this, clip...
  double grad_norm_clip_to = 10.0;  // ...down to this and report
  bool start_from_truth = false;    // sequence starts from ground truth instead of stored estimate
};

struct PpoConfig {
  double clip = 0.2;
  double entropy_coef = 1e-3;
  double tau = 0.95;
  double gamma = 0.99;
  int minibatch = 4096;
  int epochs = 4;
  double value_coef = 0.5;
  double kl_target = 0.016;
  double lr_init = 3e-4;
  double lr_min = 1e-6, lr_max = 1e-2;
  double max_grad_norm = 1.0;
  bool adv_norm = true;
  bool value_clip = true;
  std::vector<int> hidden = {512, 512, 256, 128};  // scaled by net_scale
  double log_std_init = -0.5108256237659907;       // log 0.6
  double log_std_min = -5.0, log_std_max = 1.0;
};

struct TrainConfig {
  TrainMode mode = TrainMode::kEcrl;
  int n_envs = 256;
  int rollout_len = 32;
  double rho0 = 1.0;
  double delta_rho = 1e-3;
  int iterations = 1000;
  uint64_t seed = 1;
  double net_scale = 0.25;
  int checkpoint_every = 200;
};

struct BenchConfig {
  int trials = 50;
  int consecutive_cap = 100;
};

struct RunConfig {
  TrainConfig train;
  EnvConfig env;
  EstimatorConfig estimator;
  PpoConfig ppo;
  BenchConfig bench;
  ObjectSpec object;

  // Widths after applying net_scale (minimum width 4).
  std::vector<int> policy_hidden() const;
  std::vector<int> estimator_hidden() const;
  int scaled_minibatch() const;

  std::string canonical_string() const;  // deterministic field dump
  std::string hash8() const;             // FNV-1a over canonical_string
};

// Loads defaults, overlays the file (empty path = pure defaults), then
// validates that every key in the file was consumed.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_string(const std::string& text);

}  // namespace ecrl
