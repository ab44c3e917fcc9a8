#include <chrono>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ecrl/trainer.hpp"

namespace ecrl {

std::string run_dir_name(const RunConfig& cfg) {
  return mode_name(cfg.train.mode) + "_" + cfg.object.name + "_" + cfg.hash8() + "_s" +
         std::to_string(cfg.train.seed);
}

std::string kv_from_config(const RunConfig& cfg) {
  std::ostringstream o;
  o.precision(17);
  const TrainConfig& t = cfg.train;
  o << "[train]\nmode = " << mode_name(t.mode) << "\nn_envs = " << t.n_envs
    << "\nrollout_len = " << t.rollout_len << "\nrho0 = " << t.rho0
    << "\ndelta_rho = " << t.delta_rho << "\niterations = " << t.iterations
    << "\nseed = " << t.seed << "\nnet_scale = " << t.net_scale
    << "\ncheckpoint_every = " << t.checkpoint_every << "\n";
  o << "[object]\nname = " << cfg.object.name
    << "\ntipping_susceptibility = " << cfg.object.tipping_susceptibility
    << "\ndrift_susceptibility = " << cfg.object.drift_susceptibility << "\n";
  const EnvConfig& e = cfg.env;
  o << "[env]\nn_dof = " << e.n_dof << "\njoint_limit = " << e.joint_limit
    << "\nsubsteps = " << e.substeps << "\ncontrol_dt = " << e.control_dt
    << "\nlowpass_alpha = " << e.lowpass_alpha << "\nrate_limit = " << e.rate_limit
    << "\ngain = " << e.gain << "\ntangent_scale = " << e.tangent_scale
    << "\ncontact_tilt_deg = " << e.contact_tilt_deg << "\ntheta_c_base = " << e.theta_c_base
    << "\ncontact_k = " << e.contact_k << "\nalpha3 = " << e.alpha3
    << "\ncompress = " << e.compress << "\nengage_width = " << e.engage_width
    << "\nsigma_tip = " << e.sigma_tip << "\nsigma_x3 = " << e.sigma_x3
    << "\ngravity_drop = " << e.gravity_drop << "\ngoal_interval_s = " << e.goal_interval_s
    << "\nepisode_timeout_s = " << e.episode_timeout_s
    << "\nsuccess_threshold = " << e.success_threshold << "\ndrop_radius = " << e.drop_radius
    << "\ndivergence_threshold = " << e.divergence_threshold << "\nobs_noise = " << e.obs_noise
    << "\nobs_bias = " << e.obs_bias << "\nsize_lo = " << e.size_lo
    << "\nsize_hi = " << e.size_hi << "\ngain_jitter = " << e.gain_jitter
    << "\ntip_scale_lo = " << e.tip_scale_lo << "\ntip_scale_hi = " << e.tip_scale_hi
    << "\nwrench_enabled = " << (e.wrench_enabled ? "true" : "false")
    << "\nwrench_prob = " << e.wrench_prob << "\nwrench_mag = " << e.wrench_mag
    << "\ngrasp_set_size = " << e.grasp_set_size << "\n";
  const EstimatorConfig& es = cfg.estimator;
  o << "[estimator]\nlatent_dim = " << es.latent_dim << "\nlr = " << es.lr
    << "\ndata_reuse_k = " << es.data_reuse_k << "\nminibatches_b = " << es.minibatches_b
    << "\nw_x = " << es.w_x << "\nw_rot = " << es.w_rot << "\nw_v = " << es.w_v
    << "\nw_w = " << es.w_w << "\ngrad_norm_report = " << es.grad_norm_report
    << "\ngrad_norm_clip_to = " << es.grad_norm_clip_to
    << "\nstart_from_truth = " << (es.start_from_truth ? "true" : "false") << "\n";
  const PpoConfig& p = cfg.ppo;
  o << "[ppo]\nclip = " << p.clip << "\nentropy_coef = " << p.entropy_coef
    << "\ntau = " << p.tau << "\ngamma = " << p.gamma << "\nminibatch = " << p.minibatch
    << "\nepochs = " << p.epochs << "\nvalue_coef = " << p.value_coef
    << "\nkl_target = " << p.kl_target << "\nlr_init = " << p.lr_init
    << "\nlr_min = " << p.lr_min << "\nlr_max = " << p.lr_max
    << "\nmax_grad_norm = " << p.max_grad_norm
    << "\nadv_norm = " << (p.adv_norm ? "true" : "false")
    << "\nvalue_clip = " << (p.value_clip ? "true" : "false")
    << "\nlog_std_init = " << p.log_std_init << "\nlog_std_min = " << p.log_std_min
    << "\nlog_std_max = " << p.log_std_max << "\n";
  o << "[bench]\ntrials = " << cfg.bench.trials
    << "\nconsecutive_cap = " << cfg.bench.consecutive_cap << "\n";
  return o.str();
}

void write_manifest(const RunConfig& cfg, const RunPaths& paths) {
  nlohmann::json m;
  m["version"] = "0.1.0";
  m["mode"] = mode_name(cfg.train.mode);
  m["object"] = cfg.object.name;
  m["seed"] = cfg.train.seed;
  m["config_hash"] = cfg.hash8();
  m["config_kv"] = kv_from_config(cfg);
  m["iterations"] = cfg.train.iterations;
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
  m["start_time"] = buf;
  m["outputs"] = {{"metrics", "metrics.csv"},
                  {"estimator_metrics", "estimator_metrics.csv"},
                  {"checkpoint", "checkpoint_last.ckpt"}};
  std::ofstream f(paths.manifest());
  if (!f) throw std::runtime_error("cannot write manifest at " + paths.manifest().string());
  f << m.dump(2) << "\n";
}

}  // namespace ecrl
