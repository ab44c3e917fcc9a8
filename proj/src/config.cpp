#include "ecrl/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "ecrl/manifold.hpp"

namespace ecrl {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvFile KvFile::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str(), path);
}

KvFile KvFile::parse_string(const std::string& text, const std::string& origin) {
  KvFile kv;
  kv.origin_ = origin;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config: malformed section header at " + origin + ":" +
                                 std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key = value at " + origin + ":" +
                               std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: empty key at " + origin + ":" + std::to_string(lineno));
    std::string full = section.empty() ? key : section + "." + key;
    kv.entries_[full] = Entry{val, lineno};
  }
  return kv;
}

bool KvFile::has(const std::string& key) const { return entries_.count(key) > 0; }

double KvFile::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  consumed_.insert(key);
  try {
    size_t pos = 0;
    double v = std::stod(it->second.value, &pos);
    if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config: field '" + key + "' (line " +
                             std::to_string(it->second.line) + "): not a number: '" +
                             it->second.value + "'");
  }
}

int KvFile::get_int(const std::string& key, int fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  consumed_.insert(key);
  try {
    size_t pos = 0;
    long v = std::stol(it->second.value, &pos);
    if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw std::runtime_error("config: field '" + key + "' (line " +
                             std::to_string(it->second.line) + "): not an integer: '" +
                             it->second.value + "'");
  }
}

bool KvFile::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  consumed_.insert(key);
  std::string v = it->second.value;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::runtime_error("config: field '" + key + "' (line " +
                           std::to_string(it->second.line) + "): not a bool: '" +
                           it->second.value + "'");
}

std::string KvFile::get_string(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  consumed_.insert(key);
  return it->second.value;
}

std::vector<std::string> KvFile::unconsumed() const {
  std::vector<std::string> out;
  for (const auto& [k, e] : entries_)
    if (!consumed_.count(k)) out.push_back(k + " (line " + std::to_string(e.line) + ")");
  return out;
}

void KvFile::check_fully_consumed() const {
  auto stray = unconsumed();
  if (stray.empty()) return;
  std::string msg = "config: unknown field(s) in " + origin_ + ": ";
  for (size_t i = 0; i < stray.size(); ++i) {
    if (i) msg += ", ";
    msg += stray[i];
  }
  throw std::runtime_error(msg);
}

std::string mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::kEcrl: return "ecrl";
    case TrainMode::kNaive: return "naive";
    case TrainMode::kEstimAda: return "estimada";
    case TrainMode::kOracle: return "oracle";
  }
  return "?";
}

TrainMode mode_from_string(const std::string& s) {
  if (s == "ecrl") return TrainMode::kEcrl;
  if (s == "naive") return TrainMode::kNaive;
  if (s == "estimada") return TrainMode::kEstimAda;
  if (s == "oracle") return TrainMode::kOracle;
  throw std::runtime_error("invalid mode '" + s + "'; valid modes: ecrl, naive, estimada, oracle");
}

namespace {

// Octahedral indices of rotations mapping the shape onto itself.
std::vector<int> symmetry_for(ObjectKind kind) {
  const auto& group = octahedral_group();
  auto preserves = [&](const Quat& g, ObjectKind k) {
    Mat3 m = quat_to_matrix(g);
    // half extents in group units; L breaks all symmetry, apple keeps the
    // vertical rotations of its core axis
    if (k == ObjectKind::kL) return geodesic_distance(g, Quat{}) < 1e-9;
    Vec3 he = k == ObjectKind::kCuboid ? Vec3(1.0, 1.0, 0.625) : Vec3(1.0, 1.0, 1.0);
    if (k == ObjectKind::kApple) he = Vec3(1.0, 1.0, 1.25);
    Vec3 rotated = (m * he.asDiagonal() * m.transpose()).diagonal();
    return (rotated - he).norm() < 1e-9;
  };
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(group.size()); ++i)
    if (preserves(group[i], kind)) out.push_back(i);
  return out;
}

}  // namespace

ObjectSpec ObjectSpec::preset(const std::string& name) {
  ObjectSpec s;
  s.name = name;
  if (name == "cube") {
    s.kind = ObjectKind::kCube;
    s.tipping_susceptibility = 1.0;
    s.drift_susceptibility = 1.0;
  } else if (name == "cuboid") {
    s.kind = ObjectKind::kCuboid;
    s.tipping_susceptibility = 1.3;
    s.drift_susceptibility = 1.1;
  } else if (name == "l") {
    s.kind = ObjectKind::kL;
    s.tipping_susceptibility = 1.6;
    s.drift_susceptibility = 1.2;
  } else if (name == "apple") {
    s.kind = ObjectKind::kApple;
    s.tipping_susceptibility = 1.4;
    s.drift_susceptibility = 2.5;
  } else {
    throw std::runtime_error("unknown object '" + name + "'; valid objects: cube, cuboid, l, apple");
  }
  s.symmetry = symmetry_for(s.kind);
  return s;
}

namespace {

std::vector<int> scaled_widths(const std::vector<int>& base, double scale) {
  std::vector<int> out;
  for (int w : base) out.push_back(std::max(4, static_cast<int>(std::lround(w * scale))));
  return out;
}

}  // namespace

std::vector<int> RunConfig::policy_hidden() const {
  return scaled_widths(ppo.hidden, train.net_scale);
}

std::vector<int> RunConfig::estimator_hidden() const {
  return scaled_widths(estimator.hidden, train.net_scale);
}

int RunConfig::scaled_minibatch() const {
  int total = train.n_envs * train.rollout_len;
  return std::min(ppo.minibatch, total);
}

RunConfig run_config_from_string(const std::string& text) {
  KvFile kv = KvFile::parse_string(text);
  RunConfig c;

  c.train.mode = mode_from_string(kv.get_string("train.mode", mode_name(c.train.mode)));
  c.train.n_envs = kv.get_int("train.n_envs", c.train.n_envs);
  c.train.rollout_len = kv.get_int("train.rollout_len", c.train.rollout_len);
  c.train.rho0 = kv.get_double("train.rho0", c.train.rho0);
  c.train.delta_rho = kv.get_double("train.delta_rho", c.train.delta_rho);
  c.train.iterations = kv.get_int("train.iterations", c.train.iterations);
  c.train.seed = static_cast<uint64_t>(kv.get_int("train.seed", static_cast<int>(c.train.seed)));
  c.train.net_scale = kv.get_double("train.net_scale", c.train.net_scale);
  c.train.checkpoint_every = kv.get_int("train.checkpoint_every", c.train.checkpoint_every);

  c.object = ObjectSpec::preset(kv.get_string("object.name", "cube"));
  c.object.tipping_susceptibility =
      kv.get_double("object.tipping_susceptibility", c.object.tipping_susceptibility);
  c.object.drift_susceptibility =
      kv.get_double("object.drift_susceptibility", c.object.drift_susceptibility);

  EnvConfig& e = c.env;
  e.n_dof = kv.get_int("env.n_dof", e.n_dof);
  e.joint_limit = kv.get_double("env.joint_limit", e.joint_limit);
  e.substeps = kv.get_int("env.substeps", e.substeps);
  e.control_dt = kv.get_double("env.control_dt", e.control_dt);
  e.lowpass_alpha = kv.get_double("env.lowpass_alpha", e.lowpass_alpha);
  e.rate_limit = kv.get_double("env.rate_limit", e.rate_limit);
  e.gain = kv.get_double("env.gain", e.gain);
  e.tangent_scale = kv.get_double("env.tangent_scale", e.tangent_scale);
  e.contact_tilt_deg = kv.get_double("env.contact_tilt_deg", e.contact_tilt_deg);
  e.theta_c_base = kv.get_double("env.theta_c_base", e.theta_c_base);
  e.contact_k = kv.get_double("env.contact_k", e.contact_k);
  e.alpha3 = kv.get_double("env.alpha3", e.alpha3);
  e.compress = kv.get_double("env.compress", e.compress);
  e.engage_width = kv.get_double("env.engage_width", e.engage_width);
  e.sigma_tip = kv.get_double("env.sigma_tip", e.sigma_tip);
  e.sigma_x3 = kv.get_double("env.sigma_x3", e.sigma_x3);
  e.gravity_drop = kv.get_double("env.gravity_drop", e.gravity_drop);
  e.goal_interval_s = kv.get_double("env.goal_interval_s", e.goal_interval_s);
  e.episode_timeout_s = kv.get_double("env.episode_timeout_s", e.episode_timeout_s);
  e.success_threshold = kv.get_double("env.success_threshold", e.success_threshold);
  e.drop_radius = kv.get_double("env.drop_radius", e.drop_radius);
  e.divergence_threshold = kv.get_double("env.divergence_threshold", e.divergence_threshold);
  e.obs_noise = kv.get_double("env.obs_noise", e.obs_noise);
  e.obs_bias = kv.get_double("env.obs_bias", e.obs_bias);
  e.size_lo = kv.get_double("env.size_lo", e.size_lo);
  e.size_hi = kv.get_double("env.size_hi", e.size_hi);
  e.gain_jitter = kv.get_double("env.gain_jitter", e.gain_jitter);
  e.tip_scale_lo = kv.get_double("env.tip_scale_lo", e.tip_scale_lo);
  e.tip_scale_hi = kv.get_double("env.tip_scale_hi", e.tip_scale_hi);
  e.wrench_enabled = kv.get_bool("env.wrench_enabled", e.wrench_enabled);
  e.wrench_prob = kv.get_double("env.wrench_prob", e.wrench_prob);
  e.wrench_mag = kv.get_double("env.wrench_mag", e.wrench_mag);
  e.grasp_set_size = kv.get_int("env.grasp_set_size", e.grasp_set_size);

  EstimatorConfig& es = c.estimator;
  es.latent_dim = kv.get_int("estimator.latent_dim", es.latent_dim);
  es.lr = kv.get_double("estimator.lr", es.lr);
  es.data_reuse_k = kv.get_int("estimator.data_reuse_k", es.data_reuse_k);
  es.minibatches_b = kv.get_int("estimator.minibatches_b", es.minibatches_b);
  es.w_x = kv.get_double("estimator.w_x", es.w_x);
  es.w_rot = kv.get_double("estimator.w_rot", es.w_rot);
  es.w_v = kv.get_double("estimator.w_v", es.w_v);
  es.w_w = kv.get_double("estimator.w_w", es.w_w);
  es.grad_norm_report = kv.get_double("estimator.grad_norm_report", es.grad_norm_report);
  es.grad_norm_clip_to = kv.get_double("estimator.grad_norm_clip_to", es.grad_norm_clip_to);
  es.start_from_truth = kv.get_bool("estimator.start_from_truth", es.start_from_truth);

  PpoConfig& p = c.ppo;
  p.clip = kv.get_double("ppo.clip", p.clip);
  p.entropy_coef = kv.get_double("ppo.entropy_coef", p.entropy_coef);
  p.tau = kv.get_double("ppo.tau", p.tau);
  p.gamma = kv.get_double("ppo.gamma", p.gamma);
  p.minibatch = kv.get_int("ppo.minibatch", p.minibatch);
  p.epochs = kv.get_int("ppo.epochs", p.epochs);
  p.value_coef = kv.get_double("ppo.value_coef", p.value_coef);
  p.kl_target = kv.get_double("ppo.kl_target", p.kl_target);
  p.lr_init = kv.get_double("ppo.lr_init", p.lr_init);
  p.lr_min = kv.get_double("ppo.lr_min", p.lr_min);
  p.lr_max = kv.get_double("ppo.lr_max", p.lr_max);
  p.max_grad_norm = kv.get_double("ppo.max_grad_norm", p.max_grad_norm);
  p.adv_norm = kv.get_bool("ppo.adv_norm", p.adv_norm);
  p.value_clip = kv.get_bool("ppo.value_clip", p.value_clip);
  p.log_std_init = kv.get_double("ppo.log_std_init", p.log_std_init);
  p.log_std_min = kv.get_double("ppo.log_std_min", p.log_std_min);
  p.log_std_max = kv.get_double("ppo.log_std_max", p.log_std_max);

  BenchConfig& b = c.bench;
  b.trials = kv.get_int("bench.trials", b.trials);
  b.consecutive_cap = kv.get_int("bench.consecutive_cap", b.consecutive_cap);

  kv.check_fully_consumed();

  if (c.train.rho0 < 0 || c.train.rho0 > 1)
    throw std::runtime_error("config: field 'train.rho0': must be in [0,1]");
  if (c.env.substeps < 1) throw std::runtime_error("config: field 'env.substeps': must be >= 1");
  if (c.train.n_envs < 1) throw std::runtime_error("config: field 'train.n_envs': must be >= 1");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return run_config_from_string("");
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return run_config_from_string(ss.str());
}

std::string RunConfig::canonical_string() const {
  std::ostringstream o;
  o.precision(17);
  o << "mode=" << mode_name(train.mode) << "\nn_envs=" << train.n_envs
    << "\nrollout_len=" << train.rollout_len << "\nrho0=" << train.rho0
    << "\ndelta_rho=" << train.delta_rho << "\niterations=" << train.iterations
    << "\nseed=" << train.seed << "\nnet_scale=" << train.net_scale
    << "\nobject=" << object.name << "\ntip_susc=" << object.tipping_susceptibility
    << "\ndrift_susc=" << object.drift_susceptibility;
  o << "\nenv=" << env.n_dof << "," << env.joint_limit << "," << env.substeps << ","
    << env.control_dt << "," << env.lowpass_alpha << "," << env.rate_limit << "," << env.gain
    << "," << env.tangent_scale << "," << env.contact_tilt_deg << "," << env.theta_c_base << "," << env.contact_k << ","
    << env.alpha3 << "," << env.compress << "," << env.engage_width << "," << env.sigma_tip
    << "," << env.sigma_x3 << "," << env.gravity_drop << "," << env.goal_interval_s << ","
    << env.episode_timeout_s << "," << env.success_threshold << "," << env.drop_radius << ","
    << env.divergence_threshold << "," << env.obs_noise << "," << env.obs_bias << ","
    << env.size_lo << "," << env.size_hi << "," << env.gain_jitter << "," << env.tip_scale_lo
    << "," << env.tip_scale_hi << "," << env.wrench_enabled << "," << env.wrench_prob << ","
    << env.wrench_mag << "," << env.grasp_set_size;
  o << "\nest=" << estimator.latent_dim << "," << estimator.lr << "," << estimator.data_reuse_k
    << "," << estimator.minibatches_b << "," << estimator.w_x << "," << estimator.w_rot << ","
    << estimator.w_v << "," << estimator.w_w << "," << estimator.start_from_truth;
  o << "\nppo=" << ppo.clip << "," << ppo.entropy_coef << "," << ppo.tau << "," << ppo.gamma
    << "," << ppo.minibatch << "," << ppo.epochs << "," << ppo.value_coef << "," << ppo.kl_target
    << "," << ppo.lr_init << "," << ppo.lr_min << "," << ppo.lr_max << "," << ppo.max_grad_norm
    << "," << ppo.adv_norm << "," << ppo.value_clip << "," << ppo.log_std_init << ","
    << ppo.log_std_min << "," << ppo.log_std_max;
  o << "\nbench=" << bench.trials << "," << bench.consecutive_cap << "\n";
  return o.str();
}

std::string RunConfig::hash8() const {
  std::string s = canonical_string();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  snprintf(buf, sizeof(buf), "%08x", static_cast<uint32_t>(h ^ (h >> 32)));
  return std::string(buf);
}

}  // namespace ecrl
