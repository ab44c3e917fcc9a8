#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "ecrl/bench.hpp"
#include "ecrl/checkpoint.hpp"
#include "ecrl/config.hpp"
#include "ecrl/csv.hpp"
#include "ecrl/trainer.hpp"

namespace fs = std::filesystem;
using Real = float;

namespace {

std::string output_root(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  const char* env = std::getenv("ECRL_OUT_ROOT");
  return env ? env : "runs";
}

ecrl::RunConfig config_from_checkpoint(const ecrl::Checkpoint& ck) {
  std::string kv = ck.meta.value("config_kv", "");
  if (kv.empty()) throw std::runtime_error("checkpoint carries no config");
  return ecrl::run_config_from_string(kv);
}

int cmd_train(const std::string& config_path, const std::string& mode,
              const std::string& object, int seed, int iterations, const std::string& out,
              const std::string& init_from, bool resume, bool quiet) {
  ecrl::RunConfig cfg = ecrl::load_run_config(config_path);
  if (!mode.empty()) cfg.train.mode = ecrl::mode_from_string(mode);
  if (!object.empty()) {
    ecrl::ObjectSpec spec = ecrl::ObjectSpec::preset(object);
    cfg.object = spec;
  }
  if (seed >= 0) cfg.train.seed = static_cast<uint64_t>(seed);
  if (iterations >= 0) cfg.train.iterations = iterations;

  if (cfg.train.mode == ecrl::TrainMode::kEstimAda && init_from.empty())
    throw std::runtime_error(
        "estimada training starts from a converged naive/oracle policy; pass --init-from");

  ecrl::RunPaths paths;
  paths.dir = fs::path(output_root(out)) / ecrl::run_dir_name(cfg);
  if (fs::exists(paths.manifest()) && !resume)
    throw std::runtime_error("run directory already exists: " + paths.dir.string() +
                             " (pass --resume to continue)");
  fs::create_directories(paths.dir);

  ecrl::Trainer<Real> trainer(cfg);
  if (!init_from.empty()) trainer.init_policy_from(init_from);
  if (resume && fs::exists(paths.checkpoint_last()))
    trainer.restore_checkpoint(paths.checkpoint_last().string());
  if (!fs::exists(paths.manifest())) ecrl::write_manifest(cfg, paths);

  ecrl::run_training(trainer, paths, !quiet);
  std::cout << paths.dir.string() << "\n";
  return 0;
}

int cmd_bench(const std::string& checkpoint, const std::string& mode_flag, int trials,
              int consecutive, int seed, const std::string& out) {
  ecrl::Checkpoint ck = ecrl::Checkpoint::load(checkpoint);
  ecrl::RunConfig cfg = config_from_checkpoint(ck);
  ecrl::TrainMode eval_mode =
      mode_flag.empty() ? cfg.train.mode : ecrl::mode_from_string(mode_flag);
  if (trials > 0) cfg.bench.trials = trials;
  uint64_t eval_seed = seed >= 0 ? static_cast<uint64_t>(seed) : cfg.train.seed + 7777;

  ecrl::Trainer<Real> holder(cfg);
  holder.restore_checkpoint(checkpoint);

  fs::path dir = out.empty() ? fs::path(checkpoint).parent_path() : fs::path(out);
  fs::create_directories(dir);
  std::string tag = ecrl::mode_name(eval_mode);

  auto rep = ecrl::run_benchmark(holder.policy(), holder.estimator(), holder.norm(), cfg,
                                 eval_mode, cfg.bench.trials, eval_seed);
  ecrl::write_benchmark_report(rep, (dir / ("bench_" + tag + ".json")).string(),
                               (dir / ("bench_" + tag + "_per_goal.csv")).string(),
                               (dir / ("bench_" + tag + "_final_angles.csv")).string());
  printf("mode %s object %s: B = %.1f%% over %d rollouts, estimator error %.3f +- %.3f rad\n",
         tag.c_str(), rep.object.c_str(), rep.overall_B, rep.total_rollouts, rep.est_err_mean,
         rep.est_err_std);

  if (consecutive > 0) {
    auto con = ecrl::run_consecutive(holder.policy(), holder.estimator(), holder.norm(), cfg,
                                     eval_mode, consecutive, cfg.bench.consecutive_cap,
                                     eval_seed + 1);
    ecrl::write_consecutive_report(con, (dir / ("consecutive_" + tag + ".json")).string());
    printf("consecutive successes (median %g, cap %d): %s\n", con.median, con.cap,
           ecrl::consecutive_counts_string(con).c_str());
  }
  return 0;
}

// Fig.-3-style failure reproductions from a naive-mode checkpoint.
int cmd_failure_demo(const std::string& checkpoint, const std::string& kase, int seed,
                     const std::string& out) {
  ecrl::Checkpoint ck = ecrl::Checkpoint::load(checkpoint);
  ecrl::RunConfig cfg = config_from_checkpoint(ck);
  ecrl::Trainer<Real> holder(cfg);
  holder.restore_checkpoint(checkpoint);
  auto& policy = holder.policy();
  auto& estimator = holder.estimator();
  auto& norm = holder.norm();

  fs::path dir = out.empty() ? fs::path("runs") / "failure_demo" : fs::path(out);
  fs::create_directories(dir);
  uint64_t s = seed >= 0 ? static_cast<uint64_t>(seed) : 42;
  int latent = estimator.latent_dim();
  double act_scale = cfg.env.joint_limit;

  auto flags_code = [](const ecrl::TerminationFlags& f) {
    return f.dropped * 1 + f.goal_timeout * 2 + f.episode_timeout * 4;
  };

  if (kase == "tipping") {
    // one closed-loop action sequence, replayed across differently seeded
    // dynamics; the per-repeat angle traces fan out where the grasp thins
    int repeats = 20, steps = cfg.env.goal_interval_steps();
    ecrl::PivotEnv ref(cfg.env, cfg.object, s, 1 << 22, ecrl::EnvMode::kEval);
    ref.set_goal(ecrl::octahedral_group()[10]);
    std::vector<Eigen::VectorXd> actions;
    {
      Eigen::MatrixXd obs = ref.obs().transpose();
      ecrl::EstimateBatch bg = ecrl::EstimateBatch::zeros(1, latent);
      bg.set_row(0, ecrl::init_estimate(ref.state(), latent));
      Eigen::MatrixXd u_prev = ref.last_q_d().transpose() / act_scale;
      ecrl::Rng rng(s, 0xFADE);
      for (int t = 0; t < steps; ++t) {
        bg = estimator.predict(obs, u_prev, bg);
        Eigen::MatrixXd input =
            norm.normalize(ecrl::assemble_policy_input(obs, bg, {ref.goal()}));
        ecrl::ActResult act = policy.act(input, rng, true);
        actions.push_back(act.action.row(0).transpose());
        auto sr = ref.step(actions.back());
        obs = sr.obs.transpose();
        u_prev = act.action / act_scale;
        if (sr.flags.dropped) break;
      }
    }
    ecrl::CsvWriter csv((dir / "tipping_fanout.csv").string(),
                        {"repeat", "t", "x1", "x2", "x3", "qw", "qx", "qy", "qz",
                         "goal_index", "reward", "d_goal", "flags"});
    for (int rep = 0; rep < repeats; ++rep) {
      ecrl::PivotEnv env(cfg.env, cfg.object, s + 1 + rep, (1 << 22) + 1 + rep,
                         ecrl::EnvMode::kEval);
      env.set_goal(ref.grasp_set().poses.empty() ? env.goal() : ecrl::octahedral_group()[10]);
      for (size_t t = 0; t < actions.size(); ++t) {
        auto sr = env.step(actions[t]);
        const ecrl::SystemState& st = env.state();
        csv.row() << rep << static_cast<int>(t) << st.x[0] << st.x[1] << st.x[2]
                  << st.R.w << st.R.x << st.R.y << st.R.z << env.goal_index() << sr.reward
                  << env.theta_to_goal() << flags_code(sr.flags);
        if (sr.flags.dropped) break;
      }
    }
    std::cout << (dir / "tipping_fanout.csv").string() << "\n";
    return 0;
  }

  if (kase == "drift") {
    // vertical-axis rotation goals every interval; true x3 wanders while the
    // estimate cannot follow it
    int horizon = 2 * cfg.env.episode_timeout_steps();
    ecrl::PivotEnv env(cfg.env, cfg.object, s, 1 << 23, ecrl::EnvMode::kEval);
    ecrl::Quat half_turn = ecrl::quat_exp(ecrl::Tangent3(0, 0, M_PI));
    ecrl::Quat goal = ecrl::quat_compose(half_turn, env.state().R);
    env.set_goal(goal);
    Eigen::MatrixXd obs = env.obs().transpose();
    ecrl::EstimateBatch bg = ecrl::EstimateBatch::zeros(1, latent);
    bg.set_row(0, ecrl::init_estimate(env.state(), latent));
    Eigen::MatrixXd u_prev = env.last_q_d().transpose() / act_scale;
    ecrl::Rng rng(s, 0xD217);
    ecrl::CsvWriter csv((dir / "drift_x3.csv").string(),
                        {"t", "x3_true", "x3_hat", "x1", "x2", "qw", "qx", "qy", "qz",
                         "goal_index", "reward", "flags"});
    for (int t = 0; t < horizon; ++t) {
      bg = estimator.predict(obs, u_prev, bg);
      Eigen::MatrixXd input = norm.normalize(ecrl::assemble_policy_input(obs, bg, {env.goal()}));
      ecrl::ActResult act = policy.act(input, rng, true);
      auto sr = env.step(act.action.row(0).transpose());
      obs = sr.obs.transpose();
      u_prev = act.action / act_scale;
      const ecrl::SystemState& st = env.state();
      csv.row() << t << st.x[2] << bg.x(0, 2) << st.x[0] << st.x[1] << st.R.w << st.R.x
                << st.R.y << st.R.z << env.goal_index() << sr.reward << flags_code(sr.flags);
      if (sr.flags.dropped) break;
      if (sr.flags.interval_end) {
        goal = ecrl::quat_compose(half_turn, env.state().R);
        env.set_goal(goal);
      }
    }
    std::cout << (dir / "drift_x3.csv").string() << "\n";
    return 0;
  }

  throw std::runtime_error("unknown failure case '" + kase + "'; valid: tipping, drift");
}

int cmd_inspect(const std::string& checkpoint) {
  ecrl::Checkpoint ck = ecrl::Checkpoint::load(checkpoint);
  std::cout << "meta:\n" << ck.meta.dump(2) << "\narrays:\n";
  for (const auto& name : ck.names()) {
    const auto& m = ck.get(name);
    std::cout << "  " << name << "  [" << m.rows() << " x " << m.cols() << "]\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimator-coupled reinforcement learning for blind in-hand reorientation"};
  app.require_subcommand(1);

  std::string config_path, mode, object, out, init_from, checkpoint, kase;
  int seed = -1, iterations = -1, trials = -1, consecutive = 0;
  bool resume = false, quiet = false;

  auto* train = app.add_subcommand("train", "Train policy and estimator");
  train->add_option("config", config_path, "config file (key = value with [sections])");
  train->add_option("--mode", mode, "ecrl | naive | estimada | oracle");
  train->add_option("--object", object, "cube | cuboid | l | apple");
  train->add_option("--seed", seed, "run seed");
  train->add_option("--iterations", iterations, "training iterations");
  train->add_option("--out", out, "output root (default $ECRL_OUT_ROOT or ./runs)");
  train->add_option("--init-from", init_from, "policy checkpoint to start from (estimada)");
  train->add_flag("--resume", resume, "continue an existing run directory");
  train->add_flag("--quiet", quiet, "suppress progress lines");

  auto* bench = app.add_subcommand("bench", "Run the 24-goal reorientation benchmark");
  bench->add_option("checkpoint", checkpoint, "trainer checkpoint")->required();
  bench->add_option("--mode", mode, "evaluation mode override (oracle feeds ground truth)");
  bench->add_option("--trials", trials, "trials per goal (default from config)");
  bench->add_option("--consecutive", consecutive, "also run N consecutive-reorientation trials");
  bench->add_option("--seed", seed, "evaluation seed");
  bench->add_option("--out", out, "report directory (default next to checkpoint)");

  auto* demo = app.add_subcommand("failure-demo", "Reproduce the two observability failure modes");
  demo->add_option("checkpoint", checkpoint, "naive-mode trainer checkpoint")->required();
  demo->add_option("--case", kase, "tipping | drift")->required();
  demo->add_option("--seed", seed, "demo seed");
  demo->add_option("--out", out, "output directory");

  auto* inspect = app.add_subcommand("inspect-checkpoint", "Print checkpoint metadata and arrays");
  inspect->add_option("checkpoint", checkpoint, "checkpoint path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train))
      return cmd_train(config_path, mode, object, seed, iterations, out, init_from, resume, quiet);
    if (app.got_subcommand(bench))
      return cmd_bench(checkpoint, mode, trials, consecutive, seed, out);
    if (app.got_subcommand(demo)) return cmd_failure_demo(checkpoint, kase, seed, out);
    if (app.got_subcommand(inspect)) return cmd_inspect(checkpoint);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
