#include <doctest.h>

#include <filesystem>

#include "ecrl/trainer.hpp"
#include "test_util.hpp"

using namespace ecrl;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("trainer");

namespace {

// desk-scale knobs shrunk to test size
RunConfig tiny_config(const std::string& extra = "") {
  std::string base =
      "[train]\nn_envs = 4\nrollout_len = 8\nnet_scale = 0.02\nseed = 3\niterations = 4\n"
      "checkpoint_every = 0\n"
      "[estimator]\nlatent_dim = 4\nminibatches_b = 2\n"
      "[ppo]\nminibatch = 16\nepochs = 2\n";
  return run_config_from_string(base + extra);
}

double param_checksum(Policy<double>& p) {
  double acc = 0;
  for (auto* m : p.params()) acc += m->array().abs().sum();
  return acc;
}

}  // namespace

TEST_CASE("rho schedule is exactly linear and mode-pinned") {
  SUBCASE("ecrl anneals by delta_rho") {
    RunConfig cfg = tiny_config("[train2]\n");
    // no such section: force through proper fields instead
    cfg = tiny_config();
    cfg.train.mode = TrainMode::kEcrl;
    cfg.train.delta_rho = 0.25;
    Trainer<double> tr(cfg);
    std::vector<double> rhos;
    for (int i = 0; i < 6; ++i) {
      rhos.push_back(tr.rho());
      tr.train_iteration();
    }
    std::vector<double> want{1.0, 0.75, 0.5, 0.25, 0.0, 0.0};
    for (int i = 0; i < 6; ++i) CHECK(rhos[i] == doctest::Approx(want[i]));
  }
  SUBCASE("rho reaches zero after 1/delta iterations") {
    // the schedule is rho(i) = max(1 - i*delta, 0); with the paper delta of
    // 1e-3 that is exactly zero at iteration 1000
    double rho = 1.0;
    for (int i = 0; i < 1000; ++i) rho = std::max(rho - 1e-3, 0.0);
    CHECK(rho == 0.0);
  }
  SUBCASE("naive pins rho at one") {
    RunConfig cfg = tiny_config();
    cfg.train.mode = TrainMode::kNaive;
    Trainer<double> tr(cfg);
    tr.train_iteration();
    tr.train_iteration();
    CHECK(tr.rho() == 1.0);
  }
  SUBCASE("estimada pins rho at zero") {
    RunConfig cfg = tiny_config();
    cfg.train.mode = TrainMode::kEstimAda;
    Trainer<double> tr(cfg);
    tr.train_iteration();
    CHECK(tr.rho() == 0.0);
  }
}

TEST_CASE("feed selection honors the coin and episode starts") {
  SUBCASE("rho = 1: every input is ground truth") {
    RunConfig cfg = tiny_config();
    cfg.train.mode = TrainMode::kNaive;
    Trainer<double> tr(cfg);
    RolloutBuffer buf = tr.collect_rollout();
    for (int r = 0; r < buf.rows(); ++r) CHECK(buf.fed_gt[r] == 1);
    // the fed rotation equals the true rotation
    for (int r = 0; r < buf.rows(); ++r)
      CHECK((buf.fed_q.row(r) - buf.gt_q.row(r)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("rho = 0: ground truth only at episode starts") {
    RunConfig cfg = tiny_config();
    cfg.train.mode = TrainMode::kEcrl;
    cfg.train.rho0 = 0.0;
    Trainer<double> tr(cfg);
    RolloutBuffer buf = tr.collect_rollout();
    bool saw_estimate = false;
    for (int r = 0; r < buf.rows(); ++r) {
      if (buf.fed_gt[r]) CHECK(buf.episode_start[r] == 1);
      saw_estimate |= !buf.fed_gt[r];
    }
    CHECK(saw_estimate);
  }
  SUBCASE("buffer bookkeeping") {
    RunConfig cfg = tiny_config();
    Trainer<double> tr(cfg);
    RolloutBuffer buf = tr.collect_rollout();
    CHECK(buf.rows() == cfg.train.n_envs * cfg.train.rollout_len);
    CHECK(buf.valid_count() == buf.rows());
    for (int e = 0; e < buf.n_envs; ++e) CHECK(buf.episode_start[buf.row(e, 0)] == 1);
  }
}

TEST_CASE("estimada freezes the policy") {
  RunConfig cfg = tiny_config();
  cfg.train.mode = TrainMode::kEstimAda;
  Trainer<double> tr(cfg);
  double before = param_checksum(tr.policy());
  double norm_count = tr.norm().count();
  for (int i = 0; i < 3; ++i) tr.train_iteration();
  CHECK(param_checksum(tr.policy()) == before);
  CHECK(tr.norm().count() == norm_count);  // statistics frozen too
}

TEST_CASE("naive and oracle training are input-identical") {
  RunConfig a = tiny_config();
  a.train.mode = TrainMode::kNaive;
  RunConfig b = tiny_config();
  b.train.mode = TrainMode::kOracle;
  Trainer<double> ta(a), tb(b);
  RolloutBuffer ba = ta.collect_rollout(), bb = tb.collect_rollout();
  CHECK((ba.policy_input - bb.policy_input).cwiseAbs().maxCoeff() == 0.0);
  CHECK((ba.z - bb.z).cwiseAbs().maxCoeff() == 0.0);
  for (int r = 0; r < ba.rows(); ++r) CHECK(ba.fed_gt[r] == bb.fed_gt[r]);
}

TEST_CASE("identical seeds give identical metric streams") {
  RunConfig cfg = tiny_config();
  Trainer<double> a(cfg), b(cfg);
  for (int i = 0; i < 3; ++i) {
    IterationMetrics ma = a.train_iteration(), mb = b.train_iteration();
    CHECK(ma.reward_mean == mb.reward_mean);
    CHECK(ma.approx_kl == mb.approx_kl);
    CHECK(ma.est.loss_before == mb.est.loss_before);
    CHECK(ma.success_rate == mb.success_rate);
  }
}

TEST_CASE("checkpoint round trip reproduces the forward pass bit-exactly") {
  RunConfig cfg = tiny_config();
  Trainer<double> tr(cfg);
  for (int i = 0; i < 2; ++i) tr.train_iteration();
  fs::path path = fs::temp_directory_path() / "ecrl_trainer_test.ckpt";
  tr.save_checkpoint(path.string());

  Trainer<double> fresh(cfg);
  fresh.restore_checkpoint(path.string());

  Rng rng(99, 0);
  Eigen::MatrixXd probe(100, tr.policy().input_dim());
  for (int i = 0; i < probe.size(); ++i) probe.data()[i] = rng.normal();
  Eigen::MatrixXd ya = tr.policy().mean_net().forward(probe);
  Eigen::MatrixXd yb = fresh.policy().mean_net().forward(probe);
  CHECK((ya - yb).cwiseAbs().maxCoeff() == 0.0);
  Eigen::VectorXd va = tr.policy().values(probe), vb = fresh.policy().values(probe);
  CHECK((va - vb).cwiseAbs().maxCoeff() == 0.0);
  CHECK(fresh.iteration() == tr.iteration());
  CHECK(fresh.rho() == tr.rho());
  fs::remove(path);
}

TEST_CASE("restore of a missing or foreign file fails with no partial state") {
  RunConfig cfg = tiny_config();
  Trainer<double> tr(cfg);
  CHECK_THROWS(tr.restore_checkpoint("/nonexistent/nothing.ckpt"));
  fs::path path = fs::temp_directory_path() / "ecrl_foreign.ckpt";
  {
    Checkpoint ck;
    ck.meta["kind"] = "something_else";
    ck.save(path.string());
  }
  CHECK_THROWS(tr.restore_checkpoint(path.string()));
  fs::remove(path);
}

TEST_CASE("resume continues the schedule without a gap") {
  RunConfig cfg = tiny_config();
  cfg.train.mode = TrainMode::kEcrl;
  cfg.train.delta_rho = 0.1;
  cfg.train.iterations = 10;

  Trainer<double> full(cfg);
  std::vector<double> rho_full;
  for (int i = 0; i < 10; ++i) {
    rho_full.push_back(full.rho());
    full.train_iteration();
  }

  Trainer<double> first(cfg);
  std::vector<double> rho_split;
  for (int i = 0; i < 5; ++i) {
    rho_split.push_back(first.rho());
    first.train_iteration();
  }
  fs::path path = fs::temp_directory_path() / "ecrl_resume.ckpt";
  first.save_checkpoint(path.string());
  Trainer<double> second(cfg);
  second.restore_checkpoint(path.string());
  CHECK(second.iteration() == 5);
  for (int i = 0; i < 5; ++i) {
    rho_split.push_back(second.rho());
    second.train_iteration();
  }
  for (int i = 0; i < 10; ++i) CHECK(rho_full[i] == doctest::Approx(rho_split[i]));
  fs::remove(path);
}

TEST_CASE("run directory naming and manifest") {
  RunConfig cfg = tiny_config();
  std::string name = run_dir_name(cfg);
  CHECK(name.find("ecrl_cube_") == 0);
  CHECK(name.find("_s3") != std::string::npos);

  // config echo in the checkpoint reloads to the same hash
  std::string kv = kv_from_config(cfg);
  RunConfig back = run_config_from_string(kv);
  CHECK(back.hash8() == cfg.hash8());
  CHECK(back.train.n_envs == cfg.train.n_envs);
  CHECK(back.object.name == cfg.object.name);
}

TEST_SUITE_END();
