#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "ecrl/ad.hpp"
#include "ecrl/checkpoint.hpp"
#include "ecrl/config.hpp"
#include "ecrl/nn.hpp"
#include "ecrl/rng.hpp"

namespace ecrl {

// Running mean/std over policy inputs (Welford over batches). Statistics
// freeze at evaluation: callers simply stop calling update().
class RunningNorm {
 public:
  explicit RunningNorm(int dim = 0)
      : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::VectorXd::Zero(dim)) {}

  void update(const Eigen::MatrixXd& batch) {
    for (Eigen::Index i = 0; i < batch.rows(); ++i) {
      count_ += 1.0;
      Eigen::VectorXd d = batch.row(i).transpose() - mean_;
      mean_ += d / count_;
      m2_ += d.cwiseProduct(batch.row(i).transpose() - mean_);
    }
  }

  Eigen::VectorXd std_dev() const {
    if (count_ < 2) return Eigen::VectorXd::Ones(mean_.size());
    return (m2_ / count_).cwiseMax(0.0).cwiseSqrt();
  }

  Eigen::MatrixXd normalize(const Eigen::MatrixXd& batch) const {
    Eigen::VectorXd sd = std_dev();
    Eigen::MatrixXd out(batch.rows(), batch.cols());
    for (Eigen::Index i = 0; i < batch.rows(); ++i)
      out.row(i) = ((batch.row(i).transpose() - mean_).array() /
                    (sd.array() + 1e-8))
                       .max(-10.0)
                       .min(10.0)
                       .transpose();
    return out;
  }

  double count() const { return count_; }
  void save(Checkpoint* ck, const std::string& prefix) const {
    ck->put(prefix + ".mean", mean_);
    ck->put(prefix + ".m2", m2_);
    Eigen::MatrixXd c(1, 1);
    c(0, 0) = count_;
    ck->put(prefix + ".count", c);
  }
  void restore(const Checkpoint& ck, const std::string& prefix) {
    mean_ = ck.get(prefix + ".mean");
    m2_ = ck.get(prefix + ".m2");
    count_ = ck.get(prefix + ".count")(0, 0);
  }

 private:
  Eigen::VectorXd mean_, m2_;
  double count_ = 0.0;
};

// Generalized advantage estimation; rewards/values/dones are env-major
// [n_envs x T]. done(e,t) means the episode ended at step t, which zeroes
// both the bootstrap and the propagation there.
inline void gae(const Eigen::MatrixXd& rewards, const Eigen::MatrixXd& values,
                const Eigen::Matrix<uint8_t, Eigen::Dynamic, Eigen::Dynamic>& dones,
                const Eigen::VectorXd& bootstrap, double gamma, double tau,
                Eigen::MatrixXd* advantages, Eigen::MatrixXd* returns) {
  int n = static_cast<int>(rewards.rows()), len = static_cast<int>(rewards.cols());
  advantages->setZero(n, len);
  returns->setZero(n, len);
  for (int e = 0; e < n; ++e) {
    double acc = 0.0;
    for (int t = len - 1; t >= 0; --t) {
      double nonterm = dones(e, t) ? 0.0 : 1.0;
      double next_v = (t == len - 1) ? bootstrap[e] : values(e, t + 1);
      double delta = rewards(e, t) + gamma * next_v * nonterm - values(e, t);
      acc = delta + gamma * tau * nonterm * acc;
      (*advantages)(e, t) = acc;
      (*returns)(e, t) = acc + values(e, t);
    }
  }
}

// kl-based learning-rate adaptation
inline double adapt_lr(double lr, double approx_kl, const PpoConfig& cfg) {
  if (approx_kl > 2.0 * cfg.kl_target) lr /= 1.5;
  else if (approx_kl < 0.5 * cfg.kl_target) lr *= 1.5;
  return std::clamp(lr, cfg.lr_min, cfg.lr_max);
}

struct ActResult {
  Eigen::MatrixXd raw;      // pre-squash samples
  Eigen::MatrixXd action;   // tanh-squashed, scaled to joint range
  Eigen::VectorXd logprob;  // squash-corrected
  Eigen::VectorXd value;
};

struct PpoMetrics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  bool early_stopped = false;
  int minibatches = 0;
};

// Goal-conditioned stochastic policy and value function over the normalized
// estimator-coupled input. Actions are tanh-squashed to the joint range.
template <class T>
class Policy {
 public:
  using MatT = nn::Mat<T>;

  Policy() = default;

  Policy(const PpoConfig& cfg, const std::vector<int>& hidden, int input_dim, int act_dim,
         double act_scale, Rng& rng)
      : cfg_(cfg),
        act_scale_(act_scale),
        mean_net_(input_dim, hidden, act_dim, 0.01, rng),
        value_net_(input_dim, hidden, 1, 1.0, rng),
        head_(act_dim, cfg.log_std_init, cfg.log_std_min, cfg.log_std_max) {
    auto ps = params();
    opt_ = nn::Adam<T>(ps);
    lr_ = cfg.lr_init;
  }

  int input_dim() const { return mean_net_.input_dim(); }
  int act_dim() const { return mean_net_.output_dim(); }
  double act_scale() const { return act_scale_; }
  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  const PpoConfig& config() const { return cfg_; }
  nn::DenseSkipNet<T>& mean_net() { return mean_net_; }
  nn::DenseSkipNet<T>& value_net() { return value_net_; }
  nn::GaussianHead<T>& head() { return head_; }

  // log of d(action)/d(raw) for the tanh squash, per row
  Eigen::VectorXd squash_correction(const Eigen::MatrixXd& raw) const {
    Eigen::VectorXd out(raw.rows());
    for (Eigen::Index i = 0; i < raw.rows(); ++i) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < raw.cols(); ++j) {
        double r = raw(i, j);
        // log(1 - tanh^2 r) = 2 (log 2 - r - softplus(-2r))
        double sp = -2.0 * r > 0 ? -2.0 * r + std::log1p(std::exp(2.0 * r))
                                 : std::log1p(std::exp(-2.0 * r));
        acc += std::log(act_scale_) + 2.0 * (std::log(2.0) - r - sp);
      }
      out[i] = acc;
    }
    return out;
  }

  ActResult act(const Eigen::MatrixXd& norm_input, Rng& rng, bool deterministic) const {
    ActResult res;
    MatT in = norm_input.cast<T>();
    Eigen::MatrixXd mean = mean_net_.forward(in).template cast<double>();
    if (!mean.allFinite()) throw std::runtime_error("policy: non-finite action mean");
    res.raw = deterministic ? mean
                            : head_.sample(mean.cast<T>(), rng).template cast<double>();
    res.action = act_scale_ * res.raw.array().tanh();
    Eigen::VectorXd gauss =
        head_.logprob(mean.cast<T>(), res.raw.cast<T>()).template cast<double>();
    res.logprob = gauss - squash_correction(res.raw);
    res.value = value_net_.forward(in).template cast<double>();
    return res;
  }

  Eigen::VectorXd values(const Eigen::MatrixXd& norm_input) const {
    return value_net_.forward(norm_input.cast<T>()).template cast<double>();
  }

  // One PPO update over the flattened buffer views; rows must already be
  // filtered to valid steps.
  PpoMetrics ppo_update(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& raw_actions,
                        const Eigen::VectorXd& old_logprob, const Eigen::VectorXd& advantages,
                        const Eigen::VectorXd& returns, const Eigen::VectorXd& old_values,
                        Rng& rng) {
    int n = static_cast<int>(inputs.rows());
    int mb = std::min(cfg_.minibatch, n);
    PpoMetrics agg;
    double kl_sum = 0.0;
    int kl_count = 0;

    Eigen::VectorXd corr(n);
    {
      Eigen::VectorXd c = squash_correction(raw_actions);
      corr = c;
    }

    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    bool stop = false;
    for (int epoch = 0; epoch < cfg_.epochs && !stop; ++epoch) {
      for (int i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
      for (int start = 0; start + mb <= n; start += mb) {
        std::vector<int> sel(idx.begin() + start, idx.begin() + start + mb);
        PpoMetrics m = update_minibatch(inputs, raw_actions, old_logprob, advantages,
                                        returns, old_values, corr, sel);
        agg.policy_loss += m.policy_loss;
        agg.value_loss += m.value_loss;
        agg.entropy += m.entropy;
        agg.clip_fraction += m.clip_fraction;
        kl_sum += m.approx_kl;
        ++kl_count;
        ++agg.minibatches;
        if (m.approx_kl > 10.0 * cfg_.kl_target) {
          agg.early_stopped = true;
          stop = true;
          break;
        }
      }
    }
    if (agg.minibatches > 0) {
      agg.policy_loss /= agg.minibatches;
      agg.value_loss /= agg.minibatches;
      agg.entropy /= agg.minibatches;
      agg.clip_fraction /= agg.minibatches;
    }
    agg.approx_kl = kl_count ? kl_sum / kl_count : 0.0;
    return agg;
  }

  std::vector<MatT*> params() {
    std::vector<MatT*> ps = mean_net_.params();
    for (auto* p : value_net_.params()) ps.push_back(p);
    for (auto* p : head_.params()) ps.push_back(p);
    return ps;
  }

  void save(Checkpoint* ck, const std::string& prefix) {
    for (auto& [name, p] : mean_net_.named_params(prefix + ".mean")) ck->put_cast<T>(name, *p);
    for (auto& [name, p] : value_net_.named_params(prefix + ".value")) ck->put_cast<T>(name, *p);
    for (auto& [name, p] : head_.named_params(prefix + ".head")) ck->put_cast<T>(name, *p);
    for (auto& [name, p] : opt_.named_state(prefix + ".opt")) ck->put_cast<T>(name, *p);
    ck->meta[prefix + "_opt_steps"] = opt_.step_count();
    ck->meta[prefix + "_lr"] = lr_;
  }

  void restore(const Checkpoint& ck, const std::string& prefix) {
    for (auto& [name, p] : mean_net_.named_params(prefix + ".mean")) *p = ck.get_cast<T>(name);
    for (auto& [name, p] : value_net_.named_params(prefix + ".value")) *p = ck.get_cast<T>(name);
    for (auto& [name, p] : head_.named_params(prefix + ".head")) *p = ck.get_cast<T>(name);
    for (auto& [name, p] : opt_.named_state(prefix + ".opt")) *p = ck.get_cast<T>(name);
    opt_.set_step_count(ck.meta.value(prefix + "_opt_steps", int64_t{0}));
    lr_ = ck.meta.value(prefix + "_lr", lr_);
  }

  // Clipped-surrogate loss and gradients for one minibatch, without applying
  // them (also the hook for gradient-check oracles).
  PpoMetrics minibatch_grads(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& raw_actions,
                             const Eigen::VectorXd& old_logprob, const Eigen::VectorXd& advantages,
                             const Eigen::VectorXd& returns, const Eigen::VectorXd& old_values,
                             const Eigen::VectorXd& corr, const std::vector<int>& sel,
                             std::vector<MatT>* grads_out) {
    int m = static_cast<int>(sel.size());
    MatT in(m, inputs.cols()), act(m, raw_actions.cols());
    MatT adv(m, 1), ret(m, 1), oldlp(m, 1), oldv(m, 1), corrm(m, 1);
    for (int i = 0; i < m; ++i) {
      in.row(i) = inputs.row(sel[i]).cast<T>();
      act.row(i) = raw_actions.row(sel[i]).cast<T>();
      adv(i, 0) = T(advantages[sel[i]]);
      ret(i, 0) = T(returns[sel[i]]);
      oldlp(i, 0) = T(old_logprob[sel[i]]);
      oldv(i, 0) = T(old_values[sel[i]]);
      corrm(i, 0) = T(corr[sel[i]]);
    }
    if (cfg_.adv_norm && m > 1) {
      T mu = adv.mean();
      T sd = std::sqrt((adv.array() - mu).square().sum() / T(m - 1));
      adv = ((adv.array() - mu) / (sd + T(1e-8))).matrix();
    }

    ad::Tape<T> tape;
    auto mean_b = mean_net_.bind(tape);
    auto value_b = value_net_.bind(tape);
    auto head_b = head_.bind(tape);

    ad::Var<T> x = tape.leaf(in);
    ad::Var<T> a = tape.leaf(act);
    ad::Var<T> mean = mean_b.forward(x);
    ad::Var<T> logp = ad::sub(head_b.logprob(mean, a), tape.leaf(corrm));
    ad::Var<T> logratio = ad::sub(logp, tape.leaf(oldlp));
    ad::Var<T> ratio = ad::exp_(logratio);

    ad::Var<T> advv = tape.leaf(adv);
    ad::Var<T> surr1 = ad::mul(ratio, advv);
    ad::Var<T> surr2 = ad::mul(ad::clamp(ratio, T(1) - T(cfg_.clip), T(1) + T(cfg_.clip)), advv);
    ad::Var<T> pg = ad::neg(ad::mean_all(ad::minimum(surr1, surr2)));

    ad::Var<T> v = value_b.forward(x);
    ad::Var<T> retv = tape.leaf(ret);
    ad::Var<T> vloss;
    if (cfg_.value_clip) {
      ad::Var<T> oldvv = tape.leaf(oldv);
      ad::Var<T> vclip = ad::add(oldvv, ad::clamp(ad::sub(v, oldvv), -T(cfg_.clip), T(cfg_.clip)));
      ad::Var<T> l1 = ad::square(ad::sub(v, retv));
      ad::Var<T> l2 = ad::square(ad::sub(vclip, retv));
      vloss = ad::scale(ad::mean_all(ad::maximum(l1, l2)), T(0.5));
    } else {
      vloss = ad::scale(ad::mean_all(ad::square(ad::sub(v, retv))), T(0.5));
    }

    ad::Var<T> ent = head_b.entropy();
    ad::Var<T> loss = ad::add(pg, ad::scale(vloss, T(cfg_.value_coef)));
    loss = ad::sub(loss, ad::scale(ent, T(cfg_.entropy_coef)));
    tape.backward(loss);

    std::vector<MatT>& grads = *grads_out;
    grads.clear();
    for (const auto& wv : mean_b.wvars) grads.push_back(wv.grad());
    for (const auto& bv : mean_b.bvars) grads.push_back(bv.grad());
    for (const auto& wv : value_b.wvars) grads.push_back(wv.grad());
    for (const auto& bv : value_b.bvars) grads.push_back(bv.grad());
    grads.push_back(head_b.log_std_var.grad());

    PpoMetrics out;
    out.policy_loss = static_cast<double>(pg.val()(0, 0));
    out.value_loss = static_cast<double>(vloss.val()(0, 0));
    out.entropy = static_cast<double>(ent.val()(0, 0));
    const MatT& rv = ratio.val();
    const MatT& lrv = logratio.val();
    double kl = 0.0, clipped = 0.0;
    for (int i = 0; i < m; ++i) {
      kl += static_cast<double>(rv(i, 0)) - 1.0 - static_cast<double>(lrv(i, 0));
      if (std::abs(static_cast<double>(rv(i, 0)) - 1.0) > cfg_.clip) clipped += 1.0;
    }
    out.approx_kl = kl / m;
    out.clip_fraction = clipped / m;
    return out;
  }

 private:
  PpoMetrics update_minibatch(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& raw_actions,
                              const Eigen::VectorXd& old_logprob, const Eigen::VectorXd& advantages,
                              const Eigen::VectorXd& returns, const Eigen::VectorXd& old_values,
                              const Eigen::VectorXd& corr, const std::vector<int>& sel) {
    std::vector<MatT> grads;
    PpoMetrics out = minibatch_grads(inputs, raw_actions, old_logprob, advantages, returns,
                                     old_values, corr, sel, &grads);
    double norm = nn::grad_norm(grads);
    if (cfg_.max_grad_norm > 0 && norm > cfg_.max_grad_norm)
      nn::scale_grads(grads, cfg_.max_grad_norm / norm);
    opt_.step(params(), grads, lr_);
    return out;
  }

  PpoConfig cfg_;
  double act_scale_ = 1.0;
  double lr_ = 3e-4;
  nn::DenseSkipNet<T> mean_net_;
  nn::DenseSkipNet<T> value_net_;
  nn::GaussianHead<T> head_;
  nn::Adam<T> opt_;
};

}  // namespace ecrl
