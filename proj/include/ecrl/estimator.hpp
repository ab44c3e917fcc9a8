#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <numeric>
#include <vector>

#include "ecrl/ad.hpp"
#include "ecrl/ad_manifold.hpp"
#include "ecrl/checkpoint.hpp"
#include "ecrl/config.hpp"
#include "ecrl/env.hpp"
#include "ecrl/manifold.hpp"
#include "ecrl/nn.hpp"
#include "ecrl/rollout.hpp"

namespace ecrl {

// Struct-of-arrays estimates for a batch of environments (double interface;
// the net's scalar type stays internal).
struct EstimateBatch {
  Eigen::MatrixXd x, q, v, w, l;

  static EstimateBatch zeros(int n, int latent_dim) {
    EstimateBatch b;
    b.x.setZero(n, 3);
    b.q.setZero(n, 4);
    b.q.col(0).setOnes();
    b.v.setZero(n, 3);
    b.w.setZero(n, 3);
    b.l.setZero(n, latent_dim);
    return b;
  }

  void set_row(int i, const Estimate& e) {
    x.row(i) = e.x.transpose();
    q.row(i) = e.R.coeffs().transpose();
    v.row(i) = e.v.transpose();
    w.row(i) = e.w.transpose();
    l.row(i) = e.l.transpose();
  }

  Estimate get_row(int i) const {
    Estimate e(static_cast<int>(l.cols()));
    e.x = x.row(i).transpose();
    e.R = Quat{q(i, 0), q(i, 1), q(i, 2), q(i, 3)};
    e.v = v.row(i).transpose();
    e.w = w.row(i).transpose();
    e.l = l.row(i).transpose();
    return e;
  }

  int size() const { return static_cast<int>(x.rows()); }
};

inline Estimate init_estimate(const SystemState& s0, int latent_dim) {
  Estimate e(latent_dim);
  e.x = s0.x;
  e.R = quat_canonicalize(s0.R);
  e.v.setZero();
  e.w.setZero();
  e.l.setZero();
  return e;
}

struct EstimatorMetrics {
  double loss_before = 0.0;
  double loss_after = 0.0;
  double rmse_pos = 0.0;  // mean position error, m
  double rmse_rot = 0.0;  // mean geodesic error, rad
  double rmse_vel = 0.0;
  int grad_clip_events = 0;
  int rejected_steps = 0;
  int gradient_steps = 0;
};

// Recursive on-manifold estimator: a dense-skip net regresses a tangent
// increment which boxplus applies to the previous estimate; the latent slot
// is tanh-squashed. Trained by truncated BPTT over collected sequences.
template <class T>
class Estimator {
 public:
  using MatT = nn::Mat<T>;

  Estimator() = default;

  Estimator(const EstimatorConfig& cfg, const std::vector<int>& hidden, int obs_dim,
            int n_dof, Rng& rng)
      : cfg_(cfg),
        obs_dim_(obs_dim),
        n_dof_(n_dof),
        net_(obs_dim + n_dof + 15 + cfg.latent_dim, hidden, 12 + cfg.latent_dim, 0.01, rng),
        opt_(net_.params()) {}

  int latent_dim() const { return cfg_.latent_dim; }
  int input_dim() const { return net_.input_dim(); }
  const EstimatorConfig& config() const { return cfg_; }
  nn::DenseSkipNet<T>& net() { return net_; }
  nn::Adam<T>& optimizer() { return opt_; }

  // network input row: z | u_prev | x | 6d(R) | v | w | l
  Eigen::MatrixXd assemble_input(const Eigen::MatrixXd& z, const Eigen::MatrixXd& u_prev,
                                 const EstimateBatch& prev) const {
    int n = prev.size();
    Eigen::MatrixXd in(n, input_dim());
    in.middleCols(0, obs_dim_) = z;
    in.middleCols(obs_dim_, n_dof_) = u_prev;
    int at = obs_dim_ + n_dof_;
    in.middleCols(at, 3) = prev.x;
    for (int i = 0; i < n; ++i) {
      Quat q{prev.q(i, 0), prev.q(i, 1), prev.q(i, 2), prev.q(i, 3)};
      in.block(i, at + 3, 1, 6) = rotation_to_6d(q).transpose();
    }
    in.middleCols(at + 9, 3) = prev.v;
    in.middleCols(at + 12, 3) = prev.w;
    in.middleCols(at + 15, cfg_.latent_dim) = prev.l;
    return in;
  }

  // one recursion step for a batch (inference path)
  EstimateBatch predict(const Eigen::MatrixXd& z, const Eigen::MatrixXd& u_prev,
                        const EstimateBatch& prev) const {
    Eigen::MatrixXd in = assemble_input(z, u_prev, prev);
    Eigen::MatrixXd out = net_.forward(in.cast<T>()).template cast<double>();
    if (!out.allFinite())
      throw std::runtime_error("estimator: non-finite prediction");
    int n = prev.size();
    EstimateBatch next = prev;
    for (int i = 0; i < n; ++i) {
      Estimate e = prev.get_row(i);
      StateIncrement inc(cfg_.latent_dim);
      inc.dx = out.block(i, 0, 1, 3).transpose();
      inc.dr = out.block(i, 3, 1, 3).transpose();
      inc.dv = out.block(i, 6, 1, 3).transpose();
      inc.dw = out.block(i, 9, 1, 3).transpose();
      inc.dl = out.block(i, 12, 1, cfg_.latent_dim).transpose();
      Estimate ne = boxplus(e, inc);
      ne.l = ne.l.array().tanh();
      next.set_row(i, ne);
    }
    return next;
  }

  Estimate predict_one(const Eigen::VectorXd& z, const Eigen::VectorXd& u_prev,
                       const Estimate& prev) const {
    EstimateBatch b = EstimateBatch::zeros(1, cfg_.latent_dim);
    b.set_row(0, prev);
    EstimateBatch out = predict(z.transpose(), u_prev.transpose(), b);
    return out.get_row(0);
  }

  // weighted error of a single prediction against ground truth
  double loss_one(const Estimate& pred, const Vec3& gx, const Quat& gq, const Vec3& gv,
                  const Vec3& gw) const {
    return cfg_.w_x * (pred.x - gx).norm() + cfg_.w_rot * geodesic_distance(pred.R, gq) +
           cfg_.w_v * (pred.v - gv).norm() + cfg_.w_w * (pred.w - gw).norm();
  }

  // Closed-loop re-unroll of the buffer without gradients; returns the mean
  // loss and per-field errors.
  EstimatorMetrics evaluate(const RolloutBuffer& buf) const {
    EstimatorMetrics m;
    double loss = 0.0, pos = 0.0, rot = 0.0, vel = 0.0;
    int count = 0;
    for (int e = 0; e < buf.n_envs; ++e) {
      Estimate cur(cfg_.latent_dim);
      for (int t = 0; t < buf.rollout_len; ++t) {
        int r = buf.row(e, t);
        if (t == 0 || buf.episode_start[r]) {
          cur = Estimate(cfg_.latent_dim);
          cur.x = buf.est_prev_x.row(r).transpose();
          cur.R = Quat{buf.est_prev_q(r, 0), buf.est_prev_q(r, 1), buf.est_prev_q(r, 2),
                       buf.est_prev_q(r, 3)};
          cur.v = buf.est_prev_v.row(r).transpose();
          cur.w = buf.est_prev_w.row(r).transpose();
          cur.l = buf.est_prev_l.row(r).transpose();
        }
        if (!buf.valid[r]) continue;
        cur = predict_one(buf.z.row(r).transpose(), buf.u_prev.row(r).transpose(), cur);
        Quat gq{buf.gt_q(r, 0), buf.gt_q(r, 1), buf.gt_q(r, 2), buf.gt_q(r, 3)};
        Vec3 gx = buf.gt_x.row(r).transpose(), gv = buf.gt_v.row(r).transpose(),
             gw = buf.gt_w.row(r).transpose();
        loss += loss_one(cur, gx, gq, gv, gw);
        pos += (cur.x - gx).norm();
        rot += geodesic_distance(cur.R, gq);
        vel += (cur.v - gv).norm() + (cur.w - gw).norm();
        ++count;
      }
    }
    if (count > 0) {
      m.loss_before = loss / count;
      m.rmse_pos = pos / count;
      m.rmse_rot = rot / count;
      m.rmse_vel = vel / count;
    }
    return m;
  }

  // k*b truncated-BPTT gradient steps over the buffer's sequences.
  EstimatorMetrics train_epoch(const RolloutBuffer& buf, Rng& rng) {
    EstimatorMetrics metrics = evaluate(buf);
    if (cfg_.data_reuse_k <= 0) return metrics;

    std::vector<int> order(buf.n_envs);
    std::iota(order.begin(), order.end(), 0);
    for (int i = buf.n_envs - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);

    int b = std::max(1, std::min(cfg_.minibatches_b, buf.n_envs));
    for (int pass = 0; pass < cfg_.data_reuse_k; ++pass) {
      for (int g = 0; g < b; ++g) {
        int lo = g * buf.n_envs / b, hi = (g + 1) * buf.n_envs / b;
        std::vector<int> envs(order.begin() + lo, order.begin() + hi);
        if (envs.empty()) continue;
        train_step(buf, envs, &metrics);
        ++metrics.gradient_steps;
      }
    }
    metrics.loss_after = evaluate(buf).loss_before;
    return metrics;
  }

  std::vector<std::pair<std::string, MatT*>> named_params(const std::string& prefix) {
    return net_.named_params(prefix);
  }

  void save(Checkpoint* ck, const std::string& prefix) {
    for (auto& [name, p] : net_.named_params(prefix + ".net")) ck->put_cast<T>(name, *p);
    for (auto& [name, p] : opt_.named_state(prefix + ".opt")) ck->put_cast<T>(name, *p);
    ck->meta[prefix + "_opt_steps"] = opt_.step_count();
  }

  void restore(const Checkpoint& ck, const std::string& prefix) {
    for (auto& [name, p] : net_.named_params(prefix + ".net")) *p = ck.get_cast<T>(name);
    for (auto& [name, p] : opt_.named_state(prefix + ".opt")) *p = ck.get_cast<T>(name);
    opt_.set_step_count(ck.meta.value(prefix + "_opt_steps", int64_t{0}));
  }

  // BPTT loss and parameter gradients over selected sequences, without
  // touching the parameters (also the hook for gradient-check oracles)
  double bptt_loss_and_grads(const RolloutBuffer& buf, const std::vector<int>& envs,
                             std::vector<MatT>* grads_out) {
    int m = static_cast<int>(envs.size());
    int dl = cfg_.latent_dim;
    ad::Tape<T> tape;
    auto bound = net_.bind(tape);

    auto rows_of = [&](const Eigen::MatrixXd& src, int t) {
      nn::Mat<T> out(m, src.cols());
      for (int i = 0; i < m; ++i)
        out.row(i) = src.row(buf.row(envs[i], t)).template cast<T>();
      return out;
    };

    ad::Var<T> sx, sq, sv, sw, sl;
    ad::Var<T> loss_sum = tape.leaf(nn::Mat<T>::Zero(1, 1));
    int loss_count = 0;

    for (int t = 0; t < buf.rollout_len; ++t) {
      // recursion restarts where episodes (or the window) start
      nn::Mat<T> reset(m, 1);
      bool any_reset = false, all_reset = (t == 0);
      for (int i = 0; i < m; ++i) {
        bool rs = (t == 0) || buf.episode_start[buf.row(envs[i], t)];
        reset(i, 0) = rs ? T(1) : T(0);
        any_reset |= rs;
        all_reset &= rs;
      }
      if (any_reset) {
        ad::Var<T> px = tape.leaf(rows_of(buf.est_prev_x, t));
        ad::Var<T> pq = tape.leaf(rows_of(buf.est_prev_q, t));
        ad::Var<T> pv = tape.leaf(rows_of(buf.est_prev_v, t));
        ad::Var<T> pw = tape.leaf(rows_of(buf.est_prev_w, t));
        ad::Var<T> pl = tape.leaf(rows_of(buf.est_prev_l, t));
        if (all_reset) {
          sx = px; sq = pq; sv = pv; sw = pw; sl = pl;
        } else {
          auto bc = [&](int c) {
            nn::Mat<T> mm(m, c);
            for (int j = 0; j < c; ++j) mm.col(j) = reset.col(0);
            return mm;
          };
          sx = ad::select(bc(3), px, sx);
          sq = ad::select(bc(4), pq, sq);
          sv = ad::select(bc(3), pv, sv);
          sw = ad::select(bc(3), pw, sw);
          sl = ad::select(bc(dl), pl, sl);
        }
      }

      ad::Var<T> z = tape.leaf(rows_of(buf.z, t));
      ad::Var<T> u = tape.leaf(rows_of(buf.u_prev, t));
      ad::Var<T> input = ad::hstack<T>({z, u, sx, ad::quat_to_6d_ad(sq), sv, sw, sl});
      ad::Var<T> out = bound.forward(input);

      ad::Var<T> dx = ad::cols(out, 0, 3);
      ad::Var<T> dr = ad::cols(out, 3, 3);
      ad::Var<T> dv = ad::cols(out, 6, 3);
      ad::Var<T> dw = ad::cols(out, 9, 3);
      ad::Var<T> dlv = ad::cols(out, 12, dl);

      sx = ad::add(sx, dx);
      sq = ad::quat_normalize_ad(ad::quat_compose_ad(ad::quat_exp_ad(dr), sq));
      sv = ad::add(sv, dv);
      sw = ad::add(sw, dw);
      sl = ad::tanh_(ad::add(sl, dlv));

      nn::Mat<T> vmask(m, 1);
      for (int i = 0; i < m; ++i) {
        vmask(i, 0) = buf.valid[buf.row(envs[i], t)] ? T(1) : T(0);
        loss_count += buf.valid[buf.row(envs[i], t)] ? 1 : 0;
      }
      ad::Var<T> gx = tape.leaf(rows_of(buf.gt_x, t));
      ad::Var<T> gq = tape.leaf(rows_of(buf.gt_q, t));
      ad::Var<T> gv = tape.leaf(rows_of(buf.gt_v, t));
      ad::Var<T> gw = tape.leaf(rows_of(buf.gt_w, t));

      ad::Var<T> lrow = ad::scale(ad::norm_rows_ad(ad::sub(sx, gx)), T(cfg_.w_x));
      lrow = ad::add(lrow, ad::scale(ad::quat_geodesic_ad(sq, gq), T(cfg_.w_rot)));
      lrow = ad::add(lrow, ad::scale(ad::norm_rows_ad(ad::sub(sv, gv)), T(cfg_.w_v)));
      lrow = ad::add(lrow, ad::scale(ad::norm_rows_ad(ad::sub(sw, gw)), T(cfg_.w_w)));
      loss_sum = ad::add(loss_sum, ad::sum_all(ad::mul(lrow, tape.leaf(vmask))));
    }

    if (loss_count == 0) {
      grads_out->clear();
      return 0.0;
    }
    ad::Var<T> loss = ad::scale(loss_sum, T(1.0 / loss_count));
    tape.backward(loss);
    *grads_out = nn::DenseSkipNet<T>::grads(bound);
    return static_cast<double>(loss.val()(0, 0));
  }

 private:
  // one BPTT gradient step
  void train_step(const RolloutBuffer& buf, const std::vector<int>& envs,
                  EstimatorMetrics* metrics) {
    std::vector<MatT> grads;
    bptt_loss_and_grads(buf, envs, &grads);
    if (grads.empty()) return;
    double norm = nn::grad_norm(grads);
    if (norm > cfg_.grad_norm_report) {
      nn::scale_grads(grads, cfg_.grad_norm_clip_to / norm);
      ++metrics->grad_clip_events;
    }
    if (!opt_.step(net_.params(), grads, cfg_.lr)) ++metrics->rejected_steps;
  }

  EstimatorConfig cfg_;
  int obs_dim_ = 0;
  int n_dof_ = 0;
  nn::DenseSkipNet<T> net_;
  nn::Adam<T> opt_;
};

}  // namespace ecrl
