#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ecrl/ad.hpp"
#include "ecrl/rng.hpp"

namespace ecrl::nn {

template <class T>
using Mat = ad::Mat<T>;

inline constexpr double kLog2Pi = 1.8378770664093453;

// Orthogonal init (rows x cols), gain-scaled. Falls back to the transpose
// when rows < cols so the long side is orthonormal.
template <class T>
Mat<T> orthogonal(Eigen::Index rows, Eigen::Index cols, double gain, Rng& rng) {
  bool flip = rows < cols;
  Eigen::Index r = flip ? cols : rows, c = flip ? rows : cols;
  Eigen::MatrixXd a(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(r, c);
  Eigen::MatrixXd rdiag = qr.matrixQR().topRows(c).diagonal();
  for (Eigen::Index j = 0; j < c; ++j)
    if (rdiag(j) < 0) q.col(j) = -q.col(j);
  Eigen::MatrixXd out = flip ? q.transpose() : q;
  return (out * gain).cast<T>();
}

// Feedforward net where every hidden layer past the first consumes the
// previous activation concatenated with the raw input. ELU activations,
// linear output head.
template <class T>
class DenseSkipNet {
 public:
  DenseSkipNet() = default;

  DenseSkipNet(int input_dim, std::vector<int> hidden, int output_dim,
               double out_gain, Rng& rng)
      : input_dim_(input_dim), output_dim_(output_dim), hidden_(std::move(hidden)) {
    int in = input_dim_;
    for (size_t i = 0; i < hidden_.size(); ++i) {
      int width = hidden_[i];
      weights_.push_back(orthogonal<T>(in, width, std::sqrt(2.0), rng));
      biases_.push_back(Mat<T>::Zero(1, width));
      in = width + input_dim_;
    }
    int head_in = hidden_.empty() ? input_dim_ : hidden_.back();
    weights_.push_back(orthogonal<T>(head_in, output_dim_, out_gain, rng));
    biases_.push_back(Mat<T>::Zero(1, output_dim_));
  }

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  const std::vector<int>& hidden() const { return hidden_; }

  // inference path, no tape
  Mat<T> forward(const Mat<T>& x) const {
    if (x.cols() != input_dim_)
      throw std::invalid_argument("DenseSkipNet: input dim " +
                                  std::to_string(x.cols()) + " != " +
                                  std::to_string(input_dim_));
    Mat<T> h;
    for (size_t i = 0; i < hidden_.size(); ++i) {
      Mat<T> in;
      if (i == 0) {
        in = x;
      } else {
        in.resize(x.rows(), h.cols() + x.cols());
        in << h, x;
      }
      h = in * weights_[i];
      h.rowwise() += biases_[i].row(0);
      h = h.unaryExpr([](T v) { return v > T(0) ? v : std::expm1(v); });
    }
    const Mat<T>& head_in = hidden_.empty() ? x : h;
    Mat<T> out = head_in * weights_.back();
    out.rowwise() += biases_.back().row(0);
    return out;
  }

  // One bound view per tape; reuse it across BPTT steps so all steps share
  // the same parameter leaves.
  struct Bound {
    const DenseSkipNet* net;
    std::vector<ad::Var<T>> wvars, bvars;

    ad::Var<T> forward(ad::Var<T> x) const {
      ad::Var<T> h;
      for (size_t i = 0; i < net->hidden_.size(); ++i) {
        ad::Var<T> in = (i == 0) ? x : ad::hstack<T>({h, x});
        h = ad::elu(ad::add_rowvec(ad::matmul(in, wvars[i]), bvars[i]));
      }
      ad::Var<T> head_in = net->hidden_.empty() ? x : h;
      return ad::add_rowvec(ad::matmul(head_in, wvars.back()), bvars.back());
    }
  };

  Bound bind(ad::Tape<T>& tape) const {
    Bound b;
    b.net = this;
    for (const auto& w : weights_) b.wvars.push_back(tape.leaf(w));
    for (const auto& bias : biases_) b.bvars.push_back(tape.leaf(bias));
    return b;
  }

  std::vector<Mat<T>*> params() {
    std::vector<Mat<T>*> p;
    for (auto& w : weights_) p.push_back(&w);
    for (auto& b : biases_) p.push_back(&b);
    return p;
  }

  // grads in the same order as params(), read back from a bound tape
  static std::vector<Mat<T>> grads(const Bound& b) {
    std::vector<Mat<T>> g;
    for (const auto& v : b.wvars) g.push_back(v.grad());
    for (const auto& v : b.bvars) g.push_back(v.grad());
    return g;
  }

  std::vector<std::pair<std::string, Mat<T>*>> named_params(const std::string& prefix) {
    std::vector<std::pair<std::string, Mat<T>*>> out;
    for (size_t i = 0; i < weights_.size(); ++i) {
      out.emplace_back(prefix + ".w" + std::to_string(i), &weights_[i]);
      out.emplace_back(prefix + ".b" + std::to_string(i), &biases_[i]);
    }
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for (const auto& w : weights_) n += w.size();
    for (const auto& b : biases_) n += b.size();
    return n;
  }

 private:
  int input_dim_ = 0;
  int output_dim_ = 0;
  std::vector<int> hidden_;
  std::vector<Mat<T>> weights_;  // [in x out]
  std::vector<Mat<T>> biases_;   // [1 x out]
};

// Diagonal Gaussian with state-independent, clamped log-std parameters.
template <class T>
class GaussianHead {
 public:
  GaussianHead() = default;
  GaussianHead(int dim, double init_log_std, double log_std_min, double log_std_max)
      : log_std_(Mat<T>::Constant(1, dim, T(init_log_std))),
        lo_(T(log_std_min)), hi_(T(log_std_max)) {}

  int dim() const { return static_cast<int>(log_std_.cols()); }

  Mat<T> clamped_log_std() const {
    return log_std_.array().max(lo_).min(hi_);
  }

  // one sample per row of mean
  Mat<T> sample(const Mat<T>& mean, Rng& rng) const {
    Mat<T> ls = clamped_log_std();
    Mat<T> out(mean.rows(), mean.cols());
    for (Eigen::Index i = 0; i < mean.rows(); ++i)
      for (Eigen::Index j = 0; j < mean.cols(); ++j)
        out(i, j) = mean(i, j) + std::exp(ls(0, j)) * T(rng.normal());
    return out;
  }

  // diagonal-Gaussian log density, one value per row
  Mat<T> logprob(const Mat<T>& mean, const Mat<T>& action) const {
    Mat<T> ls = clamped_log_std();
    Mat<T> out(mean.rows(), 1);
    for (Eigen::Index i = 0; i < mean.rows(); ++i) {
      T acc = T(0);
      for (Eigen::Index j = 0; j < mean.cols(); ++j) {
        T s = std::exp(ls(0, j));
        T z = (action(i, j) - mean(i, j)) / s;
        acc += T(-0.5) * z * z - ls(0, j) - T(0.5) * T(kLog2Pi);
      }
      out(i, 0) = acc;
    }
    return out;
  }

  T entropy() const {
    Mat<T> ls = clamped_log_std();
    T acc = T(0);
    for (Eigen::Index j = 0; j < ls.cols(); ++j)
      acc += T(0.5) + T(0.5) * T(kLog2Pi) + ls(0, j);
    return acc;
  }

  // taped versions for the PPO loss; log-std leaf is bound once per tape
  struct Bound {
    const GaussianHead* head;
    ad::Var<T> log_std_var;

    ad::Var<T> clamped() const {
      return ad::clamp(log_std_var, head->lo_, head->hi_);
    }

    // mean [N x d], action [N x d] (constant leaf) -> [N x 1]
    ad::Var<T> logprob(ad::Var<T> mean, ad::Var<T> action) const {
      ad::Tape<T>& tp = *mean.tape;
      ad::Var<T> ls = clamped();
      ad::Var<T> ls_b = ad::add_rowvec(tp.leaf(Mat<T>::Zero(mean.rows(), mean.cols())), ls);
      ad::Var<T> inv_s = ad::exp_(ad::neg(ls_b));
      ad::Var<T> z = ad::mul(ad::sub(action, mean), inv_s);
      ad::Var<T> term = ad::add_scalar(
          ad::add(ad::scale(ad::square(z), T(0.5)), ls_b), T(0.5) * T(kLog2Pi));
      return ad::neg(ad::rowsum(term));
    }

    ad::Var<T> entropy() const {
      ad::Var<T> ls = clamped();
      return ad::add_scalar(ad::sum_all(ls),
                            T(ls.cols()) * (T(0.5) + T(0.5) * T(kLog2Pi)));
    }
  };

  Bound bind(ad::Tape<T>& tape) const {
    return Bound{this, tape.leaf(log_std_)};
  }

  std::vector<Mat<T>*> params() { return {&log_std_}; }

  std::vector<std::pair<std::string, Mat<T>*>> named_params(const std::string& prefix) {
    return {{prefix + ".log_std", &log_std_}};
  }

 private:
  Mat<T> log_std_;
  T lo_ = T(-5), hi_ = T(1);
};

// Adaptive-moment optimizer over a fixed list of parameter matrices.
template <class T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const std::vector<Mat<T>*>& params, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : beta1_(T(beta1)), beta2_(T(beta2)), eps_(T(eps)) {
    for (auto* p : params) {
      m_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      v_.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    }
  }

  // Returns false (and applies nothing) if any gradient is non-finite.
  bool step(const std::vector<Mat<T>*>& params, const std::vector<Mat<T>>& grads,
            double lr) {
    assert(params.size() == m_.size() && grads.size() == m_.size());
    for (const auto& g : grads)
      if (!g.allFinite()) return false;
    ++t_;
    T bc1 = T(1) - std::pow(beta1_, T(t_));
    T bc2 = T(1) - std::pow(beta2_, T(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      m_[i] = beta1_ * m_[i] + (T(1) - beta1_) * grads[i];
      v_[i] = beta2_ * v_[i].array() + (T(1) - beta2_) * grads[i].array().square();
      auto mhat = m_[i].array() / bc1;
      auto vhat = v_[i].array() / bc2;
      params[i]->array() -= T(lr) * mhat / (vhat.sqrt() + eps_);
    }
    return true;
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  std::vector<std::pair<std::string, Mat<T>*>> named_state(const std::string& prefix) {
    std::vector<std::pair<std::string, Mat<T>*>> out;
    for (size_t i = 0; i < m_.size(); ++i) {
      out.emplace_back(prefix + ".m" + std::to_string(i), &m_[i]);
      out.emplace_back(prefix + ".v" + std::to_string(i), &v_[i]);
    }
    return out;
  }

 private:
  std::vector<Mat<T>> m_, v_;
  T beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8);
  int64_t t_ = 0;
};

// global L2 norm across a gradient list
template <class T>
double grad_norm(const std::vector<Mat<T>>& grads) {
  double acc = 0;
  for (const auto& g : grads) acc += static_cast<double>(g.squaredNorm());
  return std::sqrt(acc);
}

template <class T>
void scale_grads(std::vector<Mat<T>>& grads, double s) {
  for (auto& g : grads) g *= T(s);
}

}  // namespace ecrl::nn
