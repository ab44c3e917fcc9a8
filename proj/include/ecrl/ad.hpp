#pragma once

#include <Eigen/Dense>
#include <cassert>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

// Reverse-mode autodiff on batched matrices. Nodes hold (rows x cols)
// values; one tape records one forward computation (a single pass or a full
// BPTT unroll) and backward() accumulates gradients into every node.
// Inference paths do not use the tape; nets provide plain Eigen forward
// code for those and a unit test pins the two paths together.
namespace ecrl::ad {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int idx = -1;

  const Mat<T>& val() const { return tape->value(idx); }
  const Mat<T>& grad() const { return tape->grad(idx); }
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
};

template <class T>
class Tape {
 public:
  using BackFn = std::function<void(Tape<T>&, int self)>;

  Var<T> leaf(Mat<T> v) {
    values_.push_back(std::move(v));
    backs_.emplace_back();
    return Var<T>{this, static_cast<int>(values_.size()) - 1};
  }

  template <class F>
  Var<T> op(Mat<T> v, F&& bw) {
    Var<T> out = leaf(std::move(v));
    backs_[out.idx] = BackFn(std::forward<F>(bw));
    return out;
  }

  const Mat<T>& value(int i) const { return values_[i]; }
  Mat<T>& grad(int i) { return grads_[i]; }

  // Seeds d(root)/d(root) = 1 and propagates to every node. root must be 1x1.
  void backward(const Var<T>& root) {
    assert(root.tape == this);
    assert(values_[root.idx].size() == 1);
    grads_.resize(values_.size());
    for (size_t i = 0; i < values_.size(); ++i)
      grads_[i] = Mat<T>::Zero(values_[i].rows(), values_[i].cols());
    grads_[root.idx](0, 0) = T(1);
    for (int i = root.idx; i >= 0; --i)
      if (backs_[i]) backs_[i](*this, i);
  }

  void clear() {
    values_.clear();
    backs_.clear();
    grads_.clear();
  }

  size_t size() const { return values_.size(); }

 private:
  std::vector<Mat<T>> values_;
  std::vector<BackFn> backs_;
  std::vector<Mat<T>> grads_;
};

// ---- core ops ----

// a [N x k] * w [k x m] -> [N x m]
template <class T>
Var<T> matmul(Var<T> a, Var<T> w) {
  assert(a.tape == w.tape);
  Tape<T>& tp = *a.tape;
  int ai = a.idx, wi = w.idx;
  return tp.op(Mat<T>(a.val() * w.val()), [ai, wi](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    t.grad(ai).noalias() += g * t.value(wi).transpose();
    t.grad(wi).noalias() += t.value(ai).transpose() * g;
  });
}

// x [N x m] + b [1 x m], broadcast over rows
template <class T>
Var<T> add_rowvec(Var<T> x, Var<T> b) {
  assert(x.tape == b.tape && b.val().rows() == 1 && x.cols() == b.cols());
  Tape<T>& tp = *x.tape;
  Mat<T> v = x.val();
  v.rowwise() += b.val().row(0);
  int xi = x.idx, bi = b.idx;
  return tp.op(std::move(v), [xi, bi](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    t.grad(xi) += g;
    t.grad(bi) += g.colwise().sum();
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape && a.rows() == b.rows() && a.cols() == b.cols());
  Tape<T>& tp = *a.tape;
  int ai = a.idx, bi = b.idx;
  return tp.op(Mat<T>(a.val() + b.val()), [ai, bi](Tape<T>& t, int self) {
    t.grad(ai) += t.grad(self);
    t.grad(bi) += t.grad(self);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  Tape<T>& tp = *a.tape;
  int ai = a.idx, bi = b.idx;
  return tp.op(Mat<T>(a.val() - b.val()), [ai, bi](Tape<T>& t, int self) {
    t.grad(ai) += t.grad(self);
    t.grad(bi) -= t.grad(self);
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  Tape<T>& tp = *a.tape;
  int ai = a.idx, bi = b.idx;
  return tp.op(Mat<T>(a.val().cwiseProduct(b.val())), [ai, bi](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    t.grad(ai) += g.cwiseProduct(t.value(bi));
    t.grad(bi) += g.cwiseProduct(t.value(ai));
  });
}

template <class T>
Var<T> div(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  Tape<T>& tp = *a.tape;
  int ai = a.idx, bi = b.idx;
  return tp.op(Mat<T>(a.val().cwiseQuotient(b.val())), [ai, bi](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    const Mat<T>& bv = t.value(bi);
    t.grad(ai) += g.cwiseQuotient(bv);
    t.grad(bi) -= g.cwiseProduct(t.value(self)).cwiseQuotient(bv);
  });
}

template <class T>
Var<T> scale(Var<T> a, T c) {
  Tape<T>& tp = *a.tape;
  int ai = a.idx;
  return tp.op(Mat<T>(a.val() * c), [ai, c](Tape<T>& t, int self) {
    t.grad(ai) += t.grad(self) * c;
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T c) {
  Tape<T>& tp = *a.tape;
  int ai = a.idx;
  return tp.op(Mat<T>(a.val().array() + c), [ai](Tape<T>& t, int self) {
    t.grad(ai) += t.grad(self);
  });
}

template <class T>
Var<T> neg(Var<T> a) {
  return scale(a, T(-1));
}

// ---- elementwise nonlinearities ----

template <class T>
Var<T> elu(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().unaryExpr([](T x) { return x > T(0) ? x : std::expm1(x); });
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    const Mat<T>& y = t.value(self);
    Mat<T> d = y.unaryExpr([](T yv) { return yv > T(0) ? T(1) : yv + T(1); });
    t.grad(ai) += t.grad(self).cwiseProduct(d);
  });
}

template <class T>
Var<T> tanh_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().array().tanh();
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    const Mat<T>& y = t.value(self);
    t.grad(ai).array() += t.grad(self).array() * (T(1) - y.array().square());
  });
}

template <class T>
Var<T> exp_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().array().exp();
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    t.grad(ai).array() += t.grad(self).array() * t.value(self).array();
  });
}

// caller guarantees strictly positive input
template <class T>
Var<T> log_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().array().log();
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    t.grad(ai).array() += t.grad(self).array() / t.value(ai).array();
  });
}

// caller guarantees nonnegative input
template <class T>
Var<T> sqrt_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().array().sqrt();
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    t.grad(ai).array() +=
        t.grad(self).array() * (T(0.5) / t.value(self).array());
  });
}

template <class T>
Var<T> sin_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().array().sin();
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    t.grad(ai).array() += t.grad(self).array() * t.value(ai).array().cos();
  });
}

template <class T>
Var<T> cos_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().array().cos();
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    t.grad(ai).array() -= t.grad(self).array() * t.value(ai).array().sin();
  });
}

// caller guarantees |input| < 1 (clamp first)
template <class T>
Var<T> acos_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().array().acos();
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    auto x = t.value(ai).array();
    t.grad(ai).array() -= t.grad(self).array() / (T(1) - x.square()).sqrt();
  });
}

template <class T>
Var<T> square(Var<T> a) {
  return mul(a, a);
}

template <class T>
Var<T> abs_(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().array().abs();
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    auto s = t.value(ai).unaryExpr([](T x) { return x >= T(0) ? T(1) : T(-1); });
    t.grad(ai) += t.grad(self).cwiseProduct(s);
  });
}

// gradient is gated to the interior of [lo, hi]
template <class T>
Var<T> clamp(Var<T> a, T lo, T hi) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().array().max(lo).min(hi);
  int ai = a.idx;
  return tp.op(std::move(v), [ai, lo, hi](Tape<T>& t, int self) {
    auto inside = t.value(ai).unaryExpr(
        [lo, hi](T x) { return (x > lo && x < hi) ? T(1) : T(0); });
    t.grad(ai) += t.grad(self).cwiseProduct(inside);
  });
}

// numerically stable log(1 + exp(x))
template <class T>
Var<T> softplus(Var<T> a) {
  Tape<T>& tp = *a.tape;
  Mat<T> v = a.val().unaryExpr([](T x) {
    return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  int ai = a.idx;
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    auto sig = t.value(ai).unaryExpr([](T x) { return T(1) / (T(1) + std::exp(-x)); });
    t.grad(ai) += t.grad(self).cwiseProduct(sig);
  });
}

// elementwise min/max of two vars; ties route gradient to a
template <class T>
Var<T> minimum(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  Tape<T>& tp = *a.tape;
  int ai = a.idx, bi = b.idx;
  return tp.op(Mat<T>(a.val().cwiseMin(b.val())), [ai, bi](Tape<T>& t, int self) {
    const Mat<T>& av = t.value(ai);
    const Mat<T>& bv = t.value(bi);
    const Mat<T>& g = t.grad(self);
    Mat<T> take_a = (av.array() <= bv.array()).template cast<T>();
    t.grad(ai) += g.cwiseProduct(take_a);
    t.grad(bi) += g.cwiseProduct(Mat<T>(Mat<T>::Ones(g.rows(), g.cols()) - take_a));
  });
}

template <class T>
Var<T> maximum(Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  Tape<T>& tp = *a.tape;
  int ai = a.idx, bi = b.idx;
  return tp.op(Mat<T>(a.val().cwiseMax(b.val())), [ai, bi](Tape<T>& t, int self) {
    const Mat<T>& av = t.value(ai);
    const Mat<T>& bv = t.value(bi);
    const Mat<T>& g = t.grad(self);
    Mat<T> take_a = (av.array() >= bv.array()).template cast<T>();
    t.grad(ai) += g.cwiseProduct(take_a);
    t.grad(bi) += g.cwiseProduct(Mat<T>(Mat<T>::Ones(g.rows(), g.cols()) - take_a));
  });
}

// mask is constant data (no gradient); 1 selects a, 0 selects b
template <class T>
Var<T> select(const Mat<T>& mask, Var<T> a, Var<T> b) {
  assert(a.tape == b.tape);
  Tape<T>& tp = *a.tape;
  Mat<T> v = mask.cwiseProduct(a.val()) +
             (Mat<T>::Ones(mask.rows(), mask.cols()) - mask).cwiseProduct(b.val());
  int ai = a.idx, bi = b.idx;
  return tp.op(std::move(v), [ai, bi, mask](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    t.grad(ai) += g.cwiseProduct(mask);
    t.grad(bi) += g.cwiseProduct(
        Mat<T>(Mat<T>::Ones(mask.rows(), mask.cols()) - mask));
  });
}

// ---- shape ops ----

template <class T>
Var<T> hstack(const std::vector<Var<T>>& parts) {
  assert(!parts.empty());
  Tape<T>& tp = *parts[0].tape;
  Eigen::Index rows = parts[0].rows(), cols = 0;
  for (const auto& p : parts) {
    assert(p.rows() == rows && p.tape == &tp);
    cols += p.cols();
  }
  Mat<T> v(rows, cols);
  std::vector<int> idxs;
  std::vector<Eigen::Index> widths;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    v.middleCols(at, p.cols()) = p.val();
    idxs.push_back(p.idx);
    widths.push_back(p.cols());
    at += p.cols();
  }
  return tp.op(std::move(v), [idxs, widths](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    Eigen::Index a = 0;
    for (size_t i = 0; i < idxs.size(); ++i) {
      t.grad(idxs[i]) += g.middleCols(a, widths[i]);
      a += widths[i];
    }
  });
}

template <class T>
Var<T> cols(Var<T> a, Eigen::Index j0, Eigen::Index n) {
  Tape<T>& tp = *a.tape;
  int ai = a.idx;
  return tp.op(Mat<T>(a.val().middleCols(j0, n)), [ai, j0, n](Tape<T>& t, int self) {
    t.grad(ai).middleCols(j0, n) += t.grad(self);
  });
}

// [N x m] -> [N x 1]
template <class T>
Var<T> rowsum(Var<T> a) {
  Tape<T>& tp = *a.tape;
  int ai = a.idx;
  return tp.op(Mat<T>(a.val().rowwise().sum()), [ai](Tape<T>& t, int self) {
    t.grad(ai).colwise() += Eigen::Vector<T, Eigen::Dynamic>(t.grad(self).col(0));
  });
}

template <class T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& tp = *a.tape;
  int ai = a.idx;
  Mat<T> v(1, 1);
  v(0, 0) = a.val().sum();
  return tp.op(std::move(v), [ai](Tape<T>& t, int self) {
    t.grad(ai).array() += t.grad(self)(0, 0);
  });
}

template <class T>
Var<T> mean_all(Var<T> a) {
  Tape<T>& tp = *a.tape;
  int ai = a.idx;
  T inv = T(1) / static_cast<T>(a.val().size());
  Mat<T> v(1, 1);
  v(0, 0) = a.val().sum() * inv;
  return tp.op(std::move(v), [ai, inv](Tape<T>& t, int self) {
    t.grad(ai).array() += t.grad(self)(0, 0) * inv;
  });
}

// x [N x m] .* c [N x 1], broadcast over columns
template <class T>
Var<T> mul_cols(Var<T> x, Var<T> c) {
  assert(x.tape == c.tape && c.val().cols() == 1 && x.rows() == c.rows());
  Tape<T>& tp = *x.tape;
  Mat<T> v = x.val().array().colwise() * c.val().col(0).array();
  int xi = x.idx, ci = c.idx;
  return tp.op(std::move(v), [xi, ci](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    t.grad(xi).array() += g.array().colwise() * t.value(ci).col(0).array();
    t.grad(ci).col(0) += g.cwiseProduct(t.value(xi)).rowwise().sum();
  });
}

// x [N x m] ./ c [N x 1]
template <class T>
Var<T> div_cols(Var<T> x, Var<T> c) {
  assert(x.tape == c.tape && c.val().cols() == 1 && x.rows() == c.rows());
  Tape<T>& tp = *x.tape;
  Mat<T> v = x.val().array().colwise() / c.val().col(0).array();
  int xi = x.idx, ci = c.idx;
  return tp.op(std::move(v), [xi, ci](Tape<T>& t, int self) {
    const Mat<T>& g = t.grad(self);
    auto cv = t.value(ci).col(0).array();
    t.grad(xi).array() += g.array().colwise() / cv;
    t.grad(ci).col(0).array() -=
        (g.cwiseProduct(t.value(self)).rowwise().sum()).array() / cv;
  });
}

// value passes through, gradient does not
template <class T>
Var<T> detach(Var<T> a) {
  return a.tape->leaf(a.val());
}

template <class T>
Var<T> dotrows(Var<T> a, Var<T> b) {
  return rowsum(mul(a, b));
}

}  // namespace ecrl::ad
