#pragma once

#include "ecrl/ad.hpp"

// Batched rotation arithmetic on the autodiff tape. Quaternions are rows of
// an [N x 4] node in (w, x, y, z) order; tangents are [N x 3] rows. These
// mirror the scalar routines in manifold.hpp and a unit test pins the two
// implementations together.
namespace ecrl::ad {

template <class T>
Var<T> quat_normalize_ad(Var<T> q) {
  Var<T> n2 = rowsum(square(q));
  Var<T> n = sqrt_(add_scalar(n2, T(1e-30)));
  return div_cols(q, n);
}

template <class T>
Var<T> quat_compose_ad(Var<T> a, Var<T> b) {
  Var<T> aw = cols(a, 0, 1), ax = cols(a, 1, 1), ay = cols(a, 2, 1), az = cols(a, 3, 1);
  Var<T> bw = cols(b, 0, 1), bx = cols(b, 1, 1), by = cols(b, 2, 1), bz = cols(b, 3, 1);
  Var<T> w = sub(sub(mul(aw, bw), mul(ax, bx)), add(mul(ay, by), mul(az, bz)));
  Var<T> x = add(add(mul(aw, bx), mul(ax, bw)), sub(mul(ay, bz), mul(az, by)));
  Var<T> y = add(sub(mul(aw, by), mul(ax, bz)), add(mul(ay, bw), mul(az, bx)));
  Var<T> z = add(add(mul(aw, bz), mul(ax, by)), sub(mul(az, bw), mul(ay, bx)));
  return hstack<T>({w, x, y, z});
}

// exp map of [N x 3] tangents; small angles take a series branch so the
// gradient stays finite at zero.
template <class T>
Var<T> quat_exp_ad(Var<T> t3) {
  Tape<T>& tp = *t3.tape;
  Var<T> s2 = rowsum(square(t3));  // theta^2
  const T eps2 = T(1e-12);
  Mat<T> mask = s2.val().unaryExpr([eps2](T v) { return v < eps2 ? T(1) : T(0); });
  Var<T> ones = tp.leaf(Mat<T>::Ones(s2.rows(), 1));
  Var<T> s2_safe = select(mask, ones, s2);
  Var<T> theta = sqrt_(s2_safe);
  Var<T> half = scale(theta, T(0.5));
  // sin(theta/2)/theta and cos(theta/2), with 2nd-order series near zero
  Var<T> k_exact = div(sin_(half), theta);
  Var<T> k_series = add_scalar(scale(s2, T(-1.0 / 48.0)), T(0.5));
  Var<T> k = select(mask, k_series, k_exact);
  Var<T> w_exact = cos_(half);
  Var<T> w_series = add_scalar(scale(s2, T(-0.125)), T(1));
  Var<T> w = select(mask, w_series, w_exact);
  Var<T> xyz = mul_cols(t3, k);
  return quat_normalize_ad(hstack<T>({w, xyz}));
}

// geodesic angle between row pairs, in [0, pi]; dot is clamped away from 1
// so acos' stays bounded.
template <class T>
Var<T> quat_geodesic_ad(Var<T> a, Var<T> b) {
  Var<T> d = abs_(dotrows(a, b));
  Var<T> dc = clamp(d, T(-1), T(1) - T(1e-7));
  return scale(acos_(dc), T(2));
}

// first two rotation-matrix columns of each quaternion row -> [N x 6]
template <class T>
Var<T> quat_to_6d_ad(Var<T> q) {
  Var<T> w = cols(q, 0, 1), x = cols(q, 1, 1), y = cols(q, 2, 1), z = cols(q, 3, 1);
  auto two = [&](Var<T> v) { return scale(v, T(2)); };
  Var<T> m00 = add_scalar(two(neg(add(mul(y, y), mul(z, z)))), T(1));
  Var<T> m10 = two(add(mul(x, y), mul(w, z)));
  Var<T> m20 = two(sub(mul(x, z), mul(w, y)));
  Var<T> m01 = two(sub(mul(x, y), mul(w, z)));
  Var<T> m11 = add_scalar(two(neg(add(mul(x, x), mul(z, z)))), T(1));
  Var<T> m21 = two(add(mul(y, z), mul(w, x)));
  return hstack<T>({m00, m10, m20, m01, m11, m21});
}

// row-wise L2 norm with a tiny guard so the gradient is finite at zero
template <class T>
Var<T> norm_rows_ad(Var<T> x) {
  return sqrt_(add_scalar(rowsum(square(x)), T(1e-12)));
}

}  // namespace ecrl::ad
