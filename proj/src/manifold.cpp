#include "ecrl/manifold.hpp"

#include <algorithm>
#include <cmath>

namespace ecrl {

namespace {
constexpr double kSmallAngle = 1e-6;
}

Quat quat_normalize(const Quat& q) {
  double n = q.norm();
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Quat quat_canonicalize(const Quat& q) {
  Quat r = quat_normalize(q);
  double lead = r.w;
  if (lead == 0.0) lead = r.x;
  if (lead == 0.0) lead = r.y;
  if (lead == 0.0) lead = r.z;
  if (lead < 0.0) return {-r.w, -r.x, -r.y, -r.z};
  return r;
}

Quat quat_compose(const Quat& a, const Quat& b) {
  Quat r{a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
         a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
         a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
         a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
  return quat_canonicalize(r);
}

Quat quat_inverse(const Quat& q) { return quat_canonicalize(q.conjugate()); }

Quat quat_exp(const Tangent3& t) {
  double theta = t.norm();
  double half = 0.5 * theta;
  double w, k;
  if (theta < kSmallAngle) {
    // sin(theta/2)/theta = 1/2 - theta^2/48 + O(theta^4)
    w = 1.0 - half * half * 0.5;
    k = 0.5 - theta * theta / 48.0;
  } else {
    w = std::cos(half);
    k = std::sin(half) / theta;
  }
  return quat_canonicalize({w, k * t.x(), k * t.y(), k * t.z()});
}

Tangent3 quat_log(const Quat& q_in) {
  Quat q = quat_canonicalize(q_in);
  double vn = std::sqrt(q.x * q.x + q.y * q.y + q.z * q.z);
  double w = std::min(1.0, std::max(-1.0, q.w));
  double k;
  if (vn < kSmallAngle) {
    // theta/sin(theta/2) ~ 2 + theta^2/12 with theta ~ 2*vn/w
    k = 2.0 / w;
  } else {
    double half = std::atan2(vn, w);
    k = 2.0 * half / vn;
  }
  return Tangent3(k * q.x, k * q.y, k * q.z);
}

double geodesic_distance(const Quat& a, const Quat& b) {
  double d = std::abs(a.dot(b));
  d = std::min(1.0, d);
  return 2.0 * std::acos(d);
}

Mat3 quat_to_matrix(const Quat& q) {
  Mat3 m;
  double w = q.w, x = q.x, y = q.y, z = q.z;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

Quat quat_from_matrix(const Mat3& m) {
  Eigen::Quaterniond q(m);
  return quat_canonicalize({q.w(), q.x(), q.y(), q.z()});
}

Vec6 rotation_to_6d(const Quat& q) {
  Mat3 m = quat_to_matrix(q);
  Vec6 out;
  out << m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1);
  return out;
}

Quat relative_rotation(const Quat& goal, const Quat& current) {
  return quat_compose(quat_inverse(goal), current);
}

Vec3 quat_rotate(const Quat& q, const Vec3& v) { return quat_to_matrix(q) * v; }

namespace {

// Components of the 24 octahedral quaternions are all in this set; snapping
// removes closure round-off so lexicographic ordering is exact.
double snap_component(double c) {
  static const double table[] = {0.0, 0.5, std::sqrt(0.5), 1.0};
  double best = c;
  double best_err = 1e9;
  for (double t : table) {
    for (double s : {t, -t}) {
      double err = std::abs(c - s);
      if (err < best_err) {
        best_err = err;
        best = s;
      }
    }
  }
  return best;
}

std::vector<Quat> build_octahedral() {
  const std::vector<Quat> gens = {
      quat_exp(Tangent3(M_PI / 2, 0, 0)),
      quat_exp(Tangent3(0, M_PI / 2, 0)),
      quat_exp(Tangent3(0, 0, M_PI / 2)),
  };
  std::vector<Quat> elems = {Quat{}};
  auto contains = [&](const Quat& q) {
    for (const Quat& e : elems)
      if (geodesic_distance(e, q) < 1e-6) return true;
    return false;
  };
  // breadth-first closure
  size_t head = 0;
  while (head < elems.size()) {
    Quat base = elems[head++];
    for (const Quat& g : gens) {
      Quat q = quat_compose(g, base);
      if (!contains(q)) elems.push_back(q);
    }
  }
  for (Quat& q : elems) {
    q = quat_canonicalize(q);
    q.w = snap_component(q.w);
    q.x = snap_component(q.x);
    q.y = snap_component(q.y);
    q.z = snap_component(q.z);
    q = quat_canonicalize(q);
  }
  std::sort(elems.begin(), elems.end(), [](const Quat& a, const Quat& b) {
    if (a.w != b.w) return a.w < b.w;
    if (a.x != b.x) return a.x < b.x;
    if (a.y != b.y) return a.y < b.y;
    return a.z < b.z;
  });
  return elems;
}

}  // namespace

const std::vector<Quat>& octahedral_group() {
  static const std::vector<Quat> group = build_octahedral();
  return group;
}

int octahedral_nearest(const Quat& q) {
  const auto& group = octahedral_group();
  int best = 0;
  double best_d = geodesic_distance(group[0], q);
  for (int i = 1; i < static_cast<int>(group.size()); ++i) {
    double d = geodesic_distance(group[i], q);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

Estimate boxplus(const Estimate& s, const StateIncrement& d) {
  Estimate out(static_cast<int>(s.l.size()));
  out.x = s.x + d.dx;
  out.R = quat_compose(quat_exp(d.dr), s.R);
  out.v = s.v + d.dv;
  out.w = s.w + d.dw;
  out.l = s.l + d.dl;
  return out;
}

}  // namespace ecrl
