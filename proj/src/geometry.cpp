#include "aled/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace aled {

bool Mat3::is_rotation(double eps) const {
  const Mat3 rtr = transposed() * (*this);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double expect = i == j ? 1.0 : 0.0;
      if (std::abs(rtr(i, j) - expect) > eps) return false;
    }
  return std::abs(det() - 1.0) <= eps;
}

Quat Quat::from_matrix(const Mat3& r) {
  Quat q;
  const double tr = r(0, 0) + r(1, 1) + r(2, 2);
  if (tr > 0.0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    q.w = 0.25 * s;
    q.x = (r(2, 1) - r(1, 2)) / s;
    q.y = (r(0, 2) - r(2, 0)) / s;
    q.z = (r(1, 0) - r(0, 1)) / s;
  } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
    q.w = (r(2, 1) - r(1, 2)) / s;
    q.x = 0.25 * s;
    q.y = (r(0, 1) + r(1, 0)) / s;
    q.z = (r(0, 2) + r(2, 0)) / s;
  } else if (r(1, 1) > r(2, 2)) {
    const double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
    q.w = (r(0, 2) - r(2, 0)) / s;
    q.x = (r(0, 1) + r(1, 0)) / s;
    q.y = 0.25 * s;
    q.z = (r(1, 2) + r(2, 1)) / s;
  } else {
    const double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
    q.w = (r(1, 0) - r(0, 1)) / s;
    q.x = (r(0, 2) + r(2, 0)) / s;
    q.y = (r(1, 2) + r(2, 1)) / s;
    q.z = 0.25 * s;
  }
  return q.normalized();
}

Mat3 Quat::to_matrix() const {
  Mat3 r;
  const double ww = w * w, xx = x * x, yy = y * y, zz = z * z;
  r(0, 0) = ww + xx - yy - zz;
  r(0, 1) = 2.0 * (x * y - w * z);
  r(0, 2) = 2.0 * (x * z + w * y);
  r(1, 0) = 2.0 * (x * y + w * z);
  r(1, 1) = ww - xx + yy - zz;
  r(1, 2) = 2.0 * (y * z - w * x);
  r(2, 0) = 2.0 * (x * z - w * y);
  r(2, 1) = 2.0 * (y * z + w * x);
  r(2, 2) = ww - xx - yy + zz;
  return r;
}

Quat Quat::normalized() const {
  const double n = std::sqrt(w * w + x * x + y * y + z * z);
  if (n == 0.0) return Quat{};
  return {w / n, x / n, y / n, z / n};
}

Quat slerp(const Quat& a, const Quat& b, double s) {
  Quat q = b;
  double d = a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
  if (d < 0.0) {
    d = -d;
    q = {-b.w, -b.x, -b.y, -b.z};
  }
  if (d > 0.9995) {
    // Nearly parallel: lerp and renormalize.
    return Quat{a.w + s * (q.w - a.w), a.x + s * (q.x - a.x), a.y + s * (q.y - a.y),
                a.z + s * (q.z - a.z)}
        .normalized();
  }
  const double theta = std::acos(std::clamp(d, -1.0, 1.0));
  const double sa = std::sin((1.0 - s) * theta) / std::sin(theta);
  const double sb = std::sin(s * theta) / std::sin(theta);
  return Quat{sa * a.w + sb * q.w, sa * a.x + sb * q.x, sa * a.y + sb * q.y,
              sa * a.z + sb * q.z}
      .normalized();
}

Mat3 rotation_rpy(double roll, double pitch, double yaw) {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  Mat3 rx, ry, rz;
  rx.m = {1, 0, 0, 0, cr, -sr, 0, sr, cr};
  ry.m = {cp, 0, sp, 0, 1, 0, -sp, 0, cp};
  rz.m = {cy, -sy, 0, sy, cy, 0, 0, 0, 1};
  return rz * ry * rx;
}

}  // namespace aled
