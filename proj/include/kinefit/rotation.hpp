#pragma once

#include <algorithm>
#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace kinefit {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline Mat3 skew(const Vec3& v)
{
    Mat3 m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
        -v.y(), v.x(), 0.0;
    return m;
}

namespace detail {

// Coefficients of the Rodrigues series, switched to Taylor expansions near
// zero where the closed forms lose precision.
struct RodriguesCoefficients {
    double a;  // sin(t)/t
    double b;  // (1-cos(t))/t^2
    double c;  // (t-sin(t))/t^3
};

inline RodriguesCoefficients rodrigues(double theta)
{
    const double t2 = theta * theta;
    if (theta < 1e-4) {
        return {1.0 - t2 / 6.0, 0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0};
    }
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    return {s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta)};
}

}  // namespace detail

/// Rotation matrix of an exponential-map (axis * angle) vector.
inline Mat3 expMap(const Vec3& v)
{
    const auto k = detail::rodrigues(v.norm());
    const Mat3 w = skew(v);
    return Mat3::Identity() + k.a * w + k.b * w * w;
}

/// Inverse of expMap with the angle in [0, pi].
inline Vec3 logMap(const Mat3& r)
{
    const Eigen::AngleAxisd aa(r);
    return aa.angle() * aa.axis();
}

/// Left Jacobian of SO(3): d(exp(v) x)/dv = -[exp(v) x]_x * leftJacobian(v).
inline Mat3 leftJacobian(const Vec3& v)
{
    const auto k = detail::rodrigues(v.norm());
    const Mat3 w = skew(v);
    return Mat3::Identity() + k.b * w + k.c * w * w;
}

/// Angle of the relative rotation between two exponential-map vectors.
inline double geodesicAngle(const Vec3& a, const Vec3& b)
{
    const Mat3 rel = expMap(a).transpose() * expMap(b);
    const double cosine = std::clamp((rel.trace() - 1.0) * 0.5, -1.0, 1.0);
    return std::acos(cosine);
}

inline bool isRotation(const Mat3& r, double tol = 1e-9)
{
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
           std::abs(r.determinant() - 1.0) <= tol;
}

}  // namespace kinefit
