#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstdint>

namespace fsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Half = Eigen::half;

/// Quaternion stored as (w, x, y, z); not necessarily normalized.
using Quat = Eigen::Vector4d;

inline Quat identity_quat() { return Quat(1.0, 0.0, 0.0, 0.0); }

/// Rotation matrix of the normalized quaternion. A zero quaternion maps to I.
Mat3 quat_to_matrix(const Quat &q);

/// Quaternion (w >= 0) of a proper rotation matrix.
Quat matrix_to_quat(const Mat3 &r);

/// Hamilton product a*b (apply b first, then a).
Quat quat_multiply(const Quat &a, const Quat &b);

Quat quat_normalized(const Quat &q);

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double inverse_sigmoid(double y) { return std::log(y / (1.0 - y)); }

inline float half_to_float(Half h) { return static_cast<float>(h); }
inline Half float_to_half(float f) { return Half(f); }
inline std::uint16_t half_bits(Half h) { return Eigen::numext::bit_cast<std::uint16_t>(h); }
inline Half half_from_bits(std::uint16_t b) { return Eigen::numext::bit_cast<Half>(b); }

} // namespace fsplat
