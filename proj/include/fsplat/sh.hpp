#pragma once

#include "fsplat/types.hpp"

#include <array>
#include <span>

namespace fsplat::sh {

constexpr int kMaxCoeffs = 16;

/// Real SH basis up to degree 3 at unit direction `dir`, in the usual Gaussian-splatting order.
std::array<double, kMaxCoeffs> basis(const Vec3 &dir, int degree);

/// d basis / d dir for each coefficient, treating the components of `dir` as independent.
std::array<Vec3, kMaxCoeffs> basis_gradient(const Vec3 &dir, int degree);

/// RGB = sum_k basis_k * coeffs[k] + 0.5 (no clamping). `coeffs` holds (degree+1)^2 RGB triples.
Vec3 evaluate(std::span<const double> coeffs, const Vec3 &dir, int degree);

/// SH DC coefficient that produces `rgb` regardless of view direction.
Vec3 rgb_to_dc(const Vec3 &rgb);

} // namespace fsplat::sh
