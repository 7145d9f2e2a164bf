#include "fsplat/sh.hpp"

namespace fsplat::sh {

namespace {
constexpr double C0 = 0.28209479177387814;
constexpr double C1 = 0.4886025119029199;
constexpr double C2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                         0.5462742152960396};
constexpr double C3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                         -0.4570457994644658, 1.445305721320277, -0.5900435899266435};
} // namespace

std::array<double, kMaxCoeffs> basis(const Vec3 &dir, int degree) {
    std::array<double, kMaxCoeffs> b{};
    const double x = dir[0], y = dir[1], z = dir[2];
    b[0] = C0;
    if (degree < 1) return b;
    b[1] = -C1 * y;
    b[2] = C1 * z;
    b[3] = -C1 * x;
    if (degree < 2) return b;
    const double xx = x * x, yy = y * y, zz = z * z;
    b[4] = C2[0] * x * y;
    b[5] = C2[1] * y * z;
    b[6] = C2[2] * (2.0 * zz - xx - yy);
    b[7] = C2[3] * x * z;
    b[8] = C2[4] * (xx - yy);
    if (degree < 3) return b;
    b[9] = C3[0] * y * (3.0 * xx - yy);
    b[10] = C3[1] * x * y * z;
    b[11] = C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = C3[5] * z * (xx - yy);
    b[15] = C3[6] * x * (xx - 3.0 * yy);
    return b;
}

std::array<Vec3, kMaxCoeffs> basis_gradient(const Vec3 &dir, int degree) {
    std::array<Vec3, kMaxCoeffs> g;
    g.fill(Vec3::Zero());
    const double x = dir[0], y = dir[1], z = dir[2];
    if (degree < 1) return g;
    g[1] = Vec3(0.0, -C1, 0.0);
    g[2] = Vec3(0.0, 0.0, C1);
    g[3] = Vec3(-C1, 0.0, 0.0);
    if (degree < 2) return g;
    const double xx = x * x, yy = y * y, zz = z * z;
    g[4] = C2[0] * Vec3(y, x, 0.0);
    g[5] = C2[1] * Vec3(0.0, z, y);
    g[6] = C2[2] * Vec3(-2.0 * x, -2.0 * y, 4.0 * z);
    g[7] = C2[3] * Vec3(z, 0.0, x);
    g[8] = C2[4] * Vec3(2.0 * x, -2.0 * y, 0.0);
    if (degree < 3) return g;
    g[9] = C3[0] * Vec3(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
    g[10] = C3[1] * Vec3(y * z, x * z, x * y);
    g[11] = C3[2] * Vec3(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
    g[12] = C3[3] * Vec3(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    g[13] = C3[4] * Vec3(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
    g[14] = C3[5] * Vec3(2.0 * x * z, -2.0 * y * z, xx - yy);
    g[15] = C3[6] * Vec3(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
    return g;
}

Vec3 evaluate(std::span<const double> coeffs, const Vec3 &dir, int degree) {
    const auto b = basis(dir, degree);
    const int k = (degree + 1) * (degree + 1);
    Vec3 rgb = Vec3::Constant(0.5);
    for (int i = 0; i < k; ++i) rgb += b[i] * Vec3(coeffs[3 * i], coeffs[3 * i + 1], coeffs[3 * i + 2]);
    return rgb;
}

Vec3 rgb_to_dc(const Vec3 &rgb) { return (rgb - Vec3::Constant(0.5)) / C0; }

} // namespace fsplat::sh
