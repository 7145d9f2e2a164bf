#include "fsplat/types.hpp"

namespace fsplat {

Quat quat_normalized(const Quat &q) {
    const double n = q.norm();
    if (!(n > 0.0) || !std::isfinite(n)) return identity_quat();
    return q / n;
}

Mat3 quat_to_matrix(const Quat &q_raw) {
    const Quat q = quat_normalized(q_raw);
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
    return r;
}

Quat matrix_to_quat(const Mat3 &r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    Quat out(q.w(), q.x(), q.y(), q.z());
    if (out[0] < 0.0) out = -out;
    return out;
}

Quat quat_multiply(const Quat &a, const Quat &b) {
    return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
                a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
                a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
                a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

} // namespace fsplat
