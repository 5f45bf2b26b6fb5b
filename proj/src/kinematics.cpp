#include "twoch/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "twoch/errors.hpp"

namespace twoch::kinematics {

namespace {

constexpr double kSmallAngle = 1e-8;
// Below this cos(pitch) the Z and X axes are treated as aligned.
constexpr double kGimbalEpsilon = 1e-12;

enum class GroupKind { rotation, translation, excluded };

std::vector<GroupKind> classify_groups(std::size_t params, const EulerMseOptions& options) {
    if (params % 3 != 0) throw DimensionError("euler_mse: parameter count " + std::to_string(params) + " is not a multiple of 3");
    std::vector<GroupKind> kinds(params / 3, GroupKind::rotation);
    auto mark = [&](const std::set<std::size_t>& indices, GroupKind kind, const char* what) {
        for (std::size_t idx : indices) {
            if (idx >= params) {
                throw ConfigError(std::string("euler_mse: ") + what + " index " + std::to_string(idx) + " out of range");
            }
            const std::size_t g = idx / 3;
            for (std::size_t k = 0; k < 3; ++k) {
                if (!indices.contains(g * 3 + k)) {
                    throw ConfigError(std::string("euler_mse: ") + what + " set must cover whole 3-parameter groups (group " +
                                      std::to_string(g) + ")");
                }
            }
            kinds[g] = kind;
        }
    };
    mark(options.translation, GroupKind::translation, "translation");
    mark(options.exclude, GroupKind::excluded, "exclude");
    return kinds;
}

}  // namespace

RotationMatrix expmap_to_rotmat(const AxisAngle& a) {
    const auto [x, y, z] = a.v;
    const double theta2 = x * x + y * y + z * z;
    const double theta = std::sqrt(theta2);
    double sin_term = 0.0;  // sin(theta) / theta
    double cos_term = 0.0;  // (1 - cos(theta)) / theta^2
    if (theta < kSmallAngle) {
        sin_term = 1.0 - theta2 / 6.0;
        cos_term = 0.5 - theta2 / 24.0;
    } else {
        sin_term = std::sin(theta) / theta;
        const double half = std::sin(0.5 * theta) / theta;
        cos_term = 2.0 * half * half;
    }
    // R = I + sin_term * K + cos_term * K^2, K = [v]x
    const Mat3 k{{{0.0, -z, y}, {z, 0.0, -x}, {-y, x, 0.0}}};
    RotationMatrix r;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double k2 = 0.0;
            for (std::size_t l = 0; l < 3; ++l) k2 += k[i][l] * k[l][j];
            r.m[i][j] = (i == j ? 1.0 : 0.0) + sin_term * k[i][j] + cos_term * k2;
        }
    }
    return r;
}

EulerZYX rotmat_to_euler(const RotationMatrix& r) {
    const double err = orthonormality_error(r);
    const double det = determinant(r);
    if (!(err <= kOrthonormalTolerance) || !(std::abs(det - 1.0) <= kOrthonormalTolerance)) {
        throw NumericError("rotmat_to_euler: matrix is not a rotation (orthonormality error " + std::to_string(err) +
                           ", det " + std::to_string(det) + ")");
    }
    const auto& m = r.m;
    const double cos_pitch = std::hypot(m[0][0], m[1][0]);
    EulerZYX e;
    e.pitch = std::atan2(-m[2][0], cos_pitch);
    if (cos_pitch > kGimbalEpsilon) {
        e.yaw = std::atan2(m[1][0], m[0][0]);
        e.roll = std::atan2(m[2][1], m[2][2]);
    } else {
        // Rz(yaw) Ry(+-pi/2) has m01 = -sin(yaw), m11 = cos(yaw).
        e.roll = 0.0;
        e.yaw = std::atan2(-m[0][1], m[1][1]);
    }
    return e;
}

RotationMatrix euler_to_rotmat(const EulerZYX& e) {
    const double cy = std::cos(e.yaw), sy = std::sin(e.yaw);
    const double cp = std::cos(e.pitch), sp = std::sin(e.pitch);
    const double cr = std::cos(e.roll), sr = std::sin(e.roll);
    RotationMatrix r;
    r.m = {{{cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr},
            {sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr},
            {-sp, cp * sr, cp * cr}}};
    return r;
}

RotationMatrix multiply(const RotationMatrix& a, const RotationMatrix& b) {
    RotationMatrix out;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 3; ++k) s += a.m[i][k] * b.m[k][j];
            out.m[i][j] = s;
        }
    }
    return out;
}

RotationMatrix transpose(const RotationMatrix& r) {
    RotationMatrix out;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) out.m[i][j] = r.m[j][i];
    }
    return out;
}

double determinant(const RotationMatrix& r) {
    const auto& m = r.m;
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

double orthonormality_error(const RotationMatrix& r) {
    const auto rtr = multiply(transpose(r), r);
    double worst = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            const double d = std::abs(rtr.m[i][j] - (i == j ? 1.0 : 0.0));
            if (std::isnan(d)) return d;
            worst = std::max(worst, d);
        }
    }
    return worst;
}

double wrap_angle(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double w = std::remainder(a, two_pi);
    if (w <= -std::numbers::pi) w += two_pi;
    return w;
}

std::vector<double> euler_mse(const Matrix& target, const Matrix& pred, const EulerMseOptions& options) {
    if (target.rows() != pred.rows() || target.cols() != pred.cols()) {
        throw DimensionError("euler_mse: target " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()) +
                             " vs prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()));
    }
    const auto kinds = classify_groups(target.cols(), options);
    std::vector<double> per_frame(target.rows(), 0.0);
    for (std::size_t f = 0; f < target.rows(); ++f) {
        double total = 0.0;
        for (std::size_t g = 0; g < kinds.size(); ++g) {
            const std::size_t c = g * 3;
            if (kinds[g] == GroupKind::excluded) continue;
            if (kinds[g] == GroupKind::translation) {
                for (std::size_t k = 0; k < 3; ++k) {
                    const double d = target(f, c + k) - pred(f, c + k);
                    total += d * d;
                }
                continue;
            }
            const auto et = rotmat_to_euler(expmap_to_rotmat({{target(f, c), target(f, c + 1), target(f, c + 2)}}));
            const auto ep = rotmat_to_euler(expmap_to_rotmat({{pred(f, c), pred(f, c + 1), pred(f, c + 2)}}));
            const double dy = wrap_angle(et.yaw - ep.yaw);
            const double dp = wrap_angle(et.pitch - ep.pitch);
            const double dr = wrap_angle(et.roll - ep.roll);
            total += dy * dy + dp * dp + dr * dr;
        }
        per_frame[f] = total;
    }
    return per_frame;
}

}  // namespace twoch::kinematics
