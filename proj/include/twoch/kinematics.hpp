#pragma once

#include <array>
#include <cstddef>
#include <set>

#include "twoch/matrix.hpp"

namespace twoch::kinematics {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<std::array<double, 3>, 3>;

// Exponential-map rotation: direction is the axis, norm the angle in radians.
struct AxisAngle {
    Vec3 v{0.0, 0.0, 0.0};
};

struct RotationMatrix {
    Mat3 m{{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};

    static RotationMatrix identity() { return {}; }
    double operator()(std::size_t r, std::size_t c) const { return m[r][c]; }
};

// Intrinsic Z-Y-X angles: R = Rz(yaw) * Ry(pitch) * Rx(roll).
// pitch lies in [-pi/2, pi/2].
struct EulerZYX {
    double yaw = 0.0;
    double pitch = 0.0;
    double roll = 0.0;
};

inline constexpr double kOrthonormalTolerance = 1e-9;

// Rodrigues construction with a Taylor guard for |v| < 1e-8.
RotationMatrix expmap_to_rotmat(const AxisAngle& a);

// Throws NumericError when r is not a rotation within kOrthonormalTolerance.
// At gimbal lock (|pitch| = pi/2) roll is fixed to 0 and yaw absorbs it.
EulerZYX rotmat_to_euler(const RotationMatrix& r);

RotationMatrix euler_to_rotmat(const EulerZYX& e);

RotationMatrix multiply(const RotationMatrix& a, const RotationMatrix& b);
RotationMatrix transpose(const RotationMatrix& r);
double determinant(const RotationMatrix& r);
// max |(R^T R - I)_ij|
double orthonormality_error(const RotationMatrix& r);

// Maps an angle into (-pi, pi].
double wrap_angle(double a);

struct EulerMseOptions {
    // Parameter indices left out of the score. Must cover whole 3-groups.
    std::set<std::size_t> exclude;
    // Parameter indices of translation groups, scored as raw squared
    // differences without Euler conversion. Must cover whole 3-groups.
    std::set<std::size_t> translation;
};

// Per frame, the sum over scored 3-parameter groups of the squared
// (wrapped) Euler-angle differences between target and prediction.
std::vector<double> euler_mse(const Matrix& target, const Matrix& pred, const EulerMseOptions& options = {});

}  // namespace twoch::kinematics
