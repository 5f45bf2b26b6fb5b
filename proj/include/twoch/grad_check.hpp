#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "twoch/tensor.hpp"

namespace twoch::ad {

// Denominator floor for the relative error, so exactly-zero gradients do
// not divide by zero.
inline constexpr double kGradCheckFloor = 1e-6;

// One probed coordinate: tensor index within the checked set and flat offset.
struct GradCoordinate {
    std::size_t tensor = 0;
    std::size_t offset = 0;
};

struct GradCheckReport {
    std::vector<GradCoordinate> coordinates;
    // |g_ad - g_fd| / max(floor, |g_ad|, |g_fd|), aligned with coordinates.
    std::vector<double> errors;
    // Indices into coordinates whose perturbed evaluation was not finite.
    std::vector<std::size_t> nonfinite;
    double max_error = 0.0;
    bool passed = false;
};

// Central-difference check of every coordinate of x for the scalar function f.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step, double tol);

// Checks up to max_samples coordinates drawn uniformly (seeded) across params.
// f must rebuild its graph from the current parameter values on every call.
GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params, double step,
                                  double tol, std::size_t max_samples, std::uint64_t seed);

}  // namespace twoch::ad
