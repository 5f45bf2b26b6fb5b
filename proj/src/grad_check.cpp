#include "twoch/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "twoch/errors.hpp"

namespace twoch::ad {

namespace {

double evaluate(const std::function<Tensor()>& f) {
    NoGradGuard guard;
    const Tensor out = f();
    if (out.numel() != 1) throw DimensionError("grad_check: function must return a scalar");
    return out.data()[0];
}

GradCheckReport run_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                          std::vector<GradCoordinate> coords, double step, double tol) {
    if (step < 1e-6 || step > 1e-4) throw ConfigError("grad_check: step must lie in [1e-6, 1e-4]");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    Tape::current().clear();
    backward(f());

    GradCheckReport report;
    report.coordinates = std::move(coords);
    report.errors.reserve(report.coordinates.size());
    for (std::size_t i = 0; i < report.coordinates.size(); ++i) {
        const auto [ti, off] = report.coordinates[i];
        Tensor& p = params[ti];
        const double analytic = p.has_grad() ? p.grad()[off] : 0.0;
        auto values = p.mutable_data();
        const double saved = values[off];
        double plus = 0.0, minus = 0.0;
        bool finite = true;
        try {
            values[off] = saved + step;
            plus = evaluate(f);
            values[off] = saved - step;
            minus = evaluate(f);
        } catch (const NumericError&) {
            finite = false;
        }
        values[off] = saved;
        const double numeric = (plus - minus) / (2.0 * step);
        if (!finite || !std::isfinite(numeric) || !std::isfinite(analytic)) {
            report.nonfinite.push_back(i);
            report.errors.push_back(std::numeric_limits<double>::infinity());
            continue;
        }
        const double denom = std::max({kGradCheckFloor, std::abs(analytic), std::abs(numeric)});
        report.errors.push_back(std::abs(analytic - numeric) / denom);
    }
    report.max_error = report.errors.empty() ? 0.0 : *std::max_element(report.errors.begin(), report.errors.end());
    report.passed = report.nonfinite.empty() && report.max_error < tol;
    return report;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step, double tol) {
    std::vector<GradCoordinate> coords(x.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = {0, i};
    std::vector<Tensor> params{x};
    return run_check([&] { return f(x); }, params, std::move(coords), step, tol);
}

GradCheckReport grad_check_params(const std::function<Tensor()>& f, std::span<Tensor> params, double step,
                                  double tol, std::size_t max_samples, std::uint64_t seed) {
    std::vector<GradCoordinate> all;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (std::size_t i = 0; i < params[t].numel(); ++i) all.push_back({t, i});
    }
    if (all.size() > max_samples) {
        std::mt19937_64 rng(seed);
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(max_samples);
    }
    return run_check(f, params, std::move(all), step, tol);
}

}  // namespace twoch::ad
