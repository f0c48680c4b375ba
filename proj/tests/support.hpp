#pragma once

// Generators and fixtures shared by the unit and acceptance suites.

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "tender/calibrate.hpp"
#include "tender/qgemm.hpp"
#include "tender/tensor.hpp"

namespace tender::test {

inline FloatMatrix random_gaussian(Index rows, Index cols, std::mt19937_64& rng, double sd = 1.0)
{
    std::normal_distribution<double> d(0.0, sd);
    FloatMatrix m(rows, cols);
    for (double& v : m.data())
        v = d(rng);
    return m;
}

inline FloatMatrix random_uniform(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> d(lo, hi);
    FloatMatrix m(rows, cols);
    for (double& v : m.data())
        v = d(rng);
    return m;
}

/// Uniform noise whose per-channel magnitude is 2^-u, u uniform in
/// [0, octaves], plus a random per-channel offset; populates many groups.
inline FloatMatrix random_spread(Index rows, Index cols, double octaves, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u(0.0, octaves), unit(-1.0, 1.0);
    std::vector<double> mag(cols), off(cols);
    for (Index c = 0; c < cols; ++c) {
        mag[c] = std::exp2(-u(rng));
        off[c] = 0.5 * unit(rng);
    }
    FloatMatrix m(rows, cols);
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c)
            m(r, c) = off[c] + mag[c] * unit(rng);
    return m;
}

/// Two-row tensor whose centered channel maxima reproduce the walking
/// example: channel 2 (1-based) peaks at 22.4, channels 4 and 6 fall in
/// (5.6, 11.2], channels 1, 3 and 5 at or below 5.6.
inline FloatMatrix walking_example()
{
    return FloatMatrix(2, 6,
                       {
                           1.0, 22.4, 3.0, 10.0, 0.5, -9.0, //
                           -2.0, -22.4, 1.0, -4.0, -0.5, 9.0,
                       });
}

struct Instance {
    std::shared_ptr<const DecompositionPlan> plan;
    PreparedGemm prep;
    FloatMatrix x, w;
};

inline Instance make_instance(const FloatMatrix& x, const FloatMatrix& w, const PlanConfig& cfg)
{
    auto plan = std::make_shared<const DecompositionPlan>(build_plan(std::span<const FloatMatrix>(&x, 1), cfg));
    auto prep = prepare_gemm(x, w, plan, cfg.bits);
    return {plan, std::move(prep), x, w};
}

/// |a - b| <= tol * scale, with scale the magnitude of the summands that
/// produced a and b.
inline bool close_rel(double a, double b, double tol, double scale)
{
    return std::fabs(a - b) <= tol * std::max(scale, 1e-300);
}

} // namespace tender::test
