#pragma once

// Serial scalar implementations kept as oracles for the OpenMP kernels.
// Straight loops over each output element, 128-bit integer accumulation, no
// shared code with the parallel paths beyond the data types.

#include <cstdint>
#include <span>
#include <vector>

#include "tender/calibrate.hpp"
#include "tender/detail/int128.hpp"
#include "tender/tensor.hpp"

namespace tender::reference {

FloatMatrix matmul_float(const FloatMatrix& a, const FloatMatrix& w);

/// Exact product, unbounded (128-bit) accumulation.
std::vector<int128> matmul_int(const IntMatrix& a, const IntMatrix& w);

struct SerialGemm {
    FloatMatrix output;
    /// sum_g alpha^(G-g) * P_g per element, 128-bit.
    std::vector<int128> accumulators;
    /// P_g per element, group-major.
    std::vector<std::vector<int128>> partials;
};

SerialGemm gemm_explicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction);

SerialGemm gemm_implicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction);

} // namespace tender::reference
