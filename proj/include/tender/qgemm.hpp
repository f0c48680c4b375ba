#pragma once

/**
 * Quantized GEMM over decomposed activations.
 *
 * With P_g the integer product of group g's channels against the matching
 * weight rows, s_g the group scale and s_w the weight column scale:
 *
 *   explicit:  Y = sum_g (s_g * s_w) * P_g
 *   implicit:  A_1 = P_1,  A_{g+1} = alpha * A_g + P_{g+1},  Y = (s_G * s_w) * A_G
 *
 * Since s_g = alpha * s_{g+1}, both give the same Y; the implicit form never
 * leaves the integer domain until the end and streams all K channels in one
 * reduction. Each chunk of rows uses its own ladder and channel order, and the
 * per-chunk bias correction bias * W is added to the float result.
 */

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tender/calibrate.hpp"
#include "tender/tensor.hpp"

namespace tender {

struct GemmOptions {
    /// Declared accumulator width; any intermediate value outside it is an overflow.
    int acc_bits = 32;
    /// Keep the per-group integer partials P_g in the result.
    bool trace = false;
    /// When false an overflow only sets GemmResult::overflow_flag.
    bool throw_on_overflow = true;
};

struct GemmStats {
    /// Independent reductions started (one per output element per pass).
    std::uint64_t reduction_passes = 0;
    std::uint64_t macs = 0;
    std::uint64_t rescales = 0;
};

struct GemmResult {
    FloatMatrix output;
    /// Integer accumulators, sum_g alpha^(G-g) * P_g, before dequantization.
    IntMatrix accumulators;
    /// P_g for g = 1..G when traced.
    std::vector<IntMatrix> int_partials;
    bool overflow_flag = false;
    GemmStats stats;
};

/// Quantized operands plus the bias correction for one activation x weight
/// product.
struct PreparedGemm {
    QuantizedActivation qa;
    QuantizedWeight qw;
    std::vector<FloatMatrix> correction;
};

PreparedGemm prepare_gemm(const FloatMatrix& x, const FloatMatrix& w, std::shared_ptr<const DecompositionPlan> plan,
                          int weight_bits);

/// Per-group dequantize-and-add. `correction` is either empty or one 1 x N
/// row per plan chunk.
GemmResult gemm_explicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction = {}, const GemmOptions& options = {});

/// Runtime requantization: groups in ascending index, accumulator multiplied
/// by alpha (shifted for alpha = 2) between groups.
GemmResult gemm_implicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction = {}, const GemmOptions& options = {});

FloatMatrix gemm_reference(const FloatMatrix& x, const FloatMatrix& w);

/// Combines an integer accumulator with its chunk / column scales and bias
/// correction; shared by the implicit path and the array simulator.
double dequantize_accumulator(std::int64_t acc, const DecompositionPlan& plan, Index row, double weight_scale,
                              std::span<const FloatMatrix> correction, Index col);

struct PathReport {
    std::string path;
    ErrorMetrics metrics;
};

struct CompareReport {
    std::vector<PathReport> paths;
    bool overflow_flag = false;
};

/// Runs explicit, implicit and the float reference; metrics are against the
/// reference. Without `plan` the plan is calibrated on `x` itself.
CompareReport compare_paths(const FloatMatrix& x, const FloatMatrix& w, const PlanConfig& config,
                            std::shared_ptr<const DecompositionPlan> plan = nullptr, const GemmOptions& options = {});

/// Throws ShapeError / std::invalid_argument when operands and plan disagree.
void check_gemm_operands(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction);

} // namespace tender
