#pragma once

// Desk-scale pre-LayerNorm Transformer block:
//
//   h  = LN1(x);  Q = h Wq;  K = h Wk;  V = h Wv
//   per head:     S = softmax(Q_h K_h^T / sqrt(d_head));  O_h = S V_h
//   x1 = x + O Wo
//   out = x1 + ReLU(LN2(x1) Wfc1) Wfc2
//
// The quantized forward routes every weight matmul (and optionally the two
// per-head activation-activation matmuls) through the decomposed integer
// GEMM; softmax, LayerNorm, ReLU and residuals stay in float.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tender/calibrate.hpp"
#include "tender/msa_sim.hpp"
#include "tender/tensor.hpp"

namespace tender::toy {

struct BlockWeights {
    FloatMatrix wq, wk, wv, wo;
    FloatMatrix fc1, fc2;
    std::vector<double> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Index num_heads = 1;
    std::uint64_t seed = 0;

    Index d_model() const noexcept { return wq.rows(); }
    Index d_ff() const noexcept { return fc1.cols(); }
    Index d_head() const noexcept { return d_model() / num_heads; }
};

struct OutlierSpec {
    /// Fraction of channels scaled, in [0, 1).
    double fraction = 0.0;
    /// Multiplier applied to those channels, >= 1.
    double magnitude = 1.0;
    std::uint64_t seed = 0;
};

/// Gaussian weights with standard deviation 1/sqrt(fan_in); LayerNorm gains
/// 1 and offsets 0.
BlockWeights init_block(Index d_model, Index d_ff, Index num_heads, std::uint64_t seed);

/// Channels scaled by `spec`, sorted ascending.
std::vector<Index> outlier_channels(Index d_model, const OutlierSpec& spec);

/// Standard normal tokens with the outlier channels scaled in every row.
FloatMatrix make_input(Index n_tokens, Index d_model, const OutlierSpec& outliers, std::uint64_t seed);

FloatMatrix forward_float(const FloatMatrix& x, const BlockWeights& w);

enum class QuantPath { explicit_path, implicit_path, sim };

QuantPath parse_path(const std::string& name);
std::string to_string(QuantPath path);

struct QuantConfig {
    int bits = 8;
    int alpha = 2;
    int num_groups = 8;
    Index chunk_rows = 256;
    bool quantize_act_act = false;
    QuantPath path = QuantPath::implicit_path;
    int acc_bits = 32;
    /// Array model for QuantPath::sim (acc_bits above overrides its width).
    msa::MSAConfig msa;

    PlanConfig plan_config() const { return {bits, alpha, num_groups, chunk_rows}; }
};

/// Plans keyed by matmul name: "q_proj", "k_proj", "v_proj", "o_proj",
/// "fc1", "fc2", and per head "qk.h<i>", "sv.h<i>".
using PlanSet = std::map<std::string, std::shared_ptr<const DecompositionPlan>>;

struct MatmulReport {
    /// "q_proj", "k_proj", "v_proj", "qk", "sv", "o_proj", "fc1", "fc2".
    std::string name;
    /// Against the float product of the same operands.
    ErrorMetrics metrics;
    bool quantized = false;
};

struct ForwardResult {
    FloatMatrix output;
    std::vector<MatmulReport> reports;
    /// Integer accumulators of every quantized matmul, keyed as in PlanSet.
    std::map<std::string, IntMatrix> accumulators;
};

/// Deployment calibration: runs the float block over `samples` and builds a
/// plan for the input of every matmul the config quantizes.
PlanSet calibrate_block(std::span<const FloatMatrix> samples, const BlockWeights& w, const QuantConfig& config);

/// Quantized forward. Matmuls without an entry in `plans` are calibrated on
/// their own input.
ForwardResult forward_quant(const FloatMatrix& x, const BlockWeights& w, const QuantConfig& config,
                            const PlanSet* plans = nullptr);

FloatMatrix layer_norm(const FloatMatrix& x, std::span<const double> gain, std::span<const double> bias);
void softmax_rows(FloatMatrix& x);

} // namespace tender::toy
