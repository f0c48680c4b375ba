#pragma once

/**
 * Offline calibration of decomposed activation quantization.
 *
 * For every chunk of token rows the calibration
 *   1. centers each channel by its bias (max + min) / 2,
 *   2. takes each channel's absolute maximum (cmax) and their maximum (tmax),
 *   3. builds a ladder of G scales tmax / (alpha^(g-1) * (2^(b-1) - 1)),
 *   4. puts channel i into the group g with
 *        tmax / alpha^g < cmax_i <= tmax / alpha^(g-1),
 *      channels below the last boundary going to group G,
 *   5. orders channels group-ascending (stable), which is the order they are
 *      streamed through the integer GEMM.
 *
 * Group indices are 1-based throughout, channel indices 0-based.
 */

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "tender/tensor.hpp"

namespace tender {

struct GroupLadder {
    double tmax = 0.0;
    int alpha = 2;
    int num_groups = 1;
    int bits = 8;
    /// scales[g - 1] is the scale of group g; adjacent entries differ by alpha.
    std::vector<double> scales;
    /// upper[g - 1] = tmax / alpha^(g-1); upper[G] = tmax / alpha^G.
    std::vector<double> bounds;

    double scale(int group) const noexcept { return scales[static_cast<Index>(group - 1)]; }
    /// Inclusive upper boundary of `group`.
    double upper_bound(int group) const noexcept { return bounds[static_cast<Index>(group - 1)]; }
    /// Exclusive lower boundary of `group`.
    double lower_bound(int group) const noexcept { return bounds[static_cast<Index>(group)]; }

    bool operator==(const GroupLadder&) const = default;
};

GroupLadder build_ladder(double tmax, int alpha, int num_groups, int bits);

/// 1-based group of a channel with absolute maximum `cmax`.
int classify_channel(double cmax, const GroupLadder& ladder);

struct ChunkPlan {
    Index row_begin = 0;
    Index row_end = 0;
    std::vector<double> bias;
    std::vector<double> cmax;
    GroupLadder ladder;
    std::vector<int> group_of;
    /// Channels in streaming order: group-ascending, original order within a group.
    std::vector<Index> permutation;
    /// G + 1 offsets into `permutation`; group g spans [boundaries[g-1], boundaries[g]).
    std::vector<Index> boundaries;

    std::span<const Index> group_channels(int group) const noexcept
    {
        const auto g = static_cast<Index>(group);
        return std::span<const Index>(permutation).subspan(boundaries[g - 1], boundaries[g] - boundaries[g - 1]);
    }

    /// True when the channel sits below its group's lower boundary (only
    /// possible in the last group).
    bool is_clamped(Index channel) const noexcept
    {
        return !(cmax[channel] > ladder.lower_bound(group_of[channel]));
    }

    bool operator==(const ChunkPlan&) const = default;
};

struct PlanConfig {
    int bits = 8;
    int alpha = 2;
    int num_groups = 8;
    Index chunk_rows = 256;
};

struct DecompositionPlan {
    Index cols = 0;
    Index chunk_rows = 256;
    int bits = 8;
    int alpha = 2;
    int num_groups = 1;
    std::vector<ChunkPlan> chunks;

    /// Rows past the calibrated range fall into the last chunk.
    Index chunk_index(Index row) const noexcept
    {
        const Index c = row / chunk_rows;
        return c < chunks.size() ? c : chunks.size() - 1;
    }
    const ChunkPlan& chunk_for_row(Index row) const noexcept { return chunks[chunk_index(row)]; }

    bool operator==(const DecompositionPlan&) const = default;
};

/// Validates bits / alpha / num_groups / chunk_rows; throws ConfigError.
void validate(const PlanConfig& config);

/// Builds the plan for one chunk from its (min, max) channel statistics.
ChunkPlan make_chunk_plan(Index row_begin, Index row_end, std::vector<double> bias, std::vector<double> cmax,
                          const PlanConfig& config);

/// Calibrates from one or more samples sharing a column count. Statistics
/// for a chunk are the elementwise min / max over every sample row that
/// falls into it.
DecompositionPlan build_plan(std::span<const FloatMatrix> samples, const PlanConfig& config);

struct QuantizedWeight {
    IntMatrix data;
    std::vector<double> col_scales;
};

struct QuantizedActivation {
    /// Channels in original order.
    IntMatrix data;
    std::shared_ptr<const DecompositionPlan> plan;
};

QuantizedActivation quantize_activation(const FloatMatrix& x, std::shared_ptr<const DecompositionPlan> plan);

/// Per-column symmetric quantization.
QuantizedWeight quantize_weight(const FloatMatrix& w, int bits);

/// For every chunk, the 1 x N row bias * W to be added to that chunk's
/// output rows.
std::vector<FloatMatrix> bias_correction(const DecompositionPlan& plan, const FloatMatrix& w);

/// Float image of a quantized activation with the channel bias restored.
FloatMatrix dequantize_activation(const QuantizedActivation& qa);

} // namespace tender
