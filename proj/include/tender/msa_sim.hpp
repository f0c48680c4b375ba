#pragma once

/**
 * Cycle-level model of the multi-scale systolic array.
 *
 * Output stationary: PE (r, c) owns output element (row0 + r, col0 + c) of the
 * current tile. Activations enter at the left edge through a FIFO of depth r
 * and move one PE right per cycle; weights enter at the top through a FIFO of
 * depth c and move one PE down per cycle. Stream slot s therefore reaches
 * PE (r, c) at cycle s + r + c of the pass.
 *
 * A pass streams the chunk's channels in group order. Between consecutive
 * groups one bubble slot carrying the rescale signal is inserted into both
 * streams; a PE receiving it shifts its accumulator left by one bit. Empty
 * groups still produce their bubble, so every pass has K + G - 1 slots.
 *
 * Cycle accounting per pass (active tile of r' x c' PEs):
 *   fill   = (r' - 1) + (c' - 1)
 *   stream = number of slots
 *   drain  = c'   (one accumulator column written per cycle)
 * Passes do not overlap.
 */

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tender/calibrate.hpp"
#include "tender/tensor.hpp"

namespace tender::msa {

struct MSAConfig {
    Index pe_rows = 64;
    Index pe_cols = 64;
    /// Native PE operand width, 4 or 8.
    int pe_bits = 4;
    int acc_bits = 32;
    /// 8-bit operands on 4-bit PEs run on a pe_rows/2 x pe_cols/2 effective array.
    bool int8_grouping = true;
    /// Vector unit width, used for the dequantize-accumulate cost of the explicit dataflow.
    Index vpu_lanes = 64;
    bool trace = false;
    bool throw_on_overflow = true;
};

struct Slot {
    bool rescale = false;
    /// Channel streamed in this slot (unused for rescale slots).
    Index channel = 0;
};

struct StreamSchedule {
    std::vector<Slot> slots;
    /// Channel order, i.e. the non-rescale slots.
    std::vector<Index> channels;
    /// Slot positions of the rescale bubbles; strictly increasing.
    std::vector<Index> rescale_positions;
    int alpha = 2;

    static StreamSchedule implicit(const ChunkPlan& chunk, int alpha);
    /// One group's channels without bubbles.
    static StreamSchedule group_only(const ChunkPlan& chunk, int group);
};

struct RescaleEvent {
    std::uint64_t cycle = 0;
    Index pe_row = 0;
    Index pe_col = 0;
};

struct SimReport {
    /// Integer accumulators (for the explicit dataflow: sum_g alpha^(G-g) * P_g).
    IntMatrix accumulators;
    FloatMatrix output;

    std::uint64_t total_cycles = 0;
    std::uint64_t fill_cycles = 0;
    std::uint64_t stream_cycles = 0;
    std::uint64_t drain_cycles = 0;
    std::uint64_t bubble_cycles = 0;
    /// Explicit dataflow only: vector-unit cycles dequantizing and adding partials.
    std::uint64_t dequant_cycles = 0;
    std::uint64_t tile_passes = 0;
    /// Stream passes over the reduction axis (tile passes x groups for explicit).
    std::uint64_t stream_passes = 0;
    std::uint64_t mac_pe_cycles = 0;
    double utilization = 0.0;

    Index effective_rows = 0;
    Index effective_cols = 0;
    /// Row-major over the effective array.
    std::vector<std::uint64_t> rescale_events_per_pe;
    bool overflow_flag = false;
    std::string dataflow;
    MSAConfig config;
    std::vector<std::string> warnings;
    std::optional<std::vector<RescaleEvent>> trace;
};

/// Implicit requantization on the array. `correction` is empty or one 1 x N
/// row per plan chunk. Requires alpha = 2 and chunk_rows >= effective rows.
SimReport simulate_gemm(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                        std::span<const FloatMatrix> correction, const MSAConfig& config);

/// Naive per-group dataflow: one pass per group with its own fill and drain,
/// plus a vector-unit dequantize-accumulate for every group after the first.
SimReport simulate_explicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                            std::span<const FloatMatrix> correction, const MSAConfig& config);

/// Throws std::logic_error when the report was produced without tracing.
const std::vector<RescaleEvent>& trace_rescale_events(const SimReport& report);

/// JSON summary: cycles, bubbles, utilization, config echo.
std::string report_to_text(const SimReport& report);

/// "cycle,pe_row,pe_col,event" rows.
std::string trace_to_csv(const SimReport& report);

} // namespace tender::msa
