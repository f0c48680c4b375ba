#include "tender/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tender/errors.hpp"

namespace tender {

namespace {

constexpr int kMaxGroups = 64;

void check_ladder_args(int alpha, int num_groups, int bits)
{
    if (alpha < 2)
        throw ConfigError("alpha must be an integer >= 2, got " + std::to_string(alpha));
    if (num_groups < 1 || num_groups > kMaxGroups)
        throw ConfigError("group count must be in [1, " + std::to_string(kMaxGroups) + "], got " +
                          std::to_string(num_groups));
    if (bits != 4 && bits != 8 && bits != 16)
        throw ConfigError("bit width must be 4, 8 or 16, got " + std::to_string(bits));
}

} // namespace

void validate(const PlanConfig& config)
{
    check_ladder_args(config.alpha, config.num_groups, config.bits);
    if (config.chunk_rows == 0)
        throw ConfigError("chunk_rows must be positive");
}

GroupLadder build_ladder(double tmax, int alpha, int num_groups, int bits)
{
    check_ladder_args(alpha, num_groups, bits);
    if (!(tmax >= 0.0) || !std::isfinite(tmax))
        throw ConfigError("tmax must be finite and non-negative");

    GroupLadder ladder{tmax, alpha, num_groups, bits, {}, {}};
    const auto g_count = static_cast<Index>(num_groups);
    ladder.bounds.resize(g_count + 1);
    ladder.bounds[0] = tmax;
    // Successive division keeps adjacent entries exactly alpha apart for
    // power-of-two alpha.
    for (Index g = 1; g <= g_count; ++g)
        ladder.bounds[g] = ladder.bounds[g - 1] / alpha;

    ladder.scales.resize(g_count);
    if (tmax == 0.0) {
        std::fill(ladder.scales.begin(), ladder.scales.end(), 1.0);
        return ladder;
    }
    ladder.scales[0] = tmax / static_cast<double>(quant_max(bits));
    for (Index g = 1; g < g_count; ++g)
        ladder.scales[g] = ladder.scales[g - 1] / alpha;
    return ladder;
}

int classify_channel(double cmax, const GroupLadder& ladder)
{
    if (!(cmax >= 0.0))
        throw std::invalid_argument("classify_channel: cmax must be non-negative");
    if (cmax > ladder.tmax)
        throw std::invalid_argument("classify_channel: cmax exceeds tmax");
    int g = 1;
    while (g < ladder.num_groups && cmax <= ladder.lower_bound(g))
        ++g;
    return g;
}

ChunkPlan make_chunk_plan(Index row_begin, Index row_end, std::vector<double> bias, std::vector<double> cmax,
                          const PlanConfig& config)
{
    validate(config);
    if (bias.size() != cmax.size())
        throw ShapeError("make_chunk_plan: bias and cmax lengths differ");

    ChunkPlan chunk;
    chunk.row_begin = row_begin;
    chunk.row_end = row_end;
    double tmax = 0.0;
    for (double m : cmax)
        tmax = std::max(tmax, m);
    chunk.ladder = build_ladder(tmax, config.alpha, config.num_groups, config.bits);

    const Index cols = cmax.size();
    chunk.group_of.resize(cols);
    for (Index c = 0; c < cols; ++c)
        chunk.group_of[c] = classify_channel(cmax[c], chunk.ladder);

    const auto g_count = static_cast<Index>(config.num_groups);
    chunk.boundaries.assign(g_count + 1, 0);
    for (int g : chunk.group_of)
        ++chunk.boundaries[static_cast<Index>(g)];
    for (Index g = 1; g <= g_count; ++g)
        chunk.boundaries[g] += chunk.boundaries[g - 1];

    chunk.permutation.resize(cols);
    std::vector<Index> next(chunk.boundaries.begin(), chunk.boundaries.end() - 1);
    for (Index c = 0; c < cols; ++c)
        chunk.permutation[next[static_cast<Index>(chunk.group_of[c] - 1)]++] = c;

    chunk.bias = std::move(bias);
    chunk.cmax = std::move(cmax);
    return chunk;
}

DecompositionPlan build_plan(std::span<const FloatMatrix> samples, const PlanConfig& config)
{
    validate(config);
    if (samples.empty())
        throw std::invalid_argument("build_plan: no calibration samples");
    const Index cols = samples.front().cols();
    Index total_rows = 0;
    for (const auto& s : samples) {
        if (s.cols() != cols)
            throw ShapeError("build_plan: samples have differing column counts");
        total_rows = std::max(total_rows, s.rows());
    }
    if (cols == 0 || total_rows == 0)
        throw ShapeError("build_plan: empty calibration samples");

    DecompositionPlan plan{cols, config.chunk_rows, config.bits, config.alpha, config.num_groups, {}};
    for (Index lo = 0; lo < total_rows; lo += config.chunk_rows) {
        const Index hi = std::min(lo + config.chunk_rows, total_rows);

        std::vector<double> mn(cols, HUGE_VAL), mx(cols, -HUGE_VAL);
        for (const auto& s : samples)
            for (Index r = lo; r < std::min(hi, s.rows()); ++r)
                for (Index c = 0; c < cols; ++c) {
                    mn[c] = std::min(mn[c], s(r, c));
                    mx[c] = std::max(mx[c], s(r, c));
                }
        std::vector<double> bias(cols);
        for (Index c = 0; c < cols; ++c)
            bias[c] = (mx[c] + mn[c]) / 2.0;

        std::vector<double> cmax(cols, 0.0);
        for (const auto& s : samples)
            for (Index r = lo; r < std::min(hi, s.rows()); ++r)
                for (Index c = 0; c < cols; ++c)
                    cmax[c] = std::max(cmax[c], std::fabs(s(r, c) - bias[c]));

        plan.chunks.push_back(make_chunk_plan(lo, hi, std::move(bias), std::move(cmax), config));
    }
    return plan;
}

QuantizedActivation quantize_activation(const FloatMatrix& x, std::shared_ptr<const DecompositionPlan> plan)
{
    if (!plan)
        throw std::invalid_argument("quantize_activation: null plan");
    if (x.cols() != plan->cols)
        throw ShapeError("quantize_activation: input has " + std::to_string(x.cols()) + " channels, plan has " +
                         std::to_string(plan->cols));
    const Index rows = x.rows(), cols = x.cols();
    std::vector<std::int64_t> q(rows * cols);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows); ++i) {
        const auto r = static_cast<Index>(i);
        const ChunkPlan& chunk = plan->chunk_for_row(r);
        for (Index c = 0; c < cols; ++c)
            q[r * cols + c] =
                quantize_value(x(r, c) - chunk.bias[c], chunk.ladder.scale(chunk.group_of[c]), plan->bits);
    }
    return {IntMatrix(rows, cols, plan->bits, std::move(q)), std::move(plan)};
}

QuantizedWeight quantize_weight(const FloatMatrix& w, int bits)
{
    auto sq = quantize_symmetric(w, bits, Granularity::per_column);
    return {std::move(sq.values), std::move(sq.params.scales)};
}

std::vector<FloatMatrix> bias_correction(const DecompositionPlan& plan, const FloatMatrix& w)
{
    if (w.rows() != plan.cols)
        throw ShapeError("bias_correction: weight has " + std::to_string(w.rows()) + " rows, plan has " +
                         std::to_string(plan.cols) + " channels");
    std::vector<FloatMatrix> out;
    out.reserve(plan.chunks.size());
    for (const auto& chunk : plan.chunks) {
        FloatMatrix row(1, w.cols());
        for (Index k = 0; k < w.rows(); ++k) {
            const double b = chunk.bias[k];
            if (b == 0.0)
                continue;
            for (Index n = 0; n < w.cols(); ++n)
                row(0, n) += b * w(k, n);
        }
        out.push_back(std::move(row));
    }
    return out;
}

FloatMatrix dequantize_activation(const QuantizedActivation& qa)
{
    const auto& plan = *qa.plan;
    FloatMatrix out(qa.data.rows(), qa.data.cols());
    for (Index r = 0; r < out.rows(); ++r) {
        const ChunkPlan& chunk = plan.chunk_for_row(r);
        for (Index c = 0; c < out.cols(); ++c)
            out(r, c) = static_cast<double>(qa.data(r, c)) * chunk.ladder.scale(chunk.group_of[c]) + chunk.bias[c];
    }
    return out;
}

} // namespace tender
