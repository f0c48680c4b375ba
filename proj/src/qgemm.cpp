#include "tender/qgemm.hpp"

#include <string>

#include "tender/detail/accumulator.hpp"
#include "tender/errors.hpp"

namespace tender {

using detail::Accumulator;

void check_gemm_operands(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction)
{
    if (qa.data.cols() != qw.data.rows())
        throw ShapeError("gemm: activation has " + std::to_string(qa.data.cols()) + " channels, weight has " +
                         std::to_string(qw.data.rows()) + " rows");
    if (qw.col_scales.size() != qw.data.cols())
        throw ShapeError("gemm: weight scale count differs from column count");
    if (plan.cols != qa.data.cols() || plan.chunks.empty())
        throw ShapeError("gemm: plan does not describe the activation");
    if (qa.plan && qa.plan.get() != &plan && !(*qa.plan == plan))
        throw std::invalid_argument("gemm: activation was quantized with a different plan");
    if (!correction.empty()) {
        if (correction.size() != plan.chunks.size())
            throw ShapeError("gemm: need one bias-correction row per chunk");
        for (const auto& c : correction)
            if (c.rows() != 1 || c.cols() != qw.data.cols())
                throw ShapeError("gemm: bias-correction row has the wrong shape");
    }
}

namespace {

void check_acc_bits(int acc_bits)
{
    if (acc_bits < 2 || acc_bits > 64)
        throw ConfigError("accumulator width must be in [2, 64], got " + std::to_string(acc_bits));
}

double correction_at(std::span<const FloatMatrix> correction, Index chunk, Index col)
{
    return correction.empty() ? 0.0 : correction[chunk](0, col);
}

void finish(GemmResult& r, const GemmOptions& options, const char* what)
{
    if (r.overflow_flag && options.throw_on_overflow)
        throw OverflowError(std::string(what) + ": accumulator exceeds " + std::to_string(options.acc_bits) +
                            " bits");
}

} // namespace

double dequantize_accumulator(std::int64_t acc, const DecompositionPlan& plan, Index row, double weight_scale,
                              std::span<const FloatMatrix> correction, Index col)
{
    const Index ci = plan.chunk_index(row);
    const auto& ladder = plan.chunks[ci].ladder;
    const double s = ladder.scale(ladder.num_groups) * weight_scale;
    return static_cast<double>(acc) * s + correction_at(correction, ci, col);
}

GemmResult gemm_explicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction, const GemmOptions& options)
{
    check_acc_bits(options.acc_bits);
    check_gemm_operands(qa, qw, plan, correction);
    const Index m = qa.data.rows(), n = qw.data.cols();
    const int groups = plan.num_groups;
    const auto g_count = static_cast<Index>(groups);

    GemmResult result;
    result.output = FloatMatrix(m, n);
    std::vector<std::int64_t> combined(m * n, 0);
    std::vector<std::vector<std::int64_t>> partials(options.trace ? g_count : 0, std::vector<std::int64_t>(m * n));
    bool overflow = false;

#pragma omp parallel for schedule(dynamic, 4) reduction(|| : overflow)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const auto r = static_cast<Index>(i);
        const Index ci = plan.chunk_index(r);
        const ChunkPlan& chunk = plan.chunks[ci];
        std::vector<Accumulator> part(n, Accumulator(options.acc_bits));
        std::vector<Accumulator> equiv(n, Accumulator(64));
        std::vector<double> y(n, 0.0);
        for (int g = 1; g <= groups; ++g) {
            part.assign(n, Accumulator(options.acc_bits));
            for (Index k : chunk.group_channels(g)) {
                const std::int64_t a = qa.data(r, k);
                for (Index j = 0; j < n; ++j)
                    part[j].mac(a, qw.data(k, j));
            }
            const double sg = chunk.ladder.scale(g);
            for (Index j = 0; j < n; ++j) {
                overflow = overflow || part[j].overflowed();
                y[j] += (sg * qw.col_scales[j]) * static_cast<double>(part[j].value());
                if (g > 1)
                    equiv[j].rescale(plan.alpha);
                equiv[j].add(part[j].value());
                if (options.trace)
                    partials[static_cast<Index>(g - 1)][r * n + j] = part[j].value();
            }
        }
        for (Index j = 0; j < n; ++j) {
            result.output(r, j) = y[j] + correction_at(correction, ci, j);
            combined[r * n + j] = equiv[j].value();
        }
    }

    result.overflow_flag = overflow;
    result.accumulators = IntMatrix(m, n, 64, std::move(combined));
    const int pstore = detail::storage_width(options.acc_bits);
    for (auto& p : partials)
        result.int_partials.emplace_back(m, n, pstore, std::move(p));
    result.stats.reduction_passes = static_cast<std::uint64_t>(m) * n * g_count;
    result.stats.macs = static_cast<std::uint64_t>(m) * n * qa.data.cols();
    finish(result, options, "gemm_explicit");
    return result;
}

GemmResult gemm_implicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction, const GemmOptions& options)
{
    check_acc_bits(options.acc_bits);
    check_gemm_operands(qa, qw, plan, correction);
    const Index m = qa.data.rows(), n = qw.data.cols();
    const int groups = plan.num_groups;
    const auto g_count = static_cast<Index>(groups);

    GemmResult result;
    result.output = FloatMatrix(m, n);
    std::vector<std::int64_t> accs(m * n, 0);
    std::vector<std::vector<std::int64_t>> partials(options.trace ? g_count : 0, std::vector<std::int64_t>(m * n));
    bool overflow = false;

#pragma omp parallel for schedule(dynamic, 4) reduction(|| : overflow)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const auto r = static_cast<Index>(i);
        const ChunkPlan& chunk = plan.chunk_for_row(r);
        std::vector<Accumulator> acc(n, Accumulator(options.acc_bits));
        for (int g = 1; g <= groups; ++g) {
            if (g > 1)
                for (auto& a : acc)
                    a.rescale(plan.alpha);
            std::vector<std::int64_t> before;
            if (options.trace)
                for (const auto& a : acc)
                    before.push_back(a.value());
            for (Index k : chunk.group_channels(g)) {
                const std::int64_t a = qa.data(r, k);
                for (Index j = 0; j < n; ++j)
                    acc[j].mac(a, qw.data(k, j));
            }
            if (options.trace)
                for (Index j = 0; j < n; ++j)
                    partials[static_cast<Index>(g - 1)][r * n + j] = acc[j].value() - before[j];
        }
        for (Index j = 0; j < n; ++j) {
            overflow = overflow || acc[j].overflowed();
            accs[r * n + j] = acc[j].value();
            result.output(r, j) = dequantize_accumulator(acc[j].value(), plan, r, qw.col_scales[j], correction, j);
        }
    }

    result.overflow_flag = overflow;
    result.accumulators = IntMatrix(m, n, detail::storage_width(options.acc_bits), std::move(accs));
    const int pstore = detail::storage_width(options.acc_bits);
    for (auto& p : partials)
        result.int_partials.emplace_back(m, n, pstore, std::move(p));
    result.stats.reduction_passes = static_cast<std::uint64_t>(m) * n;
    result.stats.macs = static_cast<std::uint64_t>(m) * n * qa.data.cols();
    result.stats.rescales = static_cast<std::uint64_t>(m) * n * (g_count - 1);
    finish(result, options, "gemm_implicit");
    return result;
}

FloatMatrix gemm_reference(const FloatMatrix& x, const FloatMatrix& w) { return matmul_float(x, w); }

PreparedGemm prepare_gemm(const FloatMatrix& x, const FloatMatrix& w, std::shared_ptr<const DecompositionPlan> plan,
                          int weight_bits)
{
    if (!plan)
        throw std::invalid_argument("prepare_gemm: null plan");
    if (x.cols() != w.rows())
        throw ShapeError("prepare_gemm: inner dimensions " + std::to_string(x.cols()) + " and " +
                         std::to_string(w.rows()) + " differ");
    auto correction = bias_correction(*plan, w);
    return {quantize_activation(x, std::move(plan)), quantize_weight(w, weight_bits), std::move(correction)};
}

CompareReport compare_paths(const FloatMatrix& x, const FloatMatrix& w, const PlanConfig& config,
                            std::shared_ptr<const DecompositionPlan> plan, const GemmOptions& options)
{
    if (!plan)
        plan = std::make_shared<const DecompositionPlan>(build_plan(std::span<const FloatMatrix>(&x, 1), config));
    const auto prep = prepare_gemm(x, w, plan, plan->bits);
    const FloatMatrix ref = gemm_reference(x, w);

    GemmOptions opts = options;
    opts.trace = false;
    const auto ex = gemm_explicit(prep.qa, prep.qw, *plan, prep.correction, opts);
    const auto im = gemm_implicit(prep.qa, prep.qw, *plan, prep.correction, opts);

    CompareReport report;
    report.paths.push_back({"reference", error_metrics(ref, ref)});
    report.paths.push_back({"explicit", error_metrics(ref, ex.output)});
    report.paths.push_back({"implicit", error_metrics(ref, im.output)});
    report.overflow_flag = ex.overflow_flag || im.overflow_flag;
    return report;
}

} // namespace tender
