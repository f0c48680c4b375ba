#include "tender/reference.hpp"

#include "tender/errors.hpp"

namespace tender::reference {

FloatMatrix matmul_float(const FloatMatrix& a, const FloatMatrix& w)
{
    if (a.cols() != w.rows())
        throw ShapeError("reference::matmul_float: inner dimensions differ");
    FloatMatrix out(a.rows(), w.cols());
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < w.cols(); ++j) {
            double s = 0.0;
            for (Index k = 0; k < a.cols(); ++k)
                s += a(i, k) * w(k, j);
            out(i, j) = s;
        }
    return out;
}

std::vector<int128> matmul_int(const IntMatrix& a, const IntMatrix& w)
{
    if (a.cols() != w.rows())
        throw ShapeError("reference::matmul_int: inner dimensions differ");
    std::vector<int128> out(a.rows() * w.cols(), 0);
    for (Index i = 0; i < a.rows(); ++i)
        for (Index j = 0; j < w.cols(); ++j) {
            int128 s = 0;
            for (Index k = 0; k < a.cols(); ++k)
                s += static_cast<int128>(a(i, k)) * w(k, j);
            out[i * w.cols() + j] = s;
        }
    return out;
}

namespace {

int128 group_dot(const QuantizedActivation& qa, const QuantizedWeight& qw, const ChunkPlan& chunk, int g, Index r,
                   Index j)
{
    int128 p = 0;
    for (Index pos = chunk.boundaries[static_cast<Index>(g - 1)]; pos < chunk.boundaries[static_cast<Index>(g)];
         ++pos) {
        const Index k = chunk.permutation[pos];
        p += static_cast<int128>(qa.data(r, k)) * qw.data(k, j);
    }
    return p;
}

double corr(std::span<const FloatMatrix> correction, Index chunk, Index j)
{
    return correction.empty() ? 0.0 : correction[chunk](0, j);
}

} // namespace

SerialGemm gemm_explicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction)
{
    const Index m = qa.data.rows(), n = qw.data.cols();
    const auto groups = static_cast<Index>(plan.num_groups);
    SerialGemm out{FloatMatrix(m, n), std::vector<int128>(m * n, 0),
                   std::vector<std::vector<int128>>(groups, std::vector<int128>(m * n, 0))};
    for (Index r = 0; r < m; ++r) {
        const Index ci = plan.chunk_index(r);
        const ChunkPlan& chunk = plan.chunks[ci];
        for (Index j = 0; j < n; ++j) {
            double y = 0.0;
            int128 acc = 0;
            for (int g = 1; g <= plan.num_groups; ++g) {
                const int128 p = group_dot(qa, qw, chunk, g, r, j);
                out.partials[static_cast<Index>(g - 1)][r * n + j] = p;
                y += (chunk.ladder.scale(g) * qw.col_scales[j]) * static_cast<double>(p);
                acc = acc * plan.alpha + p;
            }
            out.output(r, j) = y + corr(correction, ci, j);
            out.accumulators[r * n + j] = acc;
        }
    }
    return out;
}

SerialGemm gemm_implicit(const QuantizedActivation& qa, const QuantizedWeight& qw, const DecompositionPlan& plan,
                         std::span<const FloatMatrix> correction)
{
    const Index m = qa.data.rows(), n = qw.data.cols();
    const auto groups = static_cast<Index>(plan.num_groups);
    SerialGemm out{FloatMatrix(m, n), std::vector<int128>(m * n, 0),
                   std::vector<std::vector<int128>>(groups, std::vector<int128>(m * n, 0))};
    for (Index r = 0; r < m; ++r) {
        const Index ci = plan.chunk_index(r);
        const ChunkPlan& chunk = plan.chunks[ci];
        const double s_last = chunk.ladder.scale(plan.num_groups);
        for (Index j = 0; j < n; ++j) {
            int128 acc = 0;
            for (int g = 1; g <= plan.num_groups; ++g) {
                acc *= (g > 1 ? plan.alpha : 1);
                const int128 p = group_dot(qa, qw, chunk, g, r, j);
                out.partials[static_cast<Index>(g - 1)][r * n + j] = p;
                acc += p;
            }
            out.accumulators[r * n + j] = acc;
            out.output(r, j) = static_cast<double>(acc) * (s_last * qw.col_scales[j]) + corr(correction, ci, j);
        }
    }
    return out;
}

} // namespace tender::reference
