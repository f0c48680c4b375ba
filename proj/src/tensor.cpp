#include "tender/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "tender/detail/accumulator.hpp"
#include "tender/errors.hpp"

namespace tender {

FloatMatrix::FloatMatrix(Index rows, Index cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

FloatMatrix::FloatMatrix(Index rows, Index cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data))
{
    if (data_.size() != rows * cols)
        throw ShapeError("FloatMatrix: expected " + std::to_string(rows * cols) + " values, got " +
                         std::to_string(data_.size()));
    for (double v : data_)
        if (!std::isfinite(v))
            throw std::invalid_argument("FloatMatrix: non-finite value");
}

FloatMatrix FloatMatrix::identity(Index n)
{
    FloatMatrix m(n, n);
    for (Index i = 0; i < n; ++i)
        m(i, i) = 1.0;
    return m;
}

FloatMatrix FloatMatrix::transposed() const
{
    FloatMatrix t(cols_, rows_);
    for (Index r = 0; r < rows_; ++r)
        for (Index c = 0; c < cols_; ++c)
            t(c, r) = (*this)(r, c);
    return t;
}

FloatMatrix FloatMatrix::row_slice(Index first, Index last) const
{
    if (first > last || last > rows_)
        throw ShapeError("FloatMatrix::row_slice: bad range");
    return FloatMatrix(last - first, cols_,
                       std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(first * cols_),
                                           data_.begin() + static_cast<std::ptrdiff_t>(last * cols_)));
}

FloatMatrix FloatMatrix::col_slice(Index first, Index last) const
{
    if (first > last || last > cols_)
        throw ShapeError("FloatMatrix::col_slice: bad range");
    FloatMatrix s(rows_, last - first);
    for (Index r = 0; r < rows_; ++r)
        for (Index c = first; c < last; ++c)
            s(r, c - first) = (*this)(r, c);
    return s;
}

bool IntMatrix::supported_width(int bits) noexcept
{
    return bits == 4 || bits == 8 || bits == 16 || bits == 32 || bits == 64;
}

IntMatrix::IntMatrix(Index rows, Index cols, int bit_width)
    : IntMatrix(rows, cols, bit_width, std::vector<std::int64_t>(rows * cols, 0))
{
}

IntMatrix::IntMatrix(Index rows, Index cols, int bit_width, std::vector<std::int64_t> data)
    : rows_(rows), cols_(cols), bits_(bit_width), data_(std::move(data))
{
    if (!supported_width(bits_))
        throw ConfigError("IntMatrix: unsupported bit width " + std::to_string(bits_));
    if (data_.size() != rows * cols)
        throw ShapeError("IntMatrix: expected " + std::to_string(rows * cols) + " values, got " +
                         std::to_string(data_.size()));
    const std::int64_t lim = quant_max(bits_);
    for (auto v : data_)
        if (v > lim || v < -lim)
            throw std::out_of_range("IntMatrix: value " + std::to_string(v) + " outside " +
                                    std::to_string(bits_) + "-bit symmetric range");
}

std::int64_t quantize_value(double x, double scale, int bits) noexcept
{
    const double lim = static_cast<double>(quant_max(bits));
    const double q = std::round(x / scale); // half away from zero
    return static_cast<std::int64_t>(std::clamp(q, -lim, lim));
}

double symmetric_scale(double absmax, int bits) noexcept
{
    return absmax > 0.0 ? absmax / static_cast<double>(quant_max(bits)) : 1.0;
}

namespace {

void check_quant_bits(int bits)
{
    if (bits != 4 && bits != 8 && bits != 16)
        throw ConfigError("quantization bit width must be 4, 8 or 16, got " + std::to_string(bits));
}

} // namespace

SymmetricQuant quantize_symmetric(const FloatMatrix& x, int bits, Granularity granularity)
{
    check_quant_bits(bits);
    QuantParams params{granularity, {}};
    switch (granularity) {
    case Granularity::per_tensor: {
        double m = 0.0;
        for (double v : x.data())
            m = std::max(m, std::fabs(v));
        params.scales.assign(1, symmetric_scale(m, bits));
        break;
    }
    case Granularity::per_row:
        params.scales.resize(x.rows());
        for (Index r = 0; r < x.rows(); ++r) {
            double m = 0.0;
            for (double v : x.row(r))
                m = std::max(m, std::fabs(v));
            params.scales[r] = symmetric_scale(m, bits);
        }
        break;
    case Granularity::per_column: {
        std::vector<double> m(x.cols(), 0.0);
        for (Index r = 0; r < x.rows(); ++r)
            for (Index c = 0; c < x.cols(); ++c)
                m[c] = std::max(m[c], std::fabs(x(r, c)));
        params.scales.resize(x.cols());
        for (Index c = 0; c < x.cols(); ++c)
            params.scales[c] = symmetric_scale(m[c], bits);
        break;
    }
    }

    std::vector<std::int64_t> q(x.size());
    for (Index r = 0; r < x.rows(); ++r)
        for (Index c = 0; c < x.cols(); ++c)
            q[r * x.cols() + c] = quantize_value(x(r, c), params.scale_at(r, c), bits);
    return {IntMatrix(x.rows(), x.cols(), bits, std::move(q)), std::move(params)};
}

FloatMatrix dequantize(const IntMatrix& q, const QuantParams& params)
{
    const Index expected = params.granularity == Granularity::per_tensor ? 1
                           : params.granularity == Granularity::per_row ? q.rows()
                                                                        : q.cols();
    if (params.scales.size() != expected)
        throw ShapeError("dequantize: " + std::to_string(params.scales.size()) + " scales for granularity needing " +
                         std::to_string(expected));
    FloatMatrix out(q.rows(), q.cols());
    for (Index r = 0; r < q.rows(); ++r)
        for (Index c = 0; c < q.cols(); ++c)
            out(r, c) = static_cast<double>(q(r, c)) * params.scale_at(r, c);
    return out;
}

std::vector<double> channel_bias(const FloatMatrix& x)
{
    if (x.rows() == 0 || x.cols() == 0)
        throw ShapeError("channel_bias: empty matrix");
    std::vector<double> lo(x.row(0).begin(), x.row(0).end());
    std::vector<double> hi = lo;
    for (Index r = 1; r < x.rows(); ++r)
        for (Index c = 0; c < x.cols(); ++c) {
            lo[c] = std::min(lo[c], x(r, c));
            hi[c] = std::max(hi[c], x(r, c));
        }
    std::vector<double> bias(x.cols());
    for (Index c = 0; c < x.cols(); ++c)
        bias[c] = (hi[c] + lo[c]) / 2.0;
    return bias;
}

FloatMatrix subtract_channel_bias(const FloatMatrix& x, std::span<const double> bias)
{
    if (bias.size() != x.cols())
        throw ShapeError("subtract_channel_bias: bias length differs from column count");
    FloatMatrix out = x;
    for (Index r = 0; r < x.rows(); ++r)
        for (Index c = 0; c < x.cols(); ++c)
            out(r, c) -= bias[c];
    return out;
}

ChannelAbsMax channel_absmax(const FloatMatrix& x)
{
    ChannelAbsMax out;
    out.cmax.assign(x.cols(), 0.0);
    for (Index r = 0; r < x.rows(); ++r)
        for (Index c = 0; c < x.cols(); ++c)
            out.cmax[c] = std::max(out.cmax[c], std::fabs(x(r, c)));
    for (double m : out.cmax)
        out.tmax = std::max(out.tmax, m);
    return out;
}

FloatMatrix matmul_float(const FloatMatrix& a, const FloatMatrix& w)
{
    if (a.cols() != w.rows())
        throw ShapeError("matmul_float: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(w.rows()) + " differ");
    const Index m = a.rows(), k = a.cols(), n = w.cols();
    FloatMatrix out(m, n);
    const double* ap = a.data().data();
    const double* wp = w.data().data();
    double* op = out.data().data();
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        double* orow = op + static_cast<Index>(i) * n;
        for (Index p = 0; p < k; ++p) {
            const double av = ap[static_cast<Index>(i) * k + p];
            const double* wrow = wp + p * n;
            for (Index j = 0; j < n; ++j)
                orow[j] += av * wrow[j];
        }
    }
    return out;
}

IntMatrix matmul_int_wide(const IntMatrix& a, const IntMatrix& w, int out_bits)
{
    if (a.cols() != w.rows())
        throw ShapeError("matmul_int_wide: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(w.rows()) + " differ");
    if (out_bits < 2 || out_bits > 64)
        throw ConfigError("matmul_int_wide: output width must be in [2, 64]");
    const Index m = a.rows(), k = a.cols(), n = w.cols();
    std::vector<std::int64_t> out(m * n, 0);
    bool overflow = false;
#pragma omp parallel for schedule(static) reduction(|| : overflow)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const auto row = static_cast<Index>(i);
        std::vector<detail::Accumulator> acc(n, detail::Accumulator(out_bits));
        for (Index p = 0; p < k; ++p) {
            const std::int64_t x = a(row, p);
            for (Index j = 0; j < n; ++j)
                acc[j].mac(x, w(p, j));
        }
        for (Index j = 0; j < n; ++j) {
            overflow = overflow || acc[j].overflowed();
            out[row * n + j] = acc[j].value();
        }
    }
    if (overflow)
        throw OverflowError("matmul_int_wide: accumulation exceeds " + std::to_string(out_bits) + " bits");
    return IntMatrix(m, n, detail::storage_width(out_bits), std::move(out));
}

ErrorMetrics error_metrics(const FloatMatrix& ref, const FloatMatrix& approx)
{
    if (ref.rows() != approx.rows() || ref.cols() != approx.cols())
        throw ShapeError("error_metrics: shapes differ");
    ErrorMetrics m;
    double signal = 0.0, noise = 0.0;
    for (Index i = 0; i < ref.size(); ++i) {
        const double e = approx.data()[i] - ref.data()[i];
        noise += e * e;
        signal += ref.data()[i] * ref.data()[i];
        m.max_abs_err = std::max(m.max_abs_err, std::fabs(e));
    }
    m.mse = ref.size() ? noise / static_cast<double>(ref.size()) : 0.0;
    m.sqnr_db = noise == 0.0 ? std::numeric_limits<double>::infinity() : 10.0 * std::log10(signal / noise);
    return m;
}

double relative_frobenius_error(const FloatMatrix& ref, const FloatMatrix& approx)
{
    if (ref.rows() != approx.rows() || ref.cols() != approx.cols())
        throw ShapeError("relative_frobenius_error: shapes differ");
    double num = 0.0, den = 0.0;
    for (Index i = 0; i < ref.size(); ++i) {
        const double e = approx.data()[i] - ref.data()[i];
        num += e * e;
        den += ref.data()[i] * ref.data()[i];
    }
    if (num == 0.0)
        return 0.0;
    return den == 0.0 ? std::numeric_limits<double>::infinity() : std::sqrt(num / den);
}

} // namespace tender
