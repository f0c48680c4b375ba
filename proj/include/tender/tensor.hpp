#pragma once

/**
 * Dense row-major matrices, symmetric quantization primitives and error
 * metrics.
 *
 * Symmetric scheme (no zero point):
 *   scale = absmax(group) / (2^(b-1) - 1)
 *   q     = clamp(round_half_away(x / scale), -(2^(b-1) - 1), 2^(b-1) - 1)
 *   x'    = q * scale
 *
 * An all-zero group gets scale 1 and quantizes to zeros.
 */

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace tender {

using Index = std::size_t;

/// Largest magnitude representable in the symmetric range of `bits`.
constexpr std::int64_t quant_max(int bits) noexcept
{
    return bits >= 64 ? INT64_MAX : (std::int64_t{1} << (bits - 1)) - 1;
}

class FloatMatrix {
public:
    FloatMatrix() = default;
    FloatMatrix(Index rows, Index cols);
    /// Throws ShapeError on a length mismatch and std::invalid_argument on
    /// non-finite values.
    FloatMatrix(Index rows, Index cols, std::vector<double> data);

    static FloatMatrix identity(Index n);

    Index rows() const noexcept { return rows_; }
    Index cols() const noexcept { return cols_; }
    Index size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double operator()(Index r, Index c) const noexcept { return data_[r * cols_ + c]; }
    double& operator()(Index r, Index c) noexcept { return data_[r * cols_ + c]; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }
    std::span<const double> row(Index r) const noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(Index r) noexcept { return {data_.data() + r * cols_, cols_}; }

    FloatMatrix transposed() const;
    /// Rows [first, last) as a new matrix.
    FloatMatrix row_slice(Index first, Index last) const;
    /// Columns [first, last) as a new matrix.
    FloatMatrix col_slice(Index first, Index last) const;

    bool operator==(const FloatMatrix&) const = default;

private:
    Index rows_ = 0;
    Index cols_ = 0;
    std::vector<double> data_;
};

/// Integer image of a matrix. Every element lies in the symmetric range
/// [-(2^(b-1)-1), 2^(b-1)-1]; -2^(b-1) is never stored.
class IntMatrix {
public:
    IntMatrix() = default;
    IntMatrix(Index rows, Index cols, int bit_width);
    /// Throws ConfigError for an unsupported width, ShapeError on a length
    /// mismatch and std::out_of_range for elements outside the range.
    IntMatrix(Index rows, Index cols, int bit_width, std::vector<std::int64_t> data);

    Index rows() const noexcept { return rows_; }
    Index cols() const noexcept { return cols_; }
    Index size() const noexcept { return data_.size(); }
    int bit_width() const noexcept { return bits_; }

    std::int64_t operator()(Index r, Index c) const noexcept { return data_[r * cols_ + c]; }
    std::span<const std::int64_t> data() const noexcept { return data_; }

    static bool supported_width(int bits) noexcept;

    bool operator==(const IntMatrix&) const = default;

private:
    Index rows_ = 0;
    Index cols_ = 0;
    int bits_ = 8;
    std::vector<std::int64_t> data_;
};

enum class Granularity { per_tensor, per_row, per_column };

struct QuantParams {
    Granularity granularity = Granularity::per_tensor;
    std::vector<double> scales;

    /// Scale applying to element (r, c).
    double scale_at(Index r, Index c) const noexcept
    {
        switch (granularity) {
        case Granularity::per_row: return scales[r];
        case Granularity::per_column: return scales[c];
        default: return scales[0];
        }
    }

    bool operator==(const QuantParams&) const = default;
};

struct SymmetricQuant {
    IntMatrix values;
    QuantParams params;
};

/// Rounds half away from zero and saturates to the symmetric range of `bits`.
std::int64_t quantize_value(double x, double scale, int bits) noexcept;

/// Scale for a group with the given absolute maximum (1 when it is zero).
double symmetric_scale(double absmax, int bits) noexcept;

/// Quantizes with one scale per tensor, row or column. `bits` must be 4, 8
/// or 16.
SymmetricQuant quantize_symmetric(const FloatMatrix& x, int bits, Granularity granularity);

FloatMatrix dequantize(const IntMatrix& q, const QuantParams& params);

/// Per-column (max + min) / 2.
std::vector<double> channel_bias(const FloatMatrix& x);

/// x with bias[c] subtracted from every element of column c.
FloatMatrix subtract_channel_bias(const FloatMatrix& x, std::span<const double> bias);

struct ChannelAbsMax {
    std::vector<double> cmax;
    double tmax = 0.0;
};

/// Per-column absolute maxima and their maximum. Expects centered input.
ChannelAbsMax channel_absmax(const FloatMatrix& x);

FloatMatrix matmul_float(const FloatMatrix& a, const FloatMatrix& w);

/// Exact integer product with 64-bit accumulation. The result is declared
/// `out_bits` wide; any partial sum leaving that range throws OverflowError.
IntMatrix matmul_int_wide(const IntMatrix& a, const IntMatrix& w, int out_bits = 32);

struct ErrorMetrics {
    double mse = 0.0;
    double max_abs_err = 0.0;
    /// +infinity when the error power is zero.
    double sqnr_db = 0.0;
};

ErrorMetrics error_metrics(const FloatMatrix& ref, const FloatMatrix& approx);

/// ||approx - ref||_F / ||ref||_F, 0 when both are zero.
double relative_frobenius_error(const FloatMatrix& ref, const FloatMatrix& approx);

} // namespace tender
