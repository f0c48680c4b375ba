#pragma once

#include <cstdint>
#include <limits>

#include "tender/detail/int128.hpp"
#include "tender/tensor.hpp"

namespace tender::detail {

/// Signed accumulator register of a declared width. Arithmetic runs in 128
/// bits, so leaving the declared range is detected rather than wrapped. Once
/// overflowed the register keeps the saturated 64-bit value and stays flagged.
class Accumulator {
public:
    explicit Accumulator(int bits) noexcept : limit_(quant_max(bits)) {}

    void mac(std::int64_t a, std::int64_t b) noexcept
    {
        std::int64_t p, s;
        if (__builtin_mul_overflow(a, b, &p) || __builtin_add_overflow(value_, p, &s))
            store(static_cast<int128>(value_) + static_cast<int128>(a) * b);
        else
            store64(s);
    }

    void add(std::int64_t v) noexcept
    {
        std::int64_t s;
        if (__builtin_add_overflow(value_, v, &s))
            store(static_cast<int128>(value_) + v);
        else
            store64(s);
    }

    void rescale(std::int64_t alpha) noexcept
    {
        if (alpha == 2)
            store(static_cast<int128>(value_) << 1);
        else
            store(static_cast<int128>(value_) * alpha);
    }

    std::int64_t value() const noexcept { return value_; }
    bool overflowed() const noexcept { return overflow_; }

private:
    void store64(std::int64_t v) noexcept
    {
        if (v > limit_ || v < -limit_)
            overflow_ = true;
        value_ = v < -INT64_MAX ? -INT64_MAX : v;
    }

    void store(int128 v) noexcept
    {
        if (v > limit_ || v < -static_cast<int128>(limit_))
            overflow_ = true;
        constexpr auto hi = static_cast<int128>(std::numeric_limits<std::int64_t>::max());
        if (v > hi)
            v = hi;
        else if (v < -hi)
            v = -hi;
        value_ = static_cast<std::int64_t>(v);
    }

    std::int64_t limit_;
    std::int64_t value_ = 0;
    bool overflow_ = false;
};

/// IntMatrix width able to hold accumulators declared `acc_bits` wide.
inline int storage_width(int acc_bits) noexcept
{
    return acc_bits <= 32 ? 32 : 64;
}

} // namespace tender::detail
