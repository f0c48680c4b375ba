#pragma once

// TNSR binary tensor container:
//
//   "TNSR" | u32 version (=1) | u8 dtype | u8 ndim (=2) | ndim x u64 dims | data
//
// All integers little-endian, data row-major. dtype: 0=float64, 1=int8,
// 2=int32, 3=float32.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

#include "tender/tensor.hpp"

namespace tender::tnsr {

enum class DType : std::uint8_t { float64 = 0, int8 = 1, int32 = 2, float32 = 3 };

inline constexpr std::uint32_t kVersion = 1;

/// A decoded tensor together with the dtype it was stored as, so that
/// re-encoding reproduces the original bytes.
struct Tensor {
    DType dtype = DType::float64;
    std::variant<FloatMatrix, IntMatrix> value;

    bool is_float() const noexcept { return std::holds_alternative<FloatMatrix>(value); }
    /// Float view; integer tensors are converted element-wise.
    FloatMatrix as_float() const;
    const IntMatrix& as_int() const;
};

Tensor from_float(FloatMatrix m, DType dtype = DType::float64);
/// Picks int8 for widths up to 8 and int32 otherwise.
Tensor from_int(IntMatrix m);

std::vector<std::uint8_t> encode(const Tensor& t);
/// Throws FormatError on malformed input.
Tensor decode(const std::vector<std::uint8_t>& bytes);

void write_file(const std::filesystem::path& path, const Tensor& t);
Tensor read_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

} // namespace tender::tnsr
