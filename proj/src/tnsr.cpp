#include "tender/tnsr.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>

#include "tender/errors.hpp"

namespace tender::tnsr {

namespace {

static_assert(std::endian::native == std::endian::little, "TNSR I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v)
{
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    template <typename T>
    T get()
    {
        if (bytes_.size() - pos_ < sizeof(T))
            throw FormatError("TNSR: truncated data");
        T v;
        std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

std::size_t element_size(DType d)
{
    switch (d) {
    case DType::float64: return 8;
    case DType::int8: return 1;
    case DType::int32: return 4;
    case DType::float32: return 4;
    }
    throw FormatError("TNSR: unknown dtype");
}

} // namespace

FloatMatrix Tensor::as_float() const
{
    if (const auto* f = std::get_if<FloatMatrix>(&value))
        return *f;
    const auto& q = std::get<IntMatrix>(value);
    std::vector<double> d(q.data().begin(), q.data().end());
    return FloatMatrix(q.rows(), q.cols(), std::move(d));
}

const IntMatrix& Tensor::as_int() const
{
    if (const auto* q = std::get_if<IntMatrix>(&value))
        return *q;
    throw FormatError("TNSR: expected an integer tensor");
}

Tensor from_float(FloatMatrix m, DType dtype)
{
    if (dtype != DType::float64 && dtype != DType::float32)
        throw std::invalid_argument("from_float: dtype must be float64 or float32");
    return {dtype, std::move(m)};
}

Tensor from_int(IntMatrix m)
{
    if (m.bit_width() > 32)
        throw std::invalid_argument("from_int: widths above 32 bits are not representable in TNSR");
    const DType d = m.bit_width() <= 8 ? DType::int8 : DType::int32;
    return {d, std::move(m)};
}

std::vector<std::uint8_t> encode(const Tensor& t)
{
    Index rows = 0, cols = 0;
    std::visit([&](const auto& m) { rows = m.rows(), cols = m.cols(); }, t.value);

    std::vector<std::uint8_t> out{'T', 'N', 'S', 'R'};
    put<std::uint32_t>(out, kVersion);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint8_t>(out, 2);
    put<std::uint64_t>(out, rows);
    put<std::uint64_t>(out, cols);
    out.reserve(out.size() + rows * cols * element_size(t.dtype));

    switch (t.dtype) {
    case DType::float64:
        for (double v : std::get<FloatMatrix>(t.value).data())
            put<double>(out, v);
        break;
    case DType::float32:
        for (double v : std::get<FloatMatrix>(t.value).data())
            put<float>(out, static_cast<float>(v));
        break;
    case DType::int8:
        for (auto v : std::get<IntMatrix>(t.value).data())
            put<std::int8_t>(out, static_cast<std::int8_t>(v));
        break;
    case DType::int32:
        for (auto v : std::get<IntMatrix>(t.value).data())
            put<std::int32_t>(out, static_cast<std::int32_t>(v));
        break;
    }
    return out;
}

Tensor decode(const std::vector<std::uint8_t>& bytes)
{
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "TNSR", 4) != 0)
        throw FormatError("TNSR: bad magic bytes");
    std::vector<std::uint8_t> body(bytes.begin() + 4, bytes.end());
    Reader in(body);
    const auto version = in.get<std::uint32_t>();
    if (version != kVersion)
        throw FormatError("TNSR: unsupported version " + std::to_string(version));
    const auto code = in.get<std::uint8_t>();
    if (code > 3)
        throw FormatError("TNSR: unknown dtype code " + std::to_string(code));
    const auto dtype = static_cast<DType>(code);
    const auto ndim = in.get<std::uint8_t>();
    if (ndim != 2)
        throw FormatError("TNSR: expected ndim 2, got " + std::to_string(ndim));
    const auto rows = in.get<std::uint64_t>();
    const auto cols = in.get<std::uint64_t>();
    const std::size_t esz = element_size(dtype);
    if (cols != 0 && rows > std::numeric_limits<std::uint64_t>::max() / cols / esz)
        throw FormatError("TNSR: dimensions overflow");
    const std::uint64_t count = rows * cols;
    if (in.remaining() != count * esz)
        throw FormatError("TNSR: payload is " + std::to_string(in.remaining()) + " bytes, expected " +
                          std::to_string(count * esz));

    try {
        switch (dtype) {
        case DType::float64:
        case DType::float32: {
            std::vector<double> d(count);
            for (auto& v : d)
                v = dtype == DType::float64 ? in.get<double>() : static_cast<double>(in.get<float>());
            return {dtype, FloatMatrix(rows, cols, std::move(d))};
        }
        case DType::int8:
        case DType::int32: {
            std::vector<std::int64_t> d(count);
            for (auto& v : d)
                v = dtype == DType::int8 ? in.get<std::int8_t>() : in.get<std::int32_t>();
            return {dtype, IntMatrix(rows, cols, dtype == DType::int8 ? 8 : 32, std::move(d))};
        }
        }
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("TNSR: invalid payload: ") + e.what());
    }
    throw FormatError("TNSR: unknown dtype");
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw FormatError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw FormatError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f)
        throw FormatError("write failed: " + path.string());
}

void write_file(const std::filesystem::path& path, const Tensor& t) { write_bytes(path, encode(t)); }

Tensor read_file(const std::filesystem::path& path) { return decode(read_bytes(path)); }

} // namespace tender::tnsr
