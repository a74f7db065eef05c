#include "fluff/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fluff {

namespace {

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

constexpr std::size_t kHeaderSize = 8 + 4 + 4 * 4;

} // namespace

std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderSize + t.size() * 4);
    out.insert(out.end(), kTensorFileMagic, kTensorFileMagic + 8);
    put_u32_le(out, kTensorFileVersion);
    put_u32_le(out, static_cast<std::uint32_t>(t.batch()));
    put_u32_le(out, static_cast<std::uint32_t>(t.channels()));
    put_u32_le(out, static_cast<std::uint32_t>(t.height()));
    put_u32_le(out, static_cast<std::uint32_t>(t.width()));
    for (std::size_t i = 0; i < t.size(); ++i) {
        put_u32_le(out, std::bit_cast<std::uint32_t>(t.data()[i]));
    }
    return out;
}

Tensor tensor_from_bytes(const std::uint8_t* bytes, std::size_t len) {
    if (len < 8 || std::memcmp(bytes, kTensorFileMagic, 8) != 0) {
        throw TensorFileError(TensorFileError::Code::bad_magic, "tensor file: bad magic");
    }
    if (len < kHeaderSize) {
        throw TensorFileError(TensorFileError::Code::bad_header, "tensor file: truncated header");
    }
    const std::uint32_t version = get_u32_le(bytes + 8);
    if (version != kTensorFileVersion) {
        throw TensorFileError(TensorFileError::Code::bad_version,
                              "tensor file: unsupported version " + std::to_string(version));
    }
    std::uint32_t dims[4];
    for (int i = 0; i < 4; ++i) {
        dims[i] = get_u32_le(bytes + 12 + 4 * i);
        if (dims[i] > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
            throw TensorFileError(TensorFileError::Code::bad_header, "tensor file: dimension too large");
        }
    }
    std::uint64_t n = 1;
    for (std::uint32_t d : dims) {
        n *= d;
    }
    if (len != kHeaderSize + n * 4) {
        throw TensorFileError(TensorFileError::Code::truncated,
                              "tensor file: payload length " + std::to_string(len - kHeaderSize) +
                                  " does not match shape (" + std::to_string(n * 4) + " expected)");
    }
    std::vector<float> values(static_cast<std::size_t>(n));
    for (std::uint64_t i = 0; i < n; ++i) {
        values[static_cast<std::size_t>(i)] =
            std::bit_cast<float>(get_u32_le(bytes + kHeaderSize + 4 * i));
    }
    return Tensor::from_data(static_cast<int>(dims[0]), static_cast<int>(dims[1]),
                             static_cast<int>(dims[2]), static_cast<int>(dims[3]),
                             std::move(values));
}

void tensor_write(const Tensor& t, const std::string& path) {
    const std::vector<std::uint8_t> bytes = tensor_to_bytes(t);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw TensorFileError(TensorFileError::Code::io_failure, "cannot open for write: " + path);
    }
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) {
        throw TensorFileError(TensorFileError::Code::io_failure, "write failed: " + path);
    }
}

Tensor tensor_read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw TensorFileError(TensorFileError::Code::io_failure, "cannot open for read: " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return tensor_from_bytes(bytes.data(), bytes.size());
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) {
        throw std::invalid_argument("uniform_int: empty range");
    }
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) { // full 64-bit range
        return static_cast<std::int64_t>(next_u64());
    }
    // Rejection sampling keeps the draw unbiased and platform-stable.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % span;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = mag * std::sin(two_pi * u2);
    has_spare_ = true;
    return mag * std::cos(two_pi * u2);
}

} // namespace fluff
