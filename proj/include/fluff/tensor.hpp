#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fluff/errors.hpp"

namespace fluff {

/// Dense 4-D tensor in batch-channel-height-width layout, row-major within
/// each dimension. Storage is always contiguous. An optional gradient buffer
/// of identical length can be attached for parameters.
///
/// Shapes are immutable after construction; every operation returns a new
/// tensor. The only sanctioned mutation of an existing buffer is gradient
/// accumulation through grad().
template <typename T>
class TensorT {
public:
    TensorT() = default;

    TensorT(int b, int c, int h, int w, T fill = T(0))
        : b_(b), c_(c), h_(h), w_(w), data_(checked_size(b, c, h, w), fill) {}

    static TensorT from_data(int b, int c, int h, int w, std::vector<T> values) {
        TensorT t;
        const std::size_t n = checked_size(b, c, h, w);
        if (values.size() != n) {
            throw std::invalid_argument("tensor data length " + std::to_string(values.size()) +
                                        " does not match shape product " + std::to_string(n));
        }
        t.b_ = b;
        t.c_ = c;
        t.h_ = h;
        t.w_ = w;
        t.data_ = std::move(values);
        return t;
    }

    int batch() const { return b_; }
    int channels() const { return c_; }
    int height() const { return h_; }
    int width() const { return w_; }

    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    bool same_shape(const TensorT& other) const {
        return b_ == other.b_ && c_ == other.c_ && h_ == other.h_ && w_ == other.w_;
    }

    std::string shape_str() const {
        return "(" + std::to_string(b_) + "," + std::to_string(c_) + "," +
               std::to_string(h_) + "," + std::to_string(w_) + ")";
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    std::size_t index(int b, int c, int h, int w) const {
        return ((static_cast<std::size_t>(b) * c_ + c) * h_ + h) * w_ + w;
    }

    T& at(int b, int c, int h, int w) { return data_[index(b, c, h, w)]; }
    const T& at(int b, int c, int h, int w) const { return data_[index(b, c, h, w)]; }

    bool has_grad() const { return grad_.size() == data_.size() && !data_.empty(); }

    /// Allocates a zero gradient buffer if not present.
    void ensure_grad() {
        if (grad_.size() != data_.size()) {
            grad_.assign(data_.size(), T(0));
        }
    }

    void zero_grad() {
        if (!grad_.empty()) {
            std::fill(grad_.begin(), grad_.end(), T(0));
        }
    }

    T* grad() {
        ensure_grad();
        return grad_.data();
    }
    const T* grad() const { return grad_.data(); }

    const std::vector<T>& values() const { return data_; }

    template <typename U>
    TensorT<U> cast() const {
        std::vector<U> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out[i] = static_cast<U>(data_[i]);
        }
        return TensorT<U>::from_data(b_, c_, h_, w_, std::move(out));
    }

private:
    static std::size_t checked_size(int b, int c, int h, int w) {
        const int dims[4] = {b, c, h, w};
        std::uint64_t n = 1;
        for (int d : dims) {
            if (d < 0) {
                throw std::invalid_argument("tensor dimensions must be non-negative");
            }
            if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(d)) {
                throw std::overflow_error("tensor shape product overflows");
            }
            n *= static_cast<std::uint64_t>(d);
        }
        constexpr std::uint64_t max_elems =
            static_cast<std::uint64_t>(std::numeric_limits<std::ptrdiff_t>::max()) / sizeof(T);
        if (n > max_elems) {
            throw std::overflow_error("tensor shape product exceeds addressable capacity");
        }
        return static_cast<std::size_t>(n);
    }

    int b_ = 0;
    int c_ = 0;
    int h_ = 0;
    int w_ = 0;
    std::vector<T> data_;
    std::vector<T> grad_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

/// TensorFile binary container: magic "FLUFTNSR", u32 version, four u32 dims,
/// little-endian f32 payload.
inline constexpr char kTensorFileMagic[8] = {'F', 'L', 'U', 'F', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

void tensor_write(const Tensor& t, const std::string& path);
Tensor tensor_read(const std::string& path);

std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t);
Tensor tensor_from_bytes(const std::uint8_t* bytes, std::size_t len);

/// Deterministic random generator. The raw 64-bit stream is the
/// standard-specified mt19937_64 sequence and the distribution transforms are
/// implemented here rather than taken from <random> (whose distributions are
/// implementation-defined), so identical seeds reproduce identical draws on
/// every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Inclusive integer range.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    /// Standard normal via Box-Muller.
    double normal();

    std::uint64_t seed() const { return seed_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace fluff
