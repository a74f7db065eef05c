#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fluff/tensor.hpp"

namespace fluff {

template <typename T>
struct BufferRef {
    std::string name;
    T* data = nullptr;
    std::size_t size = 0;
};

/// Central finite-difference comparison. `analytic[i][j]` is the claimed
/// gradient of the scalar loss wrt buffers[i].data[j]; `loss` re-evaluates the
/// scalar from the buffers' current contents. Relative error uses
/// |a - n| / max(|a|, |n|, denom_floor) so near-zero gradients are compared
/// absolutely.
template <typename T>
double fd_max_rel_error(const std::vector<BufferRef<T>>& buffers,
                        const std::vector<std::vector<double>>& analytic,
                        const std::function<double()>& loss, double eps, double denom_floor) {
    if (buffers.size() != analytic.size()) {
        throw std::invalid_argument("fd_max_rel_error: analytic grads do not cover all buffers");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < buffers.size(); ++i) {
        const BufferRef<T>& buf = buffers[i];
        if (analytic[i].size() != buf.size) {
            throw std::invalid_argument("fd_max_rel_error: analytic grad length mismatch for " + buf.name);
        }
        for (std::size_t j = 0; j < buf.size; ++j) {
            const T saved = buf.data[j];
            buf.data[j] = static_cast<T>(static_cast<double>(saved) + eps);
            const double f_plus = loss();
            buf.data[j] = static_cast<T>(static_cast<double>(saved) - eps);
            const double f_minus = loss();
            buf.data[j] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * eps);
            const double a = analytic[i][j];
            const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
            const double rel = std::abs(a - numeric) / denom;
            if (rel > worst) {
                worst = rel;
            }
        }
    }
    return worst;
}

inline constexpr double kFdEpsF32 = 1e-3;
inline constexpr double kFdEpsF64 = 1e-5;
inline constexpr double kFdTolF32 = 1e-3;
inline constexpr double kFdTolF64 = 1e-6;
inline constexpr double kFdFloorF32 = 1e-2;
inline constexpr double kFdFloorF64 = 1e-4;

struct GradCheckResult {
    std::string op;
    std::string detail;
    std::string mode; // "f32" or "f64"
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

/// Runs the finite-difference suite over every op with a backward pass
/// (conv2d, relu, max/avg pooling, concat, add, the fluff block, multibox
/// loss), five random small shapes each, in f32 and f64 modes.
std::vector<GradCheckResult> run_gradcheck_suite(std::uint64_t seed);

} // namespace fluff
