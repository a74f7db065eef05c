#pragma once

#include <string>
#include <vector>

#include "fluff/nn_ops.hpp"

namespace fluff {

/// Which operation sits at each lattice cell in place of the 3x3 dilated conv.
enum class FusionKind {
    dilated_conv,
    plain_conv,
    max_pool,
    avg_pool,
};

std::string fusion_kind_name(FusionKind k);
FusionKind fusion_kind_from_name(const std::string& name);

enum class Rounding {
    half_away_from_zero,
    half_to_even,
};

/// Dilated-rate row for a block at pyramid position `level_index`: the rates
/// are round((1 + l/4) * init) with a minimum of 1. Position 0 keeps the
/// initial rates (backbone-attached blocks); extra feature layers use their
/// 1-based position. Computed in integer arithmetic so the result is
/// byte-stable everywhere.
std::vector<int> rate_schedule(const std::vector<int>& init_rates, int level_index,
                               Rounding rounding = Rounding::half_away_from_zero);

inline const std::vector<int> kDefaultInitRates = {1, 2, 3, 6};

/// Structure of one block: R parallel branches of L chained 3x3 cells, all
/// L*R intermediate outputs concatenated, projected by a 1x1 conv and
/// residually combined with a shortcut.
struct FluffConfig {
    int levels = 3;
    int branches = 4;
    int c_pre = 0;
    int c_out = 0; // 0 means same as c_pre
    std::vector<std::vector<int>> rates; // levels x branches

    bool multi_level = true;   // off forces levels == 1
    bool multi_branch = true;  // off forces branches == 1
    FusionKind fusion = FusionKind::dilated_conv;
    bool inter_level_relu = true;
    bool identity_shortcut = false;
    bool enabled = true; // false: the block is absent (plain baseline)

    int out_channels() const { return c_out > 0 ? c_out : c_pre; }
    int branch_channels() const { return branches > 0 ? c_pre / branches : 0; }
    int concat_channel_count() const { return levels * branches * branch_channels(); }

    void validate() const;

    /// Fills `rates` with `levels` copies of rate_schedule(init, level_index).
    void apply_rate_schedule(const std::vector<int>& init_rates, int level_index);
};

/// Default config: L=3, R=4, rates [1,2,3,6] at every level.
FluffConfig default_fluff_config(int c_pre, int c_out = 0);

inline const std::vector<std::string> kVariantRows = {
    "SSD-baseline", "ANet", "BNet", "CNet", "CNet-maxpool", "CNet-avgpool", "DNet", "Fluff",
};

/// Derives an ablation variant from a base config. Rows follow the component
/// axes: ANet multi-level single-branch plain conv, BNet multi-branch
/// single-level plain conv, CNet both with plain convs, DNet adds dilation,
/// Fluff adds the inter-level ReLU; the pooling rows swap the 3x3 op.
FluffConfig make_variant(const FluffConfig& base, const std::string& row);

template <typename T>
struct FluffParamsT {
    std::vector<ConvLayerT<T>> entry;                 // R entry 1x1 convs, c_pre -> c_pre/R
    std::vector<std::vector<ConvLayerT<T>>> lattice;  // [L][R] 3x3 convs; empty for pooling fusion
    ConvLayerT<T> project;                            // 1x1, L*R*(c_pre/R) -> c_out
    ConvLayerT<T> shortcut;                           // 1x1, c_pre -> c_out; unused when identity
    bool has_shortcut_conv = true;

    void zero_grads();
    std::size_t parameter_element_count() const;

    /// Visits every parameter layer in a fixed order with a hierarchical name.
    template <typename Fn>
    void for_each_layer(Fn&& fn) {
        for (std::size_t r = 0; r < entry.size(); ++r) {
            fn("entry" + std::to_string(r), entry[r]);
        }
        for (std::size_t l = 0; l < lattice.size(); ++l) {
            for (std::size_t r = 0; r < lattice[l].size(); ++r) {
                fn("lattice" + std::to_string(l) + "_" + std::to_string(r), lattice[l][r]);
            }
        }
        fn("project", project);
        if (has_shortcut_conv) {
            fn("shortcut", shortcut);
        }
    }
};

using FluffParams = FluffParamsT<float>;

template <typename T>
FluffParamsT<T> init_fluff_params(const FluffConfig& cfg, Rng& rng);

template <typename T>
struct FluffCacheT {
    std::vector<std::vector<TensorT<T>>> cell_in;  // [L][R] inputs to each lattice cell
    std::vector<std::vector<TensorT<T>>> cell_out; // [L][R] recorded pre-ReLU outputs
    TensorT<T> concat;
    TensorT<T> post; // ReLU(concat), input of the projection conv
    TensorT<T> sum;  // projection + shortcut, pre final ReLU
};

template <typename T>
TensorT<T> fluff_forward_cached(const TensorT<T>& x, const FluffConfig& cfg,
                                const FluffParamsT<T>& params, FluffCacheT<T>& cache);

template <typename T>
TensorT<T> fluff_forward(const TensorT<T>& x, const FluffConfig& cfg, const FluffParamsT<T>& params) {
    FluffCacheT<T> cache;
    return fluff_forward_cached(x, cfg, params, cache);
}

/// Backward from a cached forward. Returns grad wrt x; parameter grads
/// accumulate into the layers' grad buffers.
template <typename T>
TensorT<T> fluff_backward_cached(const TensorT<T>& x, const FluffConfig& cfg, FluffParamsT<T>& params,
                                 const FluffCacheT<T>& cache, const TensorT<T>& grad_out);

template <typename T>
TensorT<T> fluff_backward(const TensorT<T>& x, const FluffConfig& cfg, FluffParamsT<T>& params,
                          const TensorT<T>& grad_out) {
    FluffCacheT<T> cache;
    fluff_forward_cached(x, cfg, params, cache);
    return fluff_backward_cached(x, cfg, params, cache, grad_out);
}

// ---- implementation ----

template <typename T>
FluffParamsT<T> init_fluff_params(const FluffConfig& cfg, Rng& rng) {
    cfg.validate();
    FluffParamsT<T> p;
    const int cb = cfg.branch_channels();
    p.entry.reserve(cfg.branches);
    for (int r = 0; r < cfg.branches; ++r) {
        p.entry.push_back(make_conv<T>(cb, cfg.c_pre, 1, 1, 0, 1, rng));
    }
    const bool conv_fusion = cfg.fusion == FusionKind::dilated_conv || cfg.fusion == FusionKind::plain_conv;
    if (conv_fusion) {
        p.lattice.resize(cfg.levels);
        for (int l = 0; l < cfg.levels; ++l) {
            p.lattice[l].reserve(cfg.branches);
            for (int r = 0; r < cfg.branches; ++r) {
                const int d = cfg.fusion == FusionKind::dilated_conv ? cfg.rates[l][r] : 1;
                p.lattice[l].push_back(make_conv<T>(cb, cb, 3, 1, d, d, rng));
            }
        }
    }
    p.project = make_conv<T>(cfg.out_channels(), cfg.concat_channel_count(), 1, 1, 0, 1, rng);
    p.has_shortcut_conv = !cfg.identity_shortcut;
    if (p.has_shortcut_conv) {
        p.shortcut = make_conv<T>(cfg.out_channels(), cfg.c_pre, 1, 1, 0, 1, rng);
    } else if (cfg.c_pre != cfg.out_channels()) {
        throw std::invalid_argument("identity shortcut requires c_out == c_pre");
    }
    return p;
}

template <typename T>
void FluffParamsT<T>::zero_grads() {
    for_each_layer([](const std::string&, ConvLayerT<T>& layer) {
        layer.weight.zero_grad();
        layer.bias.zero_grad();
    });
}

template <typename T>
std::size_t FluffParamsT<T>::parameter_element_count() const {
    std::size_t n = 0;
    auto& self = const_cast<FluffParamsT<T>&>(*this);
    self.for_each_layer([&n](const std::string&, ConvLayerT<T>& layer) {
        n += layer.weight.size() + layer.bias.size();
    });
    return n;
}

template <typename T>
TensorT<T> fluff_forward_cached(const TensorT<T>& x, const FluffConfig& cfg,
                                const FluffParamsT<T>& params, FluffCacheT<T>& cache) {
    cfg.validate();
    if (x.channels() != cfg.c_pre) {
        throw std::invalid_argument("fluff_forward: input has " + std::to_string(x.channels()) +
                                    " channels, config expects " + std::to_string(cfg.c_pre));
    }
    const int L = cfg.levels;
    const int R = cfg.branches;
    cache.cell_in.assign(L, std::vector<TensorT<T>>(R));
    cache.cell_out.assign(L, std::vector<TensorT<T>>(R));
    const bool conv_fusion = cfg.fusion == FusionKind::dilated_conv || cfg.fusion == FusionKind::plain_conv;
    for (int r = 0; r < R; ++r) {
        TensorT<T> u = conv2d_forward(x, params.entry[r]);
        for (int l = 0; l < L; ++l) {
            TensorT<T> in_l = (l == 0) ? std::move(u)
                                       : (cfg.inter_level_relu ? relu_forward(cache.cell_out[l - 1][r])
                                                               : cache.cell_out[l - 1][r]);
            if (conv_fusion) {
                cache.cell_out[l][r] = conv2d_forward(in_l, params.lattice[l][r]);
            } else {
                const PoolParams pool = pool_like_dilated3x3(cfg.rates[l][r]);
                cache.cell_out[l][r] = cfg.fusion == FusionKind::max_pool
                                           ? maxpool2d_forward(in_l, pool)
                                           : avgpool2d_forward(in_l, pool);
            }
            cache.cell_in[l][r] = std::move(in_l);
        }
    }
    // Level-major concatenation: (l=0, r=0..R-1), (l=1, ...), ...
    std::vector<const TensorT<T>*> parts;
    parts.reserve(static_cast<std::size_t>(L) * R);
    for (int l = 0; l < L; ++l) {
        for (int r = 0; r < R; ++r) {
            parts.push_back(&cache.cell_out[l][r]);
        }
    }
    cache.concat = concat_channels(parts);
    cache.post = relu_forward(cache.concat);
    TensorT<T> projected = conv2d_forward(cache.post, params.project);
    TensorT<T> shortcut = params.has_shortcut_conv ? conv2d_forward(x, params.shortcut) : x;
    cache.sum = add(projected, shortcut);
    return relu_forward(cache.sum);
}

template <typename T>
TensorT<T> fluff_backward_cached(const TensorT<T>& x, const FluffConfig& cfg, FluffParamsT<T>& params,
                                 const FluffCacheT<T>& cache, const TensorT<T>& grad_out) {
    const int L = cfg.levels;
    const int R = cfg.branches;
    const int cb = cfg.branch_channels();
    const bool conv_fusion = cfg.fusion == FusionKind::dilated_conv || cfg.fusion == FusionKind::plain_conv;

    TensorT<T> g_sum = relu_backward(cache.sum, grad_out);
    TensorT<T> g_post = conv2d_backward(cache.post, params.project, g_sum);
    TensorT<T> g_x = params.has_shortcut_conv ? conv2d_backward(x, params.shortcut, g_sum) : g_sum;
    TensorT<T> g_concat = relu_backward(cache.concat, g_post);

    for (int r = 0; r < R; ++r) {
        TensorT<T> carry; // grad flowing into cell_out[l][r] from level l+1
        for (int l = L - 1; l >= 0; --l) {
            TensorT<T> g_cell = channel_slice(g_concat, (l * R + r) * cb, cb);
            if (!carry.empty()) {
                g_cell = add(g_cell, carry);
            }
            TensorT<T> g_in;
            if (conv_fusion) {
                g_in = conv2d_backward(cache.cell_in[l][r], params.lattice[l][r], g_cell);
            } else {
                const PoolParams pool = pool_like_dilated3x3(cfg.rates[l][r]);
                g_in = cfg.fusion == FusionKind::max_pool
                           ? maxpool2d_backward(cache.cell_in[l][r], pool, g_cell)
                           : avgpool2d_backward(cache.cell_in[l][r], pool, g_cell);
            }
            if (l > 0) {
                carry = cfg.inter_level_relu ? relu_backward(cache.cell_out[l - 1][r], g_in)
                                             : std::move(g_in);
            } else {
                g_x = add(g_x, conv2d_backward(x, params.entry[r], g_in));
            }
        }
    }
    return g_x;
}

} // namespace fluff
