#include "fluff/fluff_block.hpp"

#include "fluff/errors.hpp"

namespace fluff {

std::string fusion_kind_name(FusionKind k) {
    switch (k) {
        case FusionKind::dilated_conv: return "dilated_conv";
        case FusionKind::plain_conv: return "plain_conv";
        case FusionKind::max_pool: return "max_pool";
        case FusionKind::avg_pool: return "avg_pool";
    }
    return "dilated_conv";
}

FusionKind fusion_kind_from_name(const std::string& name) {
    if (name == "dilated_conv") return FusionKind::dilated_conv;
    if (name == "plain_conv") return FusionKind::plain_conv;
    if (name == "max_pool") return FusionKind::max_pool;
    if (name == "avg_pool") return FusionKind::avg_pool;
    throw ConfigError("unknown fusion kind: " + name);
}

std::vector<int> rate_schedule(const std::vector<int>& init_rates, int level_index, Rounding rounding) {
    if (level_index < 0) {
        throw std::invalid_argument("rate_schedule: level index must be >= 0");
    }
    std::vector<int> out;
    out.reserve(init_rates.size());
    for (int r : init_rates) {
        if (r < 1) {
            throw std::invalid_argument("rate_schedule: rates must be positive");
        }
        // (1 + level_index/4) * r == (4 + level_index) * r / 4, rounded.
        const long long scaled = static_cast<long long>(4 + level_index) * r;
        long long rounded;
        if (rounding == Rounding::half_away_from_zero) {
            rounded = scaled / 4 + (scaled % 4 >= 2 ? 1 : 0);
        } else {
            rounded = scaled / 4;
            const long long rem = scaled % 4;
            if (rem > 2 || (rem == 2 && rounded % 2 == 1)) {
                ++rounded;
            }
        }
        out.push_back(static_cast<int>(rounded < 1 ? 1 : rounded));
    }
    return out;
}

void FluffConfig::validate() const {
    if (levels < 1) throw std::invalid_argument("fluff config: levels must be >= 1");
    if (branches < 1) throw std::invalid_argument("fluff config: branches must be >= 1");
    if (!multi_level && levels != 1) {
        throw std::invalid_argument("fluff config: multi_level off forces levels == 1");
    }
    if (!multi_branch && branches != 1) {
        throw std::invalid_argument("fluff config: multi_branch off forces branches == 1");
    }
    if (c_pre < 1) throw std::invalid_argument("fluff config: c_pre must be positive");
    if (c_pre % branches != 0) {
        throw std::invalid_argument("fluff config: c_pre (" + std::to_string(c_pre) +
                                    ") must be divisible by branches (" + std::to_string(branches) + ")");
    }
    if (rates.size() != static_cast<std::size_t>(levels)) {
        throw std::invalid_argument("fluff config: rates matrix must have exactly `levels` rows");
    }
    for (const auto& row : rates) {
        if (row.size() != static_cast<std::size_t>(branches)) {
            throw std::invalid_argument("fluff config: rates matrix must have exactly `branches` columns");
        }
        for (int r : row) {
            if (r < 1) throw std::invalid_argument("fluff config: rates must be >= 1");
        }
    }
    if (identity_shortcut && out_channels() != c_pre) {
        throw std::invalid_argument("fluff config: identity shortcut requires c_out == c_pre");
    }
}

void FluffConfig::apply_rate_schedule(const std::vector<int>& init_rates, int level_index) {
    if (static_cast<int>(init_rates.size()) != branches) {
        throw std::invalid_argument("apply_rate_schedule: init rates length must equal branches");
    }
    const std::vector<int> row = rate_schedule(init_rates, level_index);
    rates.assign(levels, row);
}

FluffConfig default_fluff_config(int c_pre, int c_out) {
    FluffConfig cfg;
    cfg.levels = 3;
    cfg.branches = 4;
    cfg.c_pre = c_pre;
    cfg.c_out = c_out;
    cfg.apply_rate_schedule(kDefaultInitRates, 0);
    return cfg;
}

namespace {

std::vector<std::vector<int>> slice_rates(const std::vector<std::vector<int>>& rates, int levels,
                                          int branches) {
    std::vector<std::vector<int>> out(levels);
    for (int l = 0; l < levels; ++l) {
        const auto& src = rates[std::min<std::size_t>(l, rates.size() - 1)];
        out[l].assign(src.begin(), src.begin() + branches);
    }
    return out;
}

} // namespace

FluffConfig make_variant(const FluffConfig& base, const std::string& row) {
    base.validate();
    FluffConfig v = base;
    v.enabled = true;
    if (row == "SSD-baseline") {
        v.enabled = false;
    } else if (row == "ANet") {
        v.multi_branch = false;
        v.branches = 1;
        v.fusion = FusionKind::plain_conv;
        v.inter_level_relu = false;
        v.rates = slice_rates(base.rates, v.levels, 1);
    } else if (row == "BNet") {
        v.multi_level = false;
        v.levels = 1;
        v.fusion = FusionKind::plain_conv;
        v.inter_level_relu = false;
        v.rates = slice_rates(base.rates, 1, v.branches);
    } else if (row == "CNet") {
        v.fusion = FusionKind::plain_conv;
        v.inter_level_relu = false;
    } else if (row == "CNet-maxpool") {
        v.fusion = FusionKind::max_pool;
        v.inter_level_relu = false;
    } else if (row == "CNet-avgpool") {
        v.fusion = FusionKind::avg_pool;
        v.inter_level_relu = false;
    } else if (row == "DNet") {
        v.fusion = FusionKind::dilated_conv;
        v.inter_level_relu = false;
    } else if (row == "Fluff") {
        v.fusion = FusionKind::dilated_conv;
        v.inter_level_relu = true;
    } else {
        throw ConfigError("unknown variant row: " + row);
    }
    if (v.enabled) {
        v.validate();
    }
    return v;
}

} // namespace fluff
