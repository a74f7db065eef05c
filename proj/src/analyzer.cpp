#include "fluff/analyzer.hpp"

#include <sstream>

#include <json.hpp>

#include "fluff/nn_ops.hpp"

namespace fluff {

int receptive_field(const std::vector<int>& rates, int kernel) {
    if (rates.empty()) {
        throw std::invalid_argument("receptive_field: empty rate list");
    }
    int rf = 1;
    for (int d : rates) {
        rf += (kernel - 1) * d;
    }
    return rf;
}

std::int64_t conv_param_count(const ConvDesc& c) {
    return static_cast<std::int64_t>(c.out_c) * c.in_c * c.k * c.k + (c.has_bias ? c.out_c : 0);
}

std::int64_t conv_mac_count(const ConvDesc& c) {
    const int out_h = conv_output_dim(c.in_h, c.k, c.stride, c.padding, c.dilation);
    const int out_w = conv_output_dim(c.in_w, c.k, c.stride, c.padding, c.dilation);
    return static_cast<std::int64_t>(out_h) * out_w * c.out_c * c.in_c * c.k * c.k;
}

std::int64_t param_count(const NetworkDesc& net) {
    std::int64_t n = 0;
    for (const auto& b : net.blocks) {
        for (const auto& c : b.convs) {
            n += conv_param_count(c);
        }
    }
    return n;
}

std::int64_t flop_count(const NetworkDesc& net) {
    std::int64_t n = 0;
    for (const auto& b : net.blocks) {
        for (const auto& c : b.convs) {
            n += conv_mac_count(c);
        }
    }
    return n;
}

ArchReport analyze(const NetworkDesc& net) {
    ArchReport rep;
    rep.network = net.name;
    for (const auto& b : net.blocks) {
        ArchReport::BlockReport br;
        br.name = b.name;
        br.rf_table = b.rf_table;
        for (const auto& c : b.convs) {
            br.params += conv_param_count(c);
            br.macs += conv_mac_count(c);
        }
        rep.total_params += br.params;
        rep.total_macs += br.macs;
        rep.blocks.push_back(std::move(br));
    }
    return rep;
}

std::string report_json(const ArchReport& report) {
    nlohmann::json j;
    j["network"] = report.network;
    j["total_params"] = report.total_params;
    j["total_macs"] = report.total_macs;
    j["blocks"] = nlohmann::json::array();
    for (const auto& b : report.blocks) {
        nlohmann::json jb;
        jb["name"] = b.name;
        jb["params"] = b.params;
        jb["macs"] = b.macs;
        if (!b.rf_table.empty()) {
            jb["receptive_fields"] = b.rf_table;
        }
        j["blocks"].push_back(std::move(jb));
    }
    return j.dump(2);
}

std::string report_table(const ArchReport& report) {
    std::ostringstream os;
    os << "network: " << report.network << "\n";
    char line[160];
    std::snprintf(line, sizeof(line), "%-32s %16s %18s\n", "block", "params", "MACs");
    os << line;
    for (const auto& b : report.blocks) {
        std::snprintf(line, sizeof(line), "%-32s %16lld %18lld\n", b.name.c_str(),
                      static_cast<long long>(b.params), static_cast<long long>(b.macs));
        os << line;
        if (!b.rf_table.empty()) {
            for (std::size_t r = 0; r < b.rf_table.size(); ++r) {
                os << "    branch " << r << " RF:";
                for (int rf : b.rf_table[r]) {
                    os << " " << rf;
                }
                os << "\n";
            }
        }
    }
    std::snprintf(line, sizeof(line), "%-32s %16lld %18lld\n", "TOTAL",
                  static_cast<long long>(report.total_params), static_cast<long long>(report.total_macs));
    os << line;
    return os.str();
}

BlockDesc fluff_block_desc(const FluffConfig& cfg, int in_h, int in_w, const std::string& name) {
    cfg.validate();
    BlockDesc b;
    b.name = name;
    const int cb = cfg.branch_channels();
    for (int r = 0; r < cfg.branches; ++r) {
        b.convs.push_back({name + ".entry" + std::to_string(r), cb, cfg.c_pre, 1, 1, 0, 1, in_h, in_w});
    }
    const bool conv_fusion = cfg.fusion == FusionKind::dilated_conv || cfg.fusion == FusionKind::plain_conv;
    if (conv_fusion) {
        for (int l = 0; l < cfg.levels; ++l) {
            for (int r = 0; r < cfg.branches; ++r) {
                const int d = cfg.fusion == FusionKind::dilated_conv ? cfg.rates[l][r] : 1;
                b.convs.push_back({name + ".lattice" + std::to_string(l) + "_" + std::to_string(r), cb,
                                   cb, 3, 1, d, d, in_h, in_w});
            }
        }
    }
    b.convs.push_back(
        {name + ".project", cfg.out_channels(), cfg.concat_channel_count(), 1, 1, 0, 1, in_h, in_w});
    if (!cfg.identity_shortcut) {
        b.convs.push_back({name + ".shortcut", cfg.out_channels(), cfg.c_pre, 1, 1, 0, 1, in_h, in_w});
    }
    // Pooling cells cover the same extent as the dilated conv they stand for,
    // so the RF table is the same for every fusion kind except plain convs.
    b.rf_table.assign(cfg.branches, {});
    for (int r = 0; r < cfg.branches; ++r) {
        std::vector<int> chain;
        for (int l = 0; l < cfg.levels; ++l) {
            chain.push_back(cfg.fusion == FusionKind::plain_conv ? 1 : cfg.rates[l][r]);
            b.rf_table[r].push_back(receptive_field(chain));
        }
    }
    return b;
}

NetworkDesc detector_desc(const DetectorConfig& cfg) {
    cfg.validate();
    NetworkDesc net;
    net.name = "detector";
    const auto sizes = feature_map_sizes(cfg, cfg.input_h, cfg.input_w);

    BlockDesc bb;
    bb.name = "backbone";
    int channels = cfg.backbone.in_channels;
    int h = cfg.input_h;
    int w = cfg.input_w;
    for (std::size_t i = 0; i < cfg.backbone.convs.size(); ++i) {
        const auto& conv = cfg.backbone.convs[i];
        bb.convs.push_back(
            {"backbone." + std::to_string(i), conv.out_channels, channels, 3, conv.stride, 1, 1, h, w});
        h = conv_output_dim(h, 3, conv.stride, 1, 1);
        w = conv_output_dim(w, 3, conv.stride, 1, 1);
        channels = conv.out_channels;
    }
    net.blocks.push_back(std::move(bb));

    int trunk_channels = channels;
    int trunk_h = h;
    int trunk_w = w;
    const int c1 = cfg.num_classes + 1;
    for (std::size_t m = 0; m < cfg.maps.size(); ++m) {
        const FeatureMapSpec& spec = cfg.maps[m];
        const std::string prefix = "map" + std::to_string(m);
        const auto [mh, mw] = sizes[m];
        BlockDesc blk;
        blk.name = prefix;
        int feat_channels;
        if (spec.from_backbone) {
            feat_channels = cfg.backbone.convs[static_cast<std::size_t>(spec.tap_index)].out_channels;
        } else {
            blk.convs.push_back(
                {prefix + ".extra", spec.extra_channels, trunk_channels, 3, 2, 1, 1, trunk_h, trunk_w});
            trunk_channels = spec.extra_channels;
            trunk_h = mh;
            trunk_w = mw;
            feat_channels = spec.extra_channels;
        }
        const bool has_fluff = spec.attachment != Attachment::none && spec.fluff.enabled;
        if (has_fluff) {
            BlockDesc fb = fluff_block_desc(spec.fluff, mh, mw, prefix + ".fluff");
            for (auto& c : fb.convs) {
                blk.convs.push_back(std::move(c));
            }
            blk.rf_table = std::move(fb.rf_table);
            feat_channels = spec.fluff.out_channels();
            if (!spec.from_backbone && spec.attachment == Attachment::replace_extra_layer) {
                trunk_channels = feat_channels;
            }
        }
        const int anchors = static_cast<int>(spec.aspect_ratios.size());
        blk.convs.push_back({prefix + ".conf_head", anchors * c1, feat_channels, 3, 1, 1, 1, mh, mw});
        blk.convs.push_back({prefix + ".loc_head", anchors * 4, feat_channels, 3, 1, 1, 1, mh, mw});
        net.blocks.push_back(std::move(blk));
    }
    return net;
}

BlockDesc vgg16_ssd_base_desc() {
    // conv name, out channels, spatial size the layer runs at (300 input,
    // 2x2-s2 pools after stages 1-4 with ceil rounding at 75 -> 38, pool5 is
    // 3x3 stride 1 so conv5/fc6/fc7 all run at 19).
    BlockDesc b;
    b.name = "vgg16_fc7";
    struct L {
        const char* name;
        int out_c;
        int in_c;
        int k;
        int dilation;
        int hw;
    };
    const L layers[] = {
        {"conv1_1", 64, 3, 3, 1, 300},   {"conv1_2", 64, 64, 3, 1, 300},
        {"conv2_1", 128, 64, 3, 1, 150}, {"conv2_2", 128, 128, 3, 1, 150},
        {"conv3_1", 256, 128, 3, 1, 75}, {"conv3_2", 256, 256, 3, 1, 75},
        {"conv3_3", 256, 256, 3, 1, 75}, {"conv4_1", 512, 256, 3, 1, 38},
        {"conv4_2", 512, 512, 3, 1, 38}, {"conv4_3", 512, 512, 3, 1, 38},
        {"conv5_1", 512, 512, 3, 1, 19}, {"conv5_2", 512, 512, 3, 1, 19},
        {"conv5_3", 512, 512, 3, 1, 19}, {"fc6_conv", 1024, 512, 3, 6, 19},
        {"fc7_conv", 1024, 1024, 1, 1, 19},
    };
    for (const L& l : layers) {
        b.convs.push_back({l.name, l.out_c, l.in_c, l.k, 1, l.k == 3 ? l.dilation : 0, l.dilation,
                           l.hw, l.hw});
    }
    return b;
}

NetworkDesc fluffnet300_desc() {
    NetworkDesc net;
    net.name = "fluffnet300";
    net.blocks.push_back(vgg16_ssd_base_desc());

    const int num_classes = 80; // COCO foreground classes
    const int c1 = num_classes + 1;
    struct MapModel {
        const char* name;
        int channels; // feature channels at this map
        int hw;
        int anchors;
        int schedule_pos; // rate schedule position; -1 means no block
        int extra_in;     // in-channels of the stride-2/valid conv, 0 if none
        int extra_stride;
        int extra_pad;
    };
    // conv4_3 and fc7 taps keep the initial rates; the three blocks in extra
    // layers scale them by their 1-based position. The last two maps follow
    // the SSD300 3x3-valid tail and the 1x1 map carries no block.
    const MapModel maps[] = {
        {"conv4_3", 512, 38, 4, 0, 0, 1, 0},
        {"fc7", 1024, 19, 6, 0, 0, 1, 0},
        {"extra1", 512, 10, 6, 1, 1024, 2, 1},
        {"extra2", 256, 5, 6, 2, 512, 2, 1},
        {"extra3", 256, 3, 4, 3, 256, 1, 0},
        {"extra4", 256, 1, 4, -1, 256, 1, 0},
    };
    int prev_hw = 19;
    for (const MapModel& m : maps) {
        BlockDesc blk;
        blk.name = m.name;
        if (m.extra_in > 0) {
            blk.convs.push_back({std::string(m.name) + ".extra", m.channels, m.extra_in, 3,
                                 m.extra_stride, m.extra_pad, 1, prev_hw, prev_hw});
        }
        if (m.schedule_pos >= 0) {
            FluffConfig cfg = default_fluff_config(m.channels);
            cfg.apply_rate_schedule(kDefaultInitRates, m.schedule_pos);
            BlockDesc fb = fluff_block_desc(cfg, m.hw, m.hw, std::string(m.name) + ".fluff");
            for (auto& c : fb.convs) {
                blk.convs.push_back(std::move(c));
            }
            blk.rf_table = std::move(fb.rf_table);
        }
        blk.convs.push_back(
            {std::string(m.name) + ".conf_head", m.anchors * c1, m.channels, 3, 1, 1, 1, m.hw, m.hw});
        blk.convs.push_back(
            {std::string(m.name) + ".loc_head", m.anchors * 4, m.channels, 3, 1, 1, 1, m.hw, m.hw});
        net.blocks.push_back(std::move(blk));
        prev_hw = m.hw;
    }
    return net;
}

} // namespace fluff
