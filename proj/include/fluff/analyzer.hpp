#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fluff/detector.hpp"
#include "fluff/fluff_block.hpp"

namespace fluff {

/// Static convolution description for counting; in_h/in_w record the spatial
/// size the layer runs at so MACs can be derived without executing anything.
struct ConvDesc {
    std::string name;
    int out_c = 0;
    int in_c = 0;
    int k = 3;
    int stride = 1;
    int padding = 0;
    int dilation = 1;
    int in_h = 0;
    int in_w = 0;
    bool has_bias = true;
};

struct BlockDesc {
    std::string name;
    std::vector<ConvDesc> convs;
    // Receptive field per branch per level (fluff blocks only, else empty).
    std::vector<std::vector<int>> rf_table;
};

struct NetworkDesc {
    std::string name;
    std::vector<BlockDesc> blocks;
};

/// Receptive field of a stride-1 chain of k x k convolutions with the given
/// dilations: 1 + sum (k-1)*d.
int receptive_field(const std::vector<int>& rates, int kernel = 3);

std::int64_t conv_param_count(const ConvDesc& c);
std::int64_t conv_mac_count(const ConvDesc& c);

std::int64_t param_count(const NetworkDesc& net);
std::int64_t flop_count(const NetworkDesc& net);

struct ArchReport {
    struct BlockReport {
        std::string name;
        std::int64_t params = 0;
        std::int64_t macs = 0;
        std::vector<std::vector<int>> rf_table;
    };
    std::string network;
    std::vector<BlockReport> blocks;
    std::int64_t total_params = 0;
    std::int64_t total_macs = 0;
};

ArchReport analyze(const NetworkDesc& net);
std::string report_json(const ArchReport& report);
std::string report_table(const ArchReport& report);

/// Mirrors init_fluff_params layer for layer so the static count equals the
/// allocated element count exactly.
BlockDesc fluff_block_desc(const FluffConfig& cfg, int in_h, int in_w, const std::string& name);

/// Mirrors DetectorNet construction layer for layer.
NetworkDesc detector_desc(const DetectorConfig& cfg);

/// VGG16 truncated at fc7 with the SSD conversion (pool5 3x3 s1, fc6 as a
/// 3x3 dilated conv, fc7 as 1x1), input 300x300.
BlockDesc vgg16_ssd_base_desc();

/// Static model of the 300-input detector: VGG16-fc7 backbone, fusion blocks
/// on conv4_3/fc7 and the first three extra maps, SSD300 head layout with 81
/// classes. Channel widths of the extra layers follow the SSD300 convention;
/// exact widths in the original are not published, so this is the modeled
/// reference the reports are checked against.
NetworkDesc fluffnet300_desc();

} // namespace fluff
