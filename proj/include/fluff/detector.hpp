#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fluff/fluff_block.hpp"
#include "fluff/nn_ops.hpp"

namespace fluff {

/// Axis-aligned box, normalized corner coordinates in [0,1].
struct Box {
    float x_min = 0.f;
    float y_min = 0.f;
    float x_max = 0.f;
    float y_max = 0.f;

    float width() const { return x_max - x_min; }
    float height() const { return y_max - y_min; }
    double area() const { return static_cast<double>(width()) * height(); }
};

struct BoxSet {
    std::vector<Box> boxes;
    std::vector<float> scores;
    std::vector<int> labels;

    std::size_t size() const { return boxes.size(); }
    void push(const Box& b, float score, int label) {
        boxes.push_back(b);
        scores.push_back(score);
        labels.push_back(label);
    }
};

struct GtObject {
    Box box;
    int label = 0; // foreground class id, 0-based
};

double iou(const Box& a, const Box& b);

struct PriorMapSpec {
    int grid_h = 0;
    int grid_w = 0;
    double scale = 0.2;                          // box size as fraction of the image
    std::vector<double> aspect_ratios = {1.0};   // one prior per ratio per cell
};

/// Tiles priors over each grid; boxes are clamped to [0,1]. Order: map, then
/// cell row-major, then ratio.
std::vector<Box> generate_priors(const std::vector<PriorMapSpec>& spec);

struct BoxVariances {
    double center = 0.1;
    double size = 0.2;
};

std::array<float, 4> encode_box(const Box& prior, const Box& target, const BoxVariances& v = {});
Box decode_box(const Box& prior, const std::array<float, 4>& offsets, const BoxVariances& v = {});

std::vector<std::array<float, 4>> encode_boxes(const std::vector<Box>& priors,
                                               const std::vector<Box>& targets,
                                               const BoxVariances& v = {});
std::vector<Box> decode_boxes(const std::vector<Box>& priors,
                              const std::vector<std::array<float, 4>>& offsets,
                              const BoxVariances& v = {});

/// Greedy per-class non-maximum suppression, descending score with
/// lower-original-index tie-break; the merged survivors are capped at top_k
/// by the same ordering.
BoxSet nms(const BoxSet& dets, double iou_threshold, double score_threshold, int top_k);

// ---- multibox loss ----

struct PriorMatch {
    std::vector<int> matched_gt; // -1 for negatives
    int num_pos = 0;
};

/// SSD matching: IoU >= match_iou prior-to-gt, plus each gt claims its best
/// prior regardless of threshold.
PriorMatch match_priors(const std::vector<Box>& priors, const std::vector<GtObject>& gt,
                        double match_iou);

template <typename T>
struct MultiboxLossResultT {
    double total = 0.0;
    double loc_term = 0.0;
    double conf_term = 0.0;
    int num_pos = 0;
    std::vector<T> grad_conf; // P x (C+1)
    std::vector<T> grad_loc;  // P x 4
};

using MultiboxLossResult = MultiboxLossResultT<float>;

/// Smooth-L1 localization on positives plus softmax cross-entropy with hard
/// negative mining (background logits at class 0). Both terms normalize by
/// the positive count.
template <typename T>
MultiboxLossResultT<T> multibox_loss(const std::vector<T>& conf, const std::vector<T>& loc,
                                     const std::vector<Box>& priors, const std::vector<GtObject>& gt,
                                     int num_classes, double match_iou = 0.5,
                                     double neg_pos_ratio = 3.0, const BoxVariances& v = {});

// ---- mAP ----

struct ImageDetections {
    int image_id = 0;
    BoxSet dets;
};

struct ImageGroundTruth {
    int image_id = 0;
    std::vector<GtObject> objects;
};

struct EvalResult {
    std::map<int, double> per_class_ap;
    double map = 0.0;
    int classes_evaluated = 0;
};

/// Average precision by all-points interpolation of the precision-recall
/// curve at the given IoU matching threshold; classes without ground truth
/// are excluded from the mean.
EvalResult evaluate_map(const std::vector<ImageDetections>& detections,
                        const std::vector<ImageGroundTruth>& ground_truth, double iou_threshold);

// ---- detection network ----

enum class Attachment {
    none,
    post_process_backbone,
    replace_extra_layer,
};

std::string attachment_name(Attachment a);
Attachment attachment_from_name(const std::string& name);

struct BackboneConvSpec {
    int out_channels = 16;
    int stride = 1; // 3x3 conv, padding 1, followed by ReLU
};

struct BackboneSpec {
    int in_channels = 3;
    std::vector<BackboneConvSpec> convs;
};

/// One detection feature map. Backbone maps tap the trunk after a given conv;
/// extra maps extend the trunk with a stride-2 3x3 conv. A fluff block can
/// post-process the tap on the head branch, or replace the extra layer's conv
/// inside the trunk.
struct FeatureMapSpec {
    bool from_backbone = true;
    int tap_index = 0;      // backbone conv whose output is tapped
    int extra_channels = 0; // stride-2 conv out channels for extra maps
    Attachment attachment = Attachment::none;
    FluffConfig fluff;
    double prior_scale = 0.2;
    std::vector<double> aspect_ratios = {1.0, 2.0, 0.5};
};

struct DetectorConfig {
    BackboneSpec backbone;
    std::vector<FeatureMapSpec> maps;
    int num_classes = 3; // foreground classes; conf adds a background column
    int input_h = 96;
    int input_w = 96;

    void validate() const;
    int priors_per_cell(std::size_t map_index) const {
        return static_cast<int>(maps[map_index].aspect_ratios.size());
    }
};

/// Spatial sizes of every feature map for a given input size.
std::vector<std::pair<int, int>> feature_map_sizes(const DetectorConfig& cfg, int in_h, int in_w);

std::vector<PriorMapSpec> prior_spec_for(const DetectorConfig& cfg);

class DetectorNet {
public:
    DetectorNet() = default;
    DetectorNet(const DetectorConfig& cfg, Rng& rng);

    struct MapOutputs {
        Tensor conf; // (b, A*(C+1), h, w)
        Tensor loc;  // (b, A*4, h, w)
    };

    struct MapCache {
        Tensor block_in;      // input handed to the attached block (if any)
        FluffCacheT<float> fluff;
        Tensor extra_pre;     // extra downsample conv output, pre-ReLU
        Tensor feature;       // head input
    };

    struct Cache {
        std::vector<Tensor> bb_pre;  // backbone conv outputs, pre-ReLU
        std::vector<Tensor> bb_post; // after ReLU
        std::vector<MapCache> maps;
    };

    std::vector<MapOutputs> forward(const Tensor& x, Cache& cache) const;

    /// Backpropagates head gradients; parameter gradients accumulate in the
    /// layers' grad buffers.
    void backward(const Tensor& x, const Cache& cache, const std::vector<MapOutputs>& head_grads);

    const DetectorConfig& config() const { return cfg_; }

    void zero_grads();
    std::size_t parameter_element_count() const;

    /// Visits every parameter layer in a fixed order with a hierarchical name.
    template <typename Fn>
    void for_each_layer(Fn&& fn) {
        for (std::size_t i = 0; i < backbone_.size(); ++i) {
            fn("backbone." + std::to_string(i), backbone_[i]);
        }
        for (std::size_t m = 0; m < maps_.size(); ++m) {
            const std::string prefix = "map" + std::to_string(m) + ".";
            if (maps_[m].has_extra) {
                fn(prefix + "extra", maps_[m].extra);
            }
            if (maps_[m].has_fluff) {
                maps_[m].fluff.for_each_layer([&](const std::string& name, ConvLayer& layer) {
                    fn(prefix + "fluff." + name, layer);
                });
            }
            fn(prefix + "conf_head", maps_[m].conf_head);
            fn(prefix + "loc_head", maps_[m].loc_head);
        }
    }

private:
    friend struct DetectorNetAccess;

    struct MapUnit {
        bool has_extra = false;
        ConvLayer extra; // stride-2 downsample for extra maps
        bool has_fluff = false;
        FluffConfig fluff_cfg;
        FluffParams fluff;
        ConvLayer conf_head;
        ConvLayer loc_head;
    };

    DetectorConfig cfg_;
    std::vector<ConvLayer> backbone_;
    std::vector<MapUnit> maps_;
};

// ---- prediction path ----

struct DetectOptions {
    double nms_iou = 0.45;
    double score_threshold = 0.01;
    int top_k = 200;
};

/// Forward + softmax + decode + score threshold; one candidate set per image.
/// This is the "prediction" phase of the timing split.
std::vector<BoxSet> predict_candidates(const DetectorNet& net, const Tensor& x,
                                       const std::vector<Box>& priors, double score_threshold);

/// Flattens per-map head tensors into per-image prior-ordered arrays
/// (conf: P*(C+1), loc: P*4). Order: map, cell row-major, anchor.
void flatten_head_outputs(const std::vector<DetectorNet::MapOutputs>& outs, int num_classes,
                          std::vector<std::vector<float>>& conf_out,
                          std::vector<std::vector<float>>& loc_out);

/// Inverse of flatten_head_outputs for gradients.
std::vector<DetectorNet::MapOutputs> unflatten_head_grads(
    const std::vector<DetectorNet::MapOutputs>& like, int num_classes,
    const std::vector<std::vector<float>>& grad_conf, const std::vector<std::vector<float>>& grad_loc);

// ---- multibox loss implementation ----

template <typename T>
MultiboxLossResultT<T> multibox_loss(const std::vector<T>& conf, const std::vector<T>& loc,
                                     const std::vector<Box>& priors, const std::vector<GtObject>& gt,
                                     int num_classes, double match_iou, double neg_pos_ratio,
                                     const BoxVariances& v) {
    const std::size_t P = priors.size();
    if (P == 0) {
        throw std::invalid_argument("multibox_loss: no priors");
    }
    const int c1 = num_classes + 1;
    if (conf.size() != P * static_cast<std::size_t>(c1) || loc.size() != P * 4) {
        throw std::invalid_argument("multibox_loss: prediction lengths do not match prior count");
    }
    const PriorMatch match = match_priors(priors, gt, match_iou);

    MultiboxLossResultT<T> res;
    res.num_pos = match.num_pos;
    res.grad_conf.assign(conf.size(), T(0));
    res.grad_loc.assign(loc.size(), T(0));
    const double norm = match.num_pos > 0 ? static_cast<double>(match.num_pos) : 1.0;

    // Localization: smooth L1 on positives against encoded targets.
    double loc_sum = 0.0;
    for (std::size_t p = 0; p < P; ++p) {
        const int g = match.matched_gt[p];
        if (g < 0) continue;
        const std::array<float, 4> target = encode_box(priors[p], gt[static_cast<std::size_t>(g)].box, v);
        for (int d = 0; d < 4; ++d) {
            const double diff = static_cast<double>(loc[p * 4 + d]) - target[d];
            if (std::abs(diff) < 1.0) {
                loc_sum += 0.5 * diff * diff;
                res.grad_loc[p * 4 + d] = static_cast<T>(diff / norm);
            } else {
                loc_sum += std::abs(diff) - 0.5;
                res.grad_loc[p * 4 + d] = static_cast<T>((diff > 0 ? 1.0 : -1.0) / norm);
            }
        }
    }

    // Per-prior log-sum-exp for cross-entropy and negative ranking.
    std::vector<double> lse(P);
    for (std::size_t p = 0; p < P; ++p) {
        double mx = conf[p * c1];
        for (int c = 1; c < c1; ++c) {
            mx = std::max(mx, static_cast<double>(conf[p * c1 + c]));
        }
        double s = 0.0;
        for (int c = 0; c < c1; ++c) {
            s += std::exp(static_cast<double>(conf[p * c1 + c]) - mx);
        }
        lse[p] = mx + std::log(s);
    }

    // Hard negative mining: rank negatives by their background loss.
    std::vector<std::size_t> negatives;
    negatives.reserve(P);
    for (std::size_t p = 0; p < P; ++p) {
        if (match.matched_gt[p] < 0) negatives.push_back(p);
    }
    std::sort(negatives.begin(), negatives.end(), [&](std::size_t a, std::size_t b) {
        const double la = lse[a] - static_cast<double>(conf[a * c1]);
        const double lb = lse[b] - static_cast<double>(conf[b * c1]);
        if (la != lb) return la > lb;
        return a < b;
    });
    const std::size_t want_neg = static_cast<std::size_t>(
        std::llround(neg_pos_ratio * static_cast<double>(match.num_pos > 0 ? match.num_pos : 1)));
    if (negatives.size() > want_neg) {
        negatives.resize(want_neg);
    }

    double conf_sum = 0.0;
    auto add_ce = [&](std::size_t p, int target_class) {
        conf_sum += lse[p] - static_cast<double>(conf[p * c1 + target_class]);
        for (int c = 0; c < c1; ++c) {
            const double prob = std::exp(static_cast<double>(conf[p * c1 + c]) - lse[p]);
            res.grad_conf[p * c1 + c] =
                static_cast<T>((prob - (c == target_class ? 1.0 : 0.0)) / norm);
        }
    };
    for (std::size_t p = 0; p < P; ++p) {
        const int g = match.matched_gt[p];
        if (g >= 0) {
            add_ce(p, gt[static_cast<std::size_t>(g)].label + 1);
        }
    }
    for (std::size_t p : negatives) {
        add_ce(p, 0);
    }

    res.loc_term = loc_sum / norm;
    res.conf_term = conf_sum / norm;
    res.total = res.loc_term + res.conf_term;
    return res;
}

} // namespace fluff
