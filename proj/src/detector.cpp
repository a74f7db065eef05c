#include "fluff/detector.hpp"

#include <algorithm>
#include <numeric>

#include "fluff/errors.hpp"

namespace fluff {

double iou(const Box& a, const Box& b) {
    const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (ix <= 0.0 || iy <= 0.0) {
        return 0.0;
    }
    const double inter = ix * iy;
    const double uni = a.area() + b.area() - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

std::vector<Box> generate_priors(const std::vector<PriorMapSpec>& spec) {
    if (spec.empty()) {
        throw std::invalid_argument("generate_priors: empty spec");
    }
    std::vector<Box> priors;
    for (const PriorMapSpec& m : spec) {
        if (m.grid_h < 1 || m.grid_w < 1 || m.scale <= 0.0 || m.aspect_ratios.empty()) {
            throw std::invalid_argument("generate_priors: invalid map spec");
        }
        for (int i = 0; i < m.grid_h; ++i) {
            for (int j = 0; j < m.grid_w; ++j) {
                const double cy = (i + 0.5) / m.grid_h;
                const double cx = (j + 0.5) / m.grid_w;
                for (double ar : m.aspect_ratios) {
                    if (ar <= 0.0) {
                        throw std::invalid_argument("generate_priors: aspect ratios must be positive");
                    }
                    const double bw = m.scale * std::sqrt(ar);
                    const double bh = m.scale / std::sqrt(ar);
                    Box b;
                    b.x_min = static_cast<float>(std::clamp(cx - bw / 2.0, 0.0, 1.0));
                    b.y_min = static_cast<float>(std::clamp(cy - bh / 2.0, 0.0, 1.0));
                    b.x_max = static_cast<float>(std::clamp(cx + bw / 2.0, 0.0, 1.0));
                    b.y_max = static_cast<float>(std::clamp(cy + bh / 2.0, 0.0, 1.0));
                    priors.push_back(b);
                }
            }
        }
    }
    return priors;
}

std::array<float, 4> encode_box(const Box& prior, const Box& target, const BoxVariances& v) {
    const double pw = prior.width();
    const double ph = prior.height();
    const double pcx = prior.x_min + pw / 2.0;
    const double pcy = prior.y_min + ph / 2.0;
    const double tw = target.width();
    const double th = target.height();
    const double tcx = target.x_min + tw / 2.0;
    const double tcy = target.y_min + th / 2.0;
    return {
        static_cast<float>((tcx - pcx) / (pw * v.center)),
        static_cast<float>((tcy - pcy) / (ph * v.center)),
        static_cast<float>(std::log(tw / pw) / v.size),
        static_cast<float>(std::log(th / ph) / v.size),
    };
}

Box decode_box(const Box& prior, const std::array<float, 4>& offsets, const BoxVariances& v) {
    const double pw = prior.width();
    const double ph = prior.height();
    const double pcx = prior.x_min + pw / 2.0;
    const double pcy = prior.y_min + ph / 2.0;
    const double cx = pcx + offsets[0] * v.center * pw;
    const double cy = pcy + offsets[1] * v.center * ph;
    const double w = pw * std::exp(offsets[2] * v.size);
    const double h = ph * std::exp(offsets[3] * v.size);
    Box b;
    b.x_min = static_cast<float>(cx - w / 2.0);
    b.y_min = static_cast<float>(cy - h / 2.0);
    b.x_max = static_cast<float>(cx + w / 2.0);
    b.y_max = static_cast<float>(cy + h / 2.0);
    return b;
}

std::vector<std::array<float, 4>> encode_boxes(const std::vector<Box>& priors,
                                               const std::vector<Box>& targets, const BoxVariances& v) {
    if (priors.size() != targets.size()) {
        throw std::invalid_argument("encode_boxes: length mismatch");
    }
    std::vector<std::array<float, 4>> out(priors.size());
    for (std::size_t i = 0; i < priors.size(); ++i) {
        out[i] = encode_box(priors[i], targets[i], v);
    }
    return out;
}

std::vector<Box> decode_boxes(const std::vector<Box>& priors,
                              const std::vector<std::array<float, 4>>& offsets, const BoxVariances& v) {
    if (priors.size() != offsets.size()) {
        throw std::invalid_argument("decode_boxes: length mismatch");
    }
    std::vector<Box> out(priors.size());
    for (std::size_t i = 0; i < priors.size(); ++i) {
        out[i] = decode_box(priors[i], offsets[i], v);
    }
    return out;
}

BoxSet nms(const BoxSet& dets, double iou_threshold, double score_threshold, int top_k) {
    std::vector<std::size_t> order;
    order.reserve(dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
        if (dets.scores[i] >= score_threshold) {
            order.push_back(i);
        }
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (dets.scores[a] != dets.scores[b]) return dets.scores[a] > dets.scores[b];
        return a < b; // lower original index wins ties
    });
    BoxSet kept;
    for (std::size_t i : order) {
        if (top_k >= 0 && kept.size() >= static_cast<std::size_t>(top_k)) {
            break;
        }
        bool suppressed = false;
        for (std::size_t j = 0; j < kept.size(); ++j) {
            if (kept.labels[j] == dets.labels[i] && iou(kept.boxes[j], dets.boxes[i]) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) {
            kept.push(dets.boxes[i], dets.scores[i], dets.labels[i]);
        }
    }
    return kept;
}

PriorMatch match_priors(const std::vector<Box>& priors, const std::vector<GtObject>& gt,
                        double match_iou) {
    PriorMatch m;
    m.matched_gt.assign(priors.size(), -1);
    if (gt.empty()) {
        return m;
    }
    for (std::size_t p = 0; p < priors.size(); ++p) {
        double best = 0.0;
        int best_g = -1;
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const double v = iou(priors[p], gt[g].box);
            if (v > best) {
                best = v;
                best_g = static_cast<int>(g);
            }
        }
        if (best_g >= 0 && best >= match_iou) {
            m.matched_gt[p] = best_g;
        }
    }
    // Every gt claims its best prior regardless of threshold.
    for (std::size_t g = 0; g < gt.size(); ++g) {
        double best = -1.0;
        int best_p = -1;
        for (std::size_t p = 0; p < priors.size(); ++p) {
            const double v = iou(priors[p], gt[g].box);
            if (v > best) {
                best = v;
                best_p = static_cast<int>(p);
            }
        }
        if (best_p >= 0) {
            m.matched_gt[best_p] = static_cast<int>(g);
        }
    }
    for (int g : m.matched_gt) {
        if (g >= 0) ++m.num_pos;
    }
    return m;
}

EvalResult evaluate_map(const std::vector<ImageDetections>& detections,
                        const std::vector<ImageGroundTruth>& ground_truth, double iou_threshold) {
    struct Det {
        int image_id;
        float score;
        Box box;
    };
    // Ground truth per (image, class)
    std::map<int, const ImageGroundTruth*> gt_by_image;
    std::map<int, int> gt_count_per_class;
    for (const auto& g : ground_truth) {
        gt_by_image[g.image_id] = &g;
        for (const auto& obj : g.objects) {
            ++gt_count_per_class[obj.label];
        }
    }
    std::map<int, std::vector<Det>> dets_per_class;
    for (const auto& d : detections) {
        for (std::size_t i = 0; i < d.dets.size(); ++i) {
            dets_per_class[d.dets.labels[i]].push_back({d.image_id, d.dets.scores[i], d.dets.boxes[i]});
        }
    }

    EvalResult res;
    double ap_sum = 0.0;
    for (const auto& [cls, total_gt] : gt_count_per_class) {
        if (total_gt == 0) continue;
        auto it = dets_per_class.find(cls);
        std::vector<Det> dets = it != dets_per_class.end() ? it->second : std::vector<Det>{};
        // Content-based ordering keeps the result invariant to input order.
        std::sort(dets.begin(), dets.end(), [](const Det& a, const Det& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.image_id != b.image_id) return a.image_id < b.image_id;
            return std::tie(a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max) <
                   std::tie(b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max);
        });
        std::map<int, std::vector<bool>> used; // image -> gt matched flags
        std::vector<int> tp(dets.size(), 0);
        for (std::size_t i = 0; i < dets.size(); ++i) {
            auto git = gt_by_image.find(dets[i].image_id);
            if (git == gt_by_image.end()) continue;
            const auto& objs = git->second->objects;
            auto& flags = used[dets[i].image_id];
            flags.resize(objs.size(), false);
            double best = 0.0;
            int best_g = -1;
            for (std::size_t g = 0; g < objs.size(); ++g) {
                if (objs[g].label != cls) continue;
                const double v = iou(dets[i].box, objs[g].box);
                if (v > best) {
                    best = v;
                    best_g = static_cast<int>(g);
                }
            }
            if (best_g >= 0 && best >= iou_threshold && !flags[best_g]) {
                flags[best_g] = true;
                tp[i] = 1;
            }
        }
        // Precision-recall curve with all-points interpolation.
        std::vector<double> precision(dets.size());
        std::vector<double> recall(dets.size());
        int cum_tp = 0;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            cum_tp += tp[i];
            precision[i] = static_cast<double>(cum_tp) / static_cast<double>(i + 1);
            recall[i] = static_cast<double>(cum_tp) / total_gt;
        }
        for (std::size_t i = dets.size(); i-- > 1;) {
            precision[i - 1] = std::max(precision[i - 1], precision[i]);
        }
        double ap = 0.0;
        double prev_recall = 0.0;
        for (std::size_t i = 0; i < dets.size(); ++i) {
            if (recall[i] > prev_recall) {
                ap += (recall[i] - prev_recall) * precision[i];
                prev_recall = recall[i];
            }
        }
        res.per_class_ap[cls] = ap;
        ap_sum += ap;
    }
    res.classes_evaluated = static_cast<int>(res.per_class_ap.size());
    res.map = res.classes_evaluated > 0 ? ap_sum / res.classes_evaluated : 0.0;
    return res;
}

std::string attachment_name(Attachment a) {
    switch (a) {
        case Attachment::none: return "none";
        case Attachment::post_process_backbone: return "post_process_backbone";
        case Attachment::replace_extra_layer: return "replace_extra_layer";
    }
    return "none";
}

Attachment attachment_from_name(const std::string& name) {
    if (name == "none") return Attachment::none;
    if (name == "post_process_backbone") return Attachment::post_process_backbone;
    if (name == "replace_extra_layer") return Attachment::replace_extra_layer;
    throw ConfigError("unknown attachment mode: " + name);
}

void DetectorConfig::validate() const {
    if (backbone.convs.empty()) {
        throw ConfigError("detector config: backbone has no convolutions");
    }
    if (backbone.in_channels < 1) {
        throw ConfigError("detector config: backbone in_channels must be positive");
    }
    if (maps.empty()) {
        throw ConfigError("detector config: no feature maps");
    }
    if (num_classes < 1) {
        throw ConfigError("detector config: num_classes must be positive");
    }
    bool seen_extra = false;
    int prev_tap = -1;
    for (const FeatureMapSpec& m : maps) {
        if (m.from_backbone) {
            if (seen_extra) {
                throw ConfigError("detector config: backbone taps must precede extra maps");
            }
            if (m.tap_index < 0 || m.tap_index >= static_cast<int>(backbone.convs.size())) {
                throw ConfigError("detector config: tap index out of range");
            }
            if (m.tap_index <= prev_tap) {
                throw ConfigError("detector config: tap indices must be strictly increasing");
            }
            prev_tap = m.tap_index;
            if (m.attachment == Attachment::replace_extra_layer) {
                throw ConfigError("detector config: replace_extra_layer is only valid on extra maps");
            }
        } else {
            seen_extra = true;
            if (m.extra_channels < 1) {
                throw ConfigError("detector config: extra map needs extra_channels >= 1");
            }
        }
        if (m.aspect_ratios.empty()) {
            throw ConfigError("detector config: feature map needs at least one aspect ratio");
        }
    }
}

std::vector<std::pair<int, int>> feature_map_sizes(const DetectorConfig& cfg, int in_h, int in_w) {
    std::vector<std::pair<int, int>> bb_sizes;
    int h = in_h;
    int w = in_w;
    for (const auto& conv : cfg.backbone.convs) {
        h = conv_output_dim(h, 3, conv.stride, 1, 1);
        w = conv_output_dim(w, 3, conv.stride, 1, 1);
        bb_sizes.emplace_back(h, w);
    }
    std::vector<std::pair<int, int>> out;
    for (const FeatureMapSpec& m : cfg.maps) {
        if (m.from_backbone) {
            out.push_back(bb_sizes[static_cast<std::size_t>(m.tap_index)]);
        } else {
            h = conv_output_dim(h, 3, 2, 1, 1);
            w = conv_output_dim(w, 3, 2, 1, 1);
            out.emplace_back(h, w);
        }
    }
    return out;
}

std::vector<PriorMapSpec> prior_spec_for(const DetectorConfig& cfg) {
    const auto sizes = feature_map_sizes(cfg, cfg.input_h, cfg.input_w);
    std::vector<PriorMapSpec> spec;
    spec.reserve(cfg.maps.size());
    for (std::size_t m = 0; m < cfg.maps.size(); ++m) {
        PriorMapSpec s;
        s.grid_h = sizes[m].first;
        s.grid_w = sizes[m].second;
        s.scale = cfg.maps[m].prior_scale;
        s.aspect_ratios = cfg.maps[m].aspect_ratios;
        spec.push_back(std::move(s));
    }
    return spec;
}

DetectorNet::DetectorNet(const DetectorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    int channels = cfg_.backbone.in_channels;
    for (const auto& spec : cfg_.backbone.convs) {
        backbone_.push_back(make_conv<float>(spec.out_channels, channels, 3, spec.stride, 1, 1, rng));
        channels = spec.out_channels;
    }
    int trunk_channels = channels; // after the full backbone
    const int c1 = cfg_.num_classes + 1;
    for (const FeatureMapSpec& m : cfg_.maps) {
        MapUnit unit;
        int feat_channels;
        if (m.from_backbone) {
            feat_channels = cfg_.backbone.convs[static_cast<std::size_t>(m.tap_index)].out_channels;
        } else {
            unit.has_extra = true;
            unit.extra = make_conv<float>(m.extra_channels, trunk_channels, 3, 2, 1, 1, rng);
            trunk_channels = m.extra_channels;
            feat_channels = m.extra_channels;
        }
        unit.has_fluff = m.attachment != Attachment::none && m.fluff.enabled;
        if (unit.has_fluff) {
            unit.fluff_cfg = m.fluff;
            if (unit.fluff_cfg.c_pre != feat_channels) {
                throw ConfigError("detector config: block c_pre " + std::to_string(unit.fluff_cfg.c_pre) +
                                  " does not match feature channels " + std::to_string(feat_channels));
            }
            unit.fluff = init_fluff_params<float>(unit.fluff_cfg, rng);
            feat_channels = unit.fluff_cfg.out_channels();
            if (!m.from_backbone && m.attachment == Attachment::replace_extra_layer) {
                trunk_channels = feat_channels;
            }
        }
        const int anchors = static_cast<int>(m.aspect_ratios.size());
        unit.conf_head = make_conv<float>(anchors * c1, feat_channels, 3, 1, 1, 1, rng);
        unit.loc_head = make_conv<float>(anchors * 4, feat_channels, 3, 1, 1, 1, rng);
        maps_.push_back(std::move(unit));
    }
}

std::vector<DetectorNet::MapOutputs> DetectorNet::forward(const Tensor& x, Cache& cache) const {
    if (x.channels() != cfg_.backbone.in_channels) {
        throw std::invalid_argument("detector forward: input has " + std::to_string(x.channels()) +
                                    " channels, config expects " + std::to_string(cfg_.backbone.in_channels));
    }
    cache.bb_pre.clear();
    cache.bb_post.clear();
    cache.maps.assign(maps_.size(), MapCache{});
    const Tensor* trunk = &x;
    for (const ConvLayer& conv : backbone_) {
        cache.bb_pre.push_back(conv2d_forward(*trunk, conv));
        cache.bb_post.push_back(relu_forward(cache.bb_pre.back()));
        trunk = &cache.bb_post.back();
    }
    std::vector<MapOutputs> outs(maps_.size());
    Tensor trunk_tail; // current trunk value while walking extra maps
    bool trunk_from_extra = false;
    for (std::size_t m = 0; m < maps_.size(); ++m) {
        const FeatureMapSpec& spec = cfg_.maps[m];
        const MapUnit& unit = maps_[m];
        MapCache& mc = cache.maps[m];
        if (spec.from_backbone) {
            mc.block_in = cache.bb_post[static_cast<std::size_t>(spec.tap_index)];
        } else {
            const Tensor& prev = trunk_from_extra ? trunk_tail : cache.bb_post.back();
            mc.extra_pre = conv2d_forward(prev, unit.extra);
            mc.block_in = relu_forward(mc.extra_pre);
        }
        if (unit.has_fluff) {
            mc.feature = fluff_forward_cached(mc.block_in, unit.fluff_cfg, unit.fluff, mc.fluff);
        } else {
            mc.feature = mc.block_in;
        }
        if (!spec.from_backbone) {
            trunk_tail = (spec.attachment == Attachment::replace_extra_layer && unit.has_fluff)
                             ? mc.feature
                             : mc.block_in;
            trunk_from_extra = true;
        }
        outs[m].conf = conv2d_forward(mc.feature, unit.conf_head);
        outs[m].loc = conv2d_forward(mc.feature, unit.loc_head);
    }
    return outs;
}

void DetectorNet::backward(const Tensor& x, const Cache& cache,
                           const std::vector<MapOutputs>& head_grads) {
    if (head_grads.size() != maps_.size()) {
        throw std::invalid_argument("detector backward: head grad count mismatch");
    }
    std::vector<Tensor> tap_grads(backbone_.size());
    Tensor carry; // grad wrt the trunk value feeding the next (later) extra map
    for (std::size_t m = maps_.size(); m-- > 0;) {
        const FeatureMapSpec& spec = cfg_.maps[m];
        MapUnit& unit = maps_[m];
        const MapCache& mc = cache.maps[m];
        Tensor g_feat = conv2d_backward(mc.feature, unit.conf_head, head_grads[m].conf);
        g_feat = add(g_feat, conv2d_backward(mc.feature, unit.loc_head, head_grads[m].loc));
        if (spec.from_backbone) {
            Tensor g_tap = unit.has_fluff
                               ? fluff_backward_cached(mc.block_in, unit.fluff_cfg, unit.fluff, mc.fluff, g_feat)
                               : std::move(g_feat);
            Tensor& slot = tap_grads[static_cast<std::size_t>(spec.tap_index)];
            slot = slot.empty() ? std::move(g_tap) : add(slot, g_tap);
        } else {
            const bool in_trunk = spec.attachment == Attachment::replace_extra_layer && unit.has_fluff;
            Tensor g_block_in;
            if (in_trunk) {
                // carry targets the block output here
                Tensor g_out = carry.empty() ? std::move(g_feat) : add(g_feat, carry);
                g_block_in = fluff_backward_cached(mc.block_in, unit.fluff_cfg, unit.fluff, mc.fluff, g_out);
            } else {
                if (unit.has_fluff) {
                    g_block_in =
                        fluff_backward_cached(mc.block_in, unit.fluff_cfg, unit.fluff, mc.fluff, g_feat);
                } else {
                    g_block_in = std::move(g_feat);
                }
                if (!carry.empty()) {
                    g_block_in = add(g_block_in, carry);
                }
            }
            Tensor g_pre = relu_backward(mc.extra_pre, g_block_in);
            // Input of this extra conv: previous extra map's trunk value, or the backbone end.
            const Tensor* prev = nullptr;
            if (m > 0 && !cfg_.maps[m - 1].from_backbone) {
                const MapCache& pc = cache.maps[m - 1];
                const bool prev_in_trunk = cfg_.maps[m - 1].attachment == Attachment::replace_extra_layer &&
                                           maps_[m - 1].has_fluff;
                prev = prev_in_trunk ? &pc.feature : &pc.block_in;
            } else {
                prev = &cache.bb_post.back();
            }
            carry = conv2d_backward(*prev, unit.extra, g_pre);
        }
    }
    if (!carry.empty()) {
        Tensor& last = tap_grads.back();
        last = last.empty() ? std::move(carry) : add(last, carry);
    }
    // Backbone chain, last conv to first.
    Tensor g;
    for (std::size_t i = backbone_.size(); i-- > 0;) {
        if (!tap_grads[i].empty()) {
            g = g.empty() ? std::move(tap_grads[i]) : add(g, tap_grads[i]);
        }
        if (g.empty()) {
            continue; // nothing downstream taps this prefix yet
        }
        Tensor g_pre = relu_backward(cache.bb_pre[i], g);
        const Tensor& input = i == 0 ? x : cache.bb_post[i - 1];
        g = conv2d_backward(input, backbone_[i], g_pre);
    }
}

void DetectorNet::zero_grads() {
    for_each_layer([](const std::string&, ConvLayer& layer) {
        layer.weight.zero_grad();
        layer.bias.zero_grad();
    });
}

std::size_t DetectorNet::parameter_element_count() const {
    std::size_t n = 0;
    const_cast<DetectorNet*>(this)->for_each_layer(
        [&n](const std::string&, ConvLayer& layer) { n += layer.weight.size() + layer.bias.size(); });
    return n;
}

void flatten_head_outputs(const std::vector<DetectorNet::MapOutputs>& outs, int num_classes,
                          std::vector<std::vector<float>>& conf_out,
                          std::vector<std::vector<float>>& loc_out) {
    if (outs.empty()) {
        conf_out.clear();
        loc_out.clear();
        return;
    }
    const int batch = outs[0].conf.batch();
    const int c1 = num_classes + 1;
    conf_out.assign(batch, {});
    loc_out.assign(batch, {});
    for (int b = 0; b < batch; ++b) {
        for (const auto& mo : outs) {
            const int anchors = mo.conf.channels() / c1;
            const int h = mo.conf.height();
            const int w = mo.conf.width();
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    for (int a = 0; a < anchors; ++a) {
                        for (int c = 0; c < c1; ++c) {
                            conf_out[b].push_back(mo.conf.at(b, a * c1 + c, i, j));
                        }
                        for (int d = 0; d < 4; ++d) {
                            loc_out[b].push_back(mo.loc.at(b, a * 4 + d, i, j));
                        }
                    }
                }
            }
        }
    }
}

std::vector<DetectorNet::MapOutputs> unflatten_head_grads(
    const std::vector<DetectorNet::MapOutputs>& like, int num_classes,
    const std::vector<std::vector<float>>& grad_conf, const std::vector<std::vector<float>>& grad_loc) {
    std::vector<DetectorNet::MapOutputs> grads(like.size());
    for (std::size_t m = 0; m < like.size(); ++m) {
        grads[m].conf = Tensor(like[m].conf.batch(), like[m].conf.channels(), like[m].conf.height(),
                               like[m].conf.width());
        grads[m].loc =
            Tensor(like[m].loc.batch(), like[m].loc.channels(), like[m].loc.height(), like[m].loc.width());
    }
    const int batch = like.empty() ? 0 : like[0].conf.batch();
    const int c1 = num_classes + 1;
    for (int b = 0; b < batch; ++b) {
        std::size_t pc = 0;
        std::size_t pl = 0;
        for (std::size_t m = 0; m < like.size(); ++m) {
            const int anchors = like[m].conf.channels() / c1;
            const int h = like[m].conf.height();
            const int w = like[m].conf.width();
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < w; ++j) {
                    for (int a = 0; a < anchors; ++a) {
                        for (int c = 0; c < c1; ++c) {
                            grads[m].conf.at(b, a * c1 + c, i, j) = grad_conf[b][pc++];
                        }
                        for (int d = 0; d < 4; ++d) {
                            grads[m].loc.at(b, a * 4 + d, i, j) = grad_loc[b][pl++];
                        }
                    }
                }
            }
        }
    }
    return grads;
}

std::vector<BoxSet> predict_candidates(const DetectorNet& net, const Tensor& x,
                                       const std::vector<Box>& priors, double score_threshold) {
    DetectorNet::Cache cache;
    const auto outs = net.forward(x, cache);
    std::vector<std::vector<float>> conf_flat;
    std::vector<std::vector<float>> loc_flat;
    flatten_head_outputs(outs, net.config().num_classes, conf_flat, loc_flat);
    const int c1 = net.config().num_classes + 1;
    std::vector<BoxSet> result(conf_flat.size());
    for (std::size_t b = 0; b < conf_flat.size(); ++b) {
        const auto& conf = conf_flat[b];
        const auto& loc = loc_flat[b];
        if (conf.size() != priors.size() * static_cast<std::size_t>(c1)) {
            throw std::invalid_argument("predict_candidates: prior count mismatch");
        }
        for (std::size_t p = 0; p < priors.size(); ++p) {
            // softmax over classes, in double
            double mx = conf[p * c1];
            for (int c = 1; c < c1; ++c) {
                mx = std::max(mx, static_cast<double>(conf[p * c1 + c]));
            }
            double denom = 0.0;
            for (int c = 0; c < c1; ++c) {
                denom += std::exp(static_cast<double>(conf[p * c1 + c]) - mx);
            }
            for (int c = 1; c < c1; ++c) {
                const double prob = std::exp(static_cast<double>(conf[p * c1 + c]) - mx) / denom;
                if (prob >= score_threshold) {
                    Box box = decode_box(priors[p],
                                         {loc[p * 4], loc[p * 4 + 1], loc[p * 4 + 2], loc[p * 4 + 3]});
                    box.x_min = std::clamp(box.x_min, 0.f, 1.f);
                    box.y_min = std::clamp(box.y_min, 0.f, 1.f);
                    box.x_max = std::clamp(box.x_max, 0.f, 1.f);
                    box.y_max = std::clamp(box.y_max, 0.f, 1.f);
                    result[b].push(box, static_cast<float>(prob), c - 1);
                }
            }
        }
    }
    return result;
}

} // namespace fluff
