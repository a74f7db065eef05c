#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fluff/detector.hpp"
#include "fluff/tensor.hpp"

namespace fluff {

/// Synthetic multi-scale scene description. Objects are geometric shapes
/// whose bounding-box areas are drawn from a small/medium/large mixture; the
/// size bands follow the 32^2 / 96^2 convention scaled from a 300px frame to
/// image_size.
struct SceneSpec {
    int image_size = 96;
    int channels = 3;
    int min_objects = 1;
    int max_objects = 4;
    double small_frac = 0.415;
    double medium_frac = 0.343;
    double large_frac = 0.242;
    std::vector<std::string> classes = {"square", "disc", "triangle"};
    std::uint64_t seed = 0;

    void validate() const;

    double small_area_threshold() const; // exclusive upper bound for "small"
    double large_area_threshold() const; // inclusive lower bound for "large"
};

struct Dataset {
    std::vector<Tensor> images; // (1, c, h, w) each, values in [0,1]
    std::vector<ImageGroundTruth> annotations;
    std::vector<std::string> class_names;
};

/// Deterministic given spec.seed: image i uses an rng seeded with seed XOR i,
/// so generation order does not matter. Every rendered object is annotated
/// with the tight bounding box of its rasterized mask; object boxes never
/// overlap. Throws DataError when objects cannot be placed.
Dataset generate_dataset(const SceneSpec& spec, int n_images);

/// Layout: dir/images/NNNNNN.tns + dir/annotations.jsonl.
void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

} // namespace fluff
