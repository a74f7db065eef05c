#include "fluff/synth_data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "fluff/errors.hpp"

namespace fs = std::filesystem;

namespace fluff {

void SceneSpec::validate() const {
    if (image_size < 8) throw ConfigError("scene spec: image_size too small");
    if (channels < 1) throw ConfigError("scene spec: channels must be positive");
    if (min_objects < 0 || max_objects < min_objects) {
        throw ConfigError("scene spec: bad object count range");
    }
    const double s = small_frac + medium_frac + large_frac;
    if (small_frac < 0 || medium_frac < 0 || large_frac < 0 || std::abs(s - 1.0) > 1e-9) {
        throw ConfigError("scene spec: scale fractions must be non-negative and sum to 1");
    }
    if (classes.empty()) throw ConfigError("scene spec: needs at least one class");
}

double SceneSpec::small_area_threshold() const {
    const double s = image_size / 300.0;
    return (32.0 * s) * (32.0 * s);
}

double SceneSpec::large_area_threshold() const {
    const double s = image_size / 300.0;
    return (96.0 * s) * (96.0 * s);
}

namespace {

// Rasterizes a shape into a k x k bounding box at (x0, y0); returns painted
// pixel coordinates. All shapes touch every side of the box, so the tight
// mask bbox equals the placement box.
std::vector<std::pair<int, int>> shape_pixels(const std::string& cls, int x0, int y0, int k) {
    std::vector<std::pair<int, int>> px;
    if (cls == "square") {
        for (int y = 0; y < k; ++y)
            for (int x = 0; x < k; ++x) px.emplace_back(x0 + x, y0 + y);
    } else if (cls == "disc") {
        const double c = (k - 1) / 2.0;
        const double r2 = c * c + 1e-9;
        for (int y = 0; y < k; ++y)
            for (int x = 0; x < k; ++x)
                if ((x - c) * (x - c) + (y - c) * (y - c) <= r2) px.emplace_back(x0 + x, y0 + y);
    } else if (cls == "triangle") {
        // apex top-center, base bottom edge
        const double ax = (k - 1) / 2.0;
        for (int y = 0; y < k; ++y) {
            const double t = k > 1 ? static_cast<double>(y) / (k - 1) : 1.0;
            const double half = t * ax + 1e-9;
            for (int x = 0; x < k; ++x) {
                if (std::abs(x - ax) <= half + 1e-9) px.emplace_back(x0 + x, y0 + y);
            }
        }
    } else {
        throw ConfigError("unknown shape class: " + cls);
    }
    return px;
}

struct SizeBand {
    int side_min;
    int side_max;
};

} // namespace

Dataset generate_dataset(const SceneSpec& spec, int n_images) {
    spec.validate();
    if (n_images < 1) throw ConfigError("generate_dataset: n_images must be >= 1");

    const int W = spec.image_size;
    const double small_thr = spec.small_area_threshold();
    const double large_thr = spec.large_area_threshold();
    // Side bands per scale class; every box area must stay >= 4 px.
    const int small_max = std::max(2, static_cast<int>(std::ceil(std::sqrt(small_thr))) - 1);
    const int medium_min = std::max(2, small_max + 1);
    const int medium_max = std::max(medium_min, static_cast<int>(std::ceil(std::sqrt(large_thr))) - 1);
    const int large_min = medium_max + 1;
    const int large_max = std::min(W - 2, std::max(large_min, (W * 2) / 3));
    const SizeBand bands[3] = {{2, small_max}, {medium_min, medium_max}, {large_min, large_max}};

    Dataset ds;
    ds.class_names = spec.classes;
    ds.images.reserve(n_images);
    ds.annotations.reserve(n_images);
    for (int img = 0; img < n_images; ++img) {
        Rng rng(spec.seed ^ static_cast<std::uint64_t>(img));
        Tensor image(1, spec.channels, W, W);
        // muted noisy background
        for (std::size_t i = 0; i < image.size(); ++i) {
            image.data()[i] = static_cast<float>(0.1 + 0.15 * rng.uniform());
        }
        ImageGroundTruth gt;
        gt.image_id = img;
        const int count =
            static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));
        std::vector<Box> placed;
        for (int obj = 0; obj < count; ++obj) {
            bool done = false;
            for (int attempt = 0; attempt < 200 && !done; ++attempt) {
                const int cls = static_cast<int>(rng.uniform_int(0, static_cast<int>(spec.classes.size()) - 1));
                const double u = rng.uniform();
                int band_idx = u < spec.small_frac ? 0 : (u < spec.small_frac + spec.medium_frac ? 1 : 2);
                const SizeBand& band = bands[band_idx];
                if (band.side_min > band.side_max || band.side_max > W - 2) {
                    continue;
                }
                const int k = static_cast<int>(rng.uniform_int(band.side_min, band.side_max));
                if (k > W) continue;
                const int x0 = static_cast<int>(rng.uniform_int(0, W - k));
                const int y0 = static_cast<int>(rng.uniform_int(0, W - k));
                const auto px = shape_pixels(spec.classes[static_cast<std::size_t>(cls)], x0, y0, k);
                // tight mask bbox
                int mnx = W, mny = W, mxx = -1, mxy = -1;
                for (auto [x, y] : px) {
                    mnx = std::min(mnx, x);
                    mny = std::min(mny, y);
                    mxx = std::max(mxx, x);
                    mxy = std::max(mxy, y);
                }
                const double area = static_cast<double>(mxx - mnx + 1) * (mxy - mny + 1);
                if (area < 4.0) continue;
                // keep the box inside its intended size band
                if (band_idx == 0 && area >= small_thr) continue;
                if (band_idx == 1 && (area < small_thr || area >= large_thr)) continue;
                if (band_idx == 2 && area < large_thr) continue;
                Box box;
                box.x_min = static_cast<float>(mnx) / W;
                box.y_min = static_cast<float>(mny) / W;
                box.x_max = static_cast<float>(mxx + 1) / W;
                box.y_max = static_cast<float>(mxy + 1) / W;
                bool clash = false;
                for (const Box& other : placed) {
                    if (iou(box, other) > 0.0) {
                        clash = true;
                        break;
                    }
                }
                if (clash) continue;
                // render with a bright color so shapes stand off the background
                std::vector<float> color(static_cast<std::size_t>(spec.channels));
                for (auto& ch : color) {
                    ch = static_cast<float>(0.55 + 0.45 * rng.uniform());
                }
                for (auto [x, y] : px) {
                    for (int c = 0; c < spec.channels; ++c) {
                        image.at(0, c, y, x) = color[static_cast<std::size_t>(c)];
                    }
                }
                placed.push_back(box);
                gt.objects.push_back({box, cls});
                done = true;
            }
            if (!done) {
                throw DataError("generate_dataset: could not place object " + std::to_string(obj) +
                                " in image " + std::to_string(img) + " (spec unsatisfiable)");
            }
        }
        ds.images.push_back(std::move(image));
        ds.annotations.push_back(std::move(gt));
    }
    return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    std::ofstream ann(fs::path(dir) / "annotations.jsonl");
    if (!ann) throw DataError("cannot write annotations in " + dir);
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "%06zu.tns", i);
        tensor_write(ds.images[i], (fs::path(dir) / "images" / name).string());
        nlohmann::json j;
        j["image_id"] = ds.annotations[i].image_id;
        j["file"] = std::string("images/") + name;
        j["objects"] = nlohmann::json::array();
        for (const GtObject& o : ds.annotations[i].objects) {
            nlohmann::json jo;
            jo["label"] = o.label;
            jo["class"] = o.label < static_cast<int>(ds.class_names.size())
                              ? ds.class_names[static_cast<std::size_t>(o.label)]
                              : std::to_string(o.label);
            jo["box"] = {o.box.x_min, o.box.y_min, o.box.x_max, o.box.y_max};
            j["objects"].push_back(std::move(jo));
        }
        ann << j.dump() << "\n";
    }
    nlohmann::json meta;
    meta["classes"] = ds.class_names;
    meta["count"] = ds.images.size();
    std::ofstream mf(fs::path(dir) / "meta.json");
    mf << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
    Dataset ds;
    std::ifstream mf(fs::path(dir) / "meta.json");
    if (mf) {
        nlohmann::json meta = nlohmann::json::parse(mf);
        for (const auto& c : meta.at("classes")) {
            ds.class_names.push_back(c.get<std::string>());
        }
    }
    std::ifstream ann(fs::path(dir) / "annotations.jsonl");
    if (!ann) throw DataError("dataset not found: " + dir);
    std::string line;
    while (std::getline(ann, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ImageGroundTruth gt;
        gt.image_id = j.at("image_id").get<int>();
        for (const auto& jo : j.at("objects")) {
            GtObject o;
            o.label = jo.at("label").get<int>();
            const auto& b = jo.at("box");
            o.box = {b.at(0).get<float>(), b.at(1).get<float>(), b.at(2).get<float>(),
                     b.at(3).get<float>()};
            gt.objects.push_back(o);
        }
        ds.images.push_back(tensor_read((fs::path(dir) / j.at("file").get<std::string>()).string()));
        ds.annotations.push_back(std::move(gt));
    }
    if (ds.images.empty()) throw DataError("dataset is empty: " + dir);
    return ds;
}

} // namespace fluff
