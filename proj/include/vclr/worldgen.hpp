#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vclr/geom.hpp"
#include "vclr/nd/tensor.hpp"
#include "vclr/setmatch.hpp"

namespace vclr::worldgen {

inline constexpr int kCanvas = 64;
inline constexpr int kGeneratorVersion = 1;

enum class ShapeKind { square, circle, triangle };
enum class Material { flat, checker };

inline constexpr std::array<std::string_view, 3> kShapeNames{"square", "circle", "triangle"};
inline constexpr std::array<std::string_view, 8> kColorNames{"gray",  "red",    "blue", "green",
                                                             "brown", "purple", "cyan", "yellow"};
inline constexpr std::array<std::string_view, 2> kMaterialNames{"flat", "checker"};
inline constexpr int kRed = 1;

int color_index(std::string_view name);        // UsageError on unknown names
Material material_from(std::string_view name);  // UsageError on unknown names

struct ObjectSpec {
    ShapeKind shape = ShapeKind::square;
    int color = 0;
    Material material = Material::flat;
    double cx = 0, cy = 0;  // pixels
    int size = 8;           // pixels, [8, 28]
    int z = 0;              // larger draws on top

    bool known() const { return color == kRed && material == Material::checker; }
};

// One visible instance. Boxes are the tight bounds of their masks.
struct Instance {
    ObjectSpec spec;
    geom::Box box;
    geom::BitMask mask;
    bool known = false;
};

struct SceneSpec {
    std::vector<Instance> objects;
};

// Float HWC image with values in [0,1].
struct Image {
    int height = 0, width = 0, channels = 0;
    std::vector<float> pixels;

    float at(int y, int x, int c) const { return pixels[(std::size_t(y) * width + x) * channels + c]; }
    float& at(int y, int x, int c) { return pixels[(std::size_t(y) * width + x) * channels + c]; }
    nd::Tensor tensor() const;
    bool operator==(const Image&) const = default;
};

Image blank_image(int height, int width, int channels = 3);

enum class View { natural, structure, stylized };
inline constexpr std::array<std::string_view, 3> kViewNames{"natural", "structure", "stylized"};
View view_from(std::string_view name);

struct ViewSet {
    Image natural, structure, stylized;
    const Image& get(View v) const;
    Image& get(View v);
    bool operator==(const ViewSet&) const = default;
};

struct SceneConfig {
    int min_objects = 1, max_objects = 10;
    int min_size = 8, max_size = 28;
    double min_center_distance = 6.0;
    double min_visible_fraction = 0.25;
    int max_tries = 1000;
};

// Full-shape raster of one object before occlusion.
geom::BitMask rasterize(const ObjectSpec& o, int canvas = kCanvas);

// Visible masks by z-order; objects with nothing visible are dropped.
SceneSpec compose(std::vector<ObjectSpec> objects, int canvas = kCanvas);

SceneSpec sample_scene(std::mt19937_64& rng, const SceneConfig& cfg = {});

ViewSet render_views(const SceneSpec& scene, std::mt19937_64& rng);
Image render_natural(const SceneSpec& scene);
Image render_structure(const SceneSpec& scene);
Image stylize(const Image& natural, std::array<int, 3> permutation, double gamma);

// Crop-and-paste augmentation. A square patch of side `src_side` at (sx, sy)
// is resized (nearest neighbour) to `dst_side` and pasted at (dx, dy).
struct PasteOp {
    bool active = false;
    int sx = 0, sy = 0, src_side = 0;
    int dx = 0, dy = 0, dst_side = 0;

    Image apply(const Image& img) const;
    // Pixels covered by the pasted patch.
    geom::BitMask region(int canvas = kCanvas) const;
    // The part of `m` that lands inside the pasted patch.
    geom::BitMask pasted(const geom::BitMask& m) const;
};

struct PasteConfig {
    double probability = 0.5;
    int min_side = 16, max_side = 32;
    double min_scale = 0.5, max_scale = 2.0;
    int min_fragment = 16;  // pasted fragments smaller than this are not annotated
};

PasteOp sample_paste(std::mt19937_64& rng, const PasteConfig& cfg = {}, int canvas = kCanvas);

// Instances whose visible part vanishes under the paste are dropped; pasted
// copies of instances become new instances.
std::vector<Instance> paste_instances(const PasteOp& op, const std::vector<Instance>& in, int min_fragment);

std::pair<ViewSet, SceneSpec> crop_paste(const ViewSet& views, const SceneSpec& scene, std::mt19937_64& rng,
                                         const PasteConfig& cfg = {});

struct Proposal {
    double confidence = 0;
    geom::Box box;
    geom::BitMask mask;
    bool operator==(const Proposal&) const = default;
};

struct ProposalNoise {
    double box_jitter = 0.07;   // sigma as a fraction of the object size
    int mask_radius = 1;        // erosion/dilation radius drawn from [-r, r]
    double drop = 0.15;
    double false_positives = 0.5;  // mean count per image (Poisson)
    double true_conf_lo = 0.5, true_conf_hi = 1.0;
    double false_conf_lo = 0.1, false_conf_hi = 0.6;
    double nms_threshold = 0.7;
    std::size_t top_k = 10;

    static ProposalNoise none();
};

nlohmann::json to_json(const ProposalNoise& n);
ProposalNoise proposal_noise_from_json(const nlohmann::json& j, ProposalNoise base = {});

std::vector<Proposal> oracle_proposals(const SceneSpec& scene, std::mt19937_64& rng,
                                       const ProposalNoise& noise = {});

geom::BitMask dilate(const geom::BitMask& m, int radius);
geom::BitMask erode(const geom::BitMask& m, int radius);

// ---- datasets ----

enum class Split { train, val };
std::string_view split_name(Split s);
Split split_from(std::string_view name);

struct GenConfig {
    SceneConfig scene;
    ProposalNoise noise;
};

nlohmann::json to_json(const GenConfig& g);

struct Annotation {
    geom::Box box;
    geom::BitMask mask;
    ShapeKind shape = ShapeKind::square;
    int color = 0;
    Material material = Material::flat;
    bool known = false;
    bool operator==(const Annotation&) const = default;
};

struct Record {
    std::size_t index = 0;
    ViewSet views;
    // Train records carry known-class annotations only; val records carry all.
    std::vector<Annotation> gt;
    std::vector<Proposal> proposals;
    std::size_t hidden_objects = 0;  // unknown objects present in the pixels but withheld
    bool operator==(const Record&) const = default;
};

std::vector<setmatch::Target> gt_targets(const Record& r);
// Applies a paste to the views, the annotations and the proposals alike.
Record paste_record(const Record& r, const PasteOp& op, int min_fragment);
std::vector<setmatch::Target> proposal_targets(const Record& r);

// Per-record generator stream; serial and parallel generation agree.
std::mt19937_64 record_rng(std::uint64_t seed, Split split, std::size_t index, std::uint32_t stream);

Record generate_record(std::uint64_t seed, Split split, std::size_t index, const GenConfig& cfg = {});

struct Dataset {
    nlohmann::json manifest;
    std::vector<Record> records;
};

void write_dataset(Split split, std::size_t n, std::uint64_t seed, const std::filesystem::path& dir,
                   const GenConfig& cfg = {});
Dataset read_dataset(const std::filesystem::path& dir);

nlohmann::json record_meta(const Record& r);

}  // namespace vclr::worldgen
