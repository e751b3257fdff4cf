#include "vclr/worldgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "vclr/error.hpp"

namespace vclr::worldgen {

namespace fs = std::filesystem;
using geom::BitMask;

namespace {

constexpr std::array<std::array<float, 3>, 8> kPalette{{
    {0.50f, 0.50f, 0.50f},  // gray
    {0.82f, 0.12f, 0.10f},  // red
    {0.16f, 0.30f, 0.86f},  // blue
    {0.14f, 0.64f, 0.20f},  // green
    {0.55f, 0.34f, 0.14f},  // brown
    {0.52f, 0.20f, 0.70f},  // purple
    {0.14f, 0.76f, 0.80f},  // cyan
    {0.90f, 0.84f, 0.16f},  // yellow
}};
constexpr std::array<float, 3> kBackground{0.18f, 0.18f, 0.20f};
constexpr float kCheckerDark = 0.55f;
constexpr float kStructureBackground = 0.1f;

template <std::size_t N>
int lookup(const std::array<std::string_view, N>& names, std::string_view name, const char* what) {
    for (std::size_t i = 0; i < N; ++i)
        if (names[i] == name) return static_cast<int>(i);
    throw UsageError(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

std::optional<geom::Box> mask_box(const BitMask& m) {
    auto pb = geom::tight_box(m);
    if (!pb) return std::nullopt;
    return geom::from_pixels(*pb, m.width(), m.height());
}

BitMask subtract(const BitMask& a, const BitMask& b) {
    BitMask out = a;
    auto o = out.bits();
    auto bb = b.bits();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = o[i] && !bb[i];
    return out;
}

nlohmann::json box_json(const geom::Box& b) { return {b.cx, b.cy, b.w, b.h}; }

geom::Box box_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 4) throw DataError("box must be [cx,cy,w,h]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

int color_index(std::string_view name) { return lookup(kColorNames, name, "color"); }
Material material_from(std::string_view name) { return Material(lookup(kMaterialNames, name, "material")); }
View view_from(std::string_view name) { return View(lookup(kViewNames, name, "view")); }

std::string_view split_name(Split s) { return s == Split::train ? "train" : "val"; }
Split split_from(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "val") return Split::val;
    throw UsageError("unknown split '" + std::string(name) + "'");
}

nd::Tensor Image::tensor() const {
    std::vector<double> v(pixels.begin(), pixels.end());
    return nd::Tensor::from({std::size_t(height), std::size_t(width), std::size_t(channels)}, std::move(v));
}

Image blank_image(int height, int width, int channels) {
    return {height, width, channels, std::vector<float>(std::size_t(height) * width * channels, 0.0f)};
}

const Image& ViewSet::get(View v) const {
    return v == View::natural ? natural : v == View::structure ? structure : stylized;
}
Image& ViewSet::get(View v) { return v == View::natural ? natural : v == View::structure ? structure : stylized; }

// ---- scenes ----

BitMask rasterize(const ObjectSpec& o, int canvas) {
    BitMask m(canvas, canvas);
    const double half = o.size / 2.0;
    for (int y = 0; y < canvas; ++y)
        for (int x = 0; x < canvas; ++x) {
            const double px = x + 0.5 - o.cx, py = y + 0.5 - o.cy;
            bool in = false;
            switch (o.shape) {
                case ShapeKind::square: in = px >= -half && px < half && py >= -half && py < half; break;
                case ShapeKind::circle: in = px * px + py * py <= half * half; break;
                case ShapeKind::triangle:
                    // apex up, base along the bottom edge
                    in = py >= -half && py < half && std::abs(px) <= half * (py + half) / o.size;
                    break;
            }
            if (in) m.set(y, x);
        }
    return m;
}

SceneSpec compose(std::vector<ObjectSpec> objects, int canvas) {
    std::vector<std::size_t> order(objects.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return objects[a].z > objects[b].z; });
    std::vector<BitMask> visible(objects.size());
    BitMask occupied(canvas, canvas);
    for (auto i : order) {
        auto full = rasterize(objects[i], canvas);
        visible[i] = subtract(full, occupied);
        for (std::size_t k = 0; k < full.bits().size(); ++k) occupied.bits()[k] |= full.bits()[k];
    }
    SceneSpec s;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        auto box = mask_box(visible[i]);
        if (!box) continue;
        s.objects.push_back({objects[i], *box, std::move(visible[i]), objects[i].known()});
    }
    return s;
}

SceneSpec sample_scene(std::mt19937_64& rng, const SceneConfig& cfg) {
    while (true) {
        const int n = uniform_int(rng, cfg.min_objects, cfg.max_objects);
        std::vector<ObjectSpec> objs(n);
        for (auto& o : objs) {
            o.shape = ShapeKind(uniform_int(rng, 0, 2));
            o.color = uniform_int(rng, 0, 7);
            o.material = Material(uniform_int(rng, 0, 1));
            o.size = uniform_int(rng, cfg.min_size, cfg.max_size);
        }
        std::vector<int> z(n);
        std::iota(z.begin(), z.end(), 0);
        std::shuffle(z.begin(), z.end(), rng);
        for (int i = 0; i < n; ++i) objs[i].z = z[i];

        int tries = 0;
        std::vector<ObjectSpec> placed;
        std::vector<double> full_area;
        bool ok = true;
        for (int i = 0; i < n && ok; ++i) {
            while (true) {
                if (++tries > cfg.max_tries) {
                    ok = false;
                    break;
                }
                auto o = objs[i];
                const double half = o.size / 2.0;
                o.cx = uniform(rng, half, kCanvas - half);
                o.cy = uniform(rng, half, kCanvas - half);
                bool far = true;
                for (auto& p : placed)
                    far = far && std::hypot(p.cx - o.cx, p.cy - o.cy) >= cfg.min_center_distance;
                if (!far) continue;
                auto trial = placed;
                trial.push_back(o);
                auto areas = full_area;
                areas.push_back(double(rasterize(o).popcount()));
                // every object keeps a fair share of itself visible
                auto scene = compose(trial);
                if (scene.objects.size() != trial.size()) continue;
                bool visible = true;
                for (std::size_t k = 0; k < trial.size(); ++k)
                    visible = visible && scene.objects[k].mask.popcount() >= cfg.min_visible_fraction * areas[k];
                if (!visible) continue;
                placed = std::move(trial);
                full_area = std::move(areas);
                break;
            }
        }
        if (ok) return compose(placed);
    }
}

// ---- views ----

Image render_natural(const SceneSpec& scene) {
    Image img = blank_image(kCanvas, kCanvas);
    for (int y = 0; y < kCanvas; ++y)
        for (int x = 0; x < kCanvas; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = kBackground[c];
    for (auto& inst : scene.objects) {
        const auto& col = kPalette[inst.spec.color];
        for (int y = 0; y < kCanvas; ++y)
            for (int x = 0; x < kCanvas; ++x) {
                if (!inst.mask.at(y, x)) continue;
                float f = 1.0f;
                if (inst.spec.material == Material::checker && ((x / 2 + y / 2) % 2)) f = kCheckerDark;
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c] * f;
            }
    }
    return img;
}

Image render_structure(const SceneSpec& scene) {
    Image img = blank_image(kCanvas, kCanvas);
    std::fill(img.pixels.begin(), img.pixels.end(), kStructureBackground);
    std::vector<int> zs;
    for (auto& o : scene.objects) zs.push_back(o.spec.z);
    std::sort(zs.begin(), zs.end());
    for (auto& inst : scene.objects) {
        const int rank = int(std::lower_bound(zs.begin(), zs.end(), inst.spec.z) - zs.begin());
        const float level = std::min(0.95f, 0.35f + 0.065f * rank);
        for (int y = 0; y < kCanvas; ++y)
            for (int x = 0; x < kCanvas; ++x)
                if (inst.mask.at(y, x))
                    for (int c = 0; c < 3; ++c) img.at(y, x, c) = level;
    }
    return img;
}

Image stylize(const Image& natural, std::array<int, 3> perm, double gamma) {
    Image out = natural;
    for (int y = 0; y < natural.height; ++y)
        for (int x = 0; x < natural.width; ++x)
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = static_cast<float>(std::pow(double(natural.at(y, x, perm[c])), gamma));
    return out;
}

ViewSet render_views(const SceneSpec& scene, std::mt19937_64& rng) {
    std::array<int, 3> perm{0, 1, 2};
    std::shuffle(perm.begin(), perm.end(), rng);
    const double gamma = uniform(rng, 0.6, 1.6);
    ViewSet v;
    v.natural = render_natural(scene);
    v.structure = render_structure(scene);
    v.stylized = stylize(v.natural, perm, gamma);
    return v;
}

// ---- crop and paste ----

namespace {
int source_offset(int i, int src, int dst) { return static_cast<int>((i + 0.5) * src / dst); }
}  // namespace

Image PasteOp::apply(const Image& img) const {
    if (!active) return img;
    Image out = img;
    for (int i = 0; i < dst_side; ++i)
        for (int j = 0; j < dst_side; ++j) {
            const int sy_ = sy + source_offset(i, src_side, dst_side), sx_ = sx + source_offset(j, src_side, dst_side);
            for (int c = 0; c < img.channels; ++c) out.at(dy + i, dx + j, c) = img.at(sy_, sx_, c);
        }
    return out;
}

BitMask PasteOp::region(int canvas) const {
    BitMask m(canvas, canvas);
    if (!active) return m;
    for (int i = 0; i < dst_side; ++i)
        for (int j = 0; j < dst_side; ++j) m.set(dy + i, dx + j);
    return m;
}

BitMask PasteOp::pasted(const BitMask& src) const {
    BitMask m(src.height(), src.width());
    if (!active) return m;
    for (int i = 0; i < dst_side; ++i)
        for (int j = 0; j < dst_side; ++j)
            if (src.at(sy + source_offset(i, src_side, dst_side), sx + source_offset(j, src_side, dst_side)))
                m.set(dy + i, dx + j);
    return m;
}

PasteOp sample_paste(std::mt19937_64& rng, const PasteConfig& cfg, int canvas) {
    PasteOp op;
    const double gate = uniform(rng, 0.0, 1.0);
    if (gate >= cfg.probability) return op;
    op.active = true;
    op.src_side = uniform_int(rng, cfg.min_side, std::min(cfg.max_side, canvas));
    op.sx = uniform_int(rng, 0, canvas - op.src_side);
    op.sy = uniform_int(rng, 0, canvas - op.src_side);
    const double scale = uniform(rng, cfg.min_scale, cfg.max_scale);
    op.dst_side = std::clamp(static_cast<int>(std::lround(op.src_side * scale)), 1, canvas);
    op.dx = uniform_int(rng, 0, canvas - op.dst_side);
    op.dy = uniform_int(rng, 0, canvas - op.dst_side);
    return op;
}

namespace {

// Surviving remainder and pasted copy of one mask.
std::pair<std::optional<BitMask>, std::optional<BitMask>> split_mask(const PasteOp& op, const BitMask& m,
                                                                     const BitMask& region, int min_fragment) {
    auto rest = subtract(m, region);
    auto copy = op.pasted(m);
    std::optional<BitMask> a, b;
    const std::size_t keep = std::min<std::size_t>(min_fragment, std::max<std::size_t>(m.popcount(), 1));
    if (rest.popcount() >= keep) a = std::move(rest);
    if (copy.popcount() >= std::size_t(min_fragment)) b = std::move(copy);
    return {a, b};
}

}  // namespace

std::vector<Instance> paste_instances(const PasteOp& op, const std::vector<Instance>& in, int min_fragment) {
    if (!op.active) return in;
    const auto region = op.region(in.empty() ? kCanvas : in.front().mask.height());
    int top = 0;
    for (auto& i : in) top = std::max(top, i.spec.z + 1);
    std::vector<Instance> kept, copies;
    for (auto& inst : in) {
        auto [rest, copy] = split_mask(op, inst.mask, region, min_fragment);
        if (rest) kept.push_back({inst.spec, *mask_box(*rest), std::move(*rest), inst.known});
        if (copy) {
            Instance c{inst.spec, *mask_box(*copy), std::move(*copy), inst.known};
            c.spec.z = top + inst.spec.z;
            copies.push_back(std::move(c));
        }
    }
    kept.insert(kept.end(), copies.begin(), copies.end());
    return kept;
}

std::pair<ViewSet, SceneSpec> crop_paste(const ViewSet& views, const SceneSpec& scene, std::mt19937_64& rng,
                                         const PasteConfig& cfg) {
    const auto op = sample_paste(rng, cfg);
    if (!op.active) return {views, scene};
    ViewSet v{op.apply(views.natural), op.apply(views.structure), op.apply(views.stylized)};
    return {std::move(v), SceneSpec{paste_instances(op, scene.objects, cfg.min_fragment)}};
}

Record paste_record(const Record& r, const PasteOp& op, int min_fragment) {
    if (!op.active) return r;
    Record out;
    out.index = r.index;
    out.hidden_objects = r.hidden_objects;
    out.views = {op.apply(r.views.natural), op.apply(r.views.structure), op.apply(r.views.stylized)};
    const auto region = op.region();
    std::vector<Annotation> copies;
    for (auto& a : r.gt) {
        auto [rest, copy] = split_mask(op, a.mask, region, min_fragment);
        if (rest) out.gt.push_back({*mask_box(*rest), std::move(*rest), a.shape, a.color, a.material, a.known});
        if (copy) copies.push_back({*mask_box(*copy), std::move(*copy), a.shape, a.color, a.material, a.known});
    }
    out.gt.insert(out.gt.end(), copies.begin(), copies.end());
    std::vector<Proposal> pcopies;
    for (auto& p : r.proposals) {
        auto [rest, copy] = split_mask(op, p.mask, region, min_fragment);
        if (rest) out.proposals.push_back({p.confidence, *mask_box(*rest), std::move(*rest)});
        if (copy) pcopies.push_back({p.confidence, *mask_box(*copy), std::move(*copy)});
    }
    out.proposals.insert(out.proposals.end(), pcopies.begin(), pcopies.end());
    return out;
}

// ---- proposals ----

ProposalNoise ProposalNoise::none() {
    ProposalNoise n;
    n.box_jitter = 0;
    n.mask_radius = 0;
    n.drop = 0;
    n.false_positives = 0;
    return n;
}

nlohmann::json to_json(const ProposalNoise& n) {
    return {{"box_jitter", n.box_jitter},       {"mask_radius", n.mask_radius},
            {"drop", n.drop},                   {"false_positives", n.false_positives},
            {"true_conf", {n.true_conf_lo, n.true_conf_hi}}, {"false_conf", {n.false_conf_lo, n.false_conf_hi}},
            {"nms_threshold", n.nms_threshold}, {"top_k", n.top_k}};
}

ProposalNoise proposal_noise_from_json(const nlohmann::json& j, ProposalNoise n) {
    if (!j.is_object()) throw UsageError("proposal noise must be an object");
    try {
        for (auto& [k, v] : j.items()) {
            if (k == "box_jitter") n.box_jitter = v.get<double>();
            else if (k == "mask_radius") n.mask_radius = v.get<int>();
            else if (k == "drop") n.drop = v.get<double>();
            else if (k == "false_positives") n.false_positives = v.get<double>();
            else if (k == "true_conf") n.true_conf_lo = v.at(0).get<double>(), n.true_conf_hi = v.at(1).get<double>();
            else if (k == "false_conf") n.false_conf_lo = v.at(0).get<double>(), n.false_conf_hi = v.at(1).get<double>();
            else if (k == "nms_threshold") n.nms_threshold = v.get<double>();
            else if (k == "top_k") n.top_k = v.get<std::size_t>();
            else throw UsageError("unknown key proposals." + k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("proposal noise: ") + e.what());
    }
    if (n.drop < 0 || n.drop > 1 || n.box_jitter < 0 || n.mask_radius < 0 || n.false_positives < 0)
        throw UsageError("proposal noise parameters out of range");
    return n;
}

BitMask dilate(const BitMask& m, int r) {
    BitMask out(m.height(), m.width());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            bool on = false;
            for (int dy = -r; dy <= r && !on; ++dy)
                for (int dx = -r; dx <= r && !on; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    on = yy >= 0 && xx >= 0 && yy < m.height() && xx < m.width() && m.at(yy, xx);
                }
            out.set(y, x, on);
        }
    return out;
}

BitMask erode(const BitMask& m, int r) {
    BitMask out(m.height(), m.width());
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x) {
            bool on = m.at(y, x);
            for (int dy = -r; dy <= r && on; ++dy)
                for (int dx = -r; dx <= r && on; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    on = yy >= 0 && xx >= 0 && yy < m.height() && xx < m.width() && m.at(yy, xx);
                }
            out.set(y, x, on);
        }
    return out;
}

std::vector<Proposal> oracle_proposals(const SceneSpec& scene, std::mt19937_64& rng, const ProposalNoise& noise) {
    std::vector<Proposal> raw;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (auto& inst : scene.objects) {
        if (uniform(rng, 0, 1) < noise.drop) continue;
        BitMask mask = inst.mask;
        if (noise.mask_radius > 0) {
            const int r = uniform_int(rng, -noise.mask_radius, noise.mask_radius);
            if (r > 0) mask = dilate(mask, r);
            if (r < 0) {
                auto e = erode(mask, -r);
                if (!e.empty()) mask = std::move(e);
            }
        }
        // box noise is independent of the mask noise
        geom::Box b = inst.box;
        if (noise.box_jitter > 0) {
            auto p = geom::to_pixels(b, kCanvas, kCanvas);
            const double w = p.x2 - p.x1, h = p.y2 - p.y1, s = noise.box_jitter;
            double x1 = p.x1 + gauss(rng) * s * w, x2 = p.x2 + gauss(rng) * s * w;
            double y1 = p.y1 + gauss(rng) * s * h, y2 = p.y2 + gauss(rng) * s * h;
            x1 = std::clamp(x1, 0.0, double(kCanvas - 1)), y1 = std::clamp(y1, 0.0, double(kCanvas - 1));
            x2 = std::clamp(std::max(x2, x1 + 1.0), 1.0, double(kCanvas));
            y2 = std::clamp(std::max(y2, y1 + 1.0), 1.0, double(kCanvas));
            b = geom::from_pixels({x1, y1, x2, y2}, kCanvas, kCanvas);
        }
        raw.push_back({uniform(rng, noise.true_conf_lo, noise.true_conf_hi), b, std::move(mask)});
    }
    const int fps = noise.false_positives > 0 ? std::poisson_distribution<int>(noise.false_positives)(rng) : 0;
    for (int k = 0; k < fps; ++k) {
        const int w = uniform_int(rng, 6, 24), h = uniform_int(rng, 6, 24);
        const int x1 = uniform_int(rng, 0, kCanvas - w), y1 = uniform_int(rng, 0, kCanvas - h);
        BitMask blob(kCanvas, kCanvas);
        const double cx = x1 + w / 2.0, cy = y1 + h / 2.0;
        for (int y = y1; y < y1 + h; ++y)
            for (int x = x1; x < x1 + w; ++x) {
                const double u = (x + 0.5 - cx) / (w / 2.0), v = (y + 0.5 - cy) / (h / 2.0);
                if (u * u + v * v <= 1.0) blob.set(y, x);
            }
        auto b = *mask_box(blob);
        raw.push_back({uniform(rng, noise.false_conf_lo, noise.false_conf_hi), b, std::move(blob)});
    }
    std::vector<geom::ScoredBox> sb;
    for (auto& p : raw) sb.push_back({p.confidence, p.box});
    auto keep = geom::nms(sb, noise.nms_threshold);
    std::vector<Proposal> out;
    for (auto k : keep) {
        if (out.size() >= noise.top_k) break;
        out.push_back(std::move(raw[k]));
    }
    return out;
}

// ---- records ----

std::vector<setmatch::Target> gt_targets(const Record& r) {
    std::vector<setmatch::Target> t;
    for (auto& a : r.gt) t.push_back({a.box, a.mask, true});
    return t;
}

std::vector<setmatch::Target> proposal_targets(const Record& r) {
    std::vector<setmatch::Target> t;
    for (auto& p : r.proposals) t.push_back({p.box, p.mask, true});
    return t;
}

std::mt19937_64 record_rng(std::uint64_t seed, Split split, std::size_t index, std::uint32_t stream) {
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(split),
                      std::uint32_t(index), std::uint32_t(std::uint64_t(index) >> 32), stream};
    return std::mt19937_64(seq);
}

Record generate_record(std::uint64_t seed, Split split, std::size_t index, const GenConfig& cfg) {
    auto scene_rng = record_rng(seed, split, index, 0);
    auto view_rng = record_rng(seed, split, index, 1);
    auto prop_rng = record_rng(seed, split, index, 2);
    const auto scene = sample_scene(scene_rng, cfg.scene);
    Record r;
    r.index = index;
    r.views = render_views(scene, view_rng);
    for (auto& inst : scene.objects) {
        if (split == Split::train && !inst.known) {
            ++r.hidden_objects;
            continue;
        }
        r.gt.push_back({inst.box, inst.mask, inst.spec.shape, inst.spec.color, inst.spec.material, inst.known});
    }
    r.proposals = oracle_proposals(scene, prop_rng, cfg.noise);
    return r;
}

nlohmann::json to_json(const GenConfig& g) {
    return {{"scene",
             {{"min_objects", g.scene.min_objects},
              {"max_objects", g.scene.max_objects},
              {"min_size", g.scene.min_size},
              {"max_size", g.scene.max_size},
              {"min_center_distance", g.scene.min_center_distance},
              {"min_visible_fraction", g.scene.min_visible_fraction},
              {"max_tries", g.scene.max_tries}}},
            {"proposals", to_json(g.noise)}};
}

nlohmann::json record_meta(const Record& r) {
    nlohmann::json gt = nlohmann::json::array(), props = nlohmann::json::array();
    for (auto& a : r.gt)
        gt.push_back({{"box", box_json(a.box)},
                      {"mask", geom::rle_to_json(geom::rle_encode(a.mask))},
                      {"shape", kShapeNames[int(a.shape)]},
                      {"color", kColorNames[a.color]},
                      {"material", kMaterialNames[int(a.material)]},
                      {"known", a.known}});
    for (auto& p : r.proposals)
        props.push_back({{"confidence", p.confidence},
                         {"box", box_json(p.box)},
                         {"mask", geom::rle_to_json(geom::rle_encode(p.mask))}});
    return {{"index", r.index}, {"gt", gt}, {"proposals", props}, {"hidden_objects", r.hidden_objects}};
}

namespace {

std::string record_stem(std::size_t i) {
    std::ostringstream os;
    os << std::setw(6) << std::setfill('0') << i;
    return os.str();
}

void write_image(const fs::path& p, const Image& img) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot write " + p.string());
    f.write(reinterpret_cast<const char*>(img.pixels.data()), std::streamsize(img.pixels.size() * sizeof(float)));
    if (!f) throw DataError("short write to " + p.string());
}

Image read_image(const fs::path& p) {
    Image img = blank_image(kCanvas, kCanvas, 3);
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot open " + p.string());
    f.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(img.pixels.size() * sizeof(float)));
    if (f.gcount() != std::streamsize(img.pixels.size() * sizeof(float)) || f.peek() != EOF)
        throw DataError(p.string() + ": expected " + std::to_string(img.pixels.size() * sizeof(float)) + " bytes");
    for (float v : img.pixels)
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError(p.string() + ": pixel outside [0,1]");
    return img;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw DataError("cannot open " + p.string());
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(p.string() + ": " + e.what());
    }
}

void write_json(const fs::path& p, const nlohmann::json& j) {
    std::ofstream f(p);
    if (!f) throw DataError("cannot write " + p.string());
    f << j.dump(1) << '\n';
}

}  // namespace

void write_dataset(Split split, std::size_t n, std::uint64_t seed, const fs::path& dir, const GenConfig& cfg) {
    fs::create_directories(dir / "records");
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = generate_record(seed, split, i, cfg);
        const auto stem = dir / "records" / record_stem(i);
        write_image(stem.string() + ".natural.bin", r.views.natural);
        write_image(stem.string() + ".structure.bin", r.views.structure);
        write_image(stem.string() + ".stylized.bin", r.views.stylized);
        write_json(stem.string() + ".meta.json", record_meta(r));
    }
    nlohmann::json m{{"format", "vclr-dataset-1"},
                     {"generator_version", kGeneratorVersion},
                     {"split", split_name(split)},
                     {"seed", seed},
                     {"count", n},
                     {"canvas", kCanvas},
                     {"channels", 3},
                     {"dtype", "float32"},
                     {"layout", "HWC"},
                     {"endianness", "little"},
                     {"gt_policy", split == Split::train ? "known_only" : "full"},
                     {"config", to_json(cfg)}};
    write_json(dir / "manifest.json", m);
}

Dataset read_dataset(const fs::path& dir) {
    Dataset ds;
    const auto mpath = dir / "manifest.json";
    ds.manifest = read_json(mpath);
    std::size_t count = 0;
    try {
        if (ds.manifest.at("format") != "vclr-dataset-1") throw DataError(mpath.string() + ": unknown format");
        count = ds.manifest.at("count").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(mpath.string() + ": " + e.what());
    }
    std::size_t present = 0;
    if (fs::exists(dir / "records"))
        for (auto& e : fs::directory_iterator(dir / "records"))
            if (e.path().string().ends_with(".meta.json")) ++present;
    if (present != count)
        throw DataError(mpath.string() + ": manifest count " + std::to_string(count) + " but " +
                        std::to_string(present) + " records on disk");
    ds.records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto stem = (dir / "records" / record_stem(i)).string();
        const auto mp = fs::path(stem + ".meta.json");
        const auto meta = read_json(mp);
        Record r;
        r.index = i;
        r.views = {read_image(stem + ".natural.bin"), read_image(stem + ".structure.bin"),
                   read_image(stem + ".stylized.bin")};
        try {
            if (meta.at("index").get<std::size_t>() != i) throw DataError(mp.string() + ": index mismatch");
            r.hidden_objects = meta.at("hidden_objects").get<std::size_t>();
            for (auto& g : meta.at("gt")) {
                Annotation a;
                a.box = box_from(g.at("box"));
                a.mask = geom::rle_decode(geom::rle_from_json(g.at("mask")));
                a.shape = ShapeKind(lookup(kShapeNames, g.at("shape").get<std::string>(), "shape"));
                a.color = color_index(g.at("color").get<std::string>());
                a.material = material_from(g.at("material").get<std::string>());
                a.known = g.at("known").get<bool>();
                r.gt.push_back(std::move(a));
            }
            for (auto& p : meta.at("proposals"))
                r.proposals.push_back({p.at("confidence").get<double>(), box_from(p.at("box")),
                                       geom::rle_decode(geom::rle_from_json(p.at("mask")))});
        } catch (const nlohmann::json::exception& e) {
            throw DataError(mp.string() + ": " + e.what());
        } catch (const Error& e) {
            throw DataError(mp.string() + ": " + e.what());
        }
        ds.records.push_back(std::move(r));
    }
    return ds;
}

}  // namespace vclr::worldgen
