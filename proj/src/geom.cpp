#include "vclr/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "vclr/error.hpp"

namespace vclr::geom {

PixelBox to_pixels(const Box& b, int width, int height) {
    return {(b.cx - b.w / 2) * width, (b.cy - b.h / 2) * height, (b.cx + b.w / 2) * width,
            (b.cy + b.h / 2) * height};
}

Box from_pixels(const PixelBox& b, int width, int height) {
    return {(b.x1 + b.x2) / 2 / width, (b.y1 + b.y2) / 2 / height, (b.x2 - b.x1) / width, (b.y2 - b.y1) / height};
}

bool is_valid(const Box& b) {
    auto in01 = [](double v) { return std::isfinite(v) && v >= 0 && v <= 1; };
    return in01(b.cx) && in01(b.cy) && in01(b.w) && in01(b.h);
}

double area(const PixelBox& b) { return std::max(0.0, b.x2 - b.x1) * std::max(0.0, b.y2 - b.y1); }

namespace {

double intersection(const PixelBox& a, const PixelBox& b) {
    const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    return (w > 0 && h > 0) ? w * h : 0.0;
}

PixelBox unit(const Box& b) { return to_pixels(b, 1, 1); }

}  // namespace

double box_iou(const PixelBox& a, const PixelBox& b) {
    const double inter = intersection(a, b);
    const double uni = area(a) + area(b) - inter;
    if (uni <= 0) return a == b ? 1.0 : 0.0;
    return inter / uni;
}

double box_iou(const Box& a, const Box& b) {
    if (a == b) return 1.0;
    return box_iou(unit(a), unit(b));
}

double box_giou(const PixelBox& a, const PixelBox& b) {
    const double inter = intersection(a, b);
    const double uni = area(a) + area(b) - inter;
    const double iou = uni > 0 ? inter / uni : (a == b ? 1.0 : 0.0);
    const PixelBox c{std::min(a.x1, b.x1), std::min(a.y1, b.y1), std::max(a.x2, b.x2), std::max(a.y2, b.y2)};
    const double ca = area(c);
    if (ca <= 0) return iou;
    return iou - (ca - uni) / ca;
}

double box_giou(const Box& a, const Box& b) {
    if (a == b) return 1.0;
    return box_giou(unit(a), unit(b));
}

BitMask::BitMask(int height, int width, std::vector<std::uint8_t> bits)
    : height_(height), width_(width), bits_(std::move(bits)) {
    if (bits_.size() != static_cast<std::size_t>(height) * width)
        throw ShapeError("BitMask: " + std::to_string(bits_.size()) + " bits for " + std::to_string(height) + "x" +
                         std::to_string(width));
    for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BitMask::popcount() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::optional<PixelBox> tight_box(const BitMask& m) {
    int x1 = m.width(), y1 = m.height(), x2 = -1, y2 = -1;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m.at(y, x)) {
                x1 = std::min(x1, x);
                y1 = std::min(y1, y);
                x2 = std::max(x2, x);
                y2 = std::max(y2, y);
            }
    if (x2 < 0) return std::nullopt;
    return PixelBox{double(x1), double(y1), double(x2 + 1), double(y2 + 1)};
}

double mask_iou(const BitMask& a, const BitMask& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw ShapeError("mask_iou: " + std::to_string(a.height()) + "x" + std::to_string(a.width()) + " vs " +
                         std::to_string(b.height()) + "x" + std::to_string(b.width()));
    std::size_t inter = 0, uni = 0;
    auto ab = a.bits();
    auto bb = b.bits();
    for (std::size_t i = 0; i < ab.size(); ++i) {
        inter += ab[i] & bb[i];
        uni += ab[i] | bb[i];
    }
    return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

RleMask rle_encode(const BitMask& m) {
    RleMask r{m.height(), m.width(), {}};
    std::uint8_t current = 0;
    std::uint32_t run = 0;
    for (int x = 0; x < m.width(); ++x)
        for (int y = 0; y < m.height(); ++y) {
            const std::uint8_t v = m.at(y, x) ? 1 : 0;
            if (v != current) {
                r.runs.push_back(run);
                run = 0;
                current = v;
            }
            ++run;
        }
    r.runs.push_back(run);
    return r;
}

BitMask rle_decode(const RleMask& r) {
    const std::uint64_t total = static_cast<std::uint64_t>(r.height) * r.width;
    std::uint64_t sum = 0;
    for (auto v : r.runs) sum += v;
    if (r.height < 0 || r.width < 0 || sum != total)
        throw DataError("rle_decode: runs sum to " + std::to_string(sum) + ", expected " + std::to_string(total));
    BitMask m(r.height, r.width);
    std::uint64_t pos = 0;
    bool on = false;
    for (auto v : r.runs) {
        for (std::uint32_t k = 0; k < v; ++k, ++pos)
            if (on) m.set(static_cast<int>(pos % r.height), static_cast<int>(pos / r.height));
        on = !on;
    }
    return m;
}

nlohmann::json rle_to_json(const RleMask& r) { return {{"size", {r.height, r.width}}, {"counts", r.runs}}; }

RleMask rle_from_json(const nlohmann::json& j) {
    try {
        RleMask r;
        const auto& size = j.at("size");
        if (!size.is_array() || size.size() != 2) throw DataError("RLE size must be [h,w]");
        r.height = size[0].get<int>();
        r.width = size[1].get<int>();
        r.runs = j.at("counts").get<std::vector<std::uint32_t>>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed RLE mask: ") + e.what());
    }
}

std::vector<std::size_t> nms(std::span<const ScoredBox> instances, double threshold) {
    if (!(threshold >= 0 && threshold <= 1)) throw DomainError("nms: threshold outside [0,1]");
    std::vector<std::size_t> order(instances.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return instances[a].score > instances[b].score; });
    std::vector<std::size_t> kept;
    for (std::size_t i : order) {
        bool suppressed = false;
        for (std::size_t k : kept)
            if (box_iou(instances[i].box, instances[k].box) > threshold) {
                suppressed = true;
                break;
            }
        if (!suppressed) kept.push_back(i);
    }
    return kept;
}

}  // namespace vclr::geom
