#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

namespace vclr::geom {

// Canonical box: centre and size, normalized to the canvas ([0,1] each).
struct Box {
    double cx = 0, cy = 0, w = 0, h = 0;
    bool operator==(const Box&) const = default;
};

// Corner form in absolute pixel units. Pixel (x, y) covers [x, x+1) x [y, y+1).
struct PixelBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    bool operator==(const PixelBox&) const = default;
};

PixelBox to_pixels(const Box& b, int width, int height);
Box from_pixels(const PixelBox& b, int width, int height);
bool is_valid(const Box& b);

double area(const PixelBox& b);
double box_iou(const PixelBox& a, const PixelBox& b);
double box_iou(const Box& a, const Box& b);
double box_giou(const PixelBox& a, const PixelBox& b);
double box_giou(const Box& a, const Box& b);

class BitMask {
   public:
    BitMask() = default;
    BitMask(int height, int width) : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, 0) {}
    BitMask(int height, int width, std::vector<std::uint8_t> bits);

    int height() const { return height_; }
    int width() const { return width_; }
    bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
    void set(int y, int x, bool on = true) { bits_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }
    std::span<const std::uint8_t> bits() const { return bits_; }
    std::span<std::uint8_t> bits() { return bits_; }
    std::size_t popcount() const;
    bool empty() const { return popcount() == 0; }

    bool operator==(const BitMask&) const = default;

   private:
    int height_ = 0, width_ = 0;
    std::vector<std::uint8_t> bits_;  // one byte per pixel, row-major
};

// Tight pixel bounds of the set pixels; nullopt for an empty mask.
std::optional<PixelBox> tight_box(const BitMask& m);

// Both empty -> 0. Throws ShapeError on dimension mismatch.
double mask_iou(const BitMask& a, const BitMask& b);

// Column-major run lengths, first run counts zeros (possibly 0).
struct RleMask {
    int height = 0, width = 0;
    std::vector<std::uint32_t> runs;
    bool operator==(const RleMask&) const = default;
};

RleMask rle_encode(const BitMask& m);
BitMask rle_decode(const RleMask& r);

// {"size":[h,w],"counts":[...]}
nlohmann::json rle_to_json(const RleMask& r);
RleMask rle_from_json(const nlohmann::json& j);

struct ScoredBox {
    double score = 0;
    Box box;
};

// Greedy suppression in (score desc, index asc) order; a box is dropped when
// its IoU with an already kept box exceeds `threshold`. Returns kept indices in
// selection order.
std::vector<std::size_t> nms(std::span<const ScoredBox> instances, double threshold);

}  // namespace vclr::geom
