#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>

#include "raster_oracle.hpp"
#include "vclr/error.hpp"
#include "vclr/geom.hpp"

using namespace vclr::geom;

TEST_CASE("box IoU examples") {
    PixelBox a{0, 0, 2, 2}, b{1, 1, 3, 3};
    CHECK(box_iou(a, a) == 1.0);
    CHECK(box_iou(a, PixelBox{5, 5, 6, 6}) == 0.0);
    CHECK(box_iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
    CHECK(raster::iou(a, b, 4) == doctest::Approx(1.0 / 7.0).epsilon(1e-15));

    // degenerate operands
    PixelBox point{1, 1, 1, 1};
    CHECK(box_iou(point, point) == 1.0);
    CHECK(box_iou(point, PixelBox{2, 2, 2, 2}) == 0.0);
    CHECK(box_iou(point, a) == 0.0);
}

TEST_CASE("box GIoU examples") {
    PixelBox a{0, 0, 1, 1}, b{2, 0, 3, 1};
    CHECK(box_giou(a, a) == 1.0);
    CHECK(box_giou(a, b) == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));
    CHECK(raster::giou(a, b, 8) == doctest::Approx(-1.0 / 3.0).epsilon(1e-15));

    double prev = 1.0;
    for (double gap : {1.0, 10.0, 100.0, 1e4, 1e6}) {
        const double g = box_giou(a, PixelBox{1 + gap, 0, 2 + gap, 1});
        CHECK(g < prev);
        CHECK(g > -1.0);
        prev = g;
    }
    CHECK(prev == doctest::Approx(-1.0).epsilon(1e-5));
}

TEST_CASE("normalized and pixel forms agree") {
    const Box b{0.5, 0.25, 0.5, 0.5};
    const auto p = to_pixels(b, 64, 64);
    CHECK(p == PixelBox{16, 0, 48, 32});
    CHECK(from_pixels(p, 64, 64) == b);
    CHECK(box_iou(b, Box{0.5, 0.5, 0.5, 0.5}) == doctest::Approx(box_iou(p, to_pixels(Box{0.5, 0.5, 0.5, 0.5}, 64, 64))));
}

TEST_CASE("IoU/GIoU symmetry, ordering and rasterized agreement") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> c(0, 256);
    auto random_box = [&] {
        int x1 = c(rng), x2 = c(rng), y1 = c(rng), y2 = c(rng);
        if (x1 > x2) std::swap(x1, x2);
        if (y1 > y2) std::swap(y1, y2);
        if (x1 == x2) x2 = std::min(256, x2 + 1), x1 = x2 - 1;
        if (y1 == y2) y2 = std::min(256, y2 + 1), y1 = y2 - 1;
        return PixelBox{double(x1), double(y1), double(x2), double(y2)};
    };
    for (int t = 0; t < 200; ++t) {
        const auto a = random_box(), b = random_box();
        CHECK(box_iou(a, b) == box_iou(b, a));
        CHECK(box_giou(a, b) == box_giou(b, a));
        CHECK(box_giou(a, b) <= box_iou(a, b));
        CHECK(std::abs(box_iou(a, b) - raster::iou(a, b, 256)) <= 1.0 / (256 * 256));
        CHECK(std::abs(box_giou(a, b) - raster::giou(a, b, 256)) <= 1.0 / (256 * 256));
    }
    // containment: the enclosing box is the outer box, but the union is too,
    // so GIoU == IoU exactly
    PixelBox outer{0, 0, 10, 10}, inner{2, 3, 5, 7};
    CHECK(box_giou(outer, inner) == box_iou(outer, inner));
    // side by side, touching: union is its own bounding region
    CHECK(box_giou(PixelBox{0, 0, 2, 2}, PixelBox{2, 0, 4, 2}) == box_iou(PixelBox{0, 0, 2, 2}, PixelBox{2, 0, 4, 2}));
    // diagonal offset: enclosing box strictly larger than the union
    CHECK(box_giou(PixelBox{0, 0, 2, 2}, PixelBox{1, 1, 3, 3}) < box_iou(PixelBox{0, 0, 2, 2}, PixelBox{1, 1, 3, 3}));
}

TEST_CASE("mask IoU") {
    BitMask a(2, 2), b(2, 2);
    a.set(0, 0);
    a.set(0, 1);
    b.set(0, 1);
    b.set(1, 1);
    CHECK(mask_iou(a, a) == 1.0);
    CHECK(mask_iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    BitMask c(2, 2);
    c.set(1, 0);
    CHECK(mask_iou(a, c) == 0.0);
    CHECK(mask_iou(BitMask(2, 2), BitMask(2, 2)) == 0.0);
    CHECK_THROWS_AS(mask_iou(a, BitMask(3, 2)), vclr::ShapeError);
}

TEST_CASE("tight box") {
    BitMask m(8, 8);
    CHECK_FALSE(tight_box(m).has_value());
    m.set(2, 3);
    m.set(5, 6);
    CHECK(*tight_box(m) == PixelBox{3, 2, 7, 6});
}

TEST_CASE("RLE examples and round trip") {
    CHECK(rle_encode(BitMask(2, 2)).runs == std::vector<std::uint32_t>{4});
    BitMask ones(2, 2, {1, 1, 1, 1});
    CHECK(rle_encode(ones).runs == std::vector<std::uint32_t>{0, 4});

    // column-major: a single set pixel at (row 0, col 1) is the third in scan order
    BitMask one(2, 2);
    one.set(0, 1);
    CHECK(rle_encode(one).runs == std::vector<std::uint32_t>{2, 1, 1});

    std::mt19937_64 rng(21);
    std::bernoulli_distribution bit(0.4);
    for (int t = 0; t < 1000; ++t) {
        BitMask m(16, 16);
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) m.set(y, x, bit(rng));
        auto r = rle_encode(m);
        REQUIRE(rle_decode(r) == m);
        REQUIRE(rle_from_json(rle_to_json(r)) == r);
    }

    RleMask bad{2, 2, {1, 2}};
    CHECK_THROWS_AS(rle_decode(bad), vclr::DataError);
    CHECK(rle_to_json(rle_encode(one)).dump() == R"({"counts":[2,1,1],"size":[2,2]})");
}

namespace {

// Independent greedy trace: repeatedly pick the best remaining candidate,
// then strike everything that overlaps it too much.
std::vector<std::size_t> nms_trace(const std::vector<ScoredBox>& in, double thr) {
    std::vector<bool> alive(in.size(), true);
    std::vector<std::size_t> kept;
    while (true) {
        std::ptrdiff_t best = -1;
        for (std::size_t i = 0; i < in.size(); ++i)
            if (alive[i] && (best < 0 || in[i].score > in[best].score)) best = static_cast<std::ptrdiff_t>(i);
        if (best < 0) break;
        kept.push_back(static_cast<std::size_t>(best));
        alive[best] = false;
        for (std::size_t i = 0; i < in.size(); ++i)
            if (alive[i] && box_iou(in[i].box, in[best].box) > thr) alive[i] = false;
    }
    return kept;
}

Box px(double x1, double y1, double x2, double y2) { return from_pixels({x1, y1, x2, y2}, 64, 64); }

}  // namespace

TEST_CASE("NMS examples") {
    std::vector<ScoredBox> same{{0.8, px(0, 0, 10, 10)}, {0.9, px(0, 0, 10, 10)}};
    CHECK(nms(same, 0.7) == std::vector<std::size_t>{1});

    std::vector<ScoredBox> disjoint{{0.8, px(0, 0, 10, 10)}, {0.9, px(20, 20, 30, 30)}};
    CHECK(nms(disjoint, 0.7).size() == 2);

    // A suppresses B (IoU 2/3), B would suppress C (2/3), A vs C is 3/7.
    std::vector<ScoredBox> chain{{0.9, px(0, 0, 10, 10)}, {0.8, px(2, 0, 12, 10)}, {0.7, px(4, 0, 14, 10)}};
    CHECK(nms(chain, 0.5) == std::vector<std::size_t>{0, 2});
    CHECK(nms_trace(chain, 0.5) == std::vector<std::size_t>{0, 2});

    CHECK_THROWS_AS(nms(chain, 1.5), vclr::DomainError);
    CHECK_THROWS_AS(nms(chain, -0.1), vclr::DomainError);
}

TEST_CASE("NMS agrees with the greedy trace and ignores input order") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> c(0, 40);
    for (int t = 0; t < 300; ++t) {
        std::vector<ScoredBox> in;
        const int n = 1 + t % 9;
        for (int i = 0; i < n; ++i) {
            double x = c(rng), y = c(rng);
            in.push_back({u(rng), px(x, y, x + 4 + c(rng) % 20, y + 4 + c(rng) % 20)});
        }
        const double thr = u(rng);
        auto got = nms(in, thr);
        CHECK(got == nms_trace(in, thr));

        std::vector<std::size_t> perm(in.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<ScoredBox> shuffled;
        for (auto p : perm) shuffled.push_back(in[p]);
        auto got2 = nms(shuffled, thr);
        std::vector<std::size_t> mapped;
        for (auto k : got2) mapped.push_back(perm[k]);
        CHECK(mapped == got);
    }
}
