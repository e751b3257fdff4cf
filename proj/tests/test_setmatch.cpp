#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "assign_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "vclr/error.hpp"
#include "vclr/setmatch.hpp"

using namespace vclr::setmatch;
using vclr::geom::BitMask;
using vclr::geom::Box;

using namespace assignoracle;

namespace {

BitMask box_mask(const Box& b, int side) {
    BitMask m(side, side);
    auto p = vclr::geom::to_pixels(b, side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
            if (x + 0.5 > p.x1 && x + 0.5 < p.x2 && y + 0.5 > p.y1 && y + 0.5 < p.y2) m.set(y, x);
    return m;
}

PredictionSet predictions(const std::vector<Box>& boxes, const std::vector<double>& scores, int side) {
    PredictionSet p;
    p.mask_height = p.mask_width = side;
    p.boxes = boxes;
    p.scores = scores;
    for (const auto& b : boxes) {
        auto m = box_mask(b, side);
        for (auto bit : m.bits()) p.mask_probs.push_back(bit ? 0.9 : 0.1);
    }
    return p;
}

Box random_box(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> c(0.2, 0.8), s(0.1, 0.4);
    return {c(rng), c(rng), s(rng), s(rng)};
}

}  // namespace

TEST_CASE("hungarian examples") {
    CostMatrix zero(3, 3);
    auto a = hungarian(zero);
    CHECK(columns(a) == std::vector<std::size_t>{0, 1, 2});
    CHECK(a.total(zero) == 0.0);

    CostMatrix c(2, 2);
    c.values = {4, 1, 2, 3};
    auto b = hungarian(c);
    CHECK(b.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 1}, {1, 0}});
    CHECK(b.total(c) == 3.0);

    CHECK(hungarian(CostMatrix(0, 4)).pairs.empty());
}

TEST_CASE("hungarian errors") {
    CostMatrix c(2, 2);
    c.values = {1, NAN, 2, 3};
    CHECK_THROWS_AS(hungarian(c), vclr::DomainError);
    c.values = {1, INFINITY, 2, 3};
    CHECK_THROWS_AS(hungarian(c), vclr::DomainError);
    CHECK_THROWS_AS(hungarian(CostMatrix(3, 2)), vclr::ShapeError);
}

TEST_CASE("hungarian matches the permutation oracle on random 6x6 integer matrices") {
    std::mt19937_64 rng(6);
    std::uniform_int_distribution<int> v(0, 9);
    for (int t = 0; t < 200; ++t) {
        CostMatrix c(6, 6);
        for (auto& x : c.values) x = v(rng);
        auto [best, seq] = brute_force(c);
        auto a = hungarian(c);
        REQUIRE(a.total(c) == best);
        REQUIRE(columns(a) == seq);
    }
}

TEST_CASE("hungarian optimality on rectangular matrices up to 7 wide") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> v(-3, 5);
    for (int t = 0; t < 200; ++t) {
        const std::size_t cols = 1 + t % 7;
        const std::size_t rows = 1 + (t / 7) % cols;
        CostMatrix c(rows, cols);
        for (auto& x : c.values) x = v(rng);
        auto [best, seq] = brute_force(c);
        auto a = hungarian(c);
        CHECK(a.total(c) == doctest::Approx(best).epsilon(1e-12));
        CHECK(columns(a) == seq);
        const auto picked = columns(a);
        std::set<std::size_t> used(picked.begin(), picked.end());
        CHECK(used.size() == rows);
    }
}

TEST_CASE("hungarian argmin is scale invariant") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> v(0, 1);
    std::uniform_int_distribution<int> iv(0, 3);
    for (int t = 0; t < 100; ++t) {
        CostMatrix c(5, 7);
        for (auto& x : c.values) x = (t % 2) ? v(rng) : iv(rng);
        const auto base = columns(hungarian(c));
        for (double k : {1e-3, 0.5, 3.0, 1e4}) {
            CostMatrix s = c;
            for (auto& x : s.values) x *= k;
            CHECK(columns(hungarian(s)) == base);
        }
    }
}

TEST_CASE("build_cost examples") {
    const CostWeights w;
    const Box b{0.5, 0.5, 0.5, 0.5};
    const auto mask = box_mask(b, 8);
    PredictionSet perfect;
    perfect.mask_height = perfect.mask_width = 8;
    perfect.boxes = {b, b};
    perfect.scores = {1.0, 0.0};
    for (int k = 0; k < 2; ++k)
        for (auto bit : mask.bits()) perfect.mask_probs.push_back(bit);
    std::vector<Target> t{{b, mask, true}};
    auto c = build_cost(t, perfect, w);
    CHECK(c.at(0, 0) == -w.score);
    CHECK(c.at(0, 1) - c.at(0, 0) == doctest::Approx(w.score).epsilon(1e-15));

    std::vector<Target> wrong{{b, BitMask(4, 4), true}};
    CHECK_THROWS_AS(build_cost(wrong, perfect, w), vclr::ShapeError);
}

TEST_CASE("build_cost hand-computed 2 targets x 3 predictions on 2x2 masks") {
    const CostWeights w{.score = 2.0, .box = 5.0, .giou = 2.0, .dice = 2.0};
    // targets
    BitMask m0(2, 2, {1, 1, 0, 0});
    BitMask m1(2, 2, {0, 0, 0, 1});
    std::vector<Target> t{{{0.5, 0.25, 1.0, 0.5}, m0, true}, {{0.75, 0.75, 0.5, 0.5}, m1, true}};
    // predictions
    PredictionSet p;
    p.mask_height = p.mask_width = 2;
    p.scores = {0.8, 0.5, 0.1};
    p.boxes = {{0.5, 0.25, 1.0, 0.5}, {0.5, 0.5, 0.5, 0.5}, {0.75, 0.75, 0.5, 0.5}};
    p.mask_probs = {0.5, 0.5, 0.5, 0.5,   //
                    1.0, 0.0, 0.0, 0.0,   //
                    0.0, 0.0, 0.0, 1.0};
    auto c = build_cost(t, p, w);

    // entry (0,0): identical box -> l1 0, giou 1; dice: 1 - (2*1 + 1)/(2 + 2 + 1) = 0.4
    CHECK(c.at(0, 0) == doctest::Approx(2 * -0.8 + 0 + 0 + 2 * 0.4));
    // entry (0,1): l1 = |0.5-0.5| + |0.25-0.5| + |1-0.5| + |0.5-0.5| = 0.75
    //   boxes in corners: t = [0,0,1,0.5], p = [0.25,0.25,0.75,0.75]
    //   inter = 0.5*0.25 = 0.125, union = 0.5 + 0.25 - 0.125 = 0.625, C = [0,0,1,0.75] = 0.75
    //   giou = 0.2 - (0.75 - 0.625)/0.75 = 0.2 - 1/6 ; dice = 1 - (2*1 + 1)/(1 + 2 + 1) = 0.25
    CHECK(c.at(0, 1) == doctest::Approx(2 * -0.5 + 5 * 0.75 + 2 * (1 - (0.2 - 1.0 / 6.0)) + 2 * 0.25));
    // entry (0,2): t = [0,0,1,0.5], p = [0.5,0.5,1,1]: disjoint (touching), C = [0,0,1,1]
    //   l1 = 0.25 + 0.5 + 0.5 + 0 = 1.25; giou = 0 - (1 - 0.75)/1 = -0.25; dice = 1 - 1/(1+2+1) = 0.75
    CHECK(c.at(0, 2) == doctest::Approx(2 * -0.1 + 5 * 1.25 + 2 * 1.25 + 2 * 0.75));
    // entry (1,2): identical box, dice = 1 - (2 + 1)/(1 + 1 + 1) = 0
    CHECK(c.at(1, 2) == doctest::Approx(2 * -0.1));
    // entry (1,0): t = [0.5,0.5,1,1], p = [0,0,1,0.5]; l1 = 0.25 + 0.5 + 0.5 + 0 = 1.25, giou -0.25
    //   dice with uniform 0.5: 1 - (2*0.5 + 1)/(2 + 1 + 1) = 0.5
    CHECK(c.at(1, 0) == doctest::Approx(2 * -0.8 + 5 * 1.25 + 2 * 1.25 + 2 * 0.5));
    // entry (1,1): t = [0.5,0.5,1,1], p = [0.25,0.25,0.75,0.75]; inter 0.0625, union 0.4375, C 0.5625
    //   l1 = 0.25 + 0.25 + 0 + 0 = 0.5; dice = 1 - 1/(1 + 1 + 1) = 2/3
    const double g11 = 0.0625 / 0.4375 - (0.5625 - 0.4375) / 0.5625;
    CHECK(c.at(1, 1) == doctest::Approx(2 * -0.5 + 5 * 0.5 + 2 * (1 - g11) + 2 * (2.0 / 3.0)));
}

TEST_CASE("form_triplets examples") {
    const CostWeights w;
    std::mt19937_64 rng(3);
    std::vector<Box> boxes;
    std::vector<Target> proposals;
    for (int i = 0; i < 3; ++i) {
        Box b{0.15 + 0.3 * i, 0.5, 0.2, 0.3};
        boxes.push_back(b);
        proposals.push_back({b, box_mask(b, 16), true});
    }
    boxes.push_back({0.5, 0.1, 0.1, 0.1});
    auto preds = predictions(boxes, {0.9, 0.9, 0.9, 0.2}, 16);
    // perfect predictions still carry soft masks, so use exact ones
    for (std::size_t i = 0; i < 3; ++i) {
        auto m = box_mask(boxes[i], 16);
        for (std::size_t k = 0; k < 256; ++k) preds.mask_probs[i * 256 + k] = m.bits()[k];
    }
    auto trip = form_triplets(proposals, preds, preds, w, 0.5);
    REQUIRE(trip.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(trip[i].proposal == i);
        CHECK(trip[i].teacher == i);
        CHECK(trip[i].student == i);
        CHECK(trip[i].quality == 1.0);
    }

    // student localizes the first proposal poorly -> that triplet goes
    std::vector<Target> one{proposals[0]};
    Box good = proposals[0].box;
    Box shifted = good;
    shifted.cx += 0.6 * good.w;  // IoU = 0.4 / 1.6 = 0.25
    auto teacher = predictions({good}, {0.9}, 16);
    auto student = predictions({shifted}, {0.9}, 16);
    auto all = match_triplets(one, teacher, student, w);
    REQUIRE(all.size() == 1);
    CHECK(all[0].teacher_iou == 1.0);
    CHECK(all[0].student_iou == doctest::Approx(0.25));
    CHECK(form_triplets(one, teacher, student, w, 0.5).empty());
    CHECK(form_triplets(one, teacher, student, w, 0.2).size() == 1);

    CHECK(form_triplets({}, teacher, student, w, 0.5).empty());
}

TEST_CASE("form_triplets equals a brute-force joint enumeration") {
    const CostWeights w;
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int t = 0; t < 20; ++t) {
        std::vector<Target> proposals;
        for (int i = 0; i < 4; ++i) {
            auto b = random_box(rng);
            proposals.push_back({b, box_mask(b, 16), true});
        }
        std::vector<Box> tb, sb;
        std::vector<double> ts, ss;
        for (int i = 0; i < 8; ++i) {
            tb.push_back(random_box(rng));
            sb.push_back(random_box(rng));
            ts.push_back(u(rng));
            ss.push_back(u(rng));
        }
        auto teacher = predictions(tb, ts, 16);
        auto student = predictions(sb, ss, 16);
        const double floor = 0.1 * (t % 5);

        auto tc = build_cost(proposals, teacher, w);
        auto sc = build_cost(proposals, student, w);
        auto [tbest, tseq] = brute_force(tc);
        auto [sbest, sseq] = brute_force(sc);
        std::vector<MatchTriplet> expected;
        for (std::size_t i = 0; i < 4; ++i) {
            const double q = std::min(vclr::geom::box_iou(tb[tseq[i]], proposals[i].box),
                                      vclr::geom::box_iou(sb[sseq[i]], proposals[i].box));
            if (q >= floor) expected.push_back({i, tseq[i], sseq[i], 0, 0, q});
        }
        auto got = form_triplets(proposals, teacher, student, w, floor);
        REQUIRE(got.size() == expected.size());
        for (std::size_t k = 0; k < got.size(); ++k) {
            CHECK(got[k].proposal == expected[k].proposal);
            CHECK(got[k].teacher == expected[k].teacher);
            CHECK(got[k].student == expected[k].student);
            CHECK(got[k].quality == expected[k].quality);
        }
    }
}

TEST_CASE("triplet properties: filtering monotone, indices unique") {
    const CostWeights w;
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int t = 0; t < 50; ++t) {
        std::vector<Target> proposals;
        for (int i = 0; i < 6; ++i) {
            auto b = random_box(rng);
            proposals.push_back({b, box_mask(b, 16), true});
        }
        std::vector<Box> tb, sb;
        std::vector<double> sc;
        for (int i = 0; i < 10; ++i) {
            tb.push_back(random_box(rng));
            sb.push_back(random_box(rng));
            sc.push_back(u(rng));
        }
        auto teacher = predictions(tb, sc, 16);
        auto student = predictions(sb, sc, 16);
        auto all = match_triplets(proposals, teacher, student, w);
        std::size_t prev = all.size();
        for (double f = 0.0; f <= 1.0; f += 0.05) {
            auto kept = filter_triplets(all, f);
            CHECK(kept.size() <= prev);
            prev = kept.size();
        }
        std::set<std::size_t> p, a, b;
        for (const auto& x : all) {
            p.insert(x.proposal);
            a.insert(x.teacher);
            b.insert(x.student);
            CHECK(x.quality >= 0.0);
            CHECK(x.quality <= 1.0);
        }
        CHECK(p.size() == all.size());
        CHECK(a.size() == all.size());
        CHECK(b.size() == all.size());
    }
}
