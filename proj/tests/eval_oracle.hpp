#pragma once

// Exhaustive AR oracle and random instance fixtures for the evaluator.

#include <algorithm>
#include <array>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "vclr/evalkit.hpp"

namespace evaloracle {

using namespace vclr;
using namespace vclr::evalkit;

inline geom::Box px(double x1, double y1, double x2, double y2) { return geom::from_pixels({x1, y1, x2, y2}, 64, 64); }

inline geom::BitMask box_mask(double x1, double y1, double x2, double y2) {
    geom::BitMask m(64, 64);
    for (int y = int(y1); y < int(y2); ++y)
        for (int x = int(x1); x < int(x2); ++x) m.set(y, x);
    return m;
}

inline GtInstance gt_box(double x1, double y1, double x2, double y2, int color = 2, bool known = false) {
    return {px(x1, y1, x2, y2), box_mask(x1, y1, x2, y2), color,
            known ? worldgen::Material::checker : worldgen::Material::flat, known};
}

inline Prediction pred_box(double score, double x1, double y1, double x2, double y2) {
    return {score, px(x1, y1, x2, y2), box_mask(x1, y1, x2, y2)};
}

// Random integer-aligned instance so that pixel counting is an exact IoU oracle.
inline std::array<int, 4> random_rect(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> c(0, 48), s(4, 16);
    const int x = c(rng), y = c(rng);
    return {x, y, x + s(rng), y + s(rng)};
}

inline ImageResult random_image(std::mt19937_64& rng, int max_gt, int max_pred) {
    ImageResult img;
    std::uniform_int_distribution<int> ng(1, max_gt), np(0, max_pred), col(0, 7);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<std::array<int, 4>> gts;
    const int G = ng(rng);
    for (int g = 0; g < G; ++g) {
        auto r = random_rect(rng);
        gts.push_back(r);
        auto gi = gt_box(r[0], r[1], r[2], r[3], col(rng), u(rng) < 0.3);
        gi.known = gi.color == worldgen::kRed && gi.material == worldgen::Material::checker;
        img.gt.push_back(gi);
    }
    const int P = np(rng);
    for (int p = 0; p < P; ++p) {
        // perturb a GT so that overlaps are common
        auto r = gts[rng() % gts.size()];
        std::uniform_int_distribution<int> j(-3, 3);
        int x1 = std::clamp(r[0] + j(rng), 0, 60), y1 = std::clamp(r[1] + j(rng), 0, 60);
        int x2 = std::clamp(r[2] + j(rng), x1 + 1, 64), y2 = std::clamp(r[3] + j(rng), y1 + 1, 64);
        img.preds.push_back(pred_box(u(rng), x1, y1, x2, y2));
    }
    return img;
}

// ---- exhaustive oracle ----

// IoU by counting pixel membership, independent of geom.
inline double count_iou(const geom::BitMask& a, const geom::BitMask& b) {
    std::size_t i = 0, u = 0;
    for (std::size_t k = 0; k < a.bits().size(); ++k) {
        i += a.bits()[k] && b.bits()[k];
        u += a.bits()[k] || b.bits()[k];
    }
    return u ? double(i) / double(u) : 0.0;
}

// Walks every ordering of the predictions, keeps those consistent with the
// score ranking (ties broken by original index), truncates to K and plays
// the claim rule by scanning GTs. Returns recalled counts per threshold.
inline std::vector<std::size_t> oracle_recall(const ImageResult& img, std::size_t K, const std::vector<double>& ts) {
    const std::size_t P = img.preds.size(), G = img.gt.size();
    std::vector<std::size_t> perm(P);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<std::size_t> result(ts.size(), 0);
    int consistent = 0;
    do {
        bool ok = true;
        for (std::size_t i = 1; i < P && ok; ++i) {
            const auto& a = img.preds[perm[i - 1]];
            const auto& b = img.preds[perm[i]];
            ok = a.score > b.score || (a.score == b.score && perm[i - 1] < perm[i]);
        }
        if (!ok) continue;
        ++consistent;
        for (std::size_t ti = 0; ti < ts.size(); ++ti) {
            std::vector<bool> taken(G, false);
            std::size_t hits = 0;
            for (std::size_t i = 0; i < std::min(K, P); ++i) {
                std::size_t best = G;
                double bv = -1;
                for (std::size_t g = 0; g < G; ++g) {
                    const double v = count_iou(img.preds[perm[i]].mask, img.gt[g].mask);
                    if (!taken[g] && v >= ts[ti] && v > bv) best = g, bv = v;
                }
                if (best < G) taken[best] = true, ++hits;
            }
            result[ti] = hits;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    if (consistent != 1) throw std::logic_error("oracle_recall: ranking is not unique");
    return result;
}

}  // namespace evaloracle
