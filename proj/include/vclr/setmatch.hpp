#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "vclr/geom.hpp"

namespace vclr::setmatch {

// rows = targets, cols = predictions, row-major.
struct CostMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> values;

    CostMatrix() = default;
    CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

struct Assignment {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (target, prediction), sorted by target
    double total(const CostMatrix& cost) const;
};

// Minimum-cost assignment of every row to a distinct column (rows <= cols).
// Among equal-cost optima the lexicographically smallest pair list wins.
Assignment hungarian(const CostMatrix& cost);

struct CostWeights {
    double score = 2.0;
    double box = 5.0;
    double giou = 2.0;
    double dice = 2.0;
};

struct Target {
    geom::Box box;
    geom::BitMask mask;
    bool positive = true;
};

// Detached per-image predictions of one branch.
struct PredictionSet {
    std::vector<double> scores;     // (0,1)
    std::vector<geom::Box> boxes;   // normalized cxcywh
    int mask_height = 0, mask_width = 0;
    std::vector<double> mask_probs; // size() x (mask_height * mask_width), sigmoid probabilities

    std::size_t size() const { return scores.size(); }
    std::span<const double> mask(std::size_t i) const {
        const std::size_t n = static_cast<std::size_t>(mask_height) * mask_width;
        return std::span<const double>(mask_probs).subspan(i * n, n);
    }
};

// 1 - (2 sum(p t) + 1) / (sum p + sum t + 1)
double dice_cost(const geom::BitMask& target, std::span<const double> probs);

CostMatrix build_cost(std::span<const Target> targets, const PredictionSet& preds, const CostWeights& w);

struct MatchTriplet {
    std::size_t proposal = 0;
    std::size_t teacher = 0;
    std::size_t student = 0;
    double teacher_iou = 0;
    double student_iou = 0;
    double quality = 0;  // min of the two IoUs
};

// Independent Hungarian matches of the proposals against each branch, joined
// on the proposal index. Nothing is filtered.
std::vector<MatchTriplet> match_triplets(std::span<const Target> proposals, const PredictionSet& teacher,
                                         const PredictionSet& student, const CostWeights& w);

// Keeps triplets with quality >= iou_floor.
std::vector<MatchTriplet> filter_triplets(std::span<const MatchTriplet> triplets, double iou_floor);

std::vector<MatchTriplet> form_triplets(std::span<const Target> proposals, const PredictionSet& teacher,
                                        const PredictionSet& student, const CostWeights& w, double iou_floor);

}  // namespace vclr::setmatch
