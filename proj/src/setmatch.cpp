#include "vclr/setmatch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "vclr/error.hpp"
#include "vclr/nd/tensor.hpp"

namespace vclr::setmatch {

double Assignment::total(const CostMatrix& cost) const {
    double s = 0;
    for (auto [r, c] : pairs) s += cost.at(r, c);
    return s;
}

namespace {

// Shortest augmenting path with potentials, O(n^2 m). Rows and cols are
// given as index lists into `cost` so sub-problems need no copies.
// Returns the column picked for each listed row and the total cost.
double solve(const CostMatrix& cost, std::span<const std::size_t> rows, std::span<const std::size_t> cols,
             std::vector<std::size_t>* row_to_col) {
    const std::size_t n = rows.size(), m = cols.size();
    if (n == 0) {
        if (row_to_col) row_to_col->clear();
        return 0.0;
    }
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    std::vector<double> minv(m + 1);
    std::vector<char> used(m + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = cost.at(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assign(n);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) assign[p[j] - 1] = j - 1;
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += cost.at(rows[i], cols[assign[i]]);
    if (row_to_col) *row_to_col = std::move(assign);
    return total;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
    if (cost.values.size() != cost.rows * cost.cols) throw ShapeError("hungarian: malformed cost matrix");
    if (cost.rows > cost.cols)
        throw ShapeError("hungarian: more targets (" + std::to_string(cost.rows) + ") than predictions (" +
                         std::to_string(cost.cols) + ")");
    double scale = 0;
    for (double v : cost.values) {
        if (!std::isfinite(v)) throw DomainError("hungarian: non-finite cost entry");
        scale = std::max(scale, std::abs(v));
    }
    Assignment out;
    if (cost.rows == 0) return out;

    std::vector<std::size_t> rows(cost.rows), cols(cost.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    for (std::size_t j = 0; j < cols.size(); ++j) cols[j] = j;
    const double optimum = solve(cost, rows, cols, nullptr);
    const double tol = 1e-9 * std::max(1.0, scale) * static_cast<double>(cost.rows);

    // Fix rows in order to their smallest column that still admits an optimum.
    double fixed = 0;
    std::vector<std::size_t> free_cols = cols;
    for (std::size_t r = 0; r < cost.rows; ++r) {
        std::span<const std::size_t> rest(rows.data() + r + 1, rows.size() - r - 1);
        bool placed = false;
        for (std::size_t k = 0; k < free_cols.size() && !placed; ++k) {
            const std::size_t c = free_cols[k];
            std::vector<std::size_t> others;
            others.reserve(free_cols.size() - 1);
            for (std::size_t q = 0; q < free_cols.size(); ++q)
                if (q != k) others.push_back(free_cols[q]);
            const double with = fixed + cost.at(r, c) + solve(cost, rest, others, nullptr);
            if (with <= optimum + tol) {
                out.pairs.emplace_back(r, c);
                fixed += cost.at(r, c);
                free_cols = std::move(others);
                placed = true;
            }
        }
        if (!placed) throw NumericAbort("hungarian: tie-break search lost the optimum");
    }
    // the matching is a discrete branch of any loss built on it
    if (auto* t = nd::active_branch_trace())
        for (const auto& [r, c] : out.pairs)
            for (std::size_t j = 0; j < cost.cols; ++j) t->push(c == j);
    return out;
}

double dice_cost(const geom::BitMask& target, std::span<const double> probs) {
    auto bits = target.bits();
    double pt = 0, ps = 0, ts = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        pt += probs[i] * bits[i];
        ps += probs[i];
        ts += bits[i];
    }
    return 1.0 - (2.0 * pt + 1.0) / (ps + ts + 1.0);
}

CostMatrix build_cost(std::span<const Target> targets, const PredictionSet& preds, const CostWeights& w) {
    CostMatrix cost(targets.size(), preds.size());
    const std::size_t npix = static_cast<std::size_t>(preds.mask_height) * preds.mask_width;
    for (const auto& t : targets)
        if (t.mask.height() != preds.mask_height || t.mask.width() != preds.mask_width)
            throw ShapeError("build_cost: target mask " + std::to_string(t.mask.height()) + "x" +
                             std::to_string(t.mask.width()) + " vs prediction masks " +
                             std::to_string(preds.mask_height) + "x" + std::to_string(preds.mask_width));
    if (preds.mask_probs.size() != preds.size() * npix) throw ShapeError("build_cost: prediction mask buffer size");
    for (std::size_t r = 0; r < targets.size(); ++r) {
        const auto& t = targets[r];
        for (std::size_t c = 0; c < preds.size(); ++c) {
            const auto& b = preds.boxes[c];
            const double p = preds.scores[c];
            const double l1 = std::abs(t.box.cx - b.cx) + std::abs(t.box.cy - b.cy) + std::abs(t.box.w - b.w) +
                              std::abs(t.box.h - b.h);
            const double score = t.positive ? -p : -(1.0 - p);
            cost.at(r, c) = w.score * score + w.box * l1 + w.giou * (1.0 - geom::box_giou(t.box, b)) +
                            w.dice * dice_cost(t.mask, preds.mask(c));
        }
    }
    return cost;
}

std::vector<MatchTriplet> match_triplets(std::span<const Target> proposals, const PredictionSet& teacher,
                                         const PredictionSet& student, const CostWeights& w) {
    std::vector<MatchTriplet> out;
    if (proposals.empty()) return out;
    const auto ta = hungarian(build_cost(proposals, teacher, w));
    const auto sa = hungarian(build_cost(proposals, student, w));
    for (std::size_t i = 0; i < proposals.size(); ++i) {
        MatchTriplet t;
        t.proposal = i;
        t.teacher = ta.pairs[i].second;
        t.student = sa.pairs[i].second;
        t.teacher_iou = geom::box_iou(teacher.boxes[t.teacher], proposals[i].box);
        t.student_iou = geom::box_iou(student.boxes[t.student], proposals[i].box);
        t.quality = std::min(t.teacher_iou, t.student_iou);
        out.push_back(t);
    }
    return out;
}

std::vector<MatchTriplet> filter_triplets(std::span<const MatchTriplet> triplets, double iou_floor) {
    std::vector<MatchTriplet> out;
    for (const auto& t : triplets)
        if (t.quality >= iou_floor) out.push_back(t);
    return out;
}

std::vector<MatchTriplet> form_triplets(std::span<const Target> proposals, const PredictionSet& teacher,
                                        const PredictionSet& student, const CostWeights& w, double iou_floor) {
    const auto all = match_triplets(proposals, teacher, student, w);
    return filter_triplets(all, iou_floor);
}

}  // namespace vclr::setmatch
