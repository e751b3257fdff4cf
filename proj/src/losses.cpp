#include "vclr/losses.hpp"

#include <cmath>
#include <numeric>

#include "vclr/error.hpp"
#include "vclr/nd/ops.hpp"

namespace vclr::losses {

using nd::Tensor;

void LossWeights::validate() const {
    for (double v : {dice, mask, score, box, giou, sim, obj, gt, match})
        if (!std::isfinite(v) || v < 0) throw UsageError("loss weights must be finite and non-negative");
}

nlohmann::json to_json(const LossWeights& w) {
    return {{"dice", w.dice}, {"mask", w.mask}, {"score", w.score}, {"box", w.box},    {"giou", w.giou},
            {"sim", w.sim},   {"obj", w.obj},   {"gt", w.gt},       {"match", w.match}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights w) {
    if (!j.is_object()) throw UsageError("loss weights must be an object");
    for (auto& [k, v] : j.items()) {
        if (!v.is_number()) throw UsageError("weights." + k + " must be a number");
        const double x = v.get<double>();
        if (k == "dice") w.dice = x;
        else if (k == "mask") w.mask = x;
        else if (k == "score") w.score = x;
        else if (k == "box") w.box = x;
        else if (k == "giou") w.giou = x;
        else if (k == "sim") w.sim = x;
        else if (k == "obj") w.obj = x;
        else if (k == "gt") w.gt = x;
        else if (k == "match") w.match = x;
        else throw UsageError("unknown key weights." + k);
    }
    w.validate();
    return w;
}

double LossReport::term(std::string_view name) const {
    for (auto& [k, v] : terms)
        if (k == name) return v;
    throw UsageError("loss report has no term '" + std::string(name) + "'");
}

double LossReport::recomputed() const {
    double s = 0;
    for (std::size_t i = 0; i < terms.size(); ++i) s += weights[i].second * terms[i].second;
    return s;
}

namespace {

Tensor mask_matrix(std::span<const geom::BitMask* const> masks, std::size_t hw) {
    std::vector<double> v(masks.size() * hw);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        const auto bits = masks[i]->bits();
        if (bits.size() != hw)
            throw ShapeError("mask resolution mismatch: prediction has " + std::to_string(hw) + " pixels, target " +
                             std::to_string(bits.size()));
        for (std::size_t j = 0; j < hw; ++j) v[i * hw + j] = bits[j];
    }
    return Tensor::from({masks.size(), hw}, std::move(v));
}

Tensor box_matrix(std::span<const geom::Box> boxes) {
    std::vector<double> v;
    v.reserve(boxes.size() * 4);
    for (auto& b : boxes) v.insert(v.end(), {b.cx, b.cy, b.w, b.h});
    return Tensor::from({boxes.size(), 4}, std::move(v));
}

struct Corners {
    Tensor x1, y1, x2, y2;
};

Corners corners(const Tensor& b) {
    auto cx = nd::slice(b, 1, 0, 1), cy = nd::slice(b, 1, 1, 2);
    auto hw = nd::slice(b, 1, 2, 3) * 0.5, hh = nd::slice(b, 1, 3, 4) * 0.5;
    return {cx - hw, cy - hh, cx + hw, cy + hh};
}

Tensor flat(const Tensor& t) { return nd::reshape(t, {t.numel()}); }

// Accumulates weighted terms into one graph-connected scalar.
class Builder {
   public:
    void add(std::string name, double weight, const Tensor& value) {
        report_.terms.emplace_back(name, value.item());
        report_.weights.emplace_back(std::move(name), weight);
        auto part = value * weight;
        total_ = total_.defined() ? total_ + part : part;
    }
    LossReport finish(std::size_t matched) {
        report_.total = total_.defined() ? total_ : Tensor::scalar(0.0);
        report_.matched = matched;
        return std::move(report_);
    }

   private:
    LossReport report_;
    Tensor total_;
};

// Five matched terms for (prediction row, target) pairs, summed and divided by `norm`.
void matched_terms(Builder& b, const model::DetectorOutput& out, std::span<const std::size_t> rows,
                   std::span<const setmatch::Target* const> targets, const LossWeights& w, double norm) {
    const double inv = 1.0 / norm;
    if (rows.empty()) {
        const auto zero = Tensor::scalar(0.0);
        b.add("dice", w.dice, zero);
        b.add("mask", w.mask, zero);
        b.add("score", w.score, zero);
        b.add("box", w.box, zero);
        b.add("giou", w.giou, zero);
        return;
    }
    std::vector<const geom::BitMask*> masks;
    std::vector<geom::Box> boxes;
    for (auto* t : targets) {
        masks.push_back(&t->mask);
        boxes.push_back(t->box);
    }
    auto logits = nd::index_select(out.mask_logits, rows);
    auto tm = mask_matrix(masks, logits.dim(1));
    auto pb = nd::index_select(out.boxes, rows);
    auto tb = box_matrix(boxes);
    const std::vector<double> ones(rows.size(), 1.0);
    b.add("dice", w.dice, nd::sum(dice_rows(logits, tm)) * inv);
    b.add("mask", w.mask, nd::sum(bce_rows(logits, tm)) * inv);
    b.add("score", w.score, nd::sum(focal_rows(nd::index_select(out.score_logits, rows), ones)) * inv);
    b.add("box", w.box, nd::sum(l1_rows(pb, tb)) * inv);
    b.add("giou", w.giou, nd::sum(giou_rows(pb, tb)) * inv);
}

void background_term(Builder& b, const model::DetectorOutput& out, std::span<const std::size_t> matched,
                     const LossWeights& w) {
    const std::size_t n = out.size();
    std::vector<bool> used(n, false);
    for (auto r : matched) used[r] = true;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
        if (!used[i]) rest.push_back(i);
    if (rest.empty() || n == 0) {
        b.add("background", w.score, Tensor::scalar(0.0));
        return;
    }
    const std::vector<double> zeros(rest.size(), 0.0);
    b.add("background", w.score,
          nd::sum(focal_rows(nd::index_select(out.score_logits, rest), zeros)) * (1.0 / static_cast<double>(n)));
}

}  // namespace

Tensor dice_rows(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape()) throw ShapeError("dice: logits " + nd::shape_str(logits.shape()) +
                                                            " vs targets " + nd::shape_str(targets.shape()));
    auto p = nd::sigmoid(logits);
    auto num = nd::sum(p * targets, 1) * 2.0 + 1.0;
    auto den = nd::sum(p, 1) + nd::sum(targets, 1) + 1.0;
    return 1.0 - num / den;
}

Tensor bce_rows(const Tensor& logits, const Tensor& targets) {
    if (logits.shape() != targets.shape()) throw ShapeError("bce: logits " + nd::shape_str(logits.shape()) +
                                                            " vs targets " + nd::shape_str(targets.shape()));
    return nd::mean(nd::softplus(logits) - logits * targets, 1);
}

Tensor focal_rows(const Tensor& logits, std::span<const double> targets, double gamma, double alpha) {
    if (logits.numel() != targets.size())
        throw ShapeError("focal: " + std::to_string(logits.numel()) + " logits vs " + std::to_string(targets.size()) +
                         " targets");
    // With s = +1 for positives and -1 for negatives and u = -s z, both cases
    // read a * sigmoid(u)^gamma * softplus(u).
    std::vector<double> sign(targets.size()), weight(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const bool pos = targets[i] > 0.5;
        sign[i] = pos ? -1.0 : 1.0;
        weight[i] = pos ? alpha : 1.0 - alpha;
    }
    auto u = flat(logits) * Tensor::from({sign.size()}, sign);
    auto mod = gamma == 0.0 ? Tensor::full({sign.size()}, 1.0) : nd::pow_scalar(nd::sigmoid(u), gamma);
    return Tensor::from({weight.size()}, weight) * mod * nd::softplus(u);
}

Tensor l1_rows(const Tensor& boxes, const Tensor& targets) { return nd::sum(nd::abs(boxes - targets), 1); }

Tensor giou_rows(const Tensor& boxes, const Tensor& targets) {
    auto a = corners(boxes), b = corners(targets);
    auto iw = nd::relu(nd::minimum(a.x2, b.x2) - nd::maximum(a.x1, b.x1));
    auto ih = nd::relu(nd::minimum(a.y2, b.y2) - nd::maximum(a.y1, b.y1));
    auto inter = iw * ih;
    auto area_a = (a.x2 - a.x1) * (a.y2 - a.y1);
    auto area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
    auto uni = area_a + area_b - inter;
    auto enclose = (nd::maximum(a.x2, b.x2) - nd::minimum(a.x1, b.x1)) * (nd::maximum(a.y2, b.y2) - nd::minimum(a.y1, b.y1));
    auto giou = inter / uni - (enclose - uni) / enclose;
    return flat(1.0 - giou);
}

Tensor dice_loss(const Tensor& logits, const geom::BitMask& target) {
    const geom::BitMask* m[] = {&target};
    if (logits.numel() != target.bits().size())
        throw ShapeError("dice_loss: " + std::to_string(logits.numel()) + " logits for a " +
                         std::to_string(target.height()) + "x" + std::to_string(target.width()) + " mask");
    return nd::reshape(dice_rows(nd::reshape(logits, {1, logits.numel()}), mask_matrix(m, logits.numel())), {});
}

Tensor mask_loss(const Tensor& logits, const geom::BitMask& target) {
    const geom::BitMask* m[] = {&target};
    if (logits.numel() != target.bits().size())
        throw ShapeError("mask_loss: " + std::to_string(logits.numel()) + " logits for a " +
                         std::to_string(target.height()) + "x" + std::to_string(target.width()) + " mask");
    return nd::reshape(bce_rows(nd::reshape(logits, {1, logits.numel()}), mask_matrix(m, logits.numel())), {});
}

Tensor score_loss(const Tensor& logit, bool target, double gamma, double alpha) {
    const double t[] = {target ? 1.0 : 0.0};
    return nd::reshape(focal_rows(logit, t, gamma, alpha), {});
}

std::pair<Tensor, Tensor> box_losses(const Tensor& pred, const geom::Box& target) {
    auto p = nd::reshape(pred, {1, 4});
    auto t = box_matrix(std::span<const geom::Box>(&target, 1));
    return {nd::reshape(l1_rows(p, t), {}), nd::reshape(giou_rows(p, t), {})};
}

Tensor sim_loss(std::span<const setmatch::MatchTriplet> triplets, const Tensor& teacher_queries,
                const Tensor& student_queries) {
    if (triplets.empty()) return Tensor::scalar(0.0);
    const std::size_t d = student_queries.dim(1);
    if (teacher_queries.rank() != 2 || teacher_queries.dim(1) != d)
        throw ShapeError("sim_loss: teacher queries " + nd::shape_str(teacher_queries.shape()) + " vs student " +
                         nd::shape_str(student_queries.shape()));
    std::vector<std::size_t> rows;
    std::vector<double> t;
    const auto td = teacher_queries.data();
    for (auto& tr : triplets) {
        rows.push_back(tr.student);
        t.insert(t.end(), td.begin() + tr.teacher * d, td.begin() + (tr.teacher + 1) * d);
    }
    auto tq = Tensor::from({rows.size(), d}, std::move(t));
    auto sq = nd::index_select(student_queries, rows);
    auto tn = nd::sqrt(nd::sum(tq * tq, 1));
    auto sn2 = nd::sum(sq * sq, 1);
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (tn[i] == 0.0 || sn2[i] == 0.0) throw DomainError("sim_loss: zero-norm query in triplet " + std::to_string(i));
    auto cos = nd::sum(sq * tq, 1) / (nd::sqrt(sn2) * tn);
    return nd::mean(1.0 - cos);
}

LossReport l_obj(std::span<const setmatch::MatchTriplet> triplets, const model::DetectorOutput& student,
                 std::span<const setmatch::Target> proposals, const LossWeights& w, bool background) {
    std::vector<std::size_t> rows;
    std::vector<const setmatch::Target*> targets;
    for (auto& t : triplets) {
        if (t.proposal >= proposals.size() || t.student >= student.size())
            throw ShapeError("l_obj: triplet indices out of range");
        rows.push_back(t.student);
        targets.push_back(&proposals[t.proposal]);
    }
    Builder b;
    matched_terms(b, student, rows, targets, w, static_cast<double>(std::max<std::size_t>(rows.size(), 1)));
    if (background) background_term(b, student, rows, w);
    return b.finish(rows.size());
}

LossReport l_gt(const model::DetectorOutput& student, const setmatch::PredictionSet& detached,
                std::span<const setmatch::Target> gt, const LossWeights& w, const setmatch::CostWeights& cw) {
    std::vector<std::size_t> rows;
    std::vector<const setmatch::Target*> targets;
    if (!gt.empty()) {
        auto a = setmatch::hungarian(setmatch::build_cost(gt, detached, cw));
        for (auto [g, p] : a.pairs) {
            rows.push_back(p);
            targets.push_back(&gt[g]);
        }
    }
    Builder b;
    matched_terms(b, student, rows, targets, w, static_cast<double>(std::max<std::size_t>(gt.size(), 1)));
    background_term(b, student, rows, w);
    return b.finish(rows.size());
}

LossReport l_gt(const model::DetectorOutput& student, std::span<const setmatch::Target> gt, const LossWeights& w,
                const setmatch::CostWeights& cw) {
    return l_gt(student, student.detached(), gt, w, cw);
}

LossReport total_loss(const LossReport& gt, const LossReport& obj, const Tensor& sim, const LossWeights& w) {
    Builder b;
    b.add("l_gt", w.gt, gt.total);
    b.add("l_obj", w.match * w.obj, obj.total);
    b.add("l_sim", w.match * w.sim, sim);
    return b.finish(gt.matched + obj.matched);
}

}  // namespace vclr::losses
