#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vclr/geom.hpp"
#include "vclr/model.hpp"
#include "vclr/nd/tensor.hpp"
#include "vclr/setmatch.hpp"

namespace vclr::losses {

struct LossWeights {
    double dice = 5.0;   // lambda_1
    double mask = 5.0;   // lambda_2
    double score = 4.0;  // lambda_3
    double box = 5.0;    // lambda_4
    double giou = 2.0;   // lambda_5
    double sim = 1.0;
    double obj = 1.0;
    double gt = 1.0;
    double match = 1.0;

    void validate() const;
};

nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights base = {});

// A graph-connected total plus the detached, unweighted terms it was built
// from. total == sum(weight * term) up to rounding.
struct LossReport {
    nd::Tensor total;
    std::vector<std::pair<std::string, double>> terms;
    std::vector<std::pair<std::string, double>> weights;
    std::size_t matched = 0;

    double value() const { return total.item(); }
    double term(std::string_view name) const;
    double recomputed() const;
};

// Single-instance losses. `logits` holds the h*w grid of the target mask.
nd::Tensor dice_loss(const nd::Tensor& logits, const geom::BitMask& target);
nd::Tensor mask_loss(const nd::Tensor& logits, const geom::BitMask& target);
// Binary focal loss on one objectness logit.
nd::Tensor score_loss(const nd::Tensor& logit, bool target, double gamma = 2.0, double alpha = 0.25);
// Returns (L1, 1 - GIoU) for boxes given as [4] normalized cxcywh.
std::pair<nd::Tensor, nd::Tensor> box_losses(const nd::Tensor& pred, const geom::Box& target);

// Row-batched forms: one value per row, shape [k].
nd::Tensor dice_rows(const nd::Tensor& logits, const nd::Tensor& targets);
nd::Tensor bce_rows(const nd::Tensor& logits, const nd::Tensor& targets);
nd::Tensor focal_rows(const nd::Tensor& logits, std::span<const double> targets, double gamma = 2.0,
                      double alpha = 0.25);
nd::Tensor l1_rows(const nd::Tensor& boxes, const nd::Tensor& targets);
nd::Tensor giou_rows(const nd::Tensor& boxes, const nd::Tensor& targets);  // 1 - GIoU

// Mean of 1 - cos(teacher_q, student_q) over the triplets. Teacher queries are
// used as constants. Empty input gives a constant 0.
nd::Tensor sim_loss(std::span<const setmatch::MatchTriplet> triplets, const nd::Tensor& teacher_queries,
                    const nd::Tensor& student_queries);

// Five-term loss between matched student predictions and proposals,
// normalized by max(#triplets, 1). With `background` set, unmatched
// predictions also receive a negative score term (normalized by the
// prediction count).
LossReport l_obj(std::span<const setmatch::MatchTriplet> triplets, const model::DetectorOutput& student,
                 std::span<const setmatch::Target> proposals, const LossWeights& w, bool background = false);

// Full set-prediction loss against ground truth: Hungarian matching on the
// detached student predictions, five terms on matches, negative score term
// on everything unmatched.
LossReport l_gt(const model::DetectorOutput& student, const setmatch::PredictionSet& detached,
                std::span<const setmatch::Target> gt, const LossWeights& w, const setmatch::CostWeights& cw = {});
LossReport l_gt(const model::DetectorOutput& student, std::span<const setmatch::Target> gt, const LossWeights& w,
                const setmatch::CostWeights& cw = {});

// L = match * (obj * L_obj + sim * L_sim) + gt * L_gt
LossReport total_loss(const LossReport& gt, const LossReport& obj, const nd::Tensor& sim, const LossWeights& w);

}  // namespace vclr::losses
