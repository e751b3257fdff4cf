#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vclr/geom.hpp"
#include "vclr/model.hpp"
#include "vclr/nd/param_store.hpp"
#include "vclr/worldgen.hpp"

namespace vclr::evalkit {

struct EvalConfig {
    std::vector<std::size_t> ks{10, 100};
    std::vector<double> thresholds{0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
    double small_below = 64;    // mask area in px^2
    double large_above = 256;
    bool per_subset = true;

    void validate() const;
};

nlohmann::json to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j, EvalConfig base = {});

struct GtInstance {
    geom::Box box;
    geom::BitMask mask;
    int color = 0;
    worldgen::Material material = worldgen::Material::flat;
    bool known = false;
};

struct Prediction {
    double score = 0;
    geom::Box box;
    geom::BitMask mask;
};

struct ImageResult {
    std::vector<GtInstance> gt;
    std::vector<Prediction> preds;
};

enum class Metric { box, mask };
std::string_view metric_name(Metric m);

// Greedy matching in the given prediction order: each prediction claims the
// unmatched GT of highest IoU (lowest index on ties) if that IoU >= t.
// iou is row-major [preds x gts]. Returns per-GT matched flags.
std::vector<bool> greedy_match(std::span<const double> iou, std::size_t preds, std::size_t gts, double t);
std::pair<std::size_t, std::size_t> recall_single(std::span<const double> iou, std::size_t preds, std::size_t gts,
                                                  double t);

// Indices of the top-K predictions by score (descending, index ascending on ties).
std::vector<std::size_t> top_k(std::span<const Prediction> preds, std::size_t k);

std::vector<double> iou_matrix(std::span<const Prediction> preds, std::span<const std::size_t> order,
                               std::span<const GtInstance> gt, Metric m);

struct ReportRow {
    std::string split;  // all | known | unknown
    Metric metric = Metric::box;
    std::size_t k = 0;
    std::string cell;   // overall | size:small | count:4-6 | subset:red_checker ...
    double value = 0;
    std::size_t gt_count = 0;
};

struct EvalReport {
    std::vector<ReportRow> rows;

    // nullopt when the cell has no GT
    std::optional<double> get(const std::string& split, Metric m, std::size_t k, const std::string& cell) const;
    std::optional<std::size_t> gt_count(const std::string& split, Metric m, std::size_t k, const std::string& cell) const;
    std::string csv() const;
    nlohmann::json json() const;
    std::string summary() const;
};

std::string size_cell(double area, const EvalConfig& cfg);
std::string count_cell(std::size_t n);
std::string subset_cell(int color, worldgen::Material m);

// Attribute predicate named "<color>_<material>"; UsageError on unknown names.
std::pair<int, worldgen::Material> parse_subset(const std::string& name);

EvalReport average_recall(std::span<const ImageResult> images, const EvalConfig& cfg = {});

// Dataset-level recall at one threshold, all GT, top-K predictions.
double threshold_recall(std::span<const ImageResult> images, Metric m, std::size_t k, double t);

// ---- model and dataset adapters ----

std::vector<GtInstance> gt_of(const worldgen::Record& r);
// Thresholds sigmoid masks at 0.5.
std::vector<Prediction> predictions_of(const model::DetectorOutput& out);
std::vector<Prediction> predict(const nd::ParamStore& params, const model::DetectorConfig& cfg, const worldgen::Image& img);
std::vector<Prediction> proposals_as_predictions(const worldgen::Record& r);

std::vector<ImageResult> evaluate_model(const nd::ParamStore& params, const model::DetectorConfig& cfg,
                                        const worldgen::Dataset& ds,
                                        const std::function<worldgen::Image(const worldgen::Record&)>& input = {});
// Echoes the GT as predictions.
std::vector<ImageResult> oracle_results(const worldgen::Dataset& ds);

// Mean AR@k over the unknown subsets present, and the known subset's AR@k.
struct SubsetSummary {
    double unknown_mean = 0;
    std::optional<double> known;
    std::size_t unknown_subsets = 0;
};
SubsetSummary subset_summary(const EvalReport& r, Metric m, std::size_t k);

void write_report(const EvalReport& r, const std::filesystem::path& dir);

}  // namespace vclr::evalkit
