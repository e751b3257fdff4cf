#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vclr/evalkit.hpp"
#include "vclr/model.hpp"
#include "vclr/nd/param_store.hpp"
#include "vclr/worldgen.hpp"

namespace vclr::robustness {

struct PerturbSpec {
    std::vector<double> stds{0, 0.001, 0.003, 0.01, 0.03};
    std::size_t trials = 5;
    std::uint64_t seed = 0;
    std::string split = "unknown";  // GT split the AR@10 columns are computed on
    void validate() const;
};

nlohmann::json to_json(const PerturbSpec& s);
PerturbSpec perturb_spec_from_json(const nlohmann::json& j, PerturbSpec base = {});

// Copy of params with iid N(0, std^2) added to every element.
nd::ParamStore perturbed(const nd::ParamStore& params, double std, std::mt19937_64& rng);

struct PerturbRow {
    double std = 0;
    std::size_t trial = 0;
    double ar10_box = 0, ar10_mask = 0;
};

std::vector<PerturbRow> perturb_eval(const nd::ParamStore& params, const model::DetectorConfig& cfg,
                                     const worldgen::Dataset& ds, const PerturbSpec& spec);

struct PerturbSummary {
    double std = 0;
    double box_mean = 0, box_sd = 0, mask_mean = 0, mask_sd = 0;
};
std::vector<PerturbSummary> summarize(const std::vector<PerturbRow>& rows);

std::string perturb_csv(const std::vector<PerturbRow>& rows);

enum class Distortion { contrast, gaussian_noise, occlusion };

struct DistortionSpec {
    Distortion kind = Distortion::contrast;
    double severity = 1.0;  // contrast factor c, noise sigma, or patch count k
    void validate() const;
    std::string name() const;  // "contrast:0.4"
};

// "contrast:0.4", "gaussian_noise:0.1", "occlusion:4"
DistortionSpec parse_distortion(const std::string& text);

worldgen::Image distort(const worldgen::Image& img, const DistortionSpec& spec, std::mt19937_64& rng);

struct ScoreHistogram {
    std::string condition;
    std::vector<std::size_t> counts;  // 50 bins on [0,1]
    std::size_t n = 0;
    double mean = 0, variance = 0;
};

ScoreHistogram score_distribution(const nd::ParamStore& params, const model::DetectorConfig& cfg,
                                  const worldgen::Dataset& ds, const std::optional<DistortionSpec>& distortion,
                                  std::uint64_t seed, std::size_t top = 50);

std::string scores_csv(const std::vector<ScoreHistogram>& hists);
std::string scores_summary_csv(const std::vector<ScoreHistogram>& hists);

}  // namespace vclr::robustness
