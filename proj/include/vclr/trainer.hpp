#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "vclr/losses.hpp"
#include "vclr/model.hpp"
#include "vclr/nd/optim.hpp"
#include "vclr/nd/param_store.hpp"
#include "vclr/setmatch.hpp"
#include "vclr/worldgen.hpp"

namespace vclr::trainer {

struct TrainConfig {
    std::size_t iterations = 2000;
    std::size_t batch = 8;
    double lr = 1e-3;
    double lr_decay_at = 0.875;  // fraction of iterations
    double lr_decay_factor = 0.1;
    double ema = 0.99;
    double weight_decay = 1e-4;
    std::vector<worldgen::View> views{worldgen::View::natural, worldgen::View::structure, worldgen::View::stylized};

    // Table-5 style switches
    bool obj = true;          // L_obj from proposals
    bool sim = true;          // L_sim between teacher and student queries
    bool filter = true;       // localization-quality filtering before L_sim
    bool filter_obj = false;  // also filter the L_obj triplets
    bool obj_background = false;
    bool gt_on_matched = false;  // L_gt only over student queries that matched a proposal
    bool dedup_known = true;     // drop proposals overlapping known GT at IoU >= 0.5
    bool crop_paste = true;

    double iou_floor = 0.5;
    losses::LossWeights weights;
    setmatch::CostWeights cost;
    worldgen::PasteConfig paste;
    model::DetectorConfig model;
    std::uint64_t seed = 0;

    void validate() const;
    double lr_at(std::size_t step) const;  // step counts from 0
};

// "baseline": natural view only, no proposals, lambda_match = 0.
// "vclr": all three views, L_obj, L_sim, filtering.
void apply_mode(TrainConfig& cfg, const std::string& mode);

// Component lattice: L_gt | +L_obj | +views (with crop-paste) | +L_sim |
// +filtering (full) | full without L_obj. Seeds and schedule come from base.
struct AblationRow {
    std::string name;
    TrainConfig config;
};
std::vector<AblationRow> ablation_rows(const TrainConfig& base);

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

struct RunState {
    nd::ParamStore student;
    nd::EmaTracker teacher;
    nd::AdamW optimizer;
    std::mt19937_64 data_rng, view_rng, aug_rng;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::size_t step = 0;
};

RunState init_state(const TrainConfig& cfg);

worldgen::View sample_student_view(std::mt19937_64& rng, const std::vector<worldgen::View>& views);

// Proposals kept for L_obj: at most the detector's query count, known-GT
// duplicates removed when requested.
std::vector<setmatch::Target> usable_proposals(const worldgen::Record& r, const TrainConfig& cfg);

struct StepReport {
    double l_gt = 0, l_obj = 0, l_sim = 0, total = 0, lr = 0;
    std::size_t triplets = 0, kept = 0;
};

// Per image: teacher (EMA weights, natural view, no tape), student (sampled
// view, tape), triplets, losses; one AdamW step and one EMA update per batch.
StepReport train_step(std::span<const worldgen::Record* const> batch, RunState& state, const TrainConfig& cfg);

// Per-image loss evaluation without touching the optimizer; exposed for tests.
struct ImageLoss {
    losses::LossReport gt, obj, total;
    nd::Tensor sim;
    std::vector<setmatch::MatchTriplet> triplets;
    std::size_t kept = 0;
};
ImageLoss image_loss(const worldgen::Record& r, const worldgen::Image& student_input, const nd::ParamStore& student,
                     const nd::ParamStore& teacher, const TrainConfig& cfg);

std::vector<const worldgen::Record*> next_batch(const worldgen::Dataset& ds, RunState& state, std::size_t batch);

// Git-style SHA-1 of a byte string ("blob <len>\0" + bytes).
std::string git_blob_sha1(const std::string& bytes);

struct RunResult {
    std::filesystem::path final_checkpoint;
    std::vector<StepReport> history;
};

RunResult run(const TrainConfig& cfg, const std::filesystem::path& dataset_dir, const std::filesystem::path& out_dir);

// Student and EMA teacher weights under "student." / "teacher." prefixes.
struct LoadedModel {
    nd::ParamStore student, teacher;
    model::DetectorConfig config;
    nlohmann::json meta;
};
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace vclr::trainer
