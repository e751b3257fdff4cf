#pragma once

#include <cstddef>
#include <cstdint>

#include "json.hpp"
#include "vclr/nd/param_store.hpp"
#include "vclr/nd/tensor.hpp"
#include "vclr/setmatch.hpp"

namespace vclr::model {

struct DetectorConfig {
    int canvas = 64;
    int channels = 3;
    int patch = 8;
    int dim = 64;
    int heads = 4;
    int encoder_blocks = 2;
    int decoder_blocks = 2;
    int mlp_ratio = 2;
    int queries = 16;

    int grid() const { return canvas / patch; }
    int tokens() const { return grid() * grid(); }
    void validate() const;
};

nlohmann::json to_json(const DetectorConfig& c);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

// Per-image outputs of one branch. Every tensor is graph-connected when the
// forward pass ran with gradients on.
struct DetectorOutput {
    nd::Tensor queries;         // [Q, d] decoder output embeddings
    nd::Tensor score_logits;    // [Q]
    nd::Tensor scores;          // [Q] sigmoid
    nd::Tensor boxes;           // [Q, 4] normalized cxcywh, sigmoid-bounded
    nd::Tensor prototypes;      // [Q, d]
    nd::Tensor token_features;  // [grid*grid, d] projected encoder tokens
    nd::Tensor mask_logits;     // [Q, canvas*canvas]
    int grid = 0;
    int canvas = 0;

    std::size_t size() const { return queries.defined() ? queries.dim(0) : 0; }
    // Values only: scores, boxes and sigmoid mask probabilities.
    setmatch::PredictionSet detached() const;
};

// Truncated-normal(0.02) weights, zero biases, unit layer-norm gains,
// normal(0.02) query embeddings.
nd::ParamStore init_params(const DetectorConfig& cfg, std::uint64_t seed);

// Closed-form count of scalar parameters for `cfg`.
std::size_t parameter_count(const DetectorConfig& cfg);

// `image` is [canvas, canvas, channels] with values in [0,1]. With grad off no
// graph is recorded.
DetectorOutput forward(const nd::Tensor& image, const nd::ParamStore& params, const DetectorConfig& cfg, bool grad);

// logits[y, x] = <prototype_i, pixel_feature[y, x]> / sqrt(d), as [canvas*canvas].
nd::Tensor render_mask(const DetectorOutput& out, std::size_t query);

// Token features bilinearly upsampled to every pixel: [canvas*canvas, d].
nd::Tensor pixel_features(const DetectorOutput& out);

}  // namespace vclr::model
