#pragma once

#include <vector>

#include "vclr/nd/param_store.hpp"

namespace vclr::nd {

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// Decoupled weight decay Adam. Moment buffers are created lazily on the
// first step and keyed by entry position in the store.
class AdamW {
   public:
    // Increments store.step and updates every parameter in place. Grads are
    // read, never cleared.
    void step(ParamStore& store, const AdamWOptions& opt);

    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

   private:
    std::vector<std::vector<double>> m_, v_;
};

struct EmaTracker {
    ParamStore shadow;
    double momentum = 0.99;
};

// shadow <- m * shadow + (1 - m) * live, elementwise; entries already equal to
// the live value are kept as is.
void ema_update(EmaTracker& tracker, const ParamStore& live);

}  // namespace vclr::nd
