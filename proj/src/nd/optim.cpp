#include "vclr/nd/optim.hpp"

#include <cmath>

#include "vclr/error.hpp"

namespace vclr::nd {

void AdamW::step(ParamStore& store, const AdamWOptions& opt) {
    auto& entries = store.entries();
    for (const auto& e : entries)
        if (e.tensor.requires_grad() && !e.tensor.has_grad())
            throw Error(ErrorKind::Shape, "AdamW: parameter '" + e.name + "' has no gradient");
    if (m_.size() != entries.size()) {
        m_.clear();
        v_.clear();
        for (const auto& e : entries) {
            m_.emplace_back(e.tensor.numel(), 0.0);
            v_.emplace_back(e.tensor.numel(), 0.0);
        }
    }
    const auto t = static_cast<double>(++store.step);
    const double bc1 = 1.0 - std::pow(opt.beta1, t);
    const double bc2 = 1.0 - std::pow(opt.beta2, t);
    for (std::size_t k = 0; k < entries.size(); ++k) {
        auto p = entries[k].tensor.mutable_data();
        auto g = entries[k].tensor.grad();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] -= opt.lr * opt.weight_decay * p[i];
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
        }
    }
}

void ema_update(EmaTracker& tracker, const ParamStore& live) {
    auto diff = tracker.shadow.layout_diff(live);
    if (!diff.empty()) {
        std::string names;
        for (const auto& n : diff) names += (names.empty() ? "" : ", ") + n;
        throw Error(ErrorKind::Shape, "ema_update: shadow and live stores differ on: " + names);
    }
    const double m = tracker.momentum;
    for (auto& e : tracker.shadow.entries()) {
        auto s = e.tensor.mutable_data();
        auto l = live.get(e.name).data();
        // Equal values are left untouched so that live == shadow is an exact fixed point.
        for (std::size_t i = 0; i < s.size(); ++i)
            if (s[i] != l[i]) s[i] = m * s[i] + (1.0 - m) * l[i];
    }
}

}  // namespace vclr::nd
