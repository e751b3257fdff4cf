#include "vclr/robustness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "vclr/error.hpp"

namespace vclr::robustness {

namespace {

constexpr std::size_t kBins = 50;

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint32_t tag) {
    std::seed_seq s{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(a), std::uint32_t(b), tag};
    return std::mt19937_64(s);
}

}  // namespace

void PerturbSpec::validate() const {
    if (stds.empty()) throw UsageError("perturb: empty std list");
    for (std::size_t i = 0; i < stds.size(); ++i) {
        if (!(stds[i] >= 0) || !std::isfinite(stds[i])) throw UsageError("perturb: stds must be finite and >= 0");
        if (i && stds[i] <= stds[i - 1]) throw UsageError("perturb: stds must be strictly increasing");
    }
    if (trials == 0) throw UsageError("perturb: trials must be positive");
    if (split != "all" && split != "known" && split != "unknown")
        throw UsageError("perturb: split must be all, known or unknown");
}

nlohmann::json to_json(const PerturbSpec& s) {
    return {{"stds", s.stds}, {"trials", s.trials}, {"seed", s.seed}, {"split", s.split}};
}

PerturbSpec perturb_spec_from_json(const nlohmann::json& j, PerturbSpec s) {
    if (!j.is_object()) throw UsageError("perturb spec must be an object");
    try {
        for (auto& [k, v] : j.items()) {
            if (k == "stds") s.stds = v.get<std::vector<double>>();
            else if (k == "trials") s.trials = v.get<std::size_t>();
            else if (k == "seed") s.seed = v.get<std::uint64_t>();
            else if (k == "split") s.split = v.get<std::string>();
            else throw UsageError("unknown key perturb." + k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("perturb spec: ") + e.what());
    }
    s.validate();
    return s;
}

nd::ParamStore perturbed(const nd::ParamStore& params, double std, std::mt19937_64& rng) {
    auto out = params.clone();
    if (std == 0) return out;
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& e : out.entries())
        for (double& v : e.tensor.mutable_data()) v += n(rng) * std;
    return out;
}

std::vector<PerturbRow> perturb_eval(const nd::ParamStore& params, const model::DetectorConfig& cfg,
                                     const worldgen::Dataset& ds, const PerturbSpec& spec) {
    spec.validate();
    evalkit::EvalConfig ec;
    ec.ks = {10};
    ec.per_subset = false;
    std::vector<PerturbRow> rows;
    for (std::size_t si = 0; si < spec.stds.size(); ++si)
        for (std::size_t t = 0; t < spec.trials; ++t) {
            auto rng = stream(spec.seed, si, t, 0x9e7u);
            const auto p = perturbed(params, spec.stds[si], rng);
            const auto rep = evalkit::average_recall(evalkit::evaluate_model(p, cfg, ds), ec);
            PerturbRow r{spec.stds[si], t};
            r.ar10_box = rep.get(spec.split, evalkit::Metric::box, 10, "overall").value_or(0.0);
            r.ar10_mask = rep.get(spec.split, evalkit::Metric::mask, 10, "overall").value_or(0.0);
            rows.push_back(r);
        }
    return rows;
}

std::vector<PerturbSummary> summarize(const std::vector<PerturbRow>& rows) {
    std::vector<PerturbSummary> out;
    for (std::size_t i = 0; i < rows.size();) {
        std::size_t j = i;
        while (j < rows.size() && rows[j].std == rows[i].std) ++j;
        const double n = double(j - i);
        PerturbSummary s{rows[i].std};
        for (std::size_t k = i; k < j; ++k) s.box_mean += rows[k].ar10_box / n, s.mask_mean += rows[k].ar10_mask / n;
        for (std::size_t k = i; k < j; ++k) {
            s.box_sd += (rows[k].ar10_box - s.box_mean) * (rows[k].ar10_box - s.box_mean);
            s.mask_sd += (rows[k].ar10_mask - s.mask_mean) * (rows[k].ar10_mask - s.mask_mean);
        }
        s.box_sd = n > 1 ? std::sqrt(s.box_sd / (n - 1)) : 0.0;
        s.mask_sd = n > 1 ? std::sqrt(s.mask_sd / (n - 1)) : 0.0;
        out.push_back(s);
        i = j;
    }
    return out;
}

std::string perturb_csv(const std::vector<PerturbRow>& rows) {
    std::ostringstream os;
    os << "std,trial,ar10_box,ar10_mask\n" << std::setprecision(17);
    for (auto& r : rows) os << r.std << ',' << r.trial << ',' << r.ar10_box << ',' << r.ar10_mask << '\n';
    return os.str();
}

void DistortionSpec::validate() const {
    switch (kind) {
        case Distortion::contrast:
            if (!(severity >= 0 && severity <= 1)) throw UsageError("contrast factor must lie in [0,1]");
            break;
        case Distortion::gaussian_noise:
            if (!(severity >= 0 && severity <= 1)) throw UsageError("noise sigma must lie in [0,1]");
            break;
        case Distortion::occlusion:
            if (!(severity >= 0 && severity <= 64) || severity != std::floor(severity))
                throw UsageError("occlusion patch count must be an integer in [0,64]");
            break;
    }
}

std::string DistortionSpec::name() const {
    static const char* names[] = {"contrast", "gaussian_noise", "occlusion"};
    std::ostringstream os;
    os << names[int(kind)] << ':' << severity;
    return os.str();
}

DistortionSpec parse_distortion(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw UsageError("distortion '" + text + "': expected kind:severity");
    const auto kind = text.substr(0, colon);
    DistortionSpec s;
    if (kind == "contrast") s.kind = Distortion::contrast;
    else if (kind == "gaussian_noise") s.kind = Distortion::gaussian_noise;
    else if (kind == "occlusion") s.kind = Distortion::occlusion;
    else throw UsageError("unknown distortion kind '" + kind + "'");
    try {
        std::size_t used = 0;
        s.severity = std::stod(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw UsageError("distortion '" + text + "': bad severity");
    }
    s.validate();
    return s;
}

worldgen::Image distort(const worldgen::Image& img, const DistortionSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    auto out = img;
    auto clip = [](double v) { return float(std::clamp(v, 0.0, 1.0)); };
    switch (spec.kind) {
        case Distortion::contrast: {
            if (spec.severity == 1.0) return out;
            double mean = 0;
            for (float v : img.pixels) mean += v;
            mean /= double(std::max<std::size_t>(img.pixels.size(), 1));
            for (auto& v : out.pixels) v = clip(mean + spec.severity * (v - mean));
            break;
        }
        case Distortion::gaussian_noise: {
            if (spec.severity == 0.0) return out;
            std::normal_distribution<double> n(0.0, spec.severity);
            for (auto& v : out.pixels) v = clip(v + n(rng));
            break;
        }
        case Distortion::occlusion: {
            const int side = 8;
            if (img.height < side || img.width < side) throw ShapeError("occlusion: image smaller than a patch");
            std::uniform_int_distribution<int> py(0, img.height - side), px(0, img.width - side);
            std::uniform_real_distribution<float> u(0.0f, 1.0f);
            for (int k = 0; k < int(spec.severity); ++k) {
                const int y0 = py(rng), x0 = px(rng);
                for (int y = y0; y < y0 + side; ++y)
                    for (int x = x0; x < x0 + side; ++x)
                        for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = u(rng);
            }
            break;
        }
    }
    return out;
}

ScoreHistogram score_distribution(const nd::ParamStore& params, const model::DetectorConfig& cfg,
                                  const worldgen::Dataset& ds, const std::optional<DistortionSpec>& distortion,
                                  std::uint64_t seed, std::size_t top) {
    ScoreHistogram h;
    h.condition = distortion ? distortion->name() : "clean";
    h.counts.assign(kBins, 0);
    double sum = 0, sum2 = 0;
    for (const auto& r : ds.records) {
        auto input = r.views.natural;
        if (distortion) {
            auto rng = stream(seed, r.index, 0, 0xd15u);
            input = distort(input, *distortion, rng);
        }
        const auto out = model::forward(input.tensor(), params, cfg, false);
        std::vector<double> s(out.scores.data().begin(), out.scores.data().end());
        std::sort(s.begin(), s.end(), std::greater<>());
        s.resize(std::min(top, s.size()));
        for (double v : s) {
            const auto bin = std::min<std::size_t>(kBins - 1, std::size_t(std::floor(v * kBins)));
            ++h.counts[bin];
            sum += v;
            sum2 += v * v;
            ++h.n;
        }
    }
    if (h.n) {
        h.mean = sum / double(h.n);
        h.variance = std::max(0.0, sum2 / double(h.n) - h.mean * h.mean);
    }
    return h;
}

std::string scores_csv(const std::vector<ScoreHistogram>& hists) {
    std::ostringstream os;
    os << "bin_lo,bin_hi,count,condition\n";
    for (auto& h : hists)
        for (std::size_t b = 0; b < h.counts.size(); ++b)
            os << double(b) / kBins << ',' << double(b + 1) / kBins << ',' << h.counts[b] << ',' << h.condition << '\n';
    return os.str();
}

std::string scores_summary_csv(const std::vector<ScoreHistogram>& hists) {
    std::ostringstream os;
    os << "condition,n,mean,variance\n" << std::setprecision(17);
    for (auto& h : hists) os << h.condition << ',' << h.n << ',' << h.mean << ',' << h.variance << '\n';
    return os.str();
}

}  // namespace vclr::robustness
