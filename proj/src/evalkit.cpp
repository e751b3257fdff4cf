#include "vclr/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "vclr/error.hpp"

namespace vclr::evalkit {

void EvalConfig::validate() const {
    if (ks.empty()) throw UsageError("eval: no K values");
    if (thresholds.empty()) throw UsageError("eval: no IoU thresholds");
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (thresholds[i] < 0 || thresholds[i] > 1) throw UsageError("eval: threshold outside [0,1]");
        if (i && thresholds[i] <= thresholds[i - 1]) throw UsageError("eval: thresholds must increase strictly");
    }
    if (!(small_below <= large_above)) throw UsageError("eval: size bins overlap");
}

nlohmann::json to_json(const EvalConfig& c) {
    return {{"ks", c.ks},
            {"thresholds", c.thresholds},
            {"small_below", c.small_below},
            {"large_above", c.large_above},
            {"per_subset", c.per_subset}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j, EvalConfig c) {
    if (!j.is_object()) throw UsageError("eval config must be an object");
    try {
        for (auto& [k, v] : j.items()) {
            if (k == "ks") c.ks = v.get<std::vector<std::size_t>>();
            else if (k == "thresholds") c.thresholds = v.get<std::vector<double>>();
            else if (k == "small_below") c.small_below = v.get<double>();
            else if (k == "large_above") c.large_above = v.get<double>();
            else if (k == "per_subset") c.per_subset = v.get<bool>();
            else throw UsageError("unknown key eval." + k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("eval config: ") + e.what());
    }
    c.validate();
    return c;
}

std::string_view metric_name(Metric m) { return m == Metric::box ? "box" : "mask"; }

std::vector<bool> greedy_match(std::span<const double> iou, std::size_t preds, std::size_t gts, double t) {
    std::vector<bool> matched(gts, false);
    for (std::size_t p = 0; p < preds; ++p) {
        std::ptrdiff_t best = -1;
        double best_iou = -1;
        for (std::size_t g = 0; g < gts; ++g) {
            if (matched[g]) continue;
            const double v = iou[p * gts + g];
            if (v >= t && v > best_iou) best = std::ptrdiff_t(g), best_iou = v;
        }
        if (best >= 0) matched[std::size_t(best)] = true;
    }
    return matched;
}

std::pair<std::size_t, std::size_t> recall_single(std::span<const double> iou, std::size_t preds, std::size_t gts,
                                                  double t) {
    auto m = greedy_match(iou, preds, gts, t);
    return {std::size_t(std::count(m.begin(), m.end(), true)), gts};
}

std::vector<std::size_t> top_k(std::span<const Prediction> preds, std::size_t k) {
    std::vector<std::size_t> idx(preds.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return preds[a].score > preds[b].score; });
    if (idx.size() > k) idx.resize(k);
    return idx;
}

std::vector<double> iou_matrix(std::span<const Prediction> preds, std::span<const std::size_t> order,
                               std::span<const GtInstance> gt, Metric m) {
    std::vector<double> out(order.size() * gt.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t g = 0; g < gt.size(); ++g) {
            const auto& p = preds[order[i]];
            out[i * gt.size() + g] =
                m == Metric::box ? geom::box_iou(p.box, gt[g].box) : geom::mask_iou(p.mask, gt[g].mask);
        }
    return out;
}

std::string size_cell(double area, const EvalConfig& cfg) {
    if (area < cfg.small_below) return "size:small";
    if (area > cfg.large_above) return "size:large";
    return "size:medium";
}

std::string count_cell(std::size_t n) {
    if (n <= 3) return "count:1-3";
    if (n <= 6) return "count:4-6";
    if (n <= 9) return "count:7-9";
    return "count:10+";
}

std::string subset_cell(int color, worldgen::Material m) {
    return "subset:" + std::string(worldgen::kColorNames[color]) + "_" +
           std::string(worldgen::kMaterialNames[int(m)]);
}

std::pair<int, worldgen::Material> parse_subset(const std::string& name) {
    const auto cut = name.find('_');
    if (cut == std::string::npos) throw UsageError("subset '" + name + "' is not <color>_<material>");
    return {worldgen::color_index(name.substr(0, cut)), worldgen::material_from(name.substr(cut + 1))};
}

namespace {

std::vector<std::string> cell_order(const EvalConfig& cfg) {
    std::vector<std::string> cells{"overall", "size:small", "size:medium", "size:large",
                                   "count:1-3", "count:4-6", "count:7-9", "count:10+"};
    if (cfg.per_subset)
        for (int c = 0; c < 8; ++c)
            for (int m = 0; m < 2; ++m) cells.push_back(subset_cell(c, worldgen::Material(m)));
    return cells;
}

struct Tally {
    std::size_t gt = 0;
    std::size_t recalled = 0;  // summed over thresholds
};

}  // namespace

EvalReport average_recall(std::span<const ImageResult> images, const EvalConfig& cfg) {
    cfg.validate();
    const std::vector<std::string> splits{"all", "known", "unknown"};
    const std::vector<Metric> metrics{Metric::box, Metric::mask};
    const auto cells = cell_order(cfg);
    std::map<std::string, std::size_t> cell_index;
    for (std::size_t i = 0; i < cells.size(); ++i) cell_index[cells[i]] = i;

    // tallies[split][metric][k][cell]
    const std::size_t S = splits.size(), M = metrics.size(), K = cfg.ks.size(), C = cells.size();
    std::vector<Tally> tallies(S * M * K * C);
    auto at = [&](std::size_t s, std::size_t m, std::size_t k, std::size_t c) -> Tally& {
        return tallies[((s * M + m) * K + k) * C + c];
    };

    for (const auto& img : images) {
        const std::size_t G = img.gt.size();
        if (G == 0) continue;
        // cells each GT belongs to
        std::vector<std::vector<std::size_t>> member(G);
        for (std::size_t g = 0; g < G; ++g) {
            member[g].push_back(cell_index.at("overall"));
            member[g].push_back(cell_index.at(size_cell(double(img.gt[g].mask.popcount()), cfg)));
            member[g].push_back(cell_index.at(count_cell(G)));
            if (cfg.per_subset) member[g].push_back(cell_index.at(subset_cell(img.gt[g].color, img.gt[g].material)));
        }
        for (std::size_t mi = 0; mi < M; ++mi)
            for (std::size_t ki = 0; ki < K; ++ki) {
                const auto order = top_k(img.preds, cfg.ks[ki]);
                const auto iou = iou_matrix(img.preds, order, img.gt, metrics[mi]);
                std::vector<std::size_t> hits(G, 0);
                for (double t : cfg.thresholds) {
                    const auto matched = greedy_match(iou, order.size(), G, t);
                    for (std::size_t g = 0; g < G; ++g) hits[g] += matched[g];
                }
                for (std::size_t g = 0; g < G; ++g) {
                    const std::size_t own = img.gt[g].known ? 1 : 2;
                    for (std::size_t s : {std::size_t(0), own})
                        for (auto c : member[g]) {
                            auto& t = at(s, mi, ki, c);
                            t.gt += 1;
                            t.recalled += hits[g];
                        }
                }
            }
    }

    EvalReport r;
    const double T = double(cfg.thresholds.size());
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t mi = 0; mi < M; ++mi)
            for (std::size_t ki = 0; ki < K; ++ki)
                for (std::size_t c = 0; c < C; ++c) {
                    const auto& t = at(s, mi, ki, c);
                    if (t.gt == 0) continue;
                    r.rows.push_back({splits[s], metrics[mi], cfg.ks[ki], cells[c], double(t.recalled) / (T * double(t.gt)),
                                      t.gt});
                }
    return r;
}

double threshold_recall(std::span<const ImageResult> images, Metric m, std::size_t k, double t) {
    std::size_t hit = 0, total = 0;
    for (const auto& img : images) {
        const auto order = top_k(img.preds, k);
        const auto iou = iou_matrix(img.preds, order, img.gt, m);
        const auto [h, n] = recall_single(iou, order.size(), img.gt.size(), t);
        hit += h;
        total += n;
    }
    return total ? double(hit) / double(total) : 0.0;
}

std::optional<double> EvalReport::get(const std::string& split, Metric m, std::size_t k, const std::string& cell) const {
    for (auto& row : rows)
        if (row.split == split && row.metric == m && row.k == k && row.cell == cell) return row.value;
    return std::nullopt;
}

std::optional<std::size_t> EvalReport::gt_count(const std::string& split, Metric m, std::size_t k,
                                                const std::string& cell) const {
    for (auto& row : rows)
        if (row.split == split && row.metric == m && row.k == k && row.cell == cell) return row.gt_count;
    return std::nullopt;
}

std::string EvalReport::csv() const {
    std::ostringstream os;
    os << "split,metric,K,cell,value,gt_count\n";
    os << std::setprecision(17);
    for (auto& r : rows)
        os << r.split << ',' << metric_name(r.metric) << ',' << r.k << ',' << r.cell << ',' << r.value << ','
           << r.gt_count << '\n';
    return os.str();
}

nlohmann::json EvalReport::json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (auto& r : rows)
        rows_j.push_back({{"split", r.split},
                          {"metric", metric_name(r.metric)},
                          {"K", r.k},
                          {"cell", r.cell},
                          {"value", r.value},
                          {"gt_count", r.gt_count}});
    return {{"rows", rows_j}};
}

std::string EvalReport::summary() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1);
    std::vector<std::size_t> ks;
    for (auto& r : rows)
        if (std::find(ks.begin(), ks.end(), r.k) == ks.end()) ks.push_back(r.k);
    os << std::left << std::setw(26) << "cell";
    for (auto k : ks) os << std::setw(10) << ("ARb@" + std::to_string(k)) << std::setw(10) << ("ARm@" + std::to_string(k));
    os << "GT\n";
    for (const std::string split : {"known", "unknown", "all"})
        for (auto& r : rows) {
            if (r.split != split || r.metric != Metric::box || r.k != ks.front()) continue;
            if (split != "all" && r.cell != "overall") continue;
            os << std::setw(26) << (split + " " + r.cell);
            for (auto k : ks)
                for (auto m : {Metric::box, Metric::mask}) {
                    auto v = get(split, m, k, r.cell);
                    os << std::setw(10) << (v ? *v * 100 : 0.0);
                }
            os << r.gt_count << '\n';
        }
    return os.str();
}

// ---- adapters ----

std::vector<GtInstance> gt_of(const worldgen::Record& r) {
    std::vector<GtInstance> out;
    for (auto& a : r.gt) out.push_back({a.box, a.mask, a.color, a.material, a.known});
    return out;
}

std::vector<Prediction> predictions_of(const model::DetectorOutput& out) {
    std::vector<Prediction> preds;
    const std::size_t n = out.size(), hw = out.mask_logits.dim(1);
    const auto logits = out.mask_logits.data();
    const auto boxes = out.boxes.data();
    for (std::size_t i = 0; i < n; ++i) {
        Prediction p;
        p.score = out.scores[i];
        p.box = {boxes[4 * i], boxes[4 * i + 1], boxes[4 * i + 2], boxes[4 * i + 3]};
        p.mask = geom::BitMask(out.canvas, out.canvas);
        for (std::size_t k = 0; k < hw; ++k) p.mask.bits()[k] = logits[i * hw + k] > 0.0;
        preds.push_back(std::move(p));
    }
    return preds;
}

std::vector<Prediction> predict(const nd::ParamStore& params, const model::DetectorConfig& cfg,
                                const worldgen::Image& img) {
    return predictions_of(model::forward(img.tensor(), params, cfg, false));
}

std::vector<Prediction> proposals_as_predictions(const worldgen::Record& r) {
    std::vector<Prediction> out;
    for (auto& p : r.proposals) out.push_back({p.confidence, p.box, p.mask});
    return out;
}

std::vector<ImageResult> evaluate_model(const nd::ParamStore& params, const model::DetectorConfig& cfg,
                                        const worldgen::Dataset& ds,
                                        const std::function<worldgen::Image(const worldgen::Record&)>& input) {
    std::vector<ImageResult> out;
    out.reserve(ds.records.size());
    for (auto& r : ds.records) {
        const auto preds = input ? predict(params, cfg, input(r)) : predict(params, cfg, r.views.natural);
        out.push_back({gt_of(r), preds});
    }
    return out;
}

std::vector<ImageResult> oracle_results(const worldgen::Dataset& ds) {
    std::vector<ImageResult> out;
    for (auto& r : ds.records) {
        ImageResult ir{gt_of(r), {}};
        for (auto& g : ir.gt) ir.preds.push_back({1.0, g.box, g.mask});
        out.push_back(std::move(ir));
    }
    return out;
}

SubsetSummary subset_summary(const EvalReport& r, Metric m, std::size_t k) {
    SubsetSummary s;
    double sum = 0;
    for (int c = 0; c < 8; ++c)
        for (int mat = 0; mat < 2; ++mat) {
            const auto cell = subset_cell(c, worldgen::Material(mat));
            auto v = r.get("all", m, k, cell);
            if (!v) continue;
            if (c == worldgen::kRed && mat == int(worldgen::Material::checker)) {
                s.known = v;
            } else {
                sum += *v;
                ++s.unknown_subsets;
            }
        }
    s.unknown_mean = s.unknown_subsets ? sum / double(s.unknown_subsets) : 0.0;
    return s;
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "report.csv");
        if (!f) throw DataError("cannot write " + (dir / "report.csv").string());
        f << r.csv();
    }
    std::ofstream f(dir / "report.json");
    if (!f) throw DataError("cannot write " + (dir / "report.json").string());
    f << r.json().dump(1) << '\n';
}

}  // namespace vclr::evalkit
