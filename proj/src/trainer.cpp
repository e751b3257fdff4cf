#include "vclr/trainer.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "vclr/error.hpp"
#include "vclr/nd/checkpoint.hpp"
#include "vclr/nd/ops.hpp"

namespace vclr::trainer {

namespace fs = std::filesystem;
using nd::Tensor;

void TrainConfig::validate() const {
    if (iterations == 0) throw UsageError("train: iterations must be positive");
    if (batch == 0) throw UsageError("train: batch must be positive");
    if (views.empty()) throw UsageError("train: view set is empty");
    if (std::find(views.begin(), views.end(), worldgen::View::natural) == views.end())
        throw UsageError("train: view set must contain natural");
    if (!(lr > 0) || !(ema >= 0 && ema <= 1) || weight_decay < 0 || !(lr_decay_at >= 0 && lr_decay_at <= 1))
        throw UsageError("train: optimizer settings out of range");
    if (iou_floor < 0 || iou_floor > 1) throw UsageError("train: iou_floor outside [0,1]");
    weights.validate();
    model.validate();
}

double TrainConfig::lr_at(std::size_t step) const {
    const auto boundary = static_cast<std::size_t>(std::floor(lr_decay_at * double(iterations)));
    return step < boundary ? lr : lr * lr_decay_factor;
}

void apply_mode(TrainConfig& cfg, const std::string& mode) {
    if (mode == "baseline") {
        cfg.views = {worldgen::View::natural};
        cfg.obj = false;
        cfg.sim = false;
        cfg.filter = false;
        cfg.crop_paste = false;
        cfg.weights.match = 0.0;
    } else if (mode == "vclr") {
        cfg.views = {worldgen::View::natural, worldgen::View::structure, worldgen::View::stylized};
        cfg.obj = true;
        cfg.sim = true;
        cfg.filter = true;
        cfg.crop_paste = true;
        if (cfg.weights.match == 0.0) cfg.weights.match = 1.0;
    } else {
        throw UsageError("unknown mode '" + mode + "' (expected baseline or vclr)");
    }
}

std::vector<AblationRow> ablation_rows(const TrainConfig& base) {
    std::vector<AblationRow> rows;
    auto c = base;
    apply_mode(c, "baseline");
    rows.push_back({"l_gt", c});
    c.obj = true;
    c.weights.match = 1.0;
    rows.push_back({"l_gt+l_obj", c});
    c.views = {worldgen::View::natural, worldgen::View::structure, worldgen::View::stylized};
    c.crop_paste = true;
    rows.push_back({"l_gt+l_obj+views", c});
    c.sim = true;
    rows.push_back({"l_gt+l_obj+views+l_sim", c});
    c.filter = true;
    rows.push_back({"l_gt+l_obj+views+l_sim+filter", c});
    c.obj = false;
    rows.push_back({"l_gt+views+l_sim+filter", c});
    return rows;
}

nlohmann::json to_json(const TrainConfig& c) {
    std::vector<std::string> views;
    for (auto v : c.views) views.emplace_back(worldgen::kViewNames[int(v)]);
    return {{"iterations", c.iterations},
            {"batch", c.batch},
            {"lr", c.lr},
            {"lr_decay_at", c.lr_decay_at},
            {"lr_decay_factor", c.lr_decay_factor},
            {"ema", c.ema},
            {"weight_decay", c.weight_decay},
            {"views", views},
            {"obj", c.obj},
            {"sim", c.sim},
            {"filter", c.filter},
            {"filter_obj", c.filter_obj},
            {"obj_background", c.obj_background},
            {"gt_on_matched", c.gt_on_matched},
            {"dedup_known", c.dedup_known},
            {"crop_paste", c.crop_paste},
            {"iou_floor", c.iou_floor},
            {"weights", losses::to_json(c.weights)},
            {"cost", {{"score", c.cost.score}, {"box", c.cost.box}, {"giou", c.cost.giou}, {"dice", c.cost.dice}}},
            {"paste",
             {{"probability", c.paste.probability},
              {"min_side", c.paste.min_side},
              {"max_side", c.paste.max_side},
              {"min_scale", c.paste.min_scale},
              {"max_scale", c.paste.max_scale},
              {"min_fragment", c.paste.min_fragment}}},
            {"model", model::to_json(c.model)},
            {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    if (!j.is_object()) throw UsageError("train config must be an object");
    try {
        for (auto& [k, v] : j.items()) {
            if (k == "iterations") c.iterations = v.get<std::size_t>();
            else if (k == "batch") c.batch = v.get<std::size_t>();
            else if (k == "lr") c.lr = v.get<double>();
            else if (k == "lr_decay_at") c.lr_decay_at = v.get<double>();
            else if (k == "lr_decay_factor") c.lr_decay_factor = v.get<double>();
            else if (k == "ema") c.ema = v.get<double>();
            else if (k == "weight_decay") c.weight_decay = v.get<double>();
            else if (k == "views") {
                c.views.clear();
                for (auto& name : v) c.views.push_back(worldgen::view_from(name.get<std::string>()));
            } else if (k == "mode") apply_mode(c, v.get<std::string>());
            else if (k == "obj") c.obj = v.get<bool>();
            else if (k == "sim") c.sim = v.get<bool>();
            else if (k == "filter") c.filter = v.get<bool>();
            else if (k == "filter_obj") c.filter_obj = v.get<bool>();
            else if (k == "obj_background") c.obj_background = v.get<bool>();
            else if (k == "gt_on_matched") c.gt_on_matched = v.get<bool>();
            else if (k == "dedup_known") c.dedup_known = v.get<bool>();
            else if (k == "crop_paste") c.crop_paste = v.get<bool>();
            else if (k == "iou_floor") c.iou_floor = v.get<double>();
            else if (k == "weights") c.weights = losses::loss_weights_from_json(v, c.weights);
            else if (k == "cost") {
                for (auto& [ck, cv] : v.items()) {
                    if (ck == "score") c.cost.score = cv.get<double>();
                    else if (ck == "box") c.cost.box = cv.get<double>();
                    else if (ck == "giou") c.cost.giou = cv.get<double>();
                    else if (ck == "dice") c.cost.dice = cv.get<double>();
                    else throw UsageError("unknown key train.cost." + ck);
                }
            } else if (k == "paste") {
                for (auto& [pk, pv] : v.items()) {
                    if (pk == "probability") c.paste.probability = pv.get<double>();
                    else if (pk == "min_side") c.paste.min_side = pv.get<int>();
                    else if (pk == "max_side") c.paste.max_side = pv.get<int>();
                    else if (pk == "min_scale") c.paste.min_scale = pv.get<double>();
                    else if (pk == "max_scale") c.paste.max_scale = pv.get<double>();
                    else if (pk == "min_fragment") c.paste.min_fragment = pv.get<int>();
                    else throw UsageError("unknown key train.paste." + pk);
                }
            } else if (k == "model") c.model = model::detector_config_from_json(v);
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else throw UsageError("unknown key train." + k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw UsageError(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

RunState init_state(const TrainConfig& cfg) {
    RunState s;
    s.student = model::init_params(cfg.model, cfg.seed);
    s.teacher.shadow = s.student.clone();
    s.teacher.momentum = cfg.ema;
    std::seed_seq d{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32), 101u};
    std::seed_seq v{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32), 202u};
    std::seed_seq a{std::uint32_t(cfg.seed), std::uint32_t(cfg.seed >> 32), 303u};
    s.data_rng.seed(d);
    s.view_rng.seed(v);
    s.aug_rng.seed(a);
    return s;
}

worldgen::View sample_student_view(std::mt19937_64& rng, const std::vector<worldgen::View>& views) {
    if (views.empty()) throw UsageError("sample_student_view: empty view set");
    return views[std::uniform_int_distribution<std::size_t>(0, views.size() - 1)(rng)];
}

std::vector<setmatch::Target> usable_proposals(const worldgen::Record& r, const TrainConfig& cfg) {
    std::vector<std::pair<double, setmatch::Target>> kept;
    for (auto& p : r.proposals) {
        bool dup = false;
        if (cfg.dedup_known)
            for (auto& g : r.gt) dup = dup || (g.known && geom::box_iou(g.box, p.box) >= 0.5);
        if (!dup) kept.push_back({p.confidence, {p.box, p.mask, true}});
    }
    std::stable_sort(kept.begin(), kept.end(), [](auto& a, auto& b) { return a.first > b.first; });
    std::vector<setmatch::Target> out;
    for (auto& [c, t] : kept) {
        if (out.size() >= std::size_t(cfg.model.queries)) break;
        out.push_back(std::move(t));
    }
    return out;
}

namespace {

model::DetectorOutput subset(const model::DetectorOutput& o, std::span<const std::size_t> rows) {
    model::DetectorOutput s = o;
    s.queries = nd::index_select(o.queries, rows);
    s.score_logits = nd::index_select(o.score_logits, rows);
    s.scores = nd::index_select(o.scores, rows);
    s.boxes = nd::index_select(o.boxes, rows);
    s.prototypes = nd::index_select(o.prototypes, rows);
    s.mask_logits = nd::index_select(o.mask_logits, rows);
    return s;
}

}  // namespace

ImageLoss image_loss(const worldgen::Record& r, const worldgen::Image& student_input, const nd::ParamStore& student,
                     const nd::ParamStore& teacher, const TrainConfig& cfg) {
    for (auto& g : r.gt)
        if (!g.known) throw DataError("record " + std::to_string(r.index) + ": unknown-class annotation in training GT");
    ImageLoss L;
    const auto s_out = model::forward(student_input.tensor(), student, cfg.model, true);
    const auto s_det = s_out.detached();
    const auto& w = cfg.weights;

    std::vector<setmatch::MatchTriplet> obj_triplets;
    std::vector<setmatch::Target> props;
    L.sim = Tensor::scalar(0.0);
    if (cfg.obj || cfg.sim) {
        props = usable_proposals(r, cfg);
        L.kept = props.size();
        if (!props.empty()) {
            const auto t_out = model::forward(r.views.natural.tensor(), teacher, cfg.model, false);
            const auto all = setmatch::match_triplets(props, t_out.detached(), s_det, cfg.cost);
            L.triplets = cfg.filter ? setmatch::filter_triplets(all, cfg.iou_floor) : all;
            obj_triplets = cfg.filter_obj ? L.triplets : all;
            if (cfg.sim) L.sim = losses::sim_loss(L.triplets, t_out.queries, s_out.queries);
        }
    }
    L.obj = cfg.obj ? losses::l_obj(obj_triplets, s_out, props, w, cfg.obj_background)
                    : losses::l_obj({}, s_out, {}, w);

    const auto gt = worldgen::gt_targets(r);
    std::vector<std::size_t> rows;
    for (auto& t : L.triplets) rows.push_back(t.student);
    if (cfg.gt_on_matched && rows.size() >= gt.size() && !rows.empty()) {
        std::sort(rows.begin(), rows.end());
        L.gt = losses::l_gt(subset(s_out, rows), gt, w, cfg.cost);
    } else {
        L.gt = losses::l_gt(s_out, s_det, gt, w, cfg.cost);
    }
    L.total = losses::total_loss(L.gt, L.obj, L.sim, w);
    return L;
}

std::vector<const worldgen::Record*> next_batch(const worldgen::Dataset& ds, RunState& s, std::size_t batch) {
    if (ds.records.empty()) throw DataError("training dataset is empty");
    std::vector<const worldgen::Record*> out;
    while (out.size() < batch) {
        if (s.cursor >= s.order.size()) {
            s.order.resize(ds.records.size());
            std::iota(s.order.begin(), s.order.end(), 0);
            std::shuffle(s.order.begin(), s.order.end(), s.data_rng);
            s.cursor = 0;
        }
        out.push_back(&ds.records[s.order[s.cursor++]]);
    }
    return out;
}

StepReport train_step(std::span<const worldgen::Record* const> batch, RunState& state, const TrainConfig& cfg) {
    StepReport rep;
    rep.lr = cfg.lr_at(state.step);
    state.student.zero_grads();
    const double inv = 1.0 / double(batch.size());
    try {
        for (const auto* rec : batch) {
            const worldgen::Record* r = rec;
            worldgen::Record pasted;
            if (cfg.crop_paste) {
                const auto op = worldgen::sample_paste(state.aug_rng, cfg.paste, cfg.model.canvas);
                if (op.active) {
                    pasted = worldgen::paste_record(*rec, op, cfg.paste.min_fragment);
                    r = &pasted;
                }
            }
            const auto view = sample_student_view(state.view_rng, cfg.views);
            auto L = image_loss(*r, r->views.get(view), state.student, state.teacher.shadow, cfg);
            if (!std::isfinite(L.total.value())) throw NumericAbort("non-finite total loss");
            nd::backward(L.total.total * inv);
            rep.l_gt += L.gt.value() * inv;
            rep.l_obj += L.obj.value() * inv;
            rep.l_sim += L.sim.item() * inv;
            rep.total += L.total.value() * inv;
            rep.triplets += L.triplets.size();
            rep.kept += L.kept;
        }
        nd::AdamWOptions opt;
        opt.lr = rep.lr;
        opt.weight_decay = cfg.weight_decay;
        state.optimizer.step(state.student, opt);
        for (auto& e : state.student.entries())
            if (!nd::all_finite(e.tensor)) throw NumericAbort("parameter " + e.name + " became non-finite");
    } catch (const NumericAbort& e) {
        std::ostringstream os;
        os << "numeric abort at step " << state.step << " (seed " << cfg.seed << ", records";
        for (auto* r : batch) os << ' ' << r->index;
        os << "): " << e.what();
        throw NumericAbort(os.str());
    }
    nd::ema_update(state.teacher, state.student);
    ++state.step;
    return rep;
}

std::string git_blob_sha1(const std::string& bytes) {
    const std::string blob = "blob " + std::to_string(bytes.size()) + '\0' + bytes;
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(blob.data(), blob.size(), md, &len, EVP_sha1(), nullptr) != 1) throw Error(ErrorKind::Data, "sha1 failed");
    std::ostringstream os;
    for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
    return os.str();
}

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot open " + p.string());
    return {std::istreambuf_iterator<char>(f), {}};
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot write " + p.string());
    f << s;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

void save(const fs::path& path, const RunState& s, const TrainConfig& cfg, const nlohmann::json& dataset) {
    nd::ParamStore all;
    nd::append_prefixed(all, s.student, "student.");
    nd::append_prefixed(all, s.teacher.shadow, "teacher.");
    all.step = std::int64_t(s.step);
    nd::write_checkpoint(path, all,
                         {{"model", model::to_json(cfg.model)}, {"train", to_json(cfg)}, {"dataset", dataset},
                          {"step", s.step}});
}

}  // namespace

RunResult run(const TrainConfig& cfg, const fs::path& dataset_dir, const fs::path& out_dir) {
    cfg.validate();
    const auto ds = worldgen::read_dataset(dataset_dir);
    if (ds.manifest.value("gt_policy", "") != "known_only")
        throw DataError(dataset_dir.string() + ": training needs a known-only split (gt_policy known_only)");
    const nlohmann::json dataset{{"manifest_sha1", git_blob_sha1(slurp(dataset_dir / "manifest.json"))},
                                 {"seed", ds.manifest.at("seed")},
                                 {"generator_version", ds.manifest.at("generator_version")},
                                 {"canvas", ds.manifest.at("canvas")},
                                 {"count", ds.manifest.at("count")}};
    if (ds.manifest.at("canvas").get<int>() != cfg.model.canvas)
        throw DataError("dataset canvas does not match the detector canvas");

    fs::create_directories(out_dir);
    write_text(out_dir / "config.json", to_json(cfg).dump(1) + "\n");
    std::ofstream csv(out_dir / "losses.csv", std::ios::binary);
    if (!csv) throw DataError("cannot write " + (out_dir / "losses.csv").string());
    csv << "step,l_gt,l_obj,l_sim,total,lr\n" << std::setprecision(17);

    std::vector<std::size_t> marks;
    for (int pct : {25, 50, 75, 100})
        marks.push_back(std::max<std::size_t>(1, (cfg.iterations * std::size_t(pct) + 99) / 100));

    RunResult result;
    auto state = init_state(cfg);
    nlohmann::json ckpts = nlohmann::json::array();
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const auto batch = next_batch(ds, state, cfg.batch);
        const auto rep = train_step(batch, state, cfg);
        csv << it << ',' << rep.l_gt << ',' << rep.l_obj << ',' << rep.l_sim << ',' << rep.total << ',' << rep.lr
            << '\n';
        result.history.push_back(rep);
        for (std::size_t k = 0; k < marks.size(); ++k)
            if (state.step == marks[k]) {
                const int pct = 25 * int(k + 1);
                const auto p = out_dir / ("ckpt_" + std::to_string(pct) + ".bin");
                save(p, state, cfg, dataset);
                ckpts.push_back({{"percent", pct}, {"step", state.step}, {"file", p.filename().string()}});
                result.final_checkpoint = p;
            }
    }
    csv.flush();
    nlohmann::json manifest{{"config", to_json(cfg)},
                            {"dataset", dataset},
                            {"dataset_dir", dataset_dir.string()},
                            {"checkpoints", ckpts},
                            {"steps", state.step},
                            {"created_utc", utc_now()}};
    write_text(out_dir / "manifest.json", manifest.dump(1) + "\n");
    return result;
}

LoadedModel load_checkpoint(const fs::path& path) {
    auto ck = nd::read_checkpoint(path);
    LoadedModel m;
    m.meta = ck.meta;
    try {
        m.config = model::detector_config_from_json(ck.meta.at("model"));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": checkpoint meta lacks a model config (" + e.what() + ")");
    }
    m.student = nd::extract_prefixed(ck.params, "student.");
    m.teacher = nd::extract_prefixed(ck.params, "teacher.");
    const auto expected = model::init_params(m.config, 0);
    for (auto* s : {&m.student, &m.teacher}) {
        auto diff = expected.layout_diff(*s);
        if (!diff.empty()) throw DataError(path.string() + ": parameter layout mismatch at " + diff.front());
    }
    return m;
}

}  // namespace vclr::trainer
