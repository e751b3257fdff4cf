// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any fails.
// Usage: acceptance [workdir] [--only N,M]

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "assign_oracle.hpp"
#include "eval_oracle.hpp"
#include "gradcheck.hpp"
#include "loss_oracle.hpp"
#include "raster_oracle.hpp"
#include "vclr/evalkit.hpp"
#include "vclr/robustness.hpp"
#include "vclr/trainer.hpp"

using namespace vclr;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(prec) << v;
    return os.str();
}

std::string pts(double v) { return fmt(100 * v, 2); }

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) return "<missing " + p.string() + ">";
    return {std::istreambuf_iterator<char>(f), {}};
}

// ---- 1. gradient correctness ----

Outcome crit_gradients() {
    const auto t0 = Clock::now();
    using namespace oracle;
    using losses::LossWeights;
    using nd::Tensor;
    std::map<std::string, double> worst;
    std::size_t checked = 0, kinks = 0;
    auto track = [&](const std::string& name, const gradcheck::Result& r) {
        worst[name] = std::max(worst[name], r.max_rel_error);
        checked += r.checked;
        kinks += r.kinks;
    };
    std::mt19937_64 rng(1001);
    for (int t = 0; t < 100; ++t) {
        auto mask = random_mask(rng, 3);
        std::vector<Tensor> z{gradcheck::random_tensor(rng, {9}, -2, 2)};
        track("dice", gradcheck::check([&](auto& l) { return losses::dice_loss(l[0], mask); }, z));
        track("mask_bce", gradcheck::check([&](auto& l) { return losses::mask_loss(l[0], mask); }, z));
        std::vector<Tensor> s{gradcheck::random_tensor(rng, {1}, -3, 3)};
        const bool pos = t % 2;
        track("score_focal", gradcheck::check([&](auto& l) { return losses::score_loss(l[0], pos); }, s));
        auto a = random_box(rng), b = random_box(rng);
        std::vector<Tensor> bx{Tensor::from({4}, {a.cx, a.cy, a.w, a.h}, true)};
        track("box_l1", gradcheck::check([&](auto& l) { return losses::box_losses(l[0], b).first; }, bx));
        track("box_giou", gradcheck::check([&](auto& l) { return losses::box_losses(l[0], b).second; }, bx));
        std::vector<Tensor> q{gradcheck::random_tensor(rng, {3, 5})};
        auto teacher = gradcheck::random_tensor(rng, {3, 5}).detach();
        std::vector<setmatch::MatchTriplet> tr{{0, 0, 2, 1, 1, 1}, {1, 2, 0, 1, 1, 1}};
        track("l_sim", gradcheck::check([&](auto& l) { return losses::sim_loss(tr, teacher, l[0]); }, q));
        auto o = random_output(rng, 4, 3);
        std::vector<setmatch::Target> gt{{random_box(rng), random_mask(rng, 3)},
                                         {random_box(rng), random_mask(rng, 3)}};
        std::vector<Tensor> leaves{o.score_logits, o.boxes, o.mask_logits};
        const auto det = o.detached();
        track("l_gt", gradcheck::check([&](auto&) { return losses::l_gt(o, det, gt, LossWeights{}).total; }, leaves));
        std::vector<setmatch::MatchTriplet> two{{0, 1, 1, 1, 1, 1}, {1, 0, 3, 1, 1, 1}};
        track("l_obj", gradcheck::check([&](auto&) { return losses::l_obj(two, o, gt, LossWeights{}).total; }, leaves));
        const auto sim = losses::sim_loss(tr, teacher, q[0]);
        track("total", gradcheck::check(
                           [&](auto&) {
                               auto g = losses::l_gt(o, det, gt, LossWeights{});
                               auto ob = losses::l_obj(two, o, gt, LossWeights{});
                               return losses::total_loss(g, ob, losses::sim_loss(tr, teacher, q[0]), LossWeights{})
                                   .total;
                           },
                           leaves));
        (void)sim;
    }

    model::DetectorConfig tiny;
    tiny.canvas = 8;
    tiny.patch = 4;
    tiny.dim = 8;
    tiny.heads = 2;
    tiny.encoder_blocks = 1;
    tiny.decoder_blocks = 1;
    tiny.queries = 3;
    for (int t = 0; t < 100; ++t) {
        auto p = model::init_params(tiny, 5000 + t);
        for (auto& e : p.entries())
            for (auto& x : e.tensor.mutable_data()) x *= 4;
        auto img = gradcheck::random_tensor(rng, {8, 8, 3}, 0, 1).detach();
        std::vector<Tensor> leaves;
        for (auto& e : p.entries()) leaves.push_back(e.tensor);
        auto w = gradcheck::random_tensor(rng, {3, 64}).detach();
        track("detector", gradcheck::check(
                              [&](auto&) {
                                  auto out = model::forward(img, p, tiny, true);
                                  auto a = nd::mean(nd::mul(nd::sigmoid(out.mask_logits), w));
                                  auto b = nd::mean(nd::mul(out.boxes, out.boxes)) + nd::mean(out.scores);
                                  return a + b + nd::mean(nd::mul(out.queries, out.queries)) * 0.1;
                              },
                              leaves));
    }
    const double secs = seconds_since(t0);
    double max_err = 0;
    std::string detail;
    for (auto& [k, v] : worst) {
        max_err = std::max(max_err, v);
        detail += k + "=" + [&] {
            std::ostringstream os;
            os << std::scientific << std::setprecision(1) << v;
            return os.str();
        }() + " ";
    }
    return {max_err < 1e-4 && secs < 60, "max rel error by op: " + detail + "(limit 1e-4), " + std::to_string(checked) + " coordinates checked, " +
                                           std::to_string(kinks) + " skipped as kink-straddling, " + fmt(secs, 1) +
                                           " s (limit 60)"};
}

// ---- 2. Hungarian optimality ----

Outcome crit_hungarian() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2002);
    std::uniform_real_distribution<double> v(-5, 5);
    std::size_t bad = 0;
    for (int t = 0; t < 200; ++t) {
        const std::size_t cols = 1 + t % 7;
        const std::size_t rows = 1 + (t / 7) % cols;
        setmatch::CostMatrix c(rows, cols);
        for (auto& x : c.values) x = v(rng);
        const auto [best, seq] = assignoracle::brute_force(c);
        const auto a = setmatch::hungarian(c);
        bad += a.total(c) != best;
    }
    const double secs = seconds_since(t0);
    return {bad == 0 && secs < 10,
            std::to_string(200 - bad) + "/200 exact optima on matrices up to 7x7, " + fmt(secs, 2) + " s (limit 10)"};
}

// ---- 3. geometry oracles ----

Outcome crit_geometry() {
    std::mt19937_64 rng(3003);
    std::uniform_int_distribution<int> c(0, 256);
    auto random_box = [&] {
        int x1 = c(rng), x2 = c(rng), y1 = c(rng), y2 = c(rng);
        if (x1 > x2) std::swap(x1, x2);
        if (y1 > y2) std::swap(y1, y2);
        if (x1 == x2) x2 = std::min(256, x2 + 1), x1 = x2 - 1;
        if (y1 == y2) y2 = std::min(256, y2 + 1), y1 = y2 - 1;
        return geom::PixelBox{double(x1), double(y1), double(x2), double(y2)};
    };
    const double tol = 1.0 / (256 * 256);
    double worst = 0;
    for (int t = 0; t < 1000; ++t) {
        const auto a = random_box(), b = random_box();
        worst = std::max(worst, std::abs(geom::box_iou(a, b) - raster::iou(a, b, 256)));
        worst = std::max(worst, std::abs(geom::box_giou(a, b) - raster::giou(a, b, 256)));
    }
    std::bernoulli_distribution bit(0.4);
    std::uniform_int_distribution<int> side(1, 40);
    std::size_t rle_ok = 0;
    for (int t = 0; t < 1000; ++t) {
        geom::BitMask m(side(rng), side(rng));
        for (int y = 0; y < m.height(); ++y)
            for (int x = 0; x < m.width(); ++x) m.set(y, x, bit(rng));
        const auto r = geom::rle_encode(m);
        rle_ok += geom::rle_decode(r) == m && geom::rle_from_json(geom::rle_to_json(r)) == r;
    }
    return {worst <= tol && rle_ok == 1000, "max |analytic - raster| = " + fmt(worst, 8) + " (limit " + fmt(tol, 8) +
                                                 "), RLE round trips " + std::to_string(rle_ok) + "/1000"};
}

// ---- 4. AR evaluator oracle ----

Outcome crit_evaluator() {
    using namespace evaloracle;
    std::mt19937_64 rng(4004);
    EvalConfig cfg;
    cfg.ks = {3, 10};
    std::vector<ImageResult> images;
    for (int i = 0; i < 20; ++i) images.push_back(random_image(rng, 5, 5));
    const auto rep = average_recall(images, cfg);
    std::size_t mismatches = 0;
    for (std::size_t K : cfg.ks) {
        std::size_t hits = 0, total = 0;
        for (auto& img : images) {
            for (auto h : oracle_recall(img, K, cfg.thresholds)) hits += h;
            total += img.gt.size();
        }
        mismatches += *rep.get("all", Metric::mask, K, "overall") != double(hits) / (10.0 * double(total));
    }
    std::size_t violations = 0;
    EvalConfig mono;
    mono.ks = {1, 2, 3, 5, 8, 100};
    for (int t = 0; t < 100; ++t) {
        std::vector<ImageResult> set{random_image(rng, 6, 12), random_image(rng, 6, 12)};
        const auto r = average_recall(set, mono);
        for (auto m : {Metric::box, Metric::mask}) {
            double prev = -1;
            for (auto k : mono.ks) {
                const double v = *r.get("all", m, k, "overall");
                violations += v < prev;
                prev = v;
            }
            double prev_t = 2;
            for (double th : mono.thresholds) {
                const double v = threshold_recall(set, m, 100, th);
                violations += v > prev_t;
                prev_t = v;
            }
        }
    }
    return {mismatches == 0 && violations == 0, "oracle mismatches " + std::to_string(mismatches) +
                                                    " (20 images, K in {3,10}), monotonicity violations " +
                                                    std::to_string(violations) + " over 100 prediction sets"};
}

// ---- shared training runs for 5, 6, 8 ----

struct RunEval {
    fs::path ckpt;
    double unknown_subset_box = 0, unknown_subset_mask = 0;
    double known_box = 0, known_mask = 0;
    double seconds = 0;
};

class Toy {
   public:
    explicit Toy(fs::path dir) : dir_(std::move(dir)) {}

    void ensure_data() {
        if (ready_) return;
        if (!fs::exists(dir_ / "data/train/manifest.json")) {
            worldgen::write_dataset(worldgen::Split::train, 512, 7, dir_ / "data/train");
            worldgen::write_dataset(worldgen::Split::val, 256, 7, dir_ / "data/val");
        }
        val_ = worldgen::read_dataset(dir_ / "data/val");
        ready_ = true;
    }

    const worldgen::Dataset& val() {
        ensure_data();
        return val_;
    }

    RunEval get(const std::string& name, const trainer::TrainConfig& cfg) {
        const auto key = name + "_s" + std::to_string(cfg.seed);
        if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        ensure_data();
        const auto t0 = Clock::now();
        std::cerr << "[acceptance] training " << key << " (" << cfg.iterations << " x " << cfg.batch << ")" << std::endl;
        const auto res = trainer::run(cfg, dir_ / "data/train", dir_ / "runs" / key);
        const auto m = trainer::load_checkpoint(res.final_checkpoint);
        evalkit::EvalConfig ec;
        ec.ks = {10};
        const auto rep = evalkit::average_recall(evalkit::evaluate_model(m.student, m.config, val_), ec);
        evalkit::write_report(rep, dir_ / "runs" / key / "eval");
        RunEval r;
        r.ckpt = res.final_checkpoint;
        const auto sb = evalkit::subset_summary(rep, evalkit::Metric::box, 10);
        const auto sm = evalkit::subset_summary(rep, evalkit::Metric::mask, 10);
        r.unknown_subset_box = sb.unknown_mean;
        r.unknown_subset_mask = sm.unknown_mean;
        r.known_box = sb.known.value_or(0.0);
        r.known_mask = sm.known.value_or(0.0);
        r.seconds = seconds_since(t0);
        std::cerr << "[acceptance]   unknown-subset AR@10 box " << pts(r.unknown_subset_box) << " mask "
                  << pts(r.unknown_subset_mask) << ", known box " << pts(r.known_box) << " mask "
                  << pts(r.known_mask) << " (" << fmt(r.seconds, 0) << " s)" << std::endl;
        cache_[key] = r;
        return r;
    }

    static trainer::TrainConfig mode(const std::string& m, std::uint64_t seed) {
        trainer::TrainConfig c;
        trainer::apply_mode(c, m);
        c.seed = seed;
        return c;
    }

    fs::path dir() const { return dir_; }

   private:
    fs::path dir_;
    bool ready_ = false;
    worldgen::Dataset val_;
    std::map<std::string, RunEval> cache_;
};

// ---- 5. toy-experiment direction ----

Outcome crit_toy(Toy& toy) {
    const auto t0 = Clock::now();
    int ok = 0;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto b = toy.get("baseline", Toy::mode("baseline", seed));
        const auto v = toy.get("vclr", Toy::mode("vclr", seed));
        const double gain = v.unknown_subset_box - b.unknown_subset_box;
        const double drop = b.known_box - v.known_box;
        const bool pass = gain >= 0.05 && drop < 0.03;
        ok += pass;
        detail += "seed " + std::to_string(seed) + ": unknown " + pts(b.unknown_subset_box) + "->" +
                  pts(v.unknown_subset_box) + " (gain " + pts(gain) + "), known " + pts(b.known_box) + "->" +
                  pts(v.known_box) + " (drop " + pts(drop) + ") [mask unknown " + pts(b.unknown_subset_mask) + "->" +
                  pts(v.unknown_subset_mask) + ", known " + pts(b.known_mask) + "->" + pts(v.known_mask) + "] " +
                  (pass ? "ok" : "miss") + "; ";
    }
    return {ok >= 2, std::to_string(ok) + "/3 seeds (need 2), box AR@10 points: " + detail + "total " +
                         fmt(seconds_since(t0) / 60, 1) + " min"};
}

// ---- 6. ablation ordering ----

Outcome crit_ablation(Toy& toy) {
    auto base = Toy::mode("vclr", 1);
    const auto rows = trainer::ablation_rows(base);
    // L_gt | +L_obj | +views | +L_sim+filtering
    const std::vector<std::pair<std::string, trainer::TrainConfig>> chain{
        {"baseline", rows[0].config}, {"obj", rows[1].config}, {"obj_views", rows[2].config}, {"vclr", rows[4].config}};
    if (trainer::to_json(rows[0].config) != trainer::to_json(Toy::mode("baseline", 1)) ||
        trainer::to_json(rows[4].config) != trainer::to_json(Toy::mode("vclr", 1)))
        return {false, "ablation lattice endpoints differ from the baseline/vclr modes"};
    std::vector<double> ar;
    for (auto& [name, cfg] : chain) ar.push_back(toy.get(name, cfg).unknown_subset_box);
    std::vector<double> gaps{ar[1] - ar[0], ar[2] - ar[1], ar[3] - ar[2]};
    bool ordered = true;
    for (double g : gaps) ordered = ordered && g >= -0.01;
    const bool first_largest = gaps[0] >= gaps[1] && gaps[0] >= gaps[2];
    return {ordered && first_largest,
            "unknown-subset box AR@10: L_gt " + pts(ar[0]) + ", +L_obj " + pts(ar[1]) + ", +views " + pts(ar[2]) +
                ", +L_sim+filter " + pts(ar[3]) + "; gaps " + pts(gaps[0]) + ", " + pts(gaps[1]) + ", " +
                pts(gaps[2]) + (ordered ? " ordered (1-pt ties allowed)" : " NOT ordered") +
                (first_largest ? ", first gap largest" : ", first gap NOT largest")};
}

// ---- 7. EMA / stop-gradient ----

Outcome crit_ema(Toy& toy) {
    toy.ensure_data();
    const auto ds = worldgen::read_dataset(toy.dir() / "data/train");
    auto cfg = Toy::mode("vclr", 11);
    auto st = trainer::init_state(cfg);
    std::size_t checked = 0, mismatched = 0, grads = 0;
    for (int step = 0; step < 10; ++step) {
        const auto old = st.teacher.shadow.clone();
        const auto batch = trainer::next_batch(ds, st, cfg.batch);
        trainer::train_step(batch, st, cfg);
        const double m = cfg.ema;
        for (auto& e : st.teacher.shadow.entries()) {
            const auto o = old.get(e.name).data();
            const auto l = st.student.get(e.name).data();
            const auto s = e.tensor.data();
            for (std::size_t i = 0; i < s.size(); ++i) {
                const double want = o[i] == l[i] ? o[i] : m * o[i] + (1.0 - m) * l[i];
                mismatched += s[i] != want;
                ++checked;
            }
            if (e.tensor.has_grad())
                for (double g : e.tensor.grad()) grads += g != 0.0;
        }
    }
    return {mismatched == 0 && grads == 0 && checked > 0,
            std::to_string(checked) + " teacher values over 10 vclr steps, " + std::to_string(mismatched) +
                " differ from the EMA recurrence bitwise, " + std::to_string(grads) + " nonzero teacher grads"};
}

// ---- 8. perturbation robustness ----

Outcome crit_perturb(Toy& toy) {
    const auto& val = toy.val();
    robustness::PerturbSpec spec;
    spec.seed = 8;
    double secs = 0;
    int ok = 0;
    std::string detail;
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto b = toy.get("baseline", Toy::mode("baseline", seed));
        const auto v = toy.get("vclr", Toy::mode("vclr", seed));
        const auto t0 = Clock::now();
        auto curve = [&](const fs::path& ckpt) {
            const auto m = trainer::load_checkpoint(ckpt);
            const auto rows = robustness::perturb_eval(m.student, m.config, val, spec);
            std::ofstream(ckpt.parent_path() / "perturb.csv") << robustness::perturb_csv(rows);
            std::vector<double> means;
            for (auto& s : robustness::summarize(rows)) means.push_back(s.box_mean);
            return means;
        };
        const auto cb = curve(b.ckpt), cv = curve(v.ckpt);
        secs += seconds_since(t0);
        std::size_t pick = 0;
        for (std::size_t i = 1; i < spec.stds.size(); ++i)
            if (cb[0] > 0 && cv[0] > 0 && cb[i] >= 0.25 * cb[0] && cv[i] >= 0.25 * cv[0]) pick = i;
        const double rb = cb[0] > 0 ? cb[pick] / cb[0] : 0, rv = cv[0] > 0 ? cv[pick] / cv[0] : 0;
        const bool pass = pick > 0 && rv >= rb;
        ok += pass;
        detail += "seed " + std::to_string(seed) + ": std " + fmt(spec.stds[pick], 3) + " retained vclr " + fmt(rv, 3) +
                  " vs baseline " + fmt(rb, 3) + (pass ? " ok" : " miss") + "; ";
    }
    return {ok >= 2 && secs < 300, std::to_string(ok) + "/3 seeds (need 2), unknown box AR@10, " + detail +
                                       fmt(secs, 0) + " s perturbation sweeps (limit 300)"};
}

// ---- 9. determinism through the CLI ----

Outcome crit_determinism(const fs::path& work) {
    const std::string cli = VCLR_CLI;
    std::string detail;
    bool all_same = true;
    std::vector<fs::path> roots{work / "det_a", work / "det_b"};
    for (auto& r : roots) {
        fs::remove_all(r);
        const std::string q = "\"" + r.string() + "\"";
        const std::string cmds[] = {
            cli + " gen --seed 7 --train 64 --val 32 --out " + q + "/data",
            cli + " train --seed 3 --mode vclr --iterations 40 --data " + q + "/data --out " + q + "/run",
            cli + " eval --ckpt " + q + "/run/ckpt_100.bin --data " + q + "/data --out " + q + "/eval",
        };
        for (auto& c : cmds) {
            const int rc = std::system((c + " > /dev/null").c_str());
            if (rc != 0) return {false, "command failed (" + std::to_string(rc) + "): " + c};
        }
    }
    std::size_t files = 0;
    for (auto& p : fs::recursive_directory_iterator(roots[0])) {
        if (!p.is_regular_file()) continue;
        const auto rel = fs::relative(p.path(), roots[0]);
        const auto ext = rel.extension().string();
        if (ext != ".csv" && ext != ".bin") continue;
        ++files;
        if (slurp(roots[0] / rel) != slurp(roots[1] / rel)) {
            all_same = false;
            detail += rel.string() + " differs; ";
        }
    }
    return {all_same && files >= 6, std::to_string(files) + " CSV/binary outputs compared across two gen+train+eval runs, " +
                                        (all_same ? "all byte-identical" : detail)};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = fs::temp_directory_path() / "vclr_acceptance";
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--only" && i + 1 < argc) {
            std::stringstream ss(argv[++i]);
            std::string item;
            while (std::getline(ss, item, ',')) only.push_back(std::stoi(item));
        } else {
            work = a;
        }
    }
    fs::create_directories(work);
    Toy toy(work / "toy");

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient correctness", crit_gradients},
        {"Hungarian optimality", crit_hungarian},
        {"geometry oracles", crit_geometry},
        {"AR evaluator oracle", crit_evaluator},
        {"toy-experiment direction", [&] { return crit_toy(toy); }},
        {"ablation ordering", [&] { return crit_ablation(toy); }},
        {"EMA stop-gradient contract", [&] { return crit_ema(toy); }},
        {"perturbation robustness direction", [&] { return crit_perturb(toy); }},
        {"determinism", [&] { return crit_determinism(work); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = int(i) + 1;
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << "CRITERION " << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
                  << o.detail << std::endl;
    }
    return failed == 0 ? 0 : 1;
}
