#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vclr/error.hpp"
#include "vclr/evalkit.hpp"
#include "vclr/robustness.hpp"
#include "vclr/trainer.hpp"
#include "vclr/worldgen.hpp"

using namespace vclr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- experiment config: {seed, dataset, train, eval, robustness} ----

struct Experiment {
    json doc = json::object();
    std::optional<std::uint64_t> seed;

    json section(const char* name) const { return doc.contains(name) ? doc.at(name) : json::object(); }
};

Experiment load_experiment(const std::string& path) {
    Experiment e;
    if (path.empty()) return e;
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config " + path);
    try {
        e.doc = json::parse(f);
    } catch (const json::exception& ex) {
        throw UsageError("config " + path + ": " + ex.what());
    }
    if (!e.doc.is_object()) throw UsageError("config " + path + ": expected an object");
    for (auto& [k, v] : e.doc.items()) {
        if (k == "seed") e.seed = v.get<std::uint64_t>();
        else if (k != "dataset" && k != "train" && k != "eval" && k != "robustness")
            throw UsageError("config " + path + ": unknown key '" + k + "'");
        else if (!v.is_object()) throw UsageError("config " + path + ": section '" + k + "' must be an object");
    }
    return e;
}

std::uint64_t require_seed(const std::optional<std::uint64_t>& flag, const Experiment& e) {
    if (flag) return *flag;
    if (e.seed) return *e.seed;
    throw UsageError("--seed is required (or \"seed\" in the config)");
}

struct DatasetSection {
    std::size_t train = 512, val = 256;
    worldgen::GenConfig gen;
};

DatasetSection dataset_section(const json& j) {
    DatasetSection d;
    try {
        for (auto& [k, v] : j.items()) {
            if (k == "train") d.train = v.get<std::size_t>();
            else if (k == "val") d.val = v.get<std::size_t>();
            else if (k == "noise") d.gen.noise = worldgen::proposal_noise_from_json(v);
            else if (k == "scene") {
                for (auto& [sk, sv] : v.items()) {
                    auto& s = d.gen.scene;
                    if (sk == "min_objects") s.min_objects = sv.get<int>();
                    else if (sk == "max_objects") s.max_objects = sv.get<int>();
                    else if (sk == "min_size") s.min_size = sv.get<int>();
                    else if (sk == "max_size") s.max_size = sv.get<int>();
                    else if (sk == "min_center_distance") s.min_center_distance = sv.get<double>();
                    else if (sk == "min_visible_fraction") s.min_visible_fraction = sv.get<double>();
                    else if (sk == "max_tries") s.max_tries = sv.get<int>();
                    else throw UsageError("unknown key dataset.scene." + sk);
                }
            } else throw UsageError("unknown key dataset." + k);
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("dataset config: ") + e.what());
    }
    return d;
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw DataError("cannot write " + p.string());
    f << s;
}

// A gen root holds train/ and val/; a split dir holds manifest.json.
fs::path split_dir(const fs::path& dir, const char* split) {
    if (fs::exists(dir / "manifest.json")) return dir;
    if (fs::exists(dir / split / "manifest.json")) return dir / split;
    throw DataError(dir.string() + ": no dataset manifest (expected manifest.json or " + split + "/manifest.json)");
}

std::vector<worldgen::View> parse_views(const std::string& text) {
    std::vector<worldgen::View> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(worldgen::view_from(item));
    return out;
}

std::vector<double> parse_doubles(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw UsageError("bad number '" + item + "'");
        }
    }
    return out;
}

const nd::ParamStore& branch_of(const trainer::LoadedModel& m, const std::string& branch) {
    if (branch == "student") return m.student;
    if (branch == "teacher") return m.teacher;
    throw UsageError("--branch must be student or teacher");
}

void check_compatible(const trainer::LoadedModel& m, const worldgen::Dataset& ds, const fs::path& ckpt) {
    const auto& man = ds.manifest;
    if (man.at("canvas").get<int>() != m.config.canvas)
        throw DataError(ckpt.string() + ": model canvas does not match the dataset canvas");
    if (m.meta.contains("dataset")) {
        const auto& d = m.meta.at("dataset");
        if (d.at("generator_version") != man.at("generator_version"))
            throw DataError(ckpt.string() + ": checkpoint was trained on generator version " +
                            d.at("generator_version").dump() + ", dataset is " + man.at("generator_version").dump());
    }
}

// ---- commands ----

void cmd_gen(const Experiment& e, std::uint64_t seed, const fs::path& out, std::optional<std::size_t> n_train,
             std::optional<std::size_t> n_val) {
    auto d = dataset_section(e.section("dataset"));
    if (n_train) d.train = *n_train;
    if (n_val) d.val = *n_val;
    fs::create_directories(out);
    worldgen::write_dataset(worldgen::Split::train, d.train, seed, out / "train", d.gen);
    worldgen::write_dataset(worldgen::Split::val, d.val, seed, out / "val", d.gen);
    json echo = e.doc;
    echo["seed"] = seed;
    echo["dataset"] = {{"train", d.train}, {"val", d.val}, {"generator", worldgen::to_json(d.gen)}};
    write_text(out / "experiment.json", echo.dump(1) + "\n");

    for (const char* split : {"train", "val"}) {
        const auto ds = worldgen::read_dataset(out / split);
        std::size_t known = 0, unknown = 0, hidden = 0, props = 0;
        for (auto& r : ds.records) {
            for (auto& g : r.gt) (g.known ? known : unknown)++;
            hidden += r.hidden_objects;
            props += r.proposals.size();
        }
        std::cout << split << ": " << ds.records.size() << " scenes, gt known " << known << ", gt unknown " << unknown
                  << ", withheld " << hidden << ", proposals " << props << "\n";
    }
}

trainer::TrainConfig train_config(const Experiment& e, std::uint64_t seed, const CLI::App& sub,
                                  const std::string& mode, bool no_sim, bool no_obj, bool no_filter,
                                  bool no_crop_paste, const std::string& views, std::size_t iterations,
                                  std::size_t batch) {
    auto cfg = trainer::train_config_from_json(e.section("train"));
    if (!mode.empty()) trainer::apply_mode(cfg, mode);
    if (no_sim) cfg.sim = false;
    if (no_obj) cfg.obj = false;
    if (no_filter) cfg.filter = false;
    if (no_crop_paste) cfg.crop_paste = false;
    if (sub.count("--views")) cfg.views = parse_views(views);
    if (sub.count("--iterations")) cfg.iterations = iterations;
    if (sub.count("--batch")) cfg.batch = batch;
    cfg.seed = seed;
    cfg.validate();
    if (cfg.sim && cfg.weights.match > 0 && cfg.views.size() == 1)
        std::cerr << "warning: similarity loss with a natural-only view set compares identical views\n";
    return cfg;
}

evalkit::EvalReport evaluate(const fs::path& ckpt, const fs::path& data, const std::string& branch,
                             const evalkit::EvalConfig& ec) {
    const auto ds = worldgen::read_dataset(split_dir(data, "val"));
    const auto m = trainer::load_checkpoint(ckpt);
    check_compatible(m, ds, ckpt);
    return evalkit::average_recall(evalkit::evaluate_model(branch_of(m, branch), m.config, ds), ec);
}

void cmd_eval(const Experiment& e, const fs::path& ckpt, const fs::path& data, const fs::path& out,
              const std::string& branch, bool oracle_gt, bool oracle_proposals) {
    const auto ec = evalkit::eval_config_from_json(e.section("eval"));
    evalkit::EvalReport rep;
    if (oracle_gt || oracle_proposals) {
        const auto ds = worldgen::read_dataset(split_dir(data, "val"));
        if (oracle_gt) rep = evalkit::average_recall(evalkit::oracle_results(ds), ec);
        else {
            std::vector<evalkit::ImageResult> res;
            for (auto& r : ds.records) res.push_back({evalkit::gt_of(r), evalkit::proposals_as_predictions(r)});
            rep = evalkit::average_recall(res, ec);
        }
    } else {
        if (ckpt.empty()) throw UsageError("eval needs --ckpt (or --oracle-gt / --oracle-proposals)");
        rep = evaluate(ckpt, data, branch, ec);
    }
    evalkit::write_report(rep, out);
    write_text(out / "eval_config.json", evalkit::to_json(ec).dump(1) + "\n");
    std::cout << rep.summary();
}

void cmd_robust(const Experiment& e, std::uint64_t seed, const fs::path& ckpt, const fs::path& data,
                const fs::path& out, const std::string& branch, bool perturb, const std::string& stds,
                std::optional<std::size_t> trials, std::vector<std::string> distortions) {
    const auto& sec = e.section("robustness");
    json perturb_json = json::object();
    for (auto& [k, v] : sec.items()) {
        if (k == "perturb") perturb_json = v;
        else if (k == "distortions") {
            if (distortions.empty()) distortions = v.get<std::vector<std::string>>();
        } else throw UsageError("unknown key robustness." + k);
    }
    auto spec = robustness::perturb_spec_from_json(perturb_json);
    spec.seed = seed;
    if (!stds.empty()) spec.stds = parse_doubles(stds);
    if (trials) spec.trials = *trials;
    spec.validate();
    const bool both = !perturb && distortions.empty();
    if (both) distortions = {"contrast:0.4", "gaussian_noise:0.1", "occlusion:4"};
    std::vector<robustness::DistortionSpec> specs;
    for (auto& d : distortions) specs.push_back(robustness::parse_distortion(d));

    const auto ds = worldgen::read_dataset(split_dir(data, "val"));
    const auto m = trainer::load_checkpoint(ckpt);
    check_compatible(m, ds, ckpt);
    const auto& params = branch_of(m, branch);
    fs::create_directories(out);
    write_text(out / "robustness_config.json",
               json{{"perturb", robustness::to_json(spec)}, {"distortions", distortions}, {"branch", branch}}.dump(1) +
                   "\n");

    if (perturb || both) {
        const auto rows = robustness::perturb_eval(params, m.config, ds, spec);
        write_text(out / "perturb.csv", robustness::perturb_csv(rows));
        std::cout << "std      AR@10 box (mean, sd)    AR@10 mask (mean, sd)\n";
        for (auto& s : robustness::summarize(rows))
            std::cout << std::left << std::setw(8) << s.std << ' ' << std::fixed << std::setprecision(4) << s.box_mean
                      << ' ' << s.box_sd << "          " << s.mask_mean << ' ' << s.mask_sd << '\n'
                      << std::defaultfloat;
    }
    if (!specs.empty()) {
        std::vector<robustness::ScoreHistogram> hists{
            robustness::score_distribution(params, m.config, ds, std::nullopt, seed)};
        for (auto& s : specs) hists.push_back(robustness::score_distribution(params, m.config, ds, s, seed));
        write_text(out / "scores.csv", robustness::scores_csv(hists));
        write_text(out / "scores_summary.csv", robustness::scores_summary_csv(hists));
        for (auto& h : hists)
            std::cout << h.condition << ": mean score " << h.mean << ", variance " << h.variance << '\n';
    }
}

void cmd_ablate(const Experiment& e, std::uint64_t seed, const fs::path& train_dir, const fs::path& val_dir,
                const fs::path& out, std::optional<std::size_t> iterations, std::optional<std::size_t> batch) {
    auto base = trainer::train_config_from_json(e.section("train"));
    base.seed = seed;
    if (iterations) base.iterations = *iterations;
    if (batch) base.batch = *batch;
    const auto ec = evalkit::eval_config_from_json(e.section("eval"));
    const auto val = worldgen::read_dataset(split_dir(val_dir, "val"));
    fs::create_directories(out);

    std::ostringstream csv;
    csv << "row,l_obj,views,crop_paste,l_sim,filter,unknown_subset_mean_ar10_box,unknown_subset_mean_ar10_mask,"
           "known_ar10_box,known_ar10_mask,all_ar10_box,all_ar10_mask\n"
        << std::setprecision(17);
    for (const auto& row : trainer::ablation_rows(base)) {
        std::cout << "== " << row.name << std::endl;
        const auto run_dir = out / row.name;
        const auto res = trainer::run(row.config, split_dir(train_dir, "train"), run_dir);
        const auto m = trainer::load_checkpoint(res.final_checkpoint);
        const auto rep = evalkit::average_recall(evalkit::evaluate_model(m.student, m.config, val), ec);
        evalkit::write_report(rep, run_dir / "eval");
        const auto sb = evalkit::subset_summary(rep, evalkit::Metric::box, 10);
        const auto sm = evalkit::subset_summary(rep, evalkit::Metric::mask, 10);
        auto get = [&](const char* split, evalkit::Metric metric) {
            return rep.get(split, metric, 10, "overall").value_or(0.0);
        };
        const auto& c = row.config;
        csv << row.name << ',' << (c.obj && c.weights.match > 0) << ',' << c.views.size() << ',' << c.crop_paste << ','
            << (c.sim && c.weights.match > 0) << ',' << c.filter << ',' << sb.unknown_mean << ',' << sm.unknown_mean
            << ',' << get("known", evalkit::Metric::box) << ',' << get("known", evalkit::Metric::mask) << ','
            << get("all", evalkit::Metric::box) << ',' << get("all", evalkit::Metric::mask) << '\n';
        std::cout << "unknown subset mean AR@10 box " << sb.unknown_mean << ", mask " << sm.unknown_mean << std::endl;
    }
    write_text(out / "ablation.csv", csv.str());
}

int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Usage: return 2;
        case ErrorKind::Numeric: return 4;
        default: return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vclr: desk-scale view-consistent open-world instance segmentation"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    app.add_option("--config", config_path, "experiment JSON (sections dataset/train/eval/robustness)");

    auto common = [&](CLI::App* s, bool needs_out = true) {
        s->add_option("--config", config_path, "experiment JSON");
        s->add_option("--seed", seed, "master seed");
        auto* o = s->add_option("--out", out, "output directory");
        if (needs_out) o->required();
    };

    auto* gen = app.add_subcommand("gen", "generate train and val scene datasets");
    common(gen);
    std::optional<std::size_t> n_train, n_val;
    gen->add_option("--train", n_train, "train scene count (default 512)");
    gen->add_option("--val", n_val, "val scene count (default 256)");

    auto* train = app.add_subcommand("train", "train a detector on a train split");
    common(train);
    std::string data, mode, views, branch = "student", ckpt, stds, val_dir;
    bool no_sim = false, no_obj = false, no_filter = false, no_crop_paste = false;
    std::size_t iterations = 0, batch = 0;
    train->add_option("--data", data, "dataset root or train split directory")->required();
    train->add_option("--mode", mode, "baseline | vclr")->check(CLI::IsMember({"baseline", "vclr"}));
    train->add_flag("--no-sim", no_sim, "drop the similarity loss");
    train->add_flag("--no-obj", no_obj, "drop the proposal loss");
    train->add_flag("--no-filter", no_filter, "keep every triplet for the similarity loss");
    train->add_flag("--no-crop-paste", no_crop_paste, "disable crop-paste augmentation");
    train->add_option("--views", views, "comma list of natural,structure,stylized");
    train->add_option("--iterations", iterations, "training steps");
    train->add_option("--batch", batch, "images per step");

    auto* eval = app.add_subcommand("eval", "class-agnostic AR evaluation on a val split");
    common(eval);
    bool oracle_gt = false, oracle_proposals = false;
    eval->add_option("--ckpt", ckpt, "checkpoint file");
    eval->add_option("--data", data, "dataset root or val split directory")->required();
    eval->add_option("--branch", branch, "student | teacher");
    eval->add_flag("--oracle-gt", oracle_gt, "evaluate the GT echoed as predictions");
    eval->add_flag("--oracle-proposals", oracle_proposals, "evaluate the stored proposals");

    auto* robust = app.add_subcommand("robust", "parameter perturbation and input distortion studies");
    common(robust);
    bool perturb = false;
    std::optional<std::size_t> trials;
    std::vector<std::string> distortions;
    robust->add_option("--ckpt", ckpt, "checkpoint file")->required();
    robust->add_option("--data", data, "dataset root or val split directory")->required();
    robust->add_option("--branch", branch, "student | teacher");
    robust->add_flag("--perturb", perturb, "run the parameter perturbation sweep");
    robust->add_option("--stds", stds, "comma list of noise stds");
    robust->add_option("--trials", trials, "trials per std");
    robust->add_option("--distort", distortions, "kind:severity (contrast, gaussian_noise, occlusion)");

    auto* ablate = app.add_subcommand("ablate", "train and evaluate the component lattice");
    common(ablate);
    std::optional<std::size_t> ab_iterations, ab_batch;
    ablate->add_option("--data", data, "dataset root (train/ and val/)")->required();
    ablate->add_option("--val", val_dir, "val split directory (default: <data>/val)");
    ablate->add_option("--iterations", ab_iterations, "training steps per row");
    ablate->add_option("--batch", ab_batch, "images per step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const auto exp = load_experiment(config_path);
        if (*gen) cmd_gen(exp, require_seed(seed, exp), out, n_train, n_val);
        else if (*train) {
            const auto cfg = train_config(exp, require_seed(seed, exp), *train, mode, no_sim, no_obj, no_filter,
                                          no_crop_paste, views, iterations, batch);
            const auto res = trainer::run(cfg, split_dir(data, "train"), out);
            const auto& last = res.history.back();
            std::cout << "trained " << res.history.size() << " steps, final total loss " << last.total
                      << ", checkpoint " << res.final_checkpoint.string() << "\n";
        } else if (*eval) cmd_eval(exp, ckpt, data, out, branch, oracle_gt, oracle_proposals);
        else if (*robust)
            cmd_robust(exp, require_seed(seed, exp), ckpt, data, out, branch, perturb, stds, trials, distortions);
        else if (*ablate)
            cmd_ablate(exp, require_seed(seed, exp), data, val_dir.empty() ? fs::path(data) : fs::path(val_dir), out,
                       ab_iterations, ab_batch);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed input: " << e.what() << "\n";
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
