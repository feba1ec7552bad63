#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cornerdet/training.hpp"

using namespace cornerdet;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config_path;
    std::optional<std::string> profile;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config_path, "Run config JSON");
    cmd->add_option("--profile", c.profile, "Built-in defaults: paper or toy")->check(CLI::IsMember({"paper", "toy"}));
    cmd->add_option("--seed", c.seed, "Random seed");
    cmd->add_option("--out", c.out, "Output directory");
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error("config '" + path.string() + "': " + e.what());
    }
}

// defaults (profile) < config file < flags
RunConfig resolve(const Common& c) {
    nlohmann::json file = nlohmann::json::object();
    if (!c.config_path.empty()) file = read_json(c.config_path);
    const std::string profile = c.profile.value_or(file.value("profile", std::string("paper")));
    RunConfig cfg = RunConfig::from_json(file, profile_config(profile));
    cfg.profile = profile;
    if (c.seed) cfg.seed = *c.seed;
    if (c.out) cfg.out_dir = *c.out;
    return cfg;
}

std::string fmt(const std::optional<double>& v) {
    if (!v) return "-";
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * *v;
    return s.str();
}

void print_metrics(const EvalResult& r) {
    // mAP, the three scale buckets, then per-class AP with "none" first.
    std::vector<std::size_t> order;
    for (std::size_t c = 0; c < r.class_names.size(); ++c)
        if (r.class_names[c] == "none") order.push_back(c);
    for (std::size_t c = 0; c < r.class_names.size(); ++c)
        if (r.class_names[c] != "none") order.push_back(c);
    std::cout << std::left << std::setw(8) << "mAP" << std::setw(8) << "small" << std::setw(8) << "medium"
              << std::setw(8) << "large";
    for (std::size_t c : order) std::cout << std::setw(8) << r.class_names[c];
    std::cout << '\n'
              << std::setw(8) << fmt(r.map) << std::setw(8) << fmt(r.ap_small) << std::setw(8) << fmt(r.ap_medium)
              << std::setw(8) << fmt(r.ap_large);
    for (std::size_t c : order) std::cout << std::setw(8) << fmt(r.class_ap[c]);
    std::cout << std::right << '\n';
}

Shape parse_shape(const std::string& text) {
    std::vector<std::size_t> dims;
    std::stringstream s(text);
    std::string part;
    while (std::getline(s, part, 'x')) {
        try {
            dims.push_back(std::stoul(part));
        } catch (const std::exception&) {
            throw Error("bad shape '" + text + "' (expected NxCxHxW)");
        }
    }
    if (dims.size() != 4) throw Error("bad shape '" + text + "' (expected NxCxHxW)");
    return {dims[0], dims[1], dims[2], dims[3]};
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error("cannot write '" + path.string() + "'");
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Anchor-free corner-keypoint hardhat detector"};
    app.require_subcommand(1);

    Common common;
    std::optional<fs::path> error_dir;

    auto* train = app.add_subcommand("train", "Train a model on a dataset");
    add_common(train, common);
    std::optional<std::string> data_root;
    std::optional<std::size_t> epochs;
    std::optional<std::string> pooling;
    std::optional<bool> bcca;
    std::string resume;
    train->add_option("--data", data_root, "Dataset root");
    train->add_option("--epochs", epochs, "Number of epochs");
    train->add_option("--pooling", pooling, "CP, CCP or VHCP");
    train->add_option("--bcca", bcca, "Train with the center-attention branch (true/false)");
    train->add_option("--resume", resume, "Checkpoint to resume from");

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
    add_common(eval, common);
    std::string checkpoint;
    std::optional<std::string> split;
    eval->add_option("--data", data_root, "Dataset root");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--split", split, "Split to evaluate");

    auto* detect = app.add_subcommand("detect", "Run detection on image files");
    add_common(detect, common);
    std::vector<std::string> images;
    bool overlays = false;
    std::optional<double> threshold;
    detect->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    detect->add_option("images", images, "Image files (png, ppm, jpg)")->required();
    detect->add_flag("--overlays", overlays, "Write <stem>_det.png overlays");
    detect->add_option("--threshold", threshold, "Score threshold");

    auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
    std::string synth_config;
    std::uint64_t synth_seed = 0;
    std::string synth_out;
    std::size_t count = 0, n_train = 0, n_val = 0, n_test = 0, size = 96;
    bool balanced = false;
    std::string background = "gradient";
    synth->add_option("--config", synth_config, "Synth config JSON");
    synth->add_option("--seed", synth_seed, "Random seed");
    synth->add_option("--out", synth_out, "Dataset root")->required();
    synth->add_option("--count", count, "Total images, split 50/25/25");
    synth->add_option("--train", n_train, "Train images (explicit split)");
    synth->add_option("--val", n_val, "Validation images (explicit split)");
    synth->add_option("--test", n_test, "Test images (explicit split)");
    synth->add_option("--size", size, "Square image size");
    synth->add_flag("--balanced", balanced, "Draw box areas evenly across the scale buckets");
    synth->add_option("--background", background, "noise, gradient or texture");

    auto* bench = app.add_subcommand("bench", "Time the pooling cores");
    std::vector<std::string> shapes = {"1x64x128x128"};
    std::vector<std::string> variants = {"CP", "VHCP", "CCP", "center"};
    std::size_t reps = 30, warmup = 3;
    std::string bench_out;
    bench->add_option("--shape", shapes, "NxCxHxW, repeatable");
    bench->add_option("--variants", variants, "CP, CCP, VHCP, center");
    bench->add_option("--reps", reps, "Timed repetitions")->check(CLI::PositiveNumber);
    bench->add_option("--warmup", warmup, "Discarded warmup runs");
    bench->add_option("--out", bench_out, "CSV path (stdout when omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << nlohmann::json{{"error", e.what()}, {"command", "parse"}}.dump() << '\n';
        return 2;
    }

    try {
        if (train->parsed() || eval->parsed() || detect->parsed()) {
            RunConfig cfg = resolve(common);
            if (data_root) cfg.data_root = *data_root;
            if (epochs) cfg.schedule.epochs = *epochs;
            if (pooling) cfg.model.pooling_variant = parse_pooling_variant(*pooling);
            if (bcca) cfg.model.with_bcca = *bcca;
            if (split) cfg.eval_split = *split;
            if (threshold) cfg.decode.score_threshold = *threshold;
            cfg.model.validate();
            cfg.decode.validate();
            error_dir = cfg.out_dir;

            if (train->parsed()) {
                const auto summary =
                    run_train(cfg, resume.empty() ? std::nullopt : std::optional<fs::path>(resume));
                std::cout << "checkpoint " << summary.checkpoint.string() << '\n';
                if (summary.deploy_checkpoint) std::cout << "deploy " << summary.deploy_checkpoint->string() << '\n';
            } else if (eval->parsed()) {
                print_metrics(run_eval(cfg, checkpoint));
                std::cout << "metrics " << (cfg.out_dir / "metrics.json").string() << '\n';
            } else {
                std::vector<fs::path> paths(images.begin(), images.end());
                write_file(cfg.out_dir / "config.json", cfg.to_json().dump(2) + "\n");
                const auto report = run_detect(cfg, checkpoint, paths, overlays);
                std::cout << report.images << " images, " << report.failures << " failed; "
                          << (cfg.out_dir / "detections.json").string() << '\n';
            }
        } else if (synth->parsed()) {
            error_dir = synth_out;
            SynthConfig sc;
            if (!synth_config.empty()) {
                const auto j = read_json(synth_config);
                sc.height = j.value("height", sc.height);
                sc.width = j.value("width", sc.width);
                sc.classes = j.value("classes", sc.classes);
                sc.min_objects = j.value("min_objects", sc.min_objects);
                sc.max_objects = j.value("max_objects", sc.max_objects);
                sc.min_box = j.value("min_box", sc.min_box);
                sc.max_box = j.value("max_box", sc.max_box);
                sc.bucket_balanced = j.value("bucket_balanced", sc.bucket_balanced);
                sc.background = parse_background(j.value("background", std::string("gradient")));
                sc.seed = j.value("seed", sc.seed);
            }
            if (synth->count("--size")) sc.height = sc.width = size;
            if (synth->count("--seed")) sc.seed = synth_seed;
            if (synth->count("--balanced")) sc.bucket_balanced = balanced;
            if (synth->count("--background")) sc.background = parse_background(background);
            std::optional<SynthCounts> counts;
            if (n_train + n_val + n_test > 0) counts = SynthCounts{n_train, n_val, n_test};
            const auto hist = run_synth(sc, synth_out, count, counts);
            nlohmann::json echo = {{"height", sc.height},           {"width", sc.width},
                                   {"classes", sc.classes},         {"min_objects", sc.min_objects},
                                   {"max_objects", sc.max_objects}, {"min_box", sc.min_box},
                                   {"max_box", sc.max_box},         {"bucket_balanced", sc.bucket_balanced},
                                   {"background", background},      {"seed", sc.seed}};
            write_file(fs::path(synth_out) / "synth_config.json", echo.dump(2) + "\n");
            std::cout << "boxes per bucket: small " << hist[0] << ", medium " << hist[1] << ", large " << hist[2]
                      << '\n';
        } else if (bench->parsed()) {
            if (!bench_out.empty()) error_dir = fs::path(bench_out).parent_path();
            std::vector<Shape> parsed;
            for (const auto& s : shapes) parsed.push_back(parse_shape(s));
            const std::string csv = bench_csv(run_bench(parsed, variants, reps, warmup));
            if (bench_out.empty()) std::cout << csv;
            else write_file(bench_out, csv);
        }
    } catch (const std::exception& e) {
        const nlohmann::json err = {{"error", e.what()}, {"command", app.get_subcommands().front()->get_name()}};
        std::cerr << err.dump() << '\n';
        if (error_dir && !error_dir->empty()) {
            std::error_code ec;
            fs::create_directories(*error_dir, ec);
            std::ofstream(*error_dir / "error.json") << err.dump(2) << '\n';
        }
        return 1;
    }
    return 0;
}
