#include "cornerdet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "cornerdet/checkpoint.hpp"
#include "cornerdet/image.hpp"
#include "cornerdet/optim.hpp"
#include "cornerdet/targets.hpp"

namespace cornerdet {

namespace {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                         const std::string& where) {
    if (!j.is_object()) throw Error(where + " must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw Error("unknown key '" + key + "' in " + where);
        }
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out || !(out << text)) throw Error("cannot write '" + path.string() + "'");
}

void ensure_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) {
        throw Error("cannot create output directory '" + dir.string() + "'" + (ec ? ": " + ec.message() : ""));
    }
}

std::vector<Sample> load_split(const DatasetLayout& data, const std::string& split, const ModelConfig& model) {
    std::vector<Sample> out;
    for (const std::string& id : data.split(split)) out.push_back(data.load(id, model.input_height, model.input_width));
    return out;
}

void check_vocabulary(const std::vector<std::string>& classes, const ModelConfig& model) {
    if (classes.size() != model.num_classes) {
        throw Error("class vocabulary has " + std::to_string(classes.size()) + " names but the model predicts " +
                    std::to_string(model.num_classes) + " classes");
    }
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
    return {{"profile", profile},
            {"seed", seed},
            {"model", model.to_json()},
            {"decode",
             {{"top_k", decode.top_k},
              {"score_threshold", decode.score_threshold},
              {"mu", decode.mu},
              {"nms_iou", decode.nms_iou}}},
            {"schedule",
             {{"lr", schedule.lr},
              {"batch_size", schedule.batch_size},
              {"epochs", schedule.epochs},
              {"lr_decay_epoch", schedule.lr_decay_epoch},
              {"lr_decay_factor", schedule.lr_decay_factor},
              {"flip", schedule.flip},
              {"checkpoint_every", schedule.checkpoint_every}}},
            {"data", {{"root", data_root.string()}, {"train_split", train_split}, {"eval_split", eval_split}}},
            {"out_dir", out_dir.string()},
            {"write_deploy", write_deploy}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j, RunConfig c) {
    reject_unknown_keys(j, {"profile", "seed", "model", "decode", "schedule", "data", "out_dir", "write_deploy"},
                        "run config");
    if (j.contains("decode")) reject_unknown_keys(j.at("decode"), {"top_k", "score_threshold", "mu", "nms_iou"}, "decode");
    if (j.contains("schedule")) {
        reject_unknown_keys(j.at("schedule"),
                            {"lr", "batch_size", "epochs", "lr_decay_epoch", "lr_decay_factor", "flip",
                             "checkpoint_every"},
                            "schedule");
    }
    if (j.contains("data")) reject_unknown_keys(j.at("data"), {"root", "train_split", "eval_split"}, "data");
    try {
        c.profile = j.value("profile", c.profile);
        c.seed = j.value("seed", c.seed);
        if (j.contains("model")) {
            nlohmann::json merged = c.model.to_json();
            merged.update(j.at("model"));
            c.model = ModelConfig::from_json(merged);
        }
        if (j.contains("decode")) {
            const auto& d = j.at("decode");
            c.decode.top_k = d.value("top_k", c.decode.top_k);
            c.decode.score_threshold = d.value("score_threshold", c.decode.score_threshold);
            c.decode.mu = d.value("mu", c.decode.mu);
            c.decode.nms_iou = d.value("nms_iou", c.decode.nms_iou);
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            c.schedule.lr = s.value("lr", c.schedule.lr);
            c.schedule.batch_size = s.value("batch_size", c.schedule.batch_size);
            c.schedule.epochs = s.value("epochs", c.schedule.epochs);
            c.schedule.lr_decay_epoch = s.value("lr_decay_epoch", c.schedule.lr_decay_epoch);
            c.schedule.lr_decay_factor = s.value("lr_decay_factor", c.schedule.lr_decay_factor);
            c.schedule.flip = s.value("flip", c.schedule.flip);
            c.schedule.checkpoint_every = s.value("checkpoint_every", c.schedule.checkpoint_every);
        }
        if (j.contains("data")) {
            const auto& d = j.at("data");
            c.data_root = d.value("root", c.data_root.string());
            c.train_split = d.value("train_split", c.train_split);
            c.eval_split = d.value("eval_split", c.eval_split);
        }
        c.out_dir = j.value("out_dir", c.out_dir.string());
        c.write_deploy = j.value("write_deploy", c.write_deploy);
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("run config: ") + e.what());
    }
    return c;
}

RunConfig profile_config(std::string_view name) {
    RunConfig c;
    if (name == "paper") {
        c.profile = "paper";
        c.model.num_classes = hardhat_classes().size();
        c.model.channel_base = 64;
        c.model.head_channels = 64;
        c.model.input_height = c.model.input_width = 512;
        c.decode.top_k = 100;
        c.schedule = TrainSchedule{};
        return c;
    }
    if (name == "toy") {
        c.profile = "toy";
        c.model.num_classes = 3;
        c.model.channel_base = 16;
        c.model.head_channels = 16;
        c.model.input_height = c.model.input_width = 96;
        c.decode.top_k = 20;
        c.schedule.lr = 2e-3;
        c.schedule.batch_size = 8;
        c.schedule.epochs = 40;
        c.schedule.lr_decay_epoch = 33;
        c.schedule.lr_decay_factor = 0.1;
        c.schedule.checkpoint_every = 10;
        return c;
    }
    throw Error("unknown profile '" + std::string(name) + "' (paper, toy)");
}

std::string loss_csv_header() {
    return "step,epoch,lr,L_det_tl,L_off_tl,L_cs_tl,L_delta_tl,L_det_br,L_off_br,L_cs_br,L_delta_br,L_det_ce,L_off_ce,"
           "L_ba,total";
}

std::string loss_csv_row(const StepLog& log) {
    const LossBreakdown& l = log.loss;
    std::ostringstream s;
    s << std::setprecision(10) << log.step << ',' << log.epoch << ',' << log.lr;
    for (double v : {l.det_tl, l.off_tl, l.cs_tl, l.guiding_tl, l.det_br, l.off_br, l.cs_br, l.guiding_br, l.det_ce,
                     l.off_ce, l.ba, l.total}) {
        s << ',' << v;
    }
    return s.str();
}

void train_model(Model& model, const std::vector<Sample>& samples, const TrainSchedule& schedule, std::uint64_t seed,
                 const StepCallback& on_step, const EpochCallback& on_epoch, OptimizerState* state,
                 std::size_t first_epoch) {
    if (samples.empty()) throw Error("train_model: no training samples");
    if (schedule.batch_size == 0) throw Error("train_model: batch_size must be >= 1");
    const ModelConfig& cfg = model.config();
    for (const Sample& s : samples) {
        const Shape& sh = s.image.shape();
        if (sh.h != cfg.input_height || sh.w != cfg.input_width) {
            throw Error("train_model: sample '" + s.id + "' is " + sh.str() + ", model expects " +
                        std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width));
        }
    }
    OptimizerState local;
    OptimizerState& opt = state ? *state : local;
    const std::size_t h = cfg.input_height / kOutputStride;
    const std::size_t w = cfg.input_width / kOutputStride;
    std::size_t step = opt.step;

    for (std::size_t epoch = first_epoch; epoch < schedule.epochs; ++epoch) {
        std::mt19937_64 rng(mix_seed(seed, epoch));
        std::vector<std::size_t> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        AdamConfig adam;
        adam.lr = schedule.lr_at(epoch);

        for (std::size_t begin = 0; begin < order.size(); begin += schedule.batch_size) {
            const std::size_t end = std::min(order.size(), begin + schedule.batch_size);
            std::vector<Tensor> images;
            std::vector<TrainingTargets> targets;
            for (std::size_t k = begin; k < end; ++k) {
                const Sample& raw = samples[order[k]];
                const bool flip = schedule.flip && (rng() & 1) != 0;
                const Sample s = flip ? flip_augment(raw) : raw;
                images.push_back(s.image);
                targets.push_back(encode_targets(s.boxes, cfg.num_classes, h, w, kOutputStride));
            }
            const RawPredictions pred = model.forward(stack_batch(images), Mode::train);
            StepLog log;
            log.loss = total_loss(pred, stack_targets(targets));
            log.loss.objective.backward();
            adam_step(model.parameters(), opt, adam);
            zero_grads(model.parameters());
            log.loss.objective = Tensor();
            log.step = ++step;
            log.epoch = epoch;
            log.lr = adam.lr;
            if (on_step) on_step(log);
        }
        if (on_epoch) on_epoch(epoch, opt);
    }
}

std::vector<std::vector<Detection>> detect_all(const Model& model, const std::vector<Sample>& samples,
                                               const DecodeConfig& decode, std::size_t batch_size) {
    NoGradGuard no_grad;
    std::vector<std::vector<Detection>> out;
    out.reserve(samples.size());
    for (std::size_t begin = 0; begin < samples.size(); begin += batch_size) {
        const std::size_t end = std::min(samples.size(), begin + batch_size);
        std::vector<Tensor> images;
        for (std::size_t k = begin; k < end; ++k) images.push_back(samples[k].image);
        const RawPredictions pred = model.forward(stack_batch(images), Mode::eval);
        for (std::size_t k = 0; k < end - begin; ++k) out.push_back(cornerdet::decode(pred, decode, k));
    }
    return out;
}

EvalResult evaluate_model(const Model& model, const std::vector<Sample>& samples, const DecodeConfig& decode,
                          const std::vector<std::string>& classes) {
    const auto dets = detect_all(model, samples, decode);
    std::vector<std::vector<GroundTruthBox>> gts;
    for (const Sample& s : samples) gts.push_back(s.boxes);
    return evaluate(dets, gts, classes);
}

nlohmann::json detections_json(const std::string& image, std::size_t height, std::size_t width,
                               const std::vector<Detection>& dets, const std::vector<std::string>& classes) {
    nlohmann::json list = nlohmann::json::array();
    for (const Detection& d : dets) {
        list.push_back({{"class", d.class_id < classes.size() ? classes[d.class_id] : std::to_string(d.class_id)},
                        {"class_id", d.class_id},
                        {"score", d.score},
                        {"box", {d.box.tl_x, d.box.tl_y, d.box.br_x, d.box.br_y}}});
    }
    return {{"image", image}, {"input_size", {height, width}}, {"detections", list}};
}

Tensor draw_detections(const Tensor& image, const std::vector<Detection>& dets,
                       const std::vector<std::string>& classes) {
    static const Rgb palette[] = {{0.1, 0.4, 1.0}, {1.0, 0.15, 0.15}, {1.0, 1.0, 1.0},
                                  {1.0, 0.9, 0.1}, {0.2, 1.0, 0.3},  {1.0, 0.3, 1.0}};
    Tensor canvas = image.clone();
    for (const Detection& d : dets) {
        Rgb color = palette[d.class_id % std::size(palette)];
        if (d.class_id < classes.size()) {
            const std::string& n = classes[d.class_id];
            if (n == "blue") color = palette[0];
            else if (n == "red") color = palette[1];
            else if (n == "white") color = palette[2];
            else if (n == "yellow") color = palette[3];
            else if (n == "none") color = palette[4];
        }
        draw_rectangle(canvas, d.box, color);
        std::ostringstream label;
        label << std::fixed << std::setprecision(2) << d.score;
        const double y = d.box.tl_y >= 6 ? d.box.tl_y - 6 : d.box.tl_y + 1;
        draw_text(canvas, static_cast<std::size_t>(std::max(0.0, d.box.tl_x)), static_cast<std::size_t>(y), label.str(),
                  color);
    }
    return canvas;
}

TrainSummary run_train(const RunConfig& config, const std::optional<std::filesystem::path>& resume) {
    config.model.validate();
    ensure_dir(config.out_dir);
    const DatasetLayout data = DatasetLayout::open(config.data_root);
    check_vocabulary(data.classes, config.model);
    write_text(config.out_dir / "config.json", config.to_json().dump(2) + "\n");
    const std::vector<Sample> train = load_split(data, config.train_split, config.model);

    Model model = build_model(config.model, config.seed);
    OptimizerState opt;
    std::size_t first_epoch = 0;
    if (resume) {
        CheckpointInfo info;
        load_into(*resume, model, &info, &opt);
        first_epoch = info.epoch;
    }

    std::ofstream csv(config.out_dir / "loss.csv", resume ? std::ios::app : std::ios::trunc);
    if (!csv) throw Error("cannot write '" + (config.out_dir / "loss.csv").string() + "'");
    if (!resume) csv << loss_csv_header() << '\n';

    TrainSummary summary;
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    CheckpointInfo info{config.model, data.classes, 0, 0, "train"};
    const auto started = std::chrono::steady_clock::now();
    auto on_step = [&](const StepLog& log) {
        csv << loss_csv_row(log) << '\n';
        epoch_sum += log.loss.total;
        ++epoch_steps;
        info.step = log.step;
    };
    auto on_epoch = [&](std::size_t epoch, const OptimizerState& state) {
        csv.flush();
        const double mean = epoch_steps ? epoch_sum / static_cast<double>(epoch_steps) : 0.0;
        summary.epoch_mean_loss.push_back(mean);
        epoch_sum = 0.0;
        epoch_steps = 0;
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        std::cout << "epoch " << epoch + 1 << "/" << config.schedule.epochs << "  loss " << std::setprecision(5)
                  << mean << "  " << std::setprecision(4) << elapsed << "s" << std::endl;
        info.epoch = epoch + 1;
        if (config.schedule.checkpoint_every && (epoch + 1) % config.schedule.checkpoint_every == 0) {
            save_checkpoint(config.out_dir / ("epoch_" + std::to_string(epoch + 1) + ".ckpt"), model, info, &state);
        }
    };
    train_model(model, train, config.schedule, config.seed, on_step, on_epoch, &opt, first_epoch);

    summary.checkpoint = config.out_dir / "final.ckpt";
    save_checkpoint(summary.checkpoint, model, info, &opt);
    if (config.write_deploy && model.bcca_present()) {
        model.prune_bcca();
        CheckpointInfo deploy = info;
        deploy.config = model.config();
        deploy.kind = "deploy";
        summary.deploy_checkpoint = config.out_dir / "deploy.ckpt";
        save_checkpoint(*summary.deploy_checkpoint, model, deploy);
    }
    return summary;
}

EvalResult run_eval(const RunConfig& config, const std::filesystem::path& checkpoint) {
    CheckpointInfo info;
    const Model model = load_model(checkpoint, &info);
    const DatasetLayout data = DatasetLayout::open(config.data_root);
    if (!info.classes.empty() && info.classes != data.classes) {
        throw Error("checkpoint vocabulary does not match the dataset's class list");
    }
    check_vocabulary(data.classes, model.config());
    const std::vector<Sample> samples = load_split(data, config.eval_split, model.config());
    const EvalResult result = evaluate_model(model, samples, config.decode, data.classes);
    ensure_dir(config.out_dir);
    write_text(config.out_dir / "config.json", config.to_json().dump(2) + "\n");
    write_text(config.out_dir / "metrics.json", result.to_json().dump(2) + "\n");
    write_text(config.out_dir / "pr_curves.csv", result.curves_csv());
    return result;
}

DetectReport run_detect(const RunConfig& config, const std::filesystem::path& checkpoint,
                        const std::vector<std::filesystem::path>& images, bool overlays) {
    CheckpointInfo info;
    const Model model = load_model(checkpoint, &info);
    std::vector<std::string> classes = info.classes;
    if (classes.empty()) {
        for (std::size_t c = 0; c < model.config().num_classes; ++c) classes.push_back(std::to_string(c));
    }
    ensure_dir(config.out_dir);
    const std::size_t H = model.config().input_height, W = model.config().input_width;
    DetectReport report;
    nlohmann::json all = nlohmann::json::array();
    for (const auto& path : images) {
        ++report.images;
        try {
            const Tensor raw = read_image(path);
            const Tensor input = resize_bilinear(raw, H, W);
            std::vector<Detection> dets;
            {
                NoGradGuard no_grad;
                dets = decode(model.forward(input, Mode::eval), config.decode);
            }
            // Report boxes in the original image frame.
            const double sx = static_cast<double>(raw.shape().w) / static_cast<double>(W);
            const double sy = static_cast<double>(raw.shape().h) / static_cast<double>(H);
            for (Detection& d : dets) d.box = scale_box(d.box, sx, sy);
            nlohmann::json entry = detections_json(path.string(), H, W, dets, classes);
            entry["image_size"] = {raw.shape().h, raw.shape().w};
            all.push_back(entry);
            if (overlays) {
                write_image(config.out_dir / (path.stem().string() + "_det.png"), draw_detections(raw, dets, classes));
            }
        } catch (const Error& e) {
            ++report.failures;
            all.push_back({{"image", path.string()}, {"error", e.what()}});
            std::cerr << "detect: " << e.what() << '\n';
        }
    }
    write_text(config.out_dir / "detections.json", all.dump(2) + "\n");
    return report;
}

std::array<std::size_t, 3> run_synth(const SynthConfig& synth, const std::filesystem::path& out, std::size_t total,
                                     const std::optional<SynthCounts>& counts) {
    synth.validate();
    const std::size_t n = counts ? counts->train + counts->val + counts->test : total;
    if (n == 0) throw Error("synth: nothing to generate");
    std::vector<Sample> samples = generate_synthetic(synth, n);
    std::vector<std::string> ids;
    for (const Sample& s : samples) ids.push_back(s.id);
    Splits splits;
    if (counts) {
        splits.train.assign(ids.begin(), ids.begin() + static_cast<long>(counts->train));
        splits.val.assign(ids.begin() + static_cast<long>(counts->train),
                          ids.begin() + static_cast<long>(counts->train + counts->val));
        splits.test.assign(ids.begin() + static_cast<long>(counts->train + counts->val), ids.end());
    } else {
        splits = split_dataset(ids, SplitSpec{0.5, 0.25, 0.25, synth.seed});
    }
    write_dataset(out, samples, synth.classes, splits);
    std::array<std::size_t, 3> hist{};
    for (const Sample& s : samples) {
        for (const auto& g : s.boxes) ++hist[static_cast<std::size_t>(scale_bucket(g.box.area()))];
    }
    return hist;
}

std::vector<BenchRow> run_bench(const std::vector<Shape>& shapes, const std::vector<std::string>& variants,
                                std::size_t repetitions, std::size_t warmup, std::uint64_t seed) {
    NoGradGuard no_grad;
    std::vector<BenchRow> rows;
    for (const Shape& shape : shapes) {
        NormalStream noise(mix_seed(seed, shape.numel()));
        auto random = [&] {
            std::vector<double> v(shape.numel());
            for (double& x : v) x = noise.next();
            return Tensor::from_data(shape, std::move(v));
        };
        const Tensor a = random(), b = random(), c = random(), d = random();
        for (const std::string& name : variants) {
            std::function<Tensor()> run;
            if (name == "CP") run = [&] { return cp_core(a, b, CornerType::top_left); };
            else if (name == "CCP") run = [&] { return ccp_core(a, b, c, d, CornerType::top_left); };
            else if (name == "VHCP") run = [&] { return vhcp_core(a, b, c, CornerType::top_left); };
            else if (name == "center") run = [&] { return center_core(a, b); };
            else throw Error("bench: unknown variant '" + name + "' (CP, CCP, VHCP, center)");

            BenchRow row;
            row.variant = name;
            row.corner_type = name == "center" ? "none" : "tl";
            row.shape = shape;
            row.repetitions = repetitions;
            {
                ScanCounter counter;
                run();
                row.scans = counter.count();
            }
            for (std::size_t i = 0; i < warmup; ++i) run();
            std::vector<double> ns;
            for (std::size_t i = 0; i < repetitions; ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                const Tensor out = run();
                ns.push_back(std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count());
            }
            const double mean = std::accumulate(ns.begin(), ns.end(), 0.0) / static_cast<double>(ns.size());
            double var = 0.0;
            for (double v : ns) var += (v - mean) * (v - mean);
            row.mean_ns = mean;
            row.std_ns = ns.size() > 1 ? std::sqrt(var / static_cast<double>(ns.size() - 1)) : 0.0;
            rows.push_back(row);
        }
    }
    return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream s;
    s << "variant,corner_type,H,W,C,scans,mean_ns,std_ns,N,repetitions\n";
    s << std::fixed << std::setprecision(1);
    for (const BenchRow& r : rows) {
        s << r.variant << ',' << r.corner_type << ',' << r.shape.h << ',' << r.shape.w << ',' << r.shape.c << ','
          << r.scans << ',' << r.mean_ns << ',' << r.std_ns << ',' << r.shape.n << ',' << r.repetitions << '\n';
    }
    return s.str();
}

}  // namespace cornerdet
