#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cornerdet/data.hpp"
#include "cornerdet/decoder.hpp"
#include "cornerdet/evaluation.hpp"
#include "cornerdet/losses.hpp"
#include "cornerdet/network.hpp"

namespace cornerdet {

struct TrainSchedule {
    double lr = 5e-4;
    std::size_t batch_size = 6;
    std::size_t epochs = 180;
    std::size_t lr_decay_epoch = 150;  // lr is multiplied by lr_decay_factor from this epoch on (0-based)
    double lr_decay_factor = 0.1;
    bool flip = true;
    std::size_t checkpoint_every = 0;  // epochs; 0 disables periodic checkpoints

    double lr_at(std::size_t epoch) const { return epoch >= lr_decay_epoch ? lr * lr_decay_factor : lr; }
};

struct RunConfig {
    std::string profile = "paper";
    std::uint64_t seed = 0;
    ModelConfig model;
    DecodeConfig decode;
    TrainSchedule schedule;
    std::filesystem::path data_root;
    std::string train_split = "train";
    std::string eval_split = "test";
    std::filesystem::path out_dir = "runs/default";
    bool write_deploy = true;

    nlohmann::json to_json() const;
    /// Fields absent from `j` keep the values already in `base`.
    static RunConfig from_json(const nlohmann::json& j, RunConfig base);
};

/// "paper": 512x512 input, base 64, lr 5e-4, batch 6, 180 epochs, x0.1 at
/// epoch 150. "toy": 96x96, base 16, batch 8, 40 epochs.
RunConfig profile_config(std::string_view name);

struct StepLog {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double lr = 0.0;
    LossBreakdown loss;
};

/// CSV header and row matching StepLog.
std::string loss_csv_header();
std::string loss_csv_row(const StepLog& log);

using StepCallback = std::function<void(const StepLog&)>;
using EpochCallback = std::function<void(std::size_t epoch, const OptimizerState&)>;

/// Mini-batch Adam on `samples` (already at the model's input size). Batch
/// order and flips are a pure function of `seed` and the epoch.
void train_model(Model& model, const std::vector<Sample>& samples, const TrainSchedule& schedule, std::uint64_t seed,
                 const StepCallback& on_step = {}, const EpochCallback& on_epoch = {},
                 OptimizerState* state = nullptr, std::size_t first_epoch = 0);

/// Eval-mode forward and decode for every sample.
std::vector<std::vector<Detection>> detect_all(const Model& model, const std::vector<Sample>& samples,
                                               const DecodeConfig& decode, std::size_t batch_size = 8);

EvalResult evaluate_model(const Model& model, const std::vector<Sample>& samples, const DecodeConfig& decode,
                          const std::vector<std::string>& classes);

/// Detections for one image as JSON: {image, input_size, detections:[{class, score, box}]}.
nlohmann::json detections_json(const std::string& image, std::size_t height, std::size_t width,
                               const std::vector<Detection>& dets, const std::vector<std::string>& classes);

/// Draws class-colored boxes with scores onto a copy of `image`.
Tensor draw_detections(const Tensor& image, const std::vector<Detection>& dets,
                       const std::vector<std::string>& classes);

struct TrainSummary {
    std::filesystem::path checkpoint;
    std::optional<std::filesystem::path> deploy_checkpoint;
    std::vector<double> epoch_mean_loss;
};

/// Loads the dataset, trains, writes loss.csv, resolved config, periodic
/// and final checkpoints. `resume` must carry the same config hash.
TrainSummary run_train(const RunConfig& config, const std::optional<std::filesystem::path>& resume = std::nullopt);

/// Writes metrics.json and pr_curves.csv; returns the result.
EvalResult run_eval(const RunConfig& config, const std::filesystem::path& checkpoint);

struct DetectReport {
    std::size_t images = 0;
    std::size_t failures = 0;
};

/// Writes detections.json (one entry per image, errors inline) and, when
/// `overlays` is set, <stem>_det.png per image. Per-file errors do not stop
/// the run.
DetectReport run_detect(const RunConfig& config, const std::filesystem::path& checkpoint,
                        const std::vector<std::filesystem::path>& images, bool overlays);

struct SynthCounts {
    std::size_t train = 0, val = 0, test = 0;
};

/// Writes a dataset in the standard layout. With explicit counts the split
/// is sequential; otherwise `total` images are split 50/25/25 by seed.
/// Returns the per-bucket box histogram (small, medium, large).
std::array<std::size_t, 3> run_synth(const SynthConfig& synth, const std::filesystem::path& out, std::size_t total,
                                     const std::optional<SynthCounts>& counts = std::nullopt);

struct BenchRow {
    std::string variant;
    std::string corner_type;  // "tl" for corner cores, "none" for center
    Shape shape;
    std::size_t repetitions = 0;
    double mean_ns = 0.0;
    double std_ns = 0.0;
    std::size_t scans = 0;
};

/// Times the pooling cores (CP, CCP, VHCP, center) forward-only after
/// `warmup` discarded runs.
std::vector<BenchRow> run_bench(const std::vector<Shape>& shapes, const std::vector<std::string>& variants,
                                std::size_t repetitions, std::size_t warmup = 3, std::uint64_t seed = 0);
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace cornerdet
