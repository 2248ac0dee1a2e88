#pragma once

// Training loops, inference and evaluation for both stages.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lpr/checkpoint.hpp"
#include "lpr/frcnn.hpp"
#include "lpr/metrics.hpp"
#include "lpr/optim.hpp"
#include "lpr/plate.hpp"
#include "lpr/synth.hpp"
#include "lpr/yolo.hpp"

namespace lpr {

/// Deterministic 64-bit mix of a seed and a stream id (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Worker count: LPR_THREADS when set and positive, else hardware concurrency.
int worker_threads(int requested = 0);

/// Runs fn(0..n-1) on up to `threads` workers; rethrows the first exception.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

// ---------------------------------------------------------------------------
// Examples

struct SceneExample {
    std::shared_ptr<const Image> image;
    std::vector<PlateTruth> plates;
};

struct PlateExample {
    std::shared_ptr<const Image> image;
    PlateTruth plate;
};

std::vector<SceneExample> scene_examples(std::vector<SyntheticScene> scenes);
std::vector<PlateExample> plate_examples(std::span<const SceneExample> scenes);

/// Window (x0, y0, w, h) cropped around a plate box: 3% extra width and 8%
/// extra height on each side.
struct Window {
    double x0 = 0, y0 = 0, w = 0, h = 0;
};
Window plate_window(const BBox& box);

/// k-means anchors over the letterboxed plate sizes of a training set.
AnchorSet fit_anchors(std::span<const SceneExample> scenes, int input_size, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
    int steps = 1000;
    int batch = 8;
    double learning_rate = 1e-3;
    /// Linear warmup, then cosine decay to final_lr_fraction * learning_rate.
    int warmup_steps = 100;
    double final_lr_fraction = 0.05;
    double grad_clip_norm = 10.0;
    std::uint64_t seed = 1;
};

double scheduled_lr(const TrainOptions& options, int step);

/// Raw per-step losses. to_csv adds EMA columns (smoothing factor 0.6).
struct LossLog {
    std::vector<std::string> parts;
    struct Row {
        int step = 0;
        double lr = 0;
        double total = 0;
        std::vector<double> parts;
    };
    std::vector<Row> rows;

    /// Columns: step, lr, loss_total, one per part, ema_loss_total, ema_<part>...
    std::string to_csv(double ema_factor = 0.6) const;
    std::vector<double> totals() const;
};

/// Callback after each step (step index just completed, its loss row).
using StepHook = std::function<void(int, const LossLog::Row&)>;

class DetectorTrainer {
public:
    DetectorTrainer(YoloDetector& net, std::vector<SceneExample> data, TrainOptions options, float ignore_iou = 0.5f);

    int step() const noexcept { return step_; }
    /// Trains until step() == until (clamped to options.steps). Throws
    /// NumericError on a non-finite loss.
    void run(int until, LossLog& log, const StepHook& hook = {});

    /// Model, optimizer state and step counter.
    Checkpoint checkpoint(const std::map<std::string, std::string>& extra = {}) const;
    void restore(const Checkpoint& checkpoint);
    Optimizer& optimizer() noexcept { return optimizer_; }

private:
    YoloDetector& net_;
    std::vector<SceneExample> data_;
    TrainOptions options_;
    float ignore_iou_;
    Optimizer optimizer_;
    int step_ = 0;
};

class RecognizerTrainer {
public:
    RecognizerTrainer(Recognizer& net, std::vector<PlateExample> data, TrainOptions options, double jitter = 0.06);

    int step() const noexcept { return step_; }
    void run(int until, LossLog& log, const StepHook& hook = {});
    Checkpoint checkpoint(const std::map<std::string, std::string>& extra = {}) const;
    void restore(const Checkpoint& checkpoint);
    Optimizer& optimizer() noexcept { return optimizer_; }

private:
    Recognizer& net_;
    std::vector<PlateExample> data_;
    TrainOptions options_;
    double jitter_;
    Optimizer optimizer_;
    int step_ = 0;
};

/// Examples for step `step` of an epoch-wise seeded shuffle.
std::vector<int> batch_indices(int dataset_size, int batch, int step, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Model persistence

std::map<std::string, std::string> describe(const YoloConfig& config, const AnchorSet& anchors);
std::map<std::string, std::string> describe(const RecognizerConfig& config);
YoloConfig detector_config_from(const Checkpoint& checkpoint);
AnchorSet anchors_from(const Checkpoint& checkpoint);
RecognizerConfig recognizer_config_from(const Checkpoint& checkpoint);

/// Rebuilds the model described by the checkpoint and loads its weights.
/// Throws DataError when the checkpoint holds the other model kind.
std::unique_ptr<YoloDetector> load_detector(const Checkpoint& checkpoint);
std::unique_ptr<Recognizer> load_recognizer(const Checkpoint& checkpoint);

// ---------------------------------------------------------------------------
// Inference

struct PipelineOptions {
    DetectOptions detect;
    float char_score = 0.5f;
    float char_nms_iou = 0.3f;
};

struct PlateRecord {
    BBox box;
    float plate_score = 0;
    PlateReading reading;
    double detect_ms = 0;
    double recognize_ms = 0;
};

std::vector<CharDetection> recognize_window(Recognizer& net, const Image& image, const Window& window,
                                            float score_threshold, float nms_iou);

/// Detect plates, crop each detection, recognize and assemble.
std::vector<PlateRecord> run_pipeline(YoloDetector& detector, Recognizer& recognizer, const Image& image,
                                      const PipelineOptions& options);

// ---------------------------------------------------------------------------
// Evaluation

struct EvalSettings {
    EvalOptions metrics;
    /// Gaussian noise SNR in dB; nullopt for clean images.
    std::optional<double> noise_snr;
    std::uint64_t noise_seed = 0;
    int threads = 0;
};

/// Image i of the split, with noise keyed on (noise_seed, i) when requested.
Image eval_image(const SceneExample& scene, int index, const EvalSettings& settings);

EvalReport evaluate_detector(YoloDetector& net, std::span<const SceneExample> test, const DetectOptions& detect,
                             const EvalSettings& settings);

/// Characters on crops around the ground-truth plate boxes (stage in isolation).
EvalReport evaluate_recognizer(Recognizer& net, std::span<const SceneExample> test, float score, float nms_iou,
                               const EvalSettings& settings);

struct PlateTextResult {
    int plates = 0;
    int detected = 0;
    int fully_correct = 0;
    int standard_layout = 0;

    double fraction_correct() const { return plates ? static_cast<double>(fully_correct) / plates : 0.0; }
};

/// Full pipeline: a plate counts as read when the best-scored detection with
/// IoU >= iou to it assembles to exactly its text.
PlateTextResult evaluate_plate_text(YoloDetector& detector, Recognizer& recognizer, std::span<const SceneExample> test,
                                    const PipelineOptions& options, const EvalSettings& settings);

}  // namespace lpr
