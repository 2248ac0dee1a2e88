#pragma once

// Run configuration: plain-text key=value lines, '#' comments.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace lpr {

struct RunConfig {
    std::uint64_t seed = 7;
    std::string data_dir = "data";
    std::string out_dir = "runs";
    int threads = 0;  // 0: LPR_THREADS or hardware concurrency

    // Synthetic corpus.
    int synth_count = 500;
    double train_fraction = 0.8;
    int synth_min_plates = 1;
    int synth_max_plates = 2;

    // Detector.
    double det_width = 0.125;
    int det_neck = 3;
    int det_input = 320;
    int det_steps = 2000;
    int det_batch = 8;
    double det_lr = 1e-3;
    int det_warmup = 100;
    double det_ignore_iou = 0.5;
    double det_conf = 0.25;
    double det_nms_iou = 0.45;
    /// "auto" (k-means over training boxes), "fallback", or nine "w,h" pairs separated by ';'.
    std::string det_anchors = "auto";

    // Recognizer.
    double rec_width = 0.125;
    int rec_feature = 64;
    int rec_rpn = 64;
    int rec_hidden = 256;
    int rec_steps = 6000;
    int rec_batch = 4;
    double rec_lr = 1e-3;
    int rec_warmup = 100;
    double rec_score = 0.5;
    double rec_nms_iou = 0.3;
    /// Relative jitter of training crop windows.
    double rec_jitter = 0.06;
    /// Lower IoU bound of background ROIs sampled for the classification head.
    double rec_bg_low = 0.0;

    // Evaluation.
    double eval_iou = 0.5;
    /// Non-positive disables the noisy pass.
    double eval_noise_snr = 30;
    std::string eval_ap = "all_points";

    int log_every = 10;
    int checkpoint_every = 500;

    /// Sets one key; throws ConfigError for unknown keys or out-of-range values.
    void set(std::string_view key, std::string_view value);
    /// Applies every line of a config file. Errors carry the line number.
    void apply(std::string_view text);
    /// Every key=value, in a fixed order; apply(to_text()) reproduces the config.
    std::string to_text() const;
    static std::vector<std::string> keys();
};

}  // namespace lpr
