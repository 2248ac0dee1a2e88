#pragma once

// Subcommands of the lpr command-line tool. Each writes line-delimited JSON
// records to `out` and human-readable progress to `log`.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "lpr/config.hpp"
#include "lpr/pipeline.hpp"

namespace lpr {

enum ExitCode { exit_ok = 0, exit_usage = 1, exit_data = 2, exit_numeric = 3 };

struct Dataset {
    std::vector<SceneExample> train;
    std::vector<SceneExample> test;
};

/// Writes images/, labels/, chars/ and manifest.tsv under `dir`. Returns the
/// number of scenes written.
int cmd_synth(const RunConfig& config, const std::filesystem::path& dir, std::ostream& log);

/// Reads a manifest written by cmd_synth (or by hand). Plate text is recovered
/// from the character files ordered left to right.
Dataset load_dataset(const std::filesystem::path& dir);

enum class Stage { detector, recognizer };
Stage parse_stage(std::string_view name);

struct TrainSummary {
    std::filesystem::path checkpoint;
    std::filesystem::path loss_log;
    int steps = 0;
    double final_loss = 0;
};

/// Trains one stage on the train split. Writes <stage>.lprc, <stage>_loss.csv
/// and <stage>_step<N>.lprc every checkpoint_every steps into `out_dir`.
TrainSummary cmd_train(Stage stage, const RunConfig& config, const std::filesystem::path& data_dir,
                       const std::filesystem::path& out_dir, const std::optional<std::filesystem::path>& resume,
                       std::ostream& log);

struct InferenceFlags {
    std::optional<float> conf;
    std::optional<float> nms_iou;
    /// Annotated copies of the inputs are written here when set.
    std::optional<std::filesystem::path> annotate_dir;
};

void cmd_detect(const std::filesystem::path& detector, const std::vector<std::filesystem::path>& images,
                const RunConfig& config, const InferenceFlags& flags, std::ostream& out);
/// Images are plate crops; each is resampled to the recognizer input size.
void cmd_recognize(const std::filesystem::path& recognizer, const std::vector<std::filesystem::path>& images,
                   const RunConfig& config, const InferenceFlags& flags, std::ostream& out);
void cmd_pipeline(const std::filesystem::path& detector, const std::filesystem::path& recognizer,
                  const std::vector<std::filesystem::path>& images, const RunConfig& config,
                  const InferenceFlags& flags, std::ostream& out);

struct EvalSummary {
    EvalReport detector;
    EvalReport recognizer;
    PlateTextResult plates;
    std::optional<EvalReport> noisy_detector;
    std::optional<EvalReport> noisy_recognizer;
};

/// Evaluates both checkpoints on the test split. With a noise level, the
/// split is evaluated a second time with noise and a comparison is printed.
/// Report tables and their JSONL twins are written into `out_dir`.
EvalSummary cmd_eval(const std::filesystem::path& detector, const std::filesystem::path& recognizer,
                     const std::filesystem::path& data_dir, const RunConfig& config, std::optional<double> noise_snr,
                     const std::filesystem::path& out_dir, std::ostream& out);

std::string plate_record_json(const std::string& image, const PlateRecord& record);

/// Parses arguments and dispatches; returns an ExitCode.
int run_app(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lpr
