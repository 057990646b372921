#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sprout/config.hpp"
#include "sprout/metrics.hpp"
#include "sprout/predictor.hpp"
#include "sprout/prompting.hpp"

namespace sprout::pipeline {

/// Stage wall times in seconds, in execution order.
struct Timing {
    std::vector<std::pair<std::string, double>> stages;
    double total = 0.0;

    nlohmann::json to_json() const;
};

struct ScanSummary {
    double rho = 0.0;
    int steps = 0;
    bool stopped = false;
    bool stopped_at_first = false;
};

struct ImageResult {
    std::string stem;
    Shape shape;
    LabelMap labels;
    InstanceSet kept;                ///< after NMS, in selection order
    std::vector<double> final_scores;
    prompting::PromptSet prompts;
    std::vector<predictor::SkippedGroup> skipped;
    ScanSummary scan;
    Timing timing;
    std::string note;  ///< set when the image was short-circuited
    ScalarMap fg_activation;  ///< filled only with debug_activations
    ScalarMap bg_activation;
};

/// Deterministic per-image seed; independent of worker count and order.
std::uint64_t image_seed(std::uint64_t base, const std::string& stem);

/// Runs every stage on an in-memory image.
ImageResult process_image(const RasterImage& image, const std::string& stem, const config::PipelineConfig& cfg);

/// Loads, processes and writes <out>/<stem>/{prompts.json, labels.png,
/// scores.json, timing.json, config.resolved}. Outputs are staged in a
/// temporary directory and only moved into place on success.
ImageResult run_image(const std::filesystem::path& image_path, const config::PipelineConfig& cfg,
                      const std::filesystem::path& out);

struct ImageRecord {
    std::string stem;
    std::size_t instances = 0;
    std::optional<metrics::EvalReport> report;
    std::string error;
};

struct DatasetSummary {
    std::vector<ImageRecord> images;  ///< sorted by stem
    std::optional<metrics::EvalReport> mean;
    std::size_t failures = 0;

    nlohmann::json to_json() const;
};

/// PNG images under `input` (a directory or one file), sorted by stem.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& input);

/// Processes every image with cfg.workers threads and writes summary.json.
/// Images that fail are recorded; the call throws RuntimeError afterwards if
/// any failed.
DatasetSummary run_dataset(const std::filesystem::path& input, const std::optional<std::filesystem::path>& gt_dir,
                           const config::PipelineConfig& cfg, const std::filesystem::path& out);

/// Scores predicted label maps (<pred>/<stem>/labels.png or <pred>/<stem>.png)
/// against <gt>/<stem>.png.
DatasetSummary evaluate_dirs(const std::filesystem::path& pred, const std::filesystem::path& gt);

/// Separable Lanczos-3 resampling; the kernel widens by the scale factor when
/// downsampling.
RasterImage lanczos_resize(const RasterImage& image, Shape target);

}  // namespace sprout::pipeline
