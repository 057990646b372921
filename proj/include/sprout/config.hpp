#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "sprout/features.hpp"
#include "sprout/morphology.hpp"
#include "sprout/ot.hpp"
#include "sprout/postprocess.hpp"
#include "sprout/predictor.hpp"
#include "sprout/prompting.hpp"
#include "sprout/stain.hpp"

namespace sprout::config {

struct StainSection {
    stain::Vec3 h{0.650, 0.704, 0.286};
    stain::Vec3 e{0.072, 0.990, 0.105};
    stain::Vec3 x0{255.0, 255.0, 255.0};
    double ratio = 0.6;  ///< high-confidence fraction t
};

enum class FeatureSource { builtin, tensor };

struct FeatureSection {
    FeatureSource source = FeatureSource::builtin;
    std::filesystem::path tensor_dir;  ///< <tensor_dir>/<stem>.sprt when source = tensor
    features::StitchGeometry geometry;
    int prototypes_per_class = 3;
};

struct ScanSection {
    ot::SolverConfig solver;
    double rho0 = 0.6;
    double stride = 0.05;
};

struct PromptSection {
    morph::Interpolation interpolation = morph::Interpolation::bilinear;
    double refiner_sigma = 0.0;
    prompting::PositiveOptions positive;
    int negative_stride = 32;
    int negative_margin = 5;
    prompting::StopProbeConfig stop;
    bool allow_unconverged = false;
};

enum class PredictorKind { oracle, file };

struct PredictorSection {
    PredictorKind kind = PredictorKind::oracle;
    std::filesystem::path mask_dir;
    predictor::PatchLayout layout;
    int negatives_per_positive = 2;
    double iou_merge = 0.8;
    predictor::OracleConfig oracle;
};

struct PostSection {
    postprocess::NmsConfig nms;
    std::size_t min_area = 1;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    int workers = 4;
    int pre_resize = 0;  ///< Lanczos-3 resize of the longer side; 0 disables
    bool debug_activations = false;
    bool require_gt = false;
    StainSection stain;
    FeatureSection features;
    ScanSection scan;
    PromptSection prompting;
    PredictorSection predictor;
    PostSection postprocess;

    /// Checks every section; throws ConfigError on the first violation.
    void validate() const;
    stain::StainMatrix stain_matrix() const;
};

/// Parses YAML text. Missing keys keep their defaults; unknown keys throw.
PipelineConfig parse(const std::string& yaml);
PipelineConfig load(const std::filesystem::path& path);
/// Full YAML dump; parse(dump(c)) reproduces c exactly.
std::string dump(const PipelineConfig& config);

}  // namespace sprout::config
