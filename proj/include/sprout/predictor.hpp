#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "sprout/instances.hpp"
#include "sprout/prompting.hpp"
#include "sprout/stain.hpp"

namespace sprout::predictor {

/// Square prediction tiles of `patch_size` with fractional overlap.
struct PatchLayout {
    int patch_size = 512;
    double overlap = 0.5;

    int stride() const;
    void validate() const;
};

/// Tile boxes in row-major order. Tiles are clipped to the image when it is
/// smaller than the patch size; the last row/column is flush with the edge.
std::vector<Box> patch_boxes(Shape image, const PatchLayout& layout);

/// Each positive goes to the tile with the nearest center (ties: lower tile
/// index) and takes its `negatives_per_positive` nearest negatives from inside
/// that tile. Group indices count up within each tile.
std::vector<prompting::PromptGroup> assign_prompts_to_patches(const prompting::PromptSet& prompts,
                                                              const PatchLayout& layout, Shape image,
                                                              int negatives_per_positive);

/// One prompt group expressed in patch coordinates.
struct PatchRequest {
    std::string image_id;
    int patch = 0;
    int index = 0;
    const RasterImage* pixels = nullptr;
    Point positive;
    std::vector<Point> negatives;
};

struct Prediction {
    BinaryMask mask;  ///< patch-sized
    double score = 0.0;
};

/// Promptable mask predictor. Returning nullopt skips the group; `reason`
/// explains why.
class MaskPredictor {
public:
    virtual ~MaskPredictor() = default;
    virtual std::optional<Prediction> predict(const PatchRequest& request, std::string& reason) const = 0;
    /// False forces the caller to serialize calls.
    virtual bool thread_safe() const { return true; }
};

struct OracleConfig {
    double drop = 0.5;       ///< accept pixels with s_h >= drop * seed level
    double step_tol = 0.25;  ///< max |s_h step| between neighbours, relative to the seed level
    double seed_min = 0.15;  ///< seeds below this s_h are rejected
    double max_area_fraction = 0.25;
};

/// Deterministic stand-in for a promptable segmenter: region growing on the
/// hematoxylin map from the positive, blocked at negatives and at abrupt s_h
/// changes.
class OraclePredictor final : public MaskPredictor {
public:
    OraclePredictor(stain::StainMatrix stains, OracleConfig config = {})
        : stains_(std::move(stains)), config_(config) {}

    std::optional<Prediction> predict(const PatchRequest& request, std::string& reason) const override;

private:
    struct Hematoxylin {
        ScalarMap s_h;
        double peak = 0.0;
    };
    std::shared_ptr<const Hematoxylin> hematoxylin(const PatchRequest& request) const;

    stain::StainMatrix stains_;
    OracleConfig config_;
    // Last decomposed patch; requests arrive grouped by patch.
    mutable std::mutex cache_mutex_;
    mutable std::string cache_key_;
    mutable std::shared_ptr<const Hematoxylin> cache_;
};

/// Reads masks exported by an external segmenter:
/// <root>/<image_id>/mask_<patch>_<index>.bin (SPRT, d = 1, values 0/1) and a
/// sidecar mask_<patch>_<index>.json holding {"score": float}.
class FileBackedPredictor final : public MaskPredictor {
public:
    explicit FileBackedPredictor(std::filesystem::path root) : root_(std::move(root)) {}

    std::optional<Prediction> predict(const PatchRequest& request, std::string& reason) const override;

    static std::filesystem::path mask_path(const std::filesystem::path& root, const std::string& image_id, int patch,
                                           int index);

private:
    std::filesystem::path root_;
};

struct SkippedGroup {
    int patch = 0;
    int index = 0;
    std::string reason;
};

struct PredictionRun {
    InstanceSet instances;
    std::vector<SkippedGroup> skipped;
};

/// Runs every group through the predictor and maps masks back to image
/// coordinates. Failures skip the group and are recorded, never thrown.
PredictionRun predict_groups(const RasterImage& image, const std::string& image_id,
                             const std::vector<prompting::PromptGroup>& groups, const std::vector<Box>& patches,
                             const MaskPredictor& predictor);

/// Transitive merge of masks with IoU >= iou_merge into their pixel union,
/// scored by the group maximum. Repeats until no pair reaches the threshold.
InstanceSet merge_overlapped(const InstanceSet& instances, double iou_merge);

}  // namespace sprout::predictor
