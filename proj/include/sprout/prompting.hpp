#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sprout/features.hpp"
#include "sprout/grid.hpp"
#include "sprout/morphology.hpp"
#include "sprout/ot.hpp"

namespace sprout::prompting {

/// Per-prototype activation maps at image resolution.
struct ActivationStack {
    Shape shape;
    std::vector<ScalarMap> maps;
    std::vector<features::Side> class_of;
};

/// Post-resize smoothing stage for activation maps.
class Refiner {
public:
    virtual ~Refiner() = default;
    virtual ScalarMap apply(const ScalarMap& map) const = 0;
};

class IdentityRefiner final : public Refiner {
public:
    ScalarMap apply(const ScalarMap& map) const override { return map; }
};

class GaussianRefiner final : public Refiner {
public:
    explicit GaussianRefiner(double sigma) : sigma_(sigma) {}
    ScalarMap apply(const ScalarMap& map) const override { return morph::gaussian_blur(map, sigma_); }

private:
    double sigma_;
};

/// sigma <= 0 selects the identity.
std::unique_ptr<Refiner> make_refiner(double sigma);

struct ProjectionOptions {
    morph::Interpolation interpolation = morph::Interpolation::bilinear;
    /// Pixels per grid cell. When > 0 the grid is resized to grid * cell and
    /// cropped to the target (the grid may cover a border-padded image);
    /// 0 resizes the grid straight to the target shape.
    int cell = 0;
    bool allow_unconverged = false;
};

/// activation_k(cell) = ||F(cell)|| * T(cell, k) for every prototype column,
/// resized to the target and passed through the refiner. The slack column is
/// dropped.
ActivationStack reweight_and_project(const Eigen::MatrixXd& features, Shape grid, const ot::TransportPlan& plan,
                                     const std::vector<features::Side>& class_of, Shape target,
                                     const Refiner& refiner, const ProjectionOptions& options = {});

struct ClassMaps {
    BinaryMask fg;
    BinaryMask bg;
    ScalarMap fg_activation;
    ScalarMap bg_activation;
};

/// Sums channels per class and binarizes each sum with Otsu. Pixels claimed by
/// both go to the class with the larger max-normalized activation (fg on ties).
ClassMaps aggregate_and_binarize(const ActivationStack& stack);

struct PositiveOptions {
    int min_separation = 5;
    std::size_t min_area = 10;
    bool union_with_high_confidence = true;
};

struct PositiveResult {
    std::vector<Point> points;
    Grid<std::int32_t> regions;  ///< watershed basins (0 = outside)
};

/// One point per watershed basin of the inverted distance transform, placed at
/// the basin centroid (snapped to the nearest basin pixel when outside).
PositiveResult positive_points(const BinaryMask& fg_map, const BinaryMask& m_fg, const PositiveOptions& options = {});

/// Lattice points every `stride` pixels (from the origin) inside the
/// background dilated by `margin` and outside the foreground.
std::vector<Point> negative_points(const BinaryMask& bg_map, const BinaryMask& fg_map, int stride, int margin);

struct StopProbeConfig {
    int merge_k = 2;
    double area_cap = 0.2;
};

struct ProbeOutcome {
    bool fired = false;
    int components = 0;
    double largest_fraction = 0.0;
};

/// Fires when the component count fell by at least merge_k since the previous
/// step and the largest component exceeds area_cap of the image.
/// prev_components = 0 marks the first step, which never fires.
ProbeOutcome merge_stop_probe(const BinaryMask& fg_map, int prev_components, const StopProbeConfig& config);

/// Prompt group handed to one predictor call, in image coordinates.
struct PromptGroup {
    int patch = 0;
    int index = 0;  ///< position of the group within its patch
    Point positive;
    std::vector<Point> negatives;
};

struct PromptSet {
    std::string image_id;
    std::vector<Point> positives;
    std::vector<Point> negatives;
    std::vector<PromptGroup> groups;  ///< optional patch assignment

    /// Bounds and disjointness checks.
    void validate(Shape image) const;
};

nlohmann::json to_json(const PromptSet& prompts);
PromptSet prompts_from_json(const nlohmann::json& doc);

}  // namespace sprout::prompting
