#pragma once

#include <string>
#include <vector>

#include "sprout/instances.hpp"

namespace sprout::postprocess {

enum class Decay { hard, linear, polynomial, exponential };
enum class ScoreMode { none, h_channel, model, combined };

Decay decay_from_string(const std::string& name);
ScoreMode score_mode_from_string(const std::string& name);
std::string to_string(Decay d);
std::string to_string(ScoreMode m);

struct NmsConfig {
    Decay decay = Decay::exponential;
    double sigma = 0.5;
    double epsilon_pen = 0.5;
    double tau = 0.05;
    double tau_iou = 0.5;  ///< hard decay only
    ScoreMode score_mode = ScoreMode::combined;
    double containment_frac = 0.9;
    bool containment_penalty = true;

    void validate() const;
};

/// Decay factor for a bounding-box IoU u.
double decay_factor(const NmsConfig& cfg, double u);

/// Per-mask scores under `mode`. The hematoxylin term is the mean s_h inside
/// each mask, min-max normalized across masks (a single mask or equal means
/// map to 1).
std::vector<double> unified_scores(const InstanceSet& instances, const ScalarMap& s_h, ScoreMode mode);

/// Number of other masks m with |m & mask| / |m| >= frac and |m| < |mask|.
int count_contained(const InstanceMask& mask, const InstanceSet& others, double frac);

struct NmsResult {
    InstanceSet kept;                 ///< in selection order
    std::vector<std::size_t> source;  ///< index of each kept mask in the input
    std::vector<double> final_scores;
};

/// Static containment penalty followed by greedy selection with score decay
/// on bounding-box IoU. Masks whose score falls below tau are discarded.
NmsResult containment_soft_nms(const InstanceSet& instances, const std::vector<double>& scores, const NmsConfig& cfg);

/// Kept masks rasterized in descending final score.
LabelMap label_map(const NmsResult& result, std::size_t min_area = 1);

}  // namespace sprout::postprocess
