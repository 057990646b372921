#pragma once

#include <vector>

#include "sprout/instances.hpp"

namespace sprout::metrics {

struct Match {
    int gt = -1;
    int pred = -1;
    double iou = 0.0;
    std::size_t intersection = 0;
    std::size_t uni = 0;
};

/// Pixel-level Dice of the binarized unions. Two empty foregrounds give 1.
double dice(const InstanceSet& gt, const InstanceSet& pred);

/// Pairs with IoU strictly above `min_iou`, accepted in descending IoU order
/// (ties: smaller gt index, then smaller pred index) under a one-to-one rule.
std::vector<Match> greedy_match(const InstanceSet& gt, const InstanceSet& pred, double min_iou);

/// Aggregated Jaccard index over a greedy IoU > 0 matching. Two empty sets give 1.
double aji(const InstanceSet& gt, const InstanceSet& pred);

struct Panoptic {
    double dq = 0.0;
    double sq = 0.0;
    double pq = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

Panoptic panoptic(const InstanceSet& gt, const InstanceSet& pred, double tau = 0.5);

struct EvalReport {
    double aji = 0.0;
    double dq = 0.0;
    double sq = 0.0;
    double pq = 0.0;
    double dice = 0.0;
    std::vector<Match> matches;  ///< the IoU > 0.5 matches behind DQ/SQ
    bool per_image = true;
    std::size_t images = 1;
};

EvalReport evaluate(const InstanceSet& gt, const InstanceSet& pred);

/// Unweighted mean of per-image reports. PQ is averaged like the others.
EvalReport aggregate(const std::vector<EvalReport>& reports);

}  // namespace sprout::metrics
