#include "sprout/metrics.hpp"

#include <algorithm>

namespace sprout::metrics {

namespace {

void check_shapes(const InstanceSet& gt, const InstanceSet& pred) {
    if (gt.shape != pred.shape) throw ConfigError("ground truth and prediction have different image shapes");
}

std::vector<Match> overlapping_pairs(const InstanceSet& gt, const InstanceSet& pred) {
    std::vector<Match> pairs;
    for (std::size_t i = 0; i < gt.size(); ++i)
        for (std::size_t j = 0; j < pred.size(); ++j) {
            if (intersect(gt.masks[i].box(), pred.masks[j].box()).empty()) continue;
            const std::size_t inter = intersection_area(gt.masks[i], pred.masks[j]);
            if (inter == 0) continue;
            const std::size_t uni = gt.masks[i].area() + pred.masks[j].area() - inter;
            pairs.push_back({static_cast<int>(i), static_cast<int>(j),
                             static_cast<double>(inter) / static_cast<double>(uni), inter, uni});
        }
    return pairs;
}

std::vector<Match> greedy(std::vector<Match> pairs, std::size_t n_gt, std::size_t n_pred, double min_iou) {
    std::erase_if(pairs, [&](const Match& m) { return !(m.iou > min_iou); });
    std::sort(pairs.begin(), pairs.end(), [](const Match& a, const Match& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.gt != b.gt) return a.gt < b.gt;
        return a.pred < b.pred;
    });
    std::vector<bool> gt_used(n_gt, false), pred_used(n_pred, false);
    std::vector<Match> accepted;
    for (const auto& m : pairs) {
        if (gt_used[m.gt] || pred_used[m.pred]) continue;
        gt_used[m.gt] = pred_used[m.pred] = true;
        accepted.push_back(m);
    }
    return accepted;
}

}  // namespace

double dice(const InstanceSet& gt, const InstanceSet& pred) {
    check_shapes(gt, pred);
    BinaryMask g(gt.shape.rows, gt.shape.cols), p(pred.shape.rows, pred.shape.cols);
    for (const auto& m : gt.masks)
        for (const auto& px : m.pixels()) g.set(px.row, px.col);
    for (const auto& m : pred.masks)
        for (const auto& px : m.pixels()) p.set(px.row, px.col);
    const std::size_t sg = g.count(), sp = p.count();
    if (sg + sp == 0) return 1.0;
    return 2.0 * static_cast<double>((g & p).count()) / static_cast<double>(sg + sp);
}

std::vector<Match> greedy_match(const InstanceSet& gt, const InstanceSet& pred, double min_iou) {
    check_shapes(gt, pred);
    return greedy(overlapping_pairs(gt, pred), gt.size(), pred.size(), min_iou);
}

double aji(const InstanceSet& gt, const InstanceSet& pred) {
    check_shapes(gt, pred);
    if (gt.size() == 0 && pred.size() == 0) return 1.0;
    const auto matches = greedy_match(gt, pred, 0.0);
    std::vector<bool> gt_used(gt.size(), false), pred_used(pred.size(), false);
    double inter = 0.0, uni = 0.0;
    for (const auto& m : matches) {
        inter += static_cast<double>(m.intersection);
        uni += static_cast<double>(m.uni);
        gt_used[m.gt] = pred_used[m.pred] = true;
    }
    for (std::size_t i = 0; i < gt.size(); ++i)
        if (!gt_used[i]) uni += static_cast<double>(gt.masks[i].area());
    for (std::size_t j = 0; j < pred.size(); ++j)
        if (!pred_used[j]) uni += static_cast<double>(pred.masks[j].area());
    return uni > 0.0 ? inter / uni : 1.0;
}

Panoptic panoptic(const InstanceSet& gt, const InstanceSet& pred, double tau) {
    check_shapes(gt, pred);
    Panoptic out;
    if (gt.size() == 0 && pred.size() == 0) {
        out.dq = out.sq = 1.0;
        out.pq = out.dq * out.sq;
        return out;
    }
    const auto tp = greedy_match(gt, pred, tau);
    out.tp = tp.size();
    out.fp = pred.size() - out.tp;
    out.fn = gt.size() - out.tp;
    const double denom = static_cast<double>(out.tp) + 0.5 * static_cast<double>(out.fp) + 0.5 * static_cast<double>(out.fn);
    out.dq = denom > 0.0 ? static_cast<double>(out.tp) / denom : 0.0;
    double iou_sum = 0.0;
    for (const auto& m : tp) iou_sum += m.iou;
    out.sq = out.tp > 0 ? iou_sum / static_cast<double>(out.tp) : 0.0;
    out.pq = out.dq * out.sq;
    return out;
}

EvalReport evaluate(const InstanceSet& gt, const InstanceSet& pred) {
    EvalReport r;
    r.aji = aji(gt, pred);
    const auto pan = panoptic(gt, pred, 0.5);
    r.dq = pan.dq;
    r.sq = pan.sq;
    r.pq = pan.pq;
    r.dice = dice(gt, pred);
    r.matches = greedy_match(gt, pred, 0.5);
    return r;
}

EvalReport aggregate(const std::vector<EvalReport>& reports) {
    EvalReport out;
    out.per_image = false;
    out.images = reports.size();
    if (reports.empty()) return out;
    for (const auto& r : reports) {
        out.aji += r.aji;
        out.dq += r.dq;
        out.sq += r.sq;
        out.pq += r.pq;
        out.dice += r.dice;
    }
    const double n = static_cast<double>(reports.size());
    out.aji /= n;
    out.dq /= n;
    out.sq /= n;
    out.pq /= n;
    out.dice /= n;
    return out;
}

}  // namespace sprout::metrics
