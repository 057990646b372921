#include "sprout/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sprout::postprocess {

Decay decay_from_string(const std::string& name) {
    if (name == "hard") return Decay::hard;
    if (name == "linear") return Decay::linear;
    if (name == "polynomial") return Decay::polynomial;
    if (name == "exponential") return Decay::exponential;
    throw ConfigError("unknown decay '" + name + "'");
}

ScoreMode score_mode_from_string(const std::string& name) {
    if (name == "none") return ScoreMode::none;
    if (name == "h_channel") return ScoreMode::h_channel;
    if (name == "model") return ScoreMode::model;
    if (name == "combined") return ScoreMode::combined;
    throw ConfigError("unknown score mode '" + name + "'");
}

std::string to_string(Decay d) {
    switch (d) {
        case Decay::hard: return "hard";
        case Decay::linear: return "linear";
        case Decay::polynomial: return "polynomial";
        case Decay::exponential: return "exponential";
    }
    return "exponential";
}

std::string to_string(ScoreMode m) {
    switch (m) {
        case ScoreMode::none: return "none";
        case ScoreMode::h_channel: return "h_channel";
        case ScoreMode::model: return "model";
        case ScoreMode::combined: return "combined";
    }
    return "combined";
}

void NmsConfig::validate() const {
    if (!(sigma > 0.0)) throw ConfigError("nms sigma must be > 0");
    if (!(epsilon_pen > 0.0)) throw ConfigError("nms epsilon_pen must be > 0");
    if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("nms tau must lie in [0, 1)");
    if (!(tau_iou >= 0.0 && tau_iou <= 1.0)) throw ConfigError("nms tau_iou must lie in [0, 1]");
    if (!(containment_frac > 0.0 && containment_frac <= 1.0))
        throw ConfigError("containment_frac must lie in (0, 1]");
}

double decay_factor(const NmsConfig& cfg, double u) {
    switch (cfg.decay) {
        case Decay::hard: return u < cfg.tau_iou ? 1.0 : 0.0;
        case Decay::linear: return 1.0 - u;
        case Decay::polynomial: return (1.0 - u) * (1.0 - u);
        case Decay::exponential: return std::exp(-u * u / cfg.sigma);
    }
    return 1.0;
}

std::vector<double> unified_scores(const InstanceSet& instances, const ScalarMap& s_h, ScoreMode mode) {
    const std::size_t n = instances.size();
    std::vector<double> out(n, 1.0);
    if (n == 0 || mode == ScoreMode::none) return out;
    if (mode == ScoreMode::model) return instances.scores;

    if (s_h.shape() != instances.shape) throw ConfigError("s_h map does not match the instance image shape");
    std::vector<double> mean(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double total = 0.0;
        for (const auto& p : instances.masks[k].pixels()) total += s_h(p.row, p.col);
        mean[k] = total / static_cast<double>(instances.masks[k].area());
    }
    const auto [lo, hi] = std::minmax_element(mean.begin(), mean.end());
    const double span = *hi - *lo;
    for (std::size_t k = 0; k < n; ++k) {
        const double h = span > 0.0 ? (mean[k] - *lo) / span : 1.0;
        out[k] = mode == ScoreMode::combined ? instances.scores[k] + h : h;
    }
    return out;
}

int count_contained(const InstanceMask& mask, const InstanceSet& others, double frac) {
    if (!(frac > 0.0 && frac <= 1.0)) throw ConfigError("containment fraction must lie in (0, 1]");
    int n = 0;
    for (const auto& m : others.masks) {
        if (m.area() >= mask.area() || m.empty()) continue;
        if (intersect(m.box(), mask.box()).empty()) continue;
        const double covered = static_cast<double>(intersection_area(m, mask)) / static_cast<double>(m.area());
        if (covered >= frac) ++n;
    }
    return n;
}

NmsResult containment_soft_nms(const InstanceSet& instances, const std::vector<double>& scores, const NmsConfig& cfg) {
    cfg.validate();
    instances.validate();
    if (scores.size() != instances.size()) throw ConfigError("scores are not aligned with instances");
    const std::size_t n = instances.size();

    std::vector<double> s = scores;
    if (cfg.containment_penalty) {
        for (std::size_t i = 0; i < n; ++i) {
            const int contained = count_contained(instances.masks[i], instances, cfg.containment_frac);
            if (contained > 1) s[i] *= 1.0 - std::tanh(cfg.epsilon_pen * contained);
        }
    }

    NmsResult out;
    out.kept.shape = instances.shape;
    std::vector<std::size_t> alive;
    for (std::size_t i = 0; i < n; ++i)
        if (s[i] >= cfg.tau) alive.push_back(i);

    while (!alive.empty()) {
        // Highest score wins; ties go to the lower input index.
        auto best = std::min_element(alive.begin(), alive.end(), [&](std::size_t a, std::size_t b) {
            return s[a] != s[b] ? s[a] > s[b] : a < b;
        });
        const std::size_t m = *best;
        alive.erase(best);
        out.kept.add(instances.masks[m], instances.scores[m], instances.provenance[m]);
        out.source.push_back(m);
        out.final_scores.push_back(s[m]);

        std::vector<std::size_t> next;
        for (std::size_t i : alive) {
            const double u = box_iou(instances.masks[m].box(), instances.masks[i].box());
            s[i] *= std::clamp(decay_factor(cfg, u), 0.0, 1.0);
            if (s[i] >= cfg.tau) next.push_back(i);
        }
        alive = std::move(next);
    }
    return out;
}

LabelMap label_map(const NmsResult& result, std::size_t min_area) {
    std::vector<std::size_t> order(result.kept.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return result.final_scores[a] > result.final_scores[b]; });
    return rasterize(result.kept, order, min_area);
}

}  // namespace sprout::postprocess
