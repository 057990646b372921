#include "sprout/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

namespace sprout::morph {

Labeling connected_components(const BinaryMask& mask) {
    Labeling out{Grid<std::int32_t>(mask.rows(), mask.cols(), 1, 0), 0, {}};
    std::vector<Point> stack;
    for (int r = 0; r < mask.rows(); ++r) {
        for (int c = 0; c < mask.cols(); ++c) {
            if (!mask(r, c) || out.labels(r, c) != 0) continue;
            const int label = ++out.count;
            std::size_t area = 0;
            stack.push_back({r, c});
            out.labels(r, c) = label;
            while (!stack.empty()) {
                const Point p = stack.back();
                stack.pop_back();
                ++area;
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int rr = p.row + dr, cc = p.col + dc;
                        if ((dr || dc) && mask.contains(rr, cc) && mask(rr, cc) && out.labels(rr, cc) == 0) {
                            out.labels(rr, cc) = label;
                            stack.push_back({rr, cc});
                        }
                    }
            }
            out.areas.push_back(area);
        }
    }
    return out;
}

namespace {

// Felzenszwalb-Huttenlocher lower envelope of parabolas.
void squared_edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    int k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int q = 1; q < n; ++q) {
        if (f[q] == inf) continue;
        if (f[v[k]] == inf) {
            v[k] = q;
            continue;
        }
        double s;
        while (true) {
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) / (2.0 * (q - v[k]));
            if (s <= z[k] && k > 0) {
                --k;
                continue;
            }
            break;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        d[q] = f[v[k]] == inf ? inf : (double(q) - v[k]) * (double(q) - v[k]) + f[v[k]];
    }
}

}  // namespace

ScalarMap distance_transform(const BinaryMask& mask) {
    // One-pixel unset frame so the image border counts as background.
    const int rows = mask.rows() + 2;
    const int cols = mask.cols() + 2;
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> g(static_cast<std::size_t>(rows) * cols, 0.0);
    for (int r = 0; r < mask.rows(); ++r)
        for (int c = 0; c < mask.cols(); ++c) g[(r + 1) * cols + c + 1] = mask(r, c) ? inf : 0.0;

    const int n = std::max(rows, cols);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<int> v(n);
    f.resize(rows);
    d.resize(rows);
    for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) f[r] = g[r * cols + c];
        squared_edt_1d(f, d, v, z);
        for (int r = 0; r < rows; ++r) g[r * cols + c] = d[r];
    }
    f.resize(cols);
    d.resize(cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) f[c] = g[r * cols + c];
        squared_edt_1d(f, d, v, z);
        for (int c = 0; c < cols; ++c) g[r * cols + c] = d[c];
    }

    ScalarMap out(mask.rows(), mask.cols());
    for (int r = 0; r < mask.rows(); ++r)
        for (int c = 0; c < mask.cols(); ++c) out(r, c) = std::sqrt(g[(r + 1) * cols + c + 1]);
    return out;
}

std::vector<Point> local_maxima(const ScalarMap& field, const BinaryMask& mask, int min_separation) {
    struct Candidate {
        double value;
        Point p;
    };
    std::vector<Candidate> candidates;
    for (int r = 0; r < field.rows(); ++r)
        for (int c = 0; c < field.cols(); ++c) {
            if (!mask(r, c) || !(field(r, c) > 0.0)) continue;
            bool peak = true;
            for (int dr = -1; dr <= 1 && peak; ++dr)
                for (int dc = -1; dc <= 1; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if ((dr || dc) && field.contains(rr, cc) && mask(rr, cc) && field(rr, cc) > field(r, c)) {
                        peak = false;
                        break;
                    }
                }
            if (peak) candidates.push_back({field(r, c), {r, c}});
        }
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Candidate& a, const Candidate& b) { return a.value > b.value; });

    std::vector<Point> kept;
    for (const auto& cand : candidates) {
        const bool far = std::all_of(kept.begin(), kept.end(), [&](const Point& q) {
            return std::max(std::abs(q.row - cand.p.row), std::abs(q.col - cand.p.col)) >= min_separation;
        });
        if (far) kept.push_back(cand.p);
    }
    return kept;
}

Grid<std::int32_t> watershed(const ScalarMap& elevation, const std::vector<Point>& markers, const BinaryMask& mask) {
    Grid<std::int32_t> labels(elevation.rows(), elevation.cols(), 1, 0);
    // (elevation, arrival order) gives a deterministic flood.
    using Item = std::tuple<double, std::uint64_t, int, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    std::uint64_t order = 0;
    for (std::size_t k = 0; k < markers.size(); ++k) {
        const auto [r, c] = markers[k];
        if (!mask.contains(r, c) || !mask(r, c) || labels(r, c) != 0) continue;
        labels(r, c) = static_cast<std::int32_t>(k + 1);
        queue.emplace(elevation(r, c), order++, r, c);
    }
    constexpr int dr[4] = {-1, 1, 0, 0};
    constexpr int dc[4] = {0, 0, -1, 1};
    while (!queue.empty()) {
        const auto [h, ord, r, c] = queue.top();
        queue.pop();
        for (int n = 0; n < 4; ++n) {
            const int rr = r + dr[n], cc = c + dc[n];
            if (!mask.contains(rr, cc) || !mask(rr, cc) || labels(rr, cc) != 0) continue;
            labels(rr, cc) = labels(r, c);
            queue.emplace(std::max(h, elevation(rr, cc)), order++, rr, cc);
        }
    }
    return labels;
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
    if (radius <= 0) return mask;
    // Separable square dilation: rows then columns.
    BinaryMask tmp(mask.rows(), mask.cols());
    for (int r = 0; r < mask.rows(); ++r) {
        int last = -1000000;
        for (int c = 0; c < mask.cols() + radius; ++c) {
            if (c < mask.cols() && mask(r, c)) last = c;
            const int target = c - radius;
            if (target >= 0 && target < mask.cols() && c - last <= 2 * radius) tmp.set(r, target);
        }
    }
    BinaryMask out(mask.rows(), mask.cols());
    for (int c = 0; c < mask.cols(); ++c) {
        int last = -1000000;
        for (int r = 0; r < mask.rows() + radius; ++r) {
            if (r < mask.rows() && tmp(r, c)) last = r;
            const int target = r - radius;
            if (target >= 0 && target < mask.rows() && r - last <= 2 * radius) out.set(target, c);
        }
    }
    return out;
}

ScalarMap resize(const ScalarMap& map, Shape target, Interpolation mode) {
    ScalarMap out(target.rows, target.cols);
    if (map.empty() || target.area() == 0) return out;
    const double sy = static_cast<double>(map.rows()) / target.rows;
    const double sx = static_cast<double>(map.cols()) / target.cols;
    for (int r = 0; r < target.rows; ++r) {
        for (int c = 0; c < target.cols; ++c) {
            if (mode == Interpolation::nearest) {
                const int rr = std::min(map.rows() - 1, static_cast<int>(std::floor((r + 0.5) * sy)));
                const int cc = std::min(map.cols() - 1, static_cast<int>(std::floor((c + 0.5) * sx)));
                out(r, c) = map(rr, cc);
                continue;
            }
            const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(map.rows() - 1));
            const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(map.cols() - 1));
            const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
            const int y1 = std::min(y0 + 1, map.rows() - 1), x1 = std::min(x0 + 1, map.cols() - 1);
            const double fy = y - y0, fx = x - x0;
            out(r, c) = (1 - fy) * ((1 - fx) * map(y0, x0) + fx * map(y0, x1)) +
                        fy * ((1 - fx) * map(y1, x0) + fx * map(y1, x1));
        }
    }
    return out;
}

ScalarMap gaussian_blur(const ScalarMap& map, double sigma) {
    if (!(sigma > 0.0)) return map;
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& k : kernel) k /= total;

    auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
        return i;
    };
    ScalarMap tmp(map.rows(), map.cols()), out(map.rows(), map.cols());
    for (int r = 0; r < map.rows(); ++r)
        for (int c = 0; c < map.cols(); ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += kernel[i + radius] * map(r, reflect(c + i, map.cols()));
            tmp(r, c) = s;
        }
    for (int r = 0; r < map.rows(); ++r)
        for (int c = 0; c < map.cols(); ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += kernel[i + radius] * tmp(reflect(r + i, map.rows()), c);
            out(r, c) = s;
        }
    return out;
}

}  // namespace sprout::morph
