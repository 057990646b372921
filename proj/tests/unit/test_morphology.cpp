#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "sprout/morphology.hpp"
#include "unit/helpers.hpp"

using namespace sprout;

namespace {

BinaryMask random_mask(std::mt19937_64& rng, int rows, int cols, double p) {
    std::bernoulli_distribution b(p);
    BinaryMask m(rows, cols);
    for (auto& v : m.bytes()) v = b(rng);
    return m;
}

// Union-find over 8-neighbour pairs.
std::vector<int> union_find_labels(const BinaryMask& m) {
    const int n = m.rows() * m.cols();
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) {
            if (!m(r, c)) continue;
            for (int dr = -1; dr <= 1; ++dr)
                for (int dc = -1; dc <= 1; ++dc)
                    if (m.contains(r + dr, c + dc) && m(r + dr, c + dc))
                        parent[find(r * m.cols() + c)] = find((r + dr) * m.cols() + c + dc);
        }
    std::vector<int> out(n, -1);
    for (int i = 0; i < n; ++i)
        if (m.bytes()[i]) out[i] = find(i);
    return out;
}

double brute_distance(const BinaryMask& m, int r, int c) {
    if (!m(r, c)) return 0.0;
    double best = 1e18;
    for (int rr = -1; rr <= m.rows(); ++rr)
        for (int cc = -1; cc <= m.cols(); ++cc) {
            const bool unset = !m.contains(rr, cc) || !m(rr, cc);
            if (unset) best = std::min(best, double((rr - r) * (rr - r) + (cc - c) * (cc - c)));
        }
    return std::sqrt(best);
}

}  // namespace

TEST_CASE("connected components agree with union-find") {
    std::mt19937_64 rng(1);
    for (int t = 0; t < 30; ++t) {
        const auto m = random_mask(rng, 17, 23, 0.45);
        const auto lab = morph::connected_components(m);
        const auto ref = union_find_labels(m);
        std::map<int, int> fwd, back;
        for (int i = 0; i < m.rows() * m.cols(); ++i) {
            const int a = lab.labels.data()[i];
            if (ref[i] < 0) {
                CHECK(a == 0);
                continue;
            }
            REQUIRE(a > 0);
            if (!fwd.count(a)) fwd[a] = ref[i];
            if (!back.count(ref[i])) back[ref[i]] = a;
            CHECK(fwd[a] == ref[i]);
            CHECK(back[ref[i]] == a);
        }
        CHECK(static_cast<int>(fwd.size()) == lab.count);
        std::size_t total = 0;
        for (auto a : lab.areas) total += a;
        CHECK(total == m.count());
    }
}

TEST_CASE("diagonal pixels are connected") {
    BinaryMask m(3, 3);
    m.set(0, 0);
    m.set(1, 1);
    m.set(2, 2);
    CHECK(morph::connected_components(m).count == 1);
}

TEST_CASE("distance transform equals brute force") {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 10; ++t) {
        const auto m = random_mask(rng, 13, 11, 0.8);
        const auto d = morph::distance_transform(m);
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < m.cols(); ++c) CHECK(d(r, c) == doctest::Approx(brute_distance(m, r, c)).epsilon(1e-12));
    }
}

TEST_CASE("distance transform of a disk peaks at its center") {
    const auto d = morph::distance_transform(testing::disk({31, 31}, 15, 15, 10));
    const auto peaks = morph::local_maxima(d, testing::disk({31, 31}, 15, 15, 10), 5);
    REQUIRE(peaks.size() == 1);
    CHECK(std::abs(peaks[0].row - 15) <= 1);
    CHECK(std::abs(peaks[0].col - 15) <= 1);
}

TEST_CASE("local maxima respect the minimum separation") {
    ScalarMap f(20, 20, 1, 0.0);
    f(5, 5) = 3.0;
    f(5, 7) = 2.0;   // within 5 of the first peak
    f(15, 15) = 1.0;
    BinaryMask all(20, 20, true);
    const auto peaks = morph::local_maxima(f, all, 5);
    REQUIRE(peaks.size() == 2);
    CHECK(peaks[0] == Point{5, 5});
    CHECK(peaks[1] == Point{15, 15});
    CHECK(morph::local_maxima(f, all, 1).size() == 3);
}

TEST_CASE("watershed floods each basin from its marker") {
    const Shape s{30, 50};
    const auto mask = testing::disk(s, 15, 14, 10) | testing::disk(s, 15, 35, 10);
    ScalarMap elev = morph::distance_transform(mask);
    for (auto& v : elev.values()) v = -v;
    const auto labels = morph::watershed(elev, {{15, 14}, {15, 35}}, mask);
    for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c) {
            if (!mask(r, c)) {
                CHECK(labels(r, c) == 0);
                continue;
            }
            CHECK(labels(r, c) == (c < 25 ? 1 : 2));
        }
}

TEST_CASE("watershed leaves unreachable pixels unlabeled") {
    BinaryMask mask(5, 9);
    for (int r = 0; r < 5; ++r) mask.set(r, 1), mask.set(r, 7);
    ScalarMap elev(5, 9, 1, 0.0);
    const auto labels = morph::watershed(elev, {{2, 1}}, mask);
    CHECK(labels(0, 1) == 1);
    CHECK(labels(2, 7) == 0);
}

TEST_CASE("dilation equals brute-force square dilation") {
    std::mt19937_64 rng(3);
    for (int radius : {0, 1, 2, 4}) {
        const auto m = random_mask(rng, 15, 19, 0.05);
        const auto d = morph::dilate(m, radius);
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < m.cols(); ++c) {
                bool want = false;
                for (int rr = r - radius; rr <= r + radius; ++rr)
                    for (int cc = c - radius; cc <= c + radius; ++cc) want |= m.contains(rr, cc) && m(rr, cc);
                CHECK(d(r, c) == want);
            }
    }
}

TEST_CASE("nearest resize of a 4x4 grid to 8x8 is block constant") {
    ScalarMap g(4, 4);
    for (int i = 0; i < 16; ++i) g.data()[i] = i * 1.5;
    const auto up = morph::resize(g, {8, 8}, morph::Interpolation::nearest);
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) CHECK(up(r, c) == g(r / 2, c / 2));
}

TEST_CASE("bilinear resize preserves constants and linear ramps inside") {
    ScalarMap g(4, 6, 1, 2.5);
    const auto up = morph::resize(g, {9, 13}, morph::Interpolation::bilinear);
    for (double v : up.values()) CHECK(v == doctest::Approx(2.5));
    ScalarMap ramp(4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) ramp(r, c) = c;
    const auto up2 = morph::resize(ramp, {8, 8}, morph::Interpolation::bilinear);
    // Interior samples land at (c + 0.5) / 2 - 0.5 in source units.
    for (int c = 1; c < 7; ++c) CHECK(up2(3, c) == doctest::Approx((c + 0.5) / 2 - 0.5));
}

TEST_CASE("gaussian blur keeps constants and mass on a reflected grid") {
    ScalarMap g(10, 12, 1, 1.25);
    const auto b = morph::gaussian_blur(g, 1.5);
    for (double v : b.values()) CHECK(v == doctest::Approx(1.25));
    ScalarMap spike(21, 21, 1, 0.0);
    spike(10, 10) = 1.0;
    const auto s = morph::gaussian_blur(spike, 1.0);
    double total = 0;
    for (double v : s.values()) total += v;
    CHECK(total == doctest::Approx(1.0));
    CHECK(s(10, 10) > s(10, 11));
    CHECK(morph::gaussian_blur(spike, 0.0) == spike);
}
