#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sprout/instances.hpp"
#include "sprout/stain.hpp"

namespace sprout::fixtures {

struct FixtureSpec {
    int rows = 384;
    int cols = 384;
    int images = 20;
    int nuclei_min = 30;
    int nuclei_max = 120;
    double radius_min = 6.0;
    double radius_max = 11.0;
    double axis_ratio_min = 0.7;
    double h_min = 0.6;  ///< hematoxylin concentration inside nuclei
    double h_max = 1.2;
    double e_nucleus = 0.1;
    double e_background_min = 0.25;
    double e_background_max = 0.45;
    double texture = 0.08;  ///< amplitude of the smooth eosin texture
    double overlap_probability = 0.1;
    double max_overlap_fraction = 0.2;  ///< overlapping pairs / nuclei
    int min_gap = 2;
    double noise = 0.03;  ///< per-channel optical-density noise

    void validate() const;
};

FixtureSpec parse_spec(const std::string& yaml);
FixtureSpec load_spec(const std::filesystem::path& path);

struct Ellipse {
    double row = 0.0;
    double col = 0.0;
    double a = 0.0;  ///< semi-axes in pixels
    double b = 0.0;
    double theta = 0.0;
    double h = 0.0;

    bool contains(double r, double c) const;
};

struct Fixture {
    RasterImage image;
    LabelMap labels;  ///< the later-drawn nucleus owns overlap pixels
    std::vector<Ellipse> nuclei;
    std::vector<std::pair<int, int>> overlapping;  ///< 0-based nucleus indices
    ScalarMap h_concentration;                     ///< rendered ground-truth s_h
};

/// Renders one H&E-like tile through the inverse optical-density model.
/// Throws RuntimeError when the requested nuclei cannot be placed.
Fixture render(const FixtureSpec& spec, std::uint64_t seed, const stain::StainMatrix& stains);

std::string fixture_stem(int index);

/// Writes <out>/images/<stem>.png and <out>/gt/<stem>.png for spec.images
/// fixtures. Image i uses seed + i.
void generate(const FixtureSpec& spec, std::uint64_t seed, const std::filesystem::path& out,
              const stain::StainMatrix& stains);

}  // namespace sprout::fixtures
