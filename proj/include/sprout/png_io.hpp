#pragma once

#include <filesystem>

#include "sprout/grid.hpp"
#include "sprout/instances.hpp"

namespace sprout::io {

/// Reads any 8/16-bit PNG as 8-bit RGB. Gray is replicated, alpha dropped.
RasterImage read_rgb(const std::filesystem::path& path);
void write_rgb(const std::filesystem::path& path, const RasterImage& image);

/// 16-bit grayscale label maps. 8-bit gray inputs are widened.
LabelMap read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace sprout::io
