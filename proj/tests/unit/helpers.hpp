#pragma once

#include <atomic>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "sprout/grid.hpp"
#include "sprout/instances.hpp"

namespace testing {

namespace fs = std::filesystem;

inline sprout::BinaryMask disk(sprout::Shape s, double r0, double c0, double radius) {
    sprout::BinaryMask m(s.rows, s.cols);
    for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c)
            if ((r - r0) * (r - r0) + (c - c0) * (c - c0) <= radius * radius) m.set(r, c);
    return m;
}

inline sprout::BinaryMask rect(sprout::Shape s, int r0, int c0, int r1, int c1) {
    sprout::BinaryMask m(s.rows, s.cols);
    for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) m.set(r, c);
    return m;
}

inline sprout::InstanceMask inst(const sprout::BinaryMask& m) { return sprout::InstanceMask::from_dense(m); }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("sprout_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

}  // namespace testing
