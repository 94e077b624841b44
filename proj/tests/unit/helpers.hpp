#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "voxmap/field.hpp"
#include "voxmap/volume.hpp"

namespace testutil {

inline voxmap::Volume random_volume(const voxmap::Geometry& g, std::uint32_t seed, double lo = -1.0, double hi = 1.0)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(static_cast<float>(lo), static_cast<float>(hi));
    voxmap::Volume v(g);
    for (auto& x : v.values())
        x = u(rng);
    return v;
}

inline voxmap::DisplacementField random_field(const voxmap::Geometry& g, std::uint32_t seed, double amp)
{
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-amp, amp);
    voxmap::DisplacementField f(g);
    for (auto& x : f.values())
        x = {u(rng), u(rng), u(rng)};
    return f;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag)
    {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path()
              / ("voxmap_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir()
    {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

} // namespace testutil
