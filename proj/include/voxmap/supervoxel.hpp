#pragma once

#include <filesystem>
#include <vector>

#include "voxmap/volume.hpp"

namespace voxmap {

struct SupervoxelDecomposition {
    LabelVolume labels; // 1..count, every voxel labelled
    int count = 0;
    int seed_spacing = 25;
    double compactness = 0.2;
};

struct SlicOptions {
    int seed_spacing = 25;
    double compactness = 0.2;
    int max_iterations = 10;
};

// SLIC on a scalar volume with D^2 = dc^2 + (m * ds / S)^2, ds in voxels.
// Labels are made 6-connected and renumbered 1..K without gaps.
SupervoxelDecomposition slic_cluster(const Volume& intensity, const SlicOptions& opt = {});

// Seeds per axis for a given dimension and spacing (at least one).
int slic_seeds_per_axis(int dim, int spacing);

struct LabelMean {
    double mean = 0.0;
    std::size_t count = 0;
    bool empty() const { return count == 0; }
};

// Per-label mean over voxels whose exclusion flag is zero; index i holds label i+1.
std::vector<LabelMean> supervoxel_means(const SupervoxelDecomposition& d, const Volume& v,
                                        const LabelVolume* exclusion = nullptr);

// Label map plus a CSV with label, voxel count and physical centroid.
void write_supervoxels(const SupervoxelDecomposition& d, const std::filesystem::path& nifti_path,
                       const std::filesystem::path& csv_path);
SupervoxelDecomposition read_supervoxels(const std::filesystem::path& nifti_path);

// True when every label's voxels form a single 6-connected component.
bool labels_are_connected(const LabelVolume& labels);

} // namespace voxmap
