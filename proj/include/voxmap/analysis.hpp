#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxmap/field.hpp"
#include "voxmap/preprocess.hpp"

namespace voxmap {

// 2|A n B| / (|A| + |B|) over nonzero voxels; both empty gives 1.
double dice(const LabelVolume& a, const LabelVolume& b);

// det(I + du/dx) with central differences (one-sided at the borders).
Volume jacobian_determinant(const DisplacementField& field);

struct IceResult {
    Volume map;                  // mm; 0 outside the domain and for excluded voxels
    double mean = 0.0;
    double sd = 0.0;             // n-1 denominator
    std::size_t count = 0;       // voxels in the summary
    std::size_t excluded = 0;    // domain voxels mapped outside the floating grid
};

// ||T_bwd(T_fwd(x)) - x|| for x in `domain` (all voxels when absent).
IceResult inverse_consistency(const DisplacementField& fwd, const DisplacementField& bwd,
                              const LabelVolume* domain = nullptr);

// Summary of a scalar map restricted to a mask.
struct MaskedSummary {
    double mean = 0.0;
    double sd = 0.0;
    std::size_t count = 0;
};
MaskedSummary summarize(const Volume& v, const LabelVolume& mask);

struct RegionStats {
    std::string region;
    double dice = 0.0;
    double ice_mean = 0.0;
    double ice_sd = 0.0;
};
void write_region_stats(const std::vector<RegionStats>& rows, const std::filesystem::path& path);

// Welford accumulator over same-geometry volumes.
class StreamingMoments {
public:
    void add(const Volume& v);
    std::size_t count() const { return n_; }
    Volume mean() const;
    // Sample SD (n-1); zero for a single input.
    Volume sd() const;

private:
    Geometry geom_;
    std::size_t n_ = 0;
    std::vector<double> mean_;
    std::vector<double> m2_;
};

struct AggregateMaps {
    Volume hu_mean;
    Volume hu_sd;
    Volume jd_mean;
    Volume jd_sd;
    Volume ice_mean;
};

struct CohortAggregator {
    StreamingMoments hu;
    StreamingMoments jd;
    StreamingMoments ice;

    AggregateMaps finish() const;
};

// Explicit region measurements: volumes (mL) LVV, RVV, LAV, RAV, MV, AoV and
// mean densities (HU) LVD, RVD, LAD, RAD, MD, AoD. Absent masks are skipped.
std::map<std::string, double> region_measurements(const Volume& hu, const MaskSet& masks);
const std::vector<std::string>& measurement_names();
// Measurement name for a region's volume / density.
std::string volume_feature(std::string_view region);
std::string density_feature(std::string_view region);

} // namespace voxmap
