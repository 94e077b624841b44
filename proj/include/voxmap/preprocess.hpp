#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "voxmap/volume.hpp"

namespace voxmap {

// Binary anatomical masks keyed by region name.
using MaskSet = std::map<std::string, LabelVolume>;

namespace region {
inline constexpr std::string_view LV = "LV";
inline constexpr std::string_view RV = "RV";
inline constexpr std::string_view LA = "LA";
inline constexpr std::string_view RA = "RA";
inline constexpr std::string_view MYO = "MYO";
inline constexpr std::string_view Aorta = "Aorta";
inline constexpr std::string_view Lungs = "lungs";
inline constexpr std::string_view Liver = "liver";
inline constexpr std::string_view Stomach = "stomach";
inline constexpr std::string_view Esophagus = "esophagus";

inline constexpr std::array<std::string_view, 6> cardiac = {LV, RV, LA, RA, MYO, Aorta};
inline constexpr std::array<std::string_view, 4> chambers = {LV, RV, LA, RA};
// Removed before registration and filtered out of association maps.
inline constexpr std::array<std::string_view, 4> excluded = {Lungs, Liver, Stomach, Esophagus};
} // namespace region

struct PreprocessOptions {
    double removed_hu = -1000.0;
    double clip_low = -300.0;
    double clip_high = 200.0;
    double rescale = 1.0 / 300.0;
    int median_radius = 4;
    double high_density_min = 0.0;
    double low_density_min = -400.0;
};

// Registration channels. All volumes share the input image geometry.
struct PreprocessedSubject {
    Volume intensity;
    Volume cavity_mask;
    Volume myo_aorta_mask;
    Volume high_density_mask;
    Volume low_density_mask;
    LabelVolume exclusion_mask;

    const Geometry& geometry() const { return intensity.geometry(); }
};

const LabelVolume& require_mask(const MaskSet& masks, std::string_view name);
// Union of the named masks that are present; absent names are skipped.
LabelVolume union_of(const MaskSet& masks, const Geometry& g, std::span<const std::string_view> names);

// Indicator volumes of median(v) >= lo (and < hi when given) over the
// clamped (2r+1)^3 neighbourhood. Same result as thresholding median_filter,
// but uses box counts wherever the neighbourhood has an odd size.
Volume median_threshold_mask(const Volume& v, int radius, double lo, std::optional<double> hi = std::nullopt);

PreprocessedSubject preprocess_subject(const Volume& image, const MaskSet& masks, const PreprocessOptions& opt = {});

} // namespace voxmap
