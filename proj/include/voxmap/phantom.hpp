#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "voxmap/manifest.hpp"

namespace voxmap {

struct Ellipsoid {
    Vec3 center;
    Vec3 radii;

    double volume() const;
    bool contains(const Vec3& p) const;
};

// Capped cylinder around the segment start..end.
struct Tube {
    Vec3 start;
    Vec3 end;
    double radius = 0.0;

    bool contains(const Vec3& p) const;
};

struct SinusoidTerm {
    Vec3 amplitude; // mm
    Vec3 wave;      // rad/mm
    double phase = 0.0;
};

// Maps subject space to model space, p = x + g(x), with
// g(x) = (scale - 1) * (x - center) + translation + sum_m A_m sin(k_m . x + phi_m).
struct SmoothDeformation {
    Vec3 center;
    Vec3 scale{1.0, 1.0, 1.0};
    Vec3 translation;
    std::vector<SinusoidTerm> terms;

    Vec3 displacement(const Vec3& x) const;
    // d(x + g(x)) / dx, row-major.
    std::array<double, 9> jacobian(const Vec3& x) const;
    double jacobian_determinant(const Vec3& x) const;
    // Upper bound on the spectral norm of dg/dx.
    double gradient_bound() const;
    Vec3 to_model(const Vec3& x) const { return x + displacement(x); }
    // Fixed-point inverse; requires gradient_bound() < 1.
    Vec3 to_subject(const Vec3& p) const;
};

struct PhantomSpec {
    Geometry geometry{Dims{96, 96, 96}};
    // LV, RV, LA, RA
    std::map<std::string, Ellipsoid> chambers;
    double myo_thickness = 5.0;
    Tube aorta;
    // Lung slabs cover x below lung_left and above lung_right (mm).
    double lung_left = 12.0;
    double lung_right = 84.0;
    // Liver fills z below liver_top (mm).
    double liver_top = 20.0;
    // Mean HU per region name plus "fat" for the remaining body.
    std::map<std::string, double> hu;
    double noise_sd = 20.0;
    SmoothDeformation deformation;
    std::uint64_t seed = 1;

    void validate() const;
};

// Default layout for a 96^3 volume at 1 mm.
PhantomSpec default_phantom_spec();

struct PhantomTruth {
    // Ellipsoid volumes in model space (chambers only), mL.
    std::map<std::string, double> analytic_volume_ml;
    // Voxel-count volumes of the rasterized masks, mL.
    std::map<std::string, double> mask_volume_ml;
    std::map<std::string, double> density_hu;
};

struct Phantom {
    Volume image;
    MaskSet masks;
    PhantomTruth truth;
};

// Region name at a model-space point ("" is fat/body).
std::string phantom_region_at(const PhantomSpec& spec, const Vec3& model_point);
Phantom generate_phantom(const PhantomSpec& spec);

enum class PlantedChannel { Volume, Density };

struct PlantedEffect {
    std::string region;
    PlantedChannel channel = PlantedChannel::Volume;
    // Volume: mL/year (or fraction/year when relative); density: HU/year.
    double slope_per_year = 0.0;
    // Same units as the slope, without the per-year.
    double noise_sd = 0.0;
    bool relative = false;
};

struct DeformationModel {
    double amplitude_mm = 4.0;
    int terms = 4;
    double wavelength_min_mm = 48.0;
    double wavelength_max_mm = 96.0;
    double max_gradient = 0.5;
    double translation_sd_mm = 0.0;
    double scale_sd = 0.0;
};

struct CohortSpec {
    int subjects = 20;
    double age_min = 50.0;
    double age_max = 65.0;
    double female_fraction = 0.5;
    std::vector<PlantedEffect> effects;
    DeformationModel deformation;
    std::uint64_t seed = 1;
    std::string id_prefix = "sub";

    double age_center() const { return 0.5 * (age_min + age_max); }
    void validate() const;
};

struct SubjectDraw {
    std::string id;
    Sex sex = Sex::Female;
    double age = 0.0;
    PhantomSpec spec;
};

// Per-subject specs; deterministic in the cohort seed.
std::vector<SubjectDraw> draw_cohort(const PhantomSpec& base, const CohortSpec& cohort);

struct GroundTruthRow {
    std::string id;
    Sex sex = Sex::Female;
    double age = 0.0;
    std::uint64_t seed = 0;
    PhantomTruth truth;
    double deformation_gradient_bound = 0.0;
};

struct GeneratedCohort {
    CohortManifest manifest;
    std::vector<GroundTruthRow> truth;
};

// Writes images/, masks/, manifest.csv and ground_truth.csv under out_dir.
GeneratedCohort generate_cohort(const PhantomSpec& base, const CohortSpec& cohort, const std::filesystem::path& out_dir);
void write_ground_truth(const std::vector<GroundTruthRow>& rows, const std::filesystem::path& path);

} // namespace voxmap
