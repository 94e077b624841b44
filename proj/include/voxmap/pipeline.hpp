#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxmap/analysis.hpp"
#include "voxmap/manifest.hpp"
#include "voxmap/phantom.hpp"
#include "voxmap/registration.hpp"
#include "voxmap/stats.hpp"
#include "voxmap/supervoxel.hpp"

namespace voxmap {

struct PipelineConfig {
    // Overrides the manifest directory when resolving relative paths.
    std::optional<std::filesystem::path> data_root;
    std::filesystem::path output_dir = "voxmap_out";
    std::array<StageConfig, 2> stages{default_stage1(), default_stage2()};
    PreprocessOptions preprocess;
    SlicOptions slic;
    AssociationOptions analysis;
    std::map<std::string, double> template_weights = default_template_weights();
    bool stratify_by_sex = false;
    bool reverse = false; // also register reference -> subject for ICE
    int jobs = 1;
    PhantomSpec phantom = default_phantom_spec();
    CohortSpec cohort;

    void validate() const;
};

// JSON text; absent keys keep their defaults, unknown keys are rejected.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& cfg);

StageConfig parse_stage_config(const std::string& json_text);
std::string stage_config_to_json(const StageConfig& cfg);

// Loads a manifest honouring the config data root and VOXMAP_DATA_ROOT (the
// environment variable wins).
CohortManifest open_manifest(const std::filesystem::path& path, const PipelineConfig& cfg);

// Line-atomic progress output on stderr.
void log_line(const std::string& line);

struct SubjectRegistration {
    DisplacementField forward;
    std::optional<DisplacementField> backward;
    Volume warped_hu;
    Volume jacobian;
    std::map<std::string, double> dice;     // per reference mask region
    std::map<std::string, double> ice_mean; // per chamber region, reverse runs only
    std::map<std::string, double> ice_sd;
    SolveLog log;
    double seconds = 0.0;
};

struct RegistrationInput {
    const Volume* image = nullptr;
    const MaskSet* masks = nullptr;
    const PreprocessedSubject* pre = nullptr;
};

// Preprocessing is shared by the caller; the LV mask of both subjects is
// required for the affine initialisation.
SubjectRegistration register_pair(const RegistrationInput& ref, const RegistrationInput& flt,
                                  const std::array<StageConfig, 2>& stages, bool reverse,
                                  const RegistrationOptions& opt = {});

struct TemplateChoice {
    std::string stratum; // "all", "female" or "male"
    std::string id;
    TemplateSelection selection;
};

std::vector<TemplateChoice> select_templates(const CohortManifest& m, const std::map<std::string, double>& weights,
                                             bool stratify_by_sex);
// Per-feature CSVs (id, value, selected) plus templates.csv.
void write_template_report(const std::vector<TemplateChoice>& choices, const CohortManifest& m,
                           const std::filesystem::path& dir);

struct RegisterSummary {
    std::vector<std::string> registered;
    std::map<std::string, std::string> failed; // id -> reason
    SolveLog log;
};

// Writes under `dir`: fields/, warped/, jd/, qc.csv, reference.txt and
// aggregate/ mean and SD maps. With stratify_by_sex only subjects sharing the
// reference's sex are registered.
RegisterSummary run_register(const CohortManifest& m, const std::string& reference_id, const PipelineConfig& cfg,
                             const std::filesystem::path& dir);

struct AnalyzeSummary {
    SupervoxelDecomposition supervoxels;
    std::vector<AssociationMap> maps;
    std::vector<std::string> subjects;
    FeatureMatrix features;
    std::vector<double> covariate; // per subject, same order
    LabelVolume exclusion;         // region filter used by associate
};

// Reads the artifacts of run_register from `register_dir`. With
// stratify_by_sex only subjects sharing the reference's sex are analysed.
AnalyzeSummary run_analyze(const CohortManifest& m, const std::string& reference_id, const std::string& covariate,
                           const std::vector<Channel>& channels, const PipelineConfig& cfg,
                           const std::filesystem::path& register_dir, const std::filesystem::path& out_dir);

// Diverging blue-white-red colour for r in [-1, 1].
std::array<std::uint8_t, 3> diverging_color(double r);

struct RenderOptions {
    int axis = 2;
    std::vector<int> slices;
    bool map_only = false;
    double window_low = -300.0;
    double window_high = 200.0;
};

// Writes <stem>_<axis><slice>.png per slice and colorbar.png.
std::vector<std::filesystem::path> render_map(const Volume& map, const Volume& base, const RenderOptions& opt,
                                              const std::filesystem::path& out_dir, const std::string& stem);

void write_png(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& rgb);
std::vector<std::uint8_t> read_png_rgb(const std::filesystem::path& path, int& width, int& height);

} // namespace voxmap
