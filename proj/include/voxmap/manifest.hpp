#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxmap/preprocess.hpp"

namespace voxmap {

enum class Sex { Female, Male };

std::string to_string(Sex s);
Sex parse_sex(const std::string& s);

struct SubjectRecord {
    std::string id;
    Sex sex = Sex::Female;
    // Age (years) is stored under "age"; explicit volumes (mL) and mean
    // densities (HU) live alongside it. Empty cells are simply absent.
    std::map<std::string, double> covariates;
    std::string image_path;
    std::map<std::string, std::string> mask_paths;

    std::optional<double> covariate(const std::string& name) const;
    // Throws ConfigError naming the subject when the value is missing.
    double require_covariate(const std::string& name) const;
};

struct CohortManifest {
    std::vector<SubjectRecord> records;
    std::optional<std::string> reference_id;
    // Relative image/mask paths resolve against this directory.
    std::filesystem::path data_root;

    const SubjectRecord& find(const std::string& id) const;
    bool contains(const std::string& id) const;
    std::filesystem::path resolve(const std::string& relative) const;
    // Union of covariate names over all records, sorted.
    std::vector<std::string> covariate_names() const;
};

// CSV with header `id,sex,age,image`, optional `mask_<Region>` columns and
// further numeric covariate columns. Duplicate ids and non-numeric values are
// rejected; an empty age cell is accepted and only fails when age is needed.
// `data_root` defaults to the manifest directory; VOXMAP_DATA_ROOT overrides it.
CohortManifest read_manifest(const std::filesystem::path& path);
CohortManifest parse_manifest(const std::string& csv_text, const std::filesystem::path& data_root);
void write_manifest(const CohortManifest& m, const std::filesystem::path& path);

// Loads the image and every mask listed for the subject.
Volume load_subject_image(const CohortManifest& m, const SubjectRecord& r);
MaskSet load_subject_masks(const CohortManifest& m, const SubjectRecord& r);

// Minimal CSV field splitting (quoted fields with "" escapes).
std::vector<std::string> split_csv_line(const std::string& line);
std::string csv_escape(const std::string& field);

} // namespace voxmap
