#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "voxmap/pipeline.hpp"

namespace voxmap {

using nlohmann::json;

namespace {

// Rejects keys outside `allowed` so typos do not silently fall back to defaults.
void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed)
{
    if (!j.is_object())
        throw ConfigError(where + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [k, v] : j.items())
        if (!ok.count(k))
            throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where)
{
    auto it = j.find(key);
    if (it == j.end())
        return;
    try {
        out = it->get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

json stage_json(const StageConfig& s)
{
    return {{"levels", s.levels},
            {"block_size", s.block_size},
            {"regularization_weight", s.regularization_weight},
            {"image_weight", s.image_weight},
            {"mask_weights", s.mask_weights},
            {"max_iterations", s.max_iterations},
            {"ncc_radius", s.ncc_radius},
            {"step_fraction", s.step_fraction},
            {"convergence_epsilon", s.convergence_epsilon}};
}

StageConfig stage_from(const json& j, StageConfig s, const std::string& where)
{
    check_keys(j, where,
               {"levels", "block_size", "regularization_weight", "image_weight", "mask_weights", "max_iterations",
                "ncc_radius", "step_fraction", "convergence_epsilon"});
    read(j, "levels", s.levels, where);
    read(j, "block_size", s.block_size, where);
    read(j, "regularization_weight", s.regularization_weight, where);
    read(j, "image_weight", s.image_weight, where);
    read(j, "mask_weights", s.mask_weights, where);
    read(j, "max_iterations", s.max_iterations, where);
    read(j, "ncc_radius", s.ncc_radius, where);
    read(j, "step_fraction", s.step_fraction, where);
    read(j, "convergence_epsilon", s.convergence_epsilon, where);
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return s;
}

PlantedChannel parse_planted_channel(const std::string& s, const std::string& where)
{
    if (s == "volume")
        return PlantedChannel::Volume;
    if (s == "density")
        return PlantedChannel::Density;
    throw ConfigError(where + ": channel must be 'volume' or 'density', got '" + s + "'");
}

json parse_json(const std::string& text, const std::string& what)
{
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(what + ": " + e.what());
    }
}

} // namespace

StageConfig parse_stage_config(const std::string& json_text)
{
    return stage_from(parse_json(json_text, "stage config"), default_stage1(), "stage");
}

std::string stage_config_to_json(const StageConfig& cfg)
{
    return stage_json(cfg).dump(2);
}

void PipelineConfig::validate() const
{
    for (const auto& s : stages)
        s.validate();
    if (jobs < 1)
        throw ConfigError("jobs must be at least 1");
    if (slic.seed_spacing < 2)
        throw ConfigError("slic.seed_spacing must be at least 2");
    if (slic.max_iterations < 1)
        throw ConfigError("slic.max_iterations must be at least 1");
    if (!(slic.compactness >= 0.0))
        throw ConfigError("slic.compactness must be non-negative");
    if (!(analysis.alpha > 0.0 && analysis.alpha < 1.0))
        throw ConfigError("analysis.alpha must lie in (0, 1)");
    if (template_weights.empty())
        throw ConfigError("template_weights must name at least one feature");
    phantom.validate();
    cohort.validate();
}

PipelineConfig parse_config(const std::string& json_text)
{
    const json j = parse_json(json_text, "config");
    check_keys(j, "config",
               {"data_root", "output_dir", "jobs", "stratify_by_sex", "reverse", "stages", "preprocess", "slic",
                "analysis", "template_weights", "phantom", "cohort"});
    PipelineConfig c;
    if (auto it = j.find("data_root"); it != j.end())
        c.data_root = it->get<std::string>();
    if (auto it = j.find("output_dir"); it != j.end())
        c.output_dir = it->get<std::string>();
    read(j, "jobs", c.jobs, "config");
    read(j, "stratify_by_sex", c.stratify_by_sex, "config");
    read(j, "reverse", c.reverse, "config");

    if (auto it = j.find("stages"); it != j.end()) {
        if (!it->is_array() || it->size() != 2)
            throw ConfigError("config.stages: expected an array of 2 stage objects");
        c.stages[0] = stage_from((*it)[0], default_stage1(), "stages[0]");
        c.stages[1] = stage_from((*it)[1], default_stage2(), "stages[1]");
    }
    if (auto it = j.find("preprocess"); it != j.end()) {
        const std::string w = "preprocess";
        check_keys(*it, w,
                   {"removed_hu", "clip_low", "clip_high", "rescale", "median_radius", "high_density_min",
                    "low_density_min"});
        read(*it, "removed_hu", c.preprocess.removed_hu, w);
        read(*it, "clip_low", c.preprocess.clip_low, w);
        read(*it, "clip_high", c.preprocess.clip_high, w);
        read(*it, "rescale", c.preprocess.rescale, w);
        read(*it, "median_radius", c.preprocess.median_radius, w);
        read(*it, "high_density_min", c.preprocess.high_density_min, w);
        read(*it, "low_density_min", c.preprocess.low_density_min, w);
    }
    if (auto it = j.find("slic"); it != j.end()) {
        check_keys(*it, "slic", {"seed_spacing", "compactness", "max_iterations"});
        read(*it, "seed_spacing", c.slic.seed_spacing, "slic");
        read(*it, "compactness", c.slic.compactness, "slic");
        read(*it, "max_iterations", c.slic.max_iterations, "slic");
    }
    if (auto it = j.find("analysis"); it != j.end()) {
        check_keys(*it, "analysis", {"alpha", "benjamini_hochberg", "min_subjects"});
        read(*it, "alpha", c.analysis.alpha, "analysis");
        read(*it, "benjamini_hochberg", c.analysis.benjamini_hochberg, "analysis");
        read(*it, "min_subjects", c.analysis.min_subjects, "analysis");
    }
    if (auto it = j.find("template_weights"); it != j.end())
        read(j, "template_weights", c.template_weights, "config");
    if (auto it = j.find("phantom"); it != j.end()) {
        const std::string w = "phantom";
        check_keys(*it, w, {"noise_sd", "myo_thickness", "hu"});
        read(*it, "noise_sd", c.phantom.noise_sd, w);
        read(*it, "myo_thickness", c.phantom.myo_thickness, w);
        if (auto h = it->find("hu"); h != it->end())
            for (const auto& [k, v] : h->items()) {
                if (!c.phantom.hu.count(k))
                    throw ConfigError("phantom.hu: unknown tissue '" + k + "'");
                c.phantom.hu[k] = v.get<double>();
            }
    }
    if (auto it = j.find("cohort"); it != j.end()) {
        const std::string w = "cohort";
        check_keys(*it, w,
                   {"subjects", "age_min", "age_max", "female_fraction", "seed", "id_prefix", "deformation",
                    "effects"});
        read(*it, "subjects", c.cohort.subjects, w);
        read(*it, "age_min", c.cohort.age_min, w);
        read(*it, "age_max", c.cohort.age_max, w);
        read(*it, "female_fraction", c.cohort.female_fraction, w);
        read(*it, "seed", c.cohort.seed, w);
        read(*it, "id_prefix", c.cohort.id_prefix, w);
        if (auto d = it->find("deformation"); d != it->end()) {
            const std::string wd = "cohort.deformation";
            check_keys(*d, wd,
                       {"amplitude_mm", "terms", "wavelength_min_mm", "wavelength_max_mm", "max_gradient",
                        "translation_sd_mm", "scale_sd"});
            auto& m = c.cohort.deformation;
            read(*d, "amplitude_mm", m.amplitude_mm, wd);
            read(*d, "terms", m.terms, wd);
            read(*d, "wavelength_min_mm", m.wavelength_min_mm, wd);
            read(*d, "wavelength_max_mm", m.wavelength_max_mm, wd);
            read(*d, "max_gradient", m.max_gradient, wd);
            read(*d, "translation_sd_mm", m.translation_sd_mm, wd);
            read(*d, "scale_sd", m.scale_sd, wd);
        }
        if (auto e = it->find("effects"); e != it->end()) {
            if (!e->is_array())
                throw ConfigError("cohort.effects: expected an array");
            for (std::size_t i = 0; i < e->size(); ++i) {
                const std::string we = "cohort.effects[" + std::to_string(i) + "]";
                const json& x = (*e)[i];
                check_keys(x, we, {"region", "channel", "slope_per_year", "noise_sd", "relative"});
                PlantedEffect pe;
                read(x, "region", pe.region, we);
                std::string ch = "volume";
                read(x, "channel", ch, we);
                pe.channel = parse_planted_channel(ch, we);
                read(x, "slope_per_year", pe.slope_per_year, we);
                read(x, "noise_sd", pe.noise_sd, we);
                read(x, "relative", pe.relative, we);
                c.cohort.effects.push_back(pe);
            }
        }
    }
    c.validate();
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string config_to_json(const PipelineConfig& c)
{
    json j;
    if (c.data_root)
        j["data_root"] = c.data_root->string();
    j["output_dir"] = c.output_dir.string();
    j["jobs"] = c.jobs;
    j["stratify_by_sex"] = c.stratify_by_sex;
    j["reverse"] = c.reverse;
    j["stages"] = json::array({stage_json(c.stages[0]), stage_json(c.stages[1])});
    const auto& p = c.preprocess;
    j["preprocess"] = {{"removed_hu", p.removed_hu},       {"clip_low", p.clip_low},
                       {"clip_high", p.clip_high},         {"rescale", p.rescale},
                       {"median_radius", p.median_radius}, {"high_density_min", p.high_density_min},
                       {"low_density_min", p.low_density_min}};
    j["slic"] = {{"seed_spacing", c.slic.seed_spacing},
                 {"compactness", c.slic.compactness},
                 {"max_iterations", c.slic.max_iterations}};
    j["analysis"] = {{"alpha", c.analysis.alpha},
                     {"benjamini_hochberg", c.analysis.benjamini_hochberg},
                     {"min_subjects", c.analysis.min_subjects}};
    j["template_weights"] = c.template_weights;
    j["phantom"] = {{"noise_sd", c.phantom.noise_sd}, {"myo_thickness", c.phantom.myo_thickness}, {"hu", c.phantom.hu}};
    const auto& d = c.cohort.deformation;
    json effects = json::array();
    for (const auto& e : c.cohort.effects)
        effects.push_back({{"region", e.region},
                           {"channel", e.channel == PlantedChannel::Volume ? "volume" : "density"},
                           {"slope_per_year", e.slope_per_year},
                           {"noise_sd", e.noise_sd},
                           {"relative", e.relative}});
    j["cohort"] = {{"subjects", c.cohort.subjects},
                   {"age_min", c.cohort.age_min},
                   {"age_max", c.cohort.age_max},
                   {"female_fraction", c.cohort.female_fraction},
                   {"seed", c.cohort.seed},
                   {"id_prefix", c.cohort.id_prefix},
                   {"deformation",
                    {{"amplitude_mm", d.amplitude_mm},
                     {"terms", d.terms},
                     {"wavelength_min_mm", d.wavelength_min_mm},
                     {"wavelength_max_mm", d.wavelength_max_mm},
                     {"max_gradient", d.max_gradient},
                     {"translation_sd_mm", d.translation_sd_mm},
                     {"scale_sd", d.scale_sd}}},
                   {"effects", effects}};
    return j.dump(2);
}

CohortManifest open_manifest(const std::filesystem::path& path, const PipelineConfig& cfg)
{
    CohortManifest m = read_manifest(path);
    const char* env = std::getenv("VOXMAP_DATA_ROOT");
    if (cfg.data_root && !(env && *env))
        m.data_root = *cfg.data_root;
    return m;
}

} // namespace voxmap
