// voxmap: phantom generation, template selection, registration, supervoxel
// association analysis and rendering.

#include <iostream>
#include <cstring>
#include <sstream>

#include <CLI11.hpp>

#include "voxmap/nifti.hpp"
#include "voxmap/pipeline.hpp"

using namespace voxmap;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::string out;
    int jobs = 0;
    bool stratify = false;
};

PipelineConfig load(const Common& c)
{
    PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : load_config(c.config);
    if (!c.out.empty())
        cfg.output_dir = c.out;
    if (c.jobs > 0)
        cfg.jobs = c.jobs;
    if (c.stratify)
        cfg.stratify_by_sex = true;
    cfg.validate();
    return cfg;
}

std::vector<Channel> parse_channels(const std::string& s)
{
    if (s == "both")
        return {Channel::Jacobian, Channel::Density};
    return {parse_channel(s)};
}

int axis_index(const std::string& s)
{
    if (s == "x")
        return 0;
    if (s == "y")
        return 1;
    if (s == "z")
        return 2;
    throw ConfigError("axis must be x, y or z, got '" + s + "'");
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Supervoxel-wise association analysis of cardiac CT"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "JSON configuration file")->check(CLI::ExistingFile);
        sub->add_option("--out", common.out, "Output directory (overrides the config)");
    };

    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom cohort");
    add_common(phantom);
    bool print_config = false;
    phantom->add_flag("--print-config", print_config, "Print the effective configuration and exit");

    std::string manifest;
    auto* select = app.add_subcommand("select-template", "Choose the reference subject(s)");
    add_common(select);
    select->add_option("--manifest", manifest, "Cohort manifest CSV")->required();
    select->add_flag("--stratify-by-sex", common.stratify, "One template per sex");

    std::string reference;
    bool reverse = false;
    auto* reg = app.add_subcommand("register", "Register every subject to the reference");
    add_common(reg);
    reg->add_option("--manifest", manifest, "Cohort manifest CSV")->required();
    reg->add_option("--reference", reference, "Reference subject id")->required();
    reg->add_option("--jobs", common.jobs, "Subjects registered in parallel");
    reg->add_flag("--stratify-by-sex", common.stratify, "Only register subjects sharing the reference's sex");
    reg->add_flag("--reverse", reverse, "Also register reference to subject and report inverse consistency");

    std::string covariate = "age";
    std::string channel = "both";
    std::string registration_dir;
    auto* analyze = app.add_subcommand("analyze", "Supervoxel-wise association maps");
    add_common(analyze);
    analyze->add_option("--manifest", manifest, "Cohort manifest CSV")->required();
    analyze->add_option("--reference", reference, "Reference subject id")->required();
    analyze->add_option("--covariate", covariate, "Manifest column to correlate with")->capture_default_str();
    analyze->add_option("--channel", channel, "jd, hu or both")->check(CLI::IsMember({"jd", "hu", "both"}))
        ->capture_default_str();
    analyze->add_option("--registration", registration_dir, "Output directory of the register command");
    analyze->add_flag("--stratify-by-sex", common.stratify, "Only analyse subjects sharing the reference's sex");

    std::string map_path, base_path, axis = "z", stem;
    std::vector<int> slices;
    bool map_only = false;
    auto* render = app.add_subcommand("render", "Render association map slices to PNG");
    render->add_option("--map", map_path, "Painted association map (NIfTI)")->required()->check(CLI::ExistingFile);
    render->add_option("--template", base_path, "Template image (NIfTI)")->required()->check(CLI::ExistingFile);
    render->add_option("--axis", axis, "Slice axis: x, y or z")->capture_default_str();
    render->add_option("--slices", slices, "Slice indices")->required()->delimiter(',');
    render->add_flag("--map-only", map_only, "Black background instead of the template");
    render->add_option("--out", common.out, "Output directory")->required();
    render->add_option("--stem", stem, "File name prefix (default: map file name)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*phantom) {
            const PipelineConfig cfg = load(common);
            if (print_config) {
                std::cout << config_to_json(cfg) << '\n';
                return 0;
            }
            const GeneratedCohort g = generate_cohort(cfg.phantom, cfg.cohort, cfg.output_dir);
            std::cout << (cfg.output_dir / "manifest.csv").string() << '\n';
            return 0;
        }
        if (*select) {
            const PipelineConfig cfg = load(common);
            const CohortManifest m = open_manifest(manifest, cfg);
            const auto choices = select_templates(m, cfg.template_weights, cfg.stratify_by_sex);
            write_template_report(choices, m, cfg.output_dir / "template");
            for (const auto& c : choices)
                std::cout << c.stratum << ' ' << c.id << '\n';
            return 0;
        }
        if (*reg) {
            PipelineConfig cfg = load(common);
            if (reverse)
                cfg.reverse = true;
            const CohortManifest m = open_manifest(manifest, cfg);
            const RegisterSummary s = run_register(m, reference, cfg, cfg.output_dir / "registration");
            std::cout << s.registered.size() << " registered, " << s.failed.size() << " failed\n";
            for (const auto& [id, why] : s.failed)
                std::cout << "  " << id << ": " << why << '\n';
            return s.failed.empty() ? 0 : 2;
        }
        if (*analyze) {
            const PipelineConfig cfg = load(common);
            const CohortManifest m = open_manifest(manifest, cfg);
            const fs::path reg_dir = registration_dir.empty() ? cfg.output_dir / "registration" : fs::path(registration_dir);
            const AnalyzeSummary s = run_analyze(m, reference, covariate, parse_channels(channel), cfg, reg_dir,
                                                 cfg.output_dir / "analysis");
            for (const auto& map : s.maps)
                std::cout << map.covariate << ' ' << to_string(map.channel) << ": " << map.significant() << '/'
                          << map.tested() << " significant\n";
            return 0;
        }
        if (*render) {
            RenderOptions opt;
            opt.axis = axis_index(axis);
            opt.slices = slices;
            opt.map_only = map_only;
            const Volume map = read_scalar_volume(map_path);
            const Volume base = read_scalar_volume(base_path);
            if (stem.empty()) {
                stem = fs::path(map_path).filename().string();
                for (const char* ext : {".gz", ".nii"})
                    if (stem.size() > std::strlen(ext) && stem.ends_with(ext))
                        stem.resize(stem.size() - std::strlen(ext));
            }
            for (const auto& p : render_map(map, base, opt, common.out, stem))
                std::cout << p.string() << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
