#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include "helpers.hpp"
#include "voxmap/nifti.hpp"
#include "voxmap/pipeline.hpp"

using namespace voxmap;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::size_t line_count(const fs::path& p)
{
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);)
        n += !line.empty();
    return n;
}

struct CliResult {
    int code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args, const fs::path& log)
{
    const std::string cmd = std::string(VOXMAP_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = slurp(log);
    return r;
}

// Stages that finish in about a second on the default phantom.
std::array<StageConfig, 2> quick_stages()
{
    std::array<StageConfig, 2> s{default_stage1(), default_stage2()};
    for (auto& st : s) {
        st.levels = 3;
        st.max_iterations = {3, 1, 0};
        st.step_fraction = 0.5;
    }
    return s;
}

// A small phantom cohort shared by the pipeline tests.
const fs::path& shared_cohort()
{
    static testutil::TempDir dir("pipeline_cohort");
    static bool made = false;
    if (!made) {
        CohortSpec c;
        c.subjects = 4;
        c.seed = 3;
        c.female_fraction = 1.0;
        generate_cohort(default_phantom_spec(), c, dir.path());
        made = true;
    }
    return dir.path();
}

} // namespace

TEST_SUITE("config")
{
    TEST_CASE("defaults follow the configuration tables")
    {
        const PipelineConfig cfg = parse_config("{}");
        CHECK(cfg.stages[0].regularization_weight == 2.0);
        CHECK(cfg.stages[1].regularization_weight == 0.15);
        CHECK(cfg.stages[0].block_size == 8);
        CHECK(cfg.stages[1].block_size == 32);
        CHECK(cfg.slic.seed_spacing == 25);
        CHECK(cfg.slic.compactness == doctest::Approx(0.2));
        CHECK(cfg.analysis.alpha == 0.05);
        CHECK_FALSE(cfg.analysis.benjamini_hochberg);
        CHECK_FALSE(cfg.stratify_by_sex);
        CHECK(cfg.template_weights == default_template_weights());
        CHECK(cfg.preprocess.clip_low == -300.0);
        CHECK(cfg.preprocess.clip_high == 200.0);
        CHECK(cfg.cohort.age_min == 50.0);
        CHECK(cfg.cohort.age_max == 65.0);
    }

    TEST_CASE("json round trip")
    {
        const PipelineConfig a = parse_config(slurp(fs::path(VOXMAP_SOURCE_DIR) / "configs" / "desk.json"));
        CHECK(a.stages[0].levels == 4);
        CHECK(a.stages[1].step_fraction == 0.5);
        CHECK(a.stages[1].regularization_weight == 0.15);
        CHECK(a.slic.seed_spacing == 8);
        REQUIRE(a.cohort.effects.size() == 1);
        CHECK(a.cohort.effects[0].relative);
        const PipelineConfig b = parse_config(config_to_json(a));
        CHECK(config_to_json(b) == config_to_json(a));
        CHECK(b.stages[0].max_iterations == a.stages[0].max_iterations);
        CHECK(b.stages[1].mask_weights == a.stages[1].mask_weights);
        CHECK(b.cohort.effects[0].slope_per_year == a.cohort.effects[0].slope_per_year);
        CHECK(b.phantom.chambers.at("LV").radii == a.phantom.chambers.at("LV").radii);

        const StageConfig s = parse_stage_config(stage_config_to_json(default_stage2()));
        CHECK(s.block_size == 32);
        CHECK(s.image_weight == 0.5);
    }

    TEST_CASE("invalid configurations are rejected")
    {
        CHECK_THROWS_AS(parse_config(R"({"unknown_key": 1})"), ConfigError);
        CHECK_THROWS_AS(parse_config(R"({"slic": {"seed_spacing": 5, "bogus": 2}})"), ConfigError);
        CHECK_THROWS_AS(parse_config(R"({"stages": [{}]})"), ConfigError);
        CHECK_THROWS_AS(parse_config(R"({"stages": [{"levels": 2}, {}]})"), ConfigError);
        CHECK_THROWS_AS(parse_config(R"({"cohort": {"subjects": 0}})"), ConfigError);
        CHECK_THROWS_AS(parse_config(R"({"jobs": 0})"), ConfigError);
        CHECK_THROWS_AS(parse_config("{ not json"), ParseError);
    }
}

TEST_SUITE("pipeline")
{
    TEST_CASE("colormap table")
    {
        CHECK(diverging_color(1.0) == std::array<std::uint8_t, 3>{255, 0, 0});
        CHECK(diverging_color(-1.0) == std::array<std::uint8_t, 3>{0, 0, 255});
        CHECK(diverging_color(0.0) == std::array<std::uint8_t, 3>{255, 255, 255});
        CHECK(diverging_color(2.0) == diverging_color(1.0));
    }

    TEST_CASE("render: insignificant map shows the base slice")
    {
        testutil::TempDir dir("render");
        const Geometry g({6, 5, 4});
        const Volume base = testutil::random_volume(g, 1, -400.0, 300.0);
        Volume map(g, 0.0f);
        RenderOptions opt;
        opt.slices = {2};
        const auto files = render_map(map, base, opt, dir.path(), "m");
        REQUIRE(files.size() == 2);
        CHECK(files[1].filename() == "colorbar.png");
        int w = 0, h = 0;
        const auto rgb = read_png_rgb(files[0], w, h);
        CHECK(w == 6);
        CHECK(h == 5);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const double v = base(x, h - 1 - y, 2);
                const auto gray = static_cast<std::uint8_t>(std::lround(std::clamp(255.0 * (v + 300.0) / 500.0, 0.0, 255.0)));
                const std::size_t px = (static_cast<std::size_t>(y) * w + x) * 3;
                CHECK(rgb[px] == gray);
                CHECK(rgb[px + 1] == gray);
                CHECK(rgb[px + 2] == gray);
            }

        opt.map_only = true;
        const auto black = read_png_rgb(render_map(map, base, opt, dir.path(), "k")[0], w, h);
        CHECK(std::all_of(black.begin(), black.end(), [](std::uint8_t c) { return c == 0; }));
    }

    TEST_CASE("render: r = +1 is full red")
    {
        testutil::TempDir dir("render_red");
        const Geometry g({4, 4, 3});
        Volume map(g, 0.0f);
        map(1, 2, 0) = 1.0f;
        map(2, 2, 0) = -1.0f;
        RenderOptions opt;
        opt.slices = {0};
        int w = 0, h = 0;
        const auto rgb = read_png_rgb(render_map(map, Volume(g, 0.0f), opt, dir.path(), "r")[0], w, h);
        const std::size_t red = (static_cast<std::size_t>(h - 1 - 2) * w + 1) * 3;
        CHECK(rgb[red] == 255);
        CHECK(rgb[red + 1] == 0);
        CHECK(rgb[red + 2] == 0);
        CHECK(rgb[red + 3 + 2] == 255);
        CHECK(rgb[red + 3] == 0);
    }

    TEST_CASE("render: slice out of range")
    {
        testutil::TempDir dir("render_bad");
        const Geometry g({4, 4, 3});
        RenderOptions opt;
        opt.slices = {3};
        CHECK_THROWS_AS(render_map(Volume(g, 0.0f), Volume(g, 0.0f), opt, dir.path(), "x"), ConfigError);
        opt.axis = 0;
        opt.slices = {-1};
        CHECK_THROWS_AS(render_map(Volume(g, 0.0f), Volume(g, 0.0f), opt, dir.path(), "x"), ConfigError);
    }

    TEST_CASE("template selection per stratum")
    {
        const CohortManifest all_female = read_manifest(shared_cohort() / "manifest.csv");
        const auto one = select_templates(all_female, default_template_weights(), false);
        REQUIRE(one.size() == 1);
        CHECK(one[0].stratum == "all");
        try {
            select_templates(all_female, default_template_weights(), true);
            FAIL("expected an error");
        } catch (const ConfigError& e) {
            CHECK(std::string(e.what()).find("male") != std::string::npos);
        }

        testutil::TempDir dir("templates");
        write_template_report(one, all_female, dir.path());
        CHECK(fs::exists(dir / "templates.csv"));
        CHECK(fs::exists(dir / "template_all_age.csv"));
        CHECK(line_count(dir / "template_all_LVV.csv") == 1 + all_female.records.size());
    }

    TEST_CASE("registering a subject to itself keeps every region")
    {
        const CohortManifest m = read_manifest(shared_cohort() / "manifest.csv");
        const SubjectRecord& r = m.records[0];
        const Volume image = read_scalar_volume(m.resolve(r.image_path));
        MaskSet masks;
        for (const auto& [name, p] : r.mask_paths)
            masks[name] = read_label_volume(m.resolve(p));
        const PreprocessedSubject pre = preprocess_subject(image, masks);
        const RegistrationInput in{&image, &masks, &pre};
        const SubjectRegistration reg = register_pair(in, in, quick_stages(), true);
        for (const auto& [region, d] : reg.dice)
            CHECK(d >= 0.99);
        CHECK(reg.ice_mean.at("LV") <= 1e-6);
        REQUIRE(reg.backward.has_value());
    }

    TEST_CASE("register, analyze and the command line")
    {
        testutil::TempDir dir("pipeline");
        const fs::path cohort = shared_cohort();

        // One subject without its LV mask.
        CohortManifest m = read_manifest(cohort / "manifest.csv");
        m.records[3].mask_paths.erase("LV");
        write_manifest(m, dir / "partial.csv");

        PipelineConfig cfg;
        cfg.data_root = cohort;
        cfg.stages = quick_stages();
        cfg.slic.seed_spacing = 16;
        cfg.output_dir = dir / "out";
        {
            std::ofstream os(dir / "quick.json");
            os << config_to_json(cfg);
        }

        const std::string ref = m.records[0].id;
        CliResult r = run_cli("register --config '" + (dir / "quick.json").string() + "' --manifest '"
                                  + (dir / "partial.csv").string() + "' --reference " + ref,
                              dir / "register.log");
        INFO(r.output);
        CHECK(r.code == 2);
        CHECK(r.output.find(m.records[3].id) != std::string::npos);
        const fs::path reg_dir = dir / "out" / "registration";
        CHECK(line_count(reg_dir / "qc.csv") == 1 + m.records.size());
        CHECK(slurp(reg_dir / "qc.csv").find("failed") != std::string::npos);
        for (int s = 0; s < 3; ++s) {
            CHECK(fs::exists(reg_dir / "fields" / (m.records[s].id + ".nii.gz")));
            CHECK(fs::exists(reg_dir / "jd" / (m.records[s].id + ".nii.gz")));
        }
        CHECK(fs::exists(reg_dir / "aggregate" / "jd_mean.nii.gz"));

        r = run_cli("analyze --config '" + (dir / "quick.json").string() + "' --manifest '"
                        + (dir / "partial.csv").string() + "' --reference " + ref + " --covariate nonexistent",
                    dir / "bad_cov.log");
        CHECK(r.code == 1);
        CHECK(r.output.find("available") != std::string::npos);
        CHECK(r.output.find("age") != std::string::npos);

        r = run_cli("analyze --config '" + (dir / "quick.json").string() + "' --manifest '"
                        + (dir / "partial.csv").string() + "' --reference " + ref + " --channel both",
                    dir / "analyze.log");
        CHECK(r.code == 0);
        const fs::path an = dir / "out" / "analysis";
        CHECK(fs::exists(an / "supervoxels.nii.gz"));
        CHECK(fs::exists(an / "age_jd_r.nii.gz"));
        CHECK(fs::exists(an / "age_hu.csv"));
        CHECK(fs::exists(an / "explicit_correlations.csv"));

        // analyze depends only on persisted artifacts, so a rerun is identical.
        const std::string first = slurp(an / "age_jd.csv");
        r = run_cli("analyze --config '" + (dir / "quick.json").string() + "' --manifest '"
                        + (dir / "partial.csv").string() + "' --reference " + ref + " --channel jd",
                    dir / "analyze2.log");
        CHECK(r.code == 0);
        CHECK(slurp(an / "age_jd.csv") == first);

        r = run_cli("render --map '" + (an / "age_jd_r.nii.gz").string() + "' --template '"
                        + m.resolve(m.records[0].image_path).string() + "' --slices 10,48 --out '"
                        + (dir / "png").string() + "'",
                    dir / "render.log");
        CHECK(r.code == 0);
        CHECK(fs::exists(dir / "png" / "age_jd_r_z48.png"));
        CHECK(fs::exists(dir / "png" / "colorbar.png"));

        r = run_cli("render --map '" + (an / "age_jd_r.nii.gz").string() + "' --template '"
                        + m.resolve(m.records[0].image_path).string() + "' --slices 500 --out '"
                        + (dir / "png").string() + "'",
                    dir / "render_bad.log");
        CHECK(r.code == 1);
    }

    TEST_CASE("command line errors")
    {
        testutil::TempDir dir("cli");
        {
            std::ofstream os(dir / "zero.json");
            os << R"({"cohort": {"subjects": 0}})";
        }
        CHECK(run_cli("phantom --config '" + (dir / "zero.json").string() + "' --out '" + (dir / "p").string() + "'",
                      dir / "zero.log")
                  .code
              == 1);
        CHECK(run_cli("no-such-command", dir / "unknown.log").code == 1);
        CHECK(run_cli("register --manifest '" + (dir / "missing.csv").string() + "' --reference x", dir / "m.log").code
              == 1);
        const CliResult cfg = run_cli("phantom --print-config", dir / "print.log");
        CHECK(cfg.code == 0);
        CHECK(parse_config(cfg.output).stages[0].block_size == 8);
    }
}
