#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "helpers.hpp"
#include "voxmap/nifti.hpp"
#include "voxmap/phantom.hpp"
#include "voxmap/stats.hpp"

using namespace voxmap;

namespace {

std::string file_bytes(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// r(age, region volume) over a drawn cohort, volumes counted on the rasterized masks.
double age_volume_r(const CohortSpec& cohort, const std::string& region)
{
    std::vector<double> age, vol;
    for (const SubjectDraw& d : draw_cohort(default_phantom_spec(), cohort)) {
        age.push_back(d.age);
        vol.push_back(generate_phantom(d.spec).truth.mask_volume_ml.at(region));
    }
    return pearson(age, vol).r;
}

} // namespace

TEST_SUITE("phantom")
{
    TEST_CASE("zero-noise phantom has exact region HU")
    {
        PhantomSpec spec = default_phantom_spec();
        spec.noise_sd = 0.0;
        const Phantom p = generate_phantom(spec);
        const LabelVolume& lv = p.masks.at("LV");
        std::size_t n = 0;
        for (std::size_t i = 0; i < lv.size(); ++i)
            if (lv[i]) {
                CHECK(p.image[i] == 300.0f);
                ++n;
            }
        CHECK(n > 0);
        CHECK(p.image(0, 0, 0) == -800.0f); // lung slab
        CHECK(p.truth.density_hu.at("LV") == doctest::Approx(300.0));
    }

    TEST_CASE("rasterized chamber volumes match the analytic ellipsoids")
    {
        PhantomSpec spec = default_phantom_spec();
        const Ellipsoid& lv = spec.chambers.at("LV");
        CHECK(lv.volume() == doctest::Approx(4.0 / 3.0 * std::numbers::pi * 11 * 10 * 12));
        const Phantom p = generate_phantom(spec);
        const double analytic = p.truth.analytic_volume_ml.at("LV");
        CHECK(analytic == doctest::Approx(lv.volume() / 1000.0));
        CHECK(std::abs(p.truth.mask_volume_ml.at("LV") - analytic) <= 0.02 * analytic);
    }

    TEST_CASE("region masks are pairwise disjoint and inside the volume")
    {
        const Phantom p = generate_phantom(default_phantom_spec());
        std::vector<int> hits(p.image.size(), 0);
        for (const auto& [name, m] : p.masks) {
            CHECK(m.geometry().matches(p.image.geometry()));
            for (std::size_t i = 0; i < m.size(); ++i)
                hits[i] += m[i] != 0;
        }
        CHECK(*std::max_element(hits.begin(), hits.end()) <= 1);
        for (const char* r : {"LV", "RV", "LA", "RA", "MYO", "Aorta", "lungs", "liver"})
            CHECK(p.masks.count(r) == 1);
    }

    TEST_CASE("invalid specs are rejected")
    {
        PhantomSpec s = default_phantom_spec();
        s.chambers.at("LV").center = {5, 5, 5};
        CHECK_THROWS_AS(s.validate(), ConfigError);
        s = default_phantom_spec();
        s.chambers.erase("RA");
        CHECK_THROWS_AS(s.validate(), ConfigError);
        s = default_phantom_spec();
        s.noise_sd = -1.0;
        CHECK_THROWS_AS(s.validate(), ConfigError);
        CohortSpec c;
        c.subjects = 0;
        CHECK_THROWS_AS(c.validate(), ConfigError);
    }

    TEST_CASE("deformation examples")
    {
        SmoothDeformation d;
        d.center = {10, 10, 10};
        d.scale = {1.1, 1.0, 0.9};
        d.translation = {1, 2, 3};
        CHECK(norm(d.displacement({10, 10, 10}) - Vec3{1, 2, 3}) < 1e-12);
        CHECK(d.jacobian_determinant({0, 0, 0}) == doctest::Approx(1.1 * 0.9));
        d.terms.push_back({{1.0, 0.5, 0.0}, {0.05, 0.0, 0.1}, 0.3});
        const Vec3 x{3.0, -4.0, 7.0};
        CHECK(norm(d.to_subject(d.to_model(x)) - x) < 1e-9);
        // Jacobian against central differences.
        const auto j = d.jacobian(x);
        for (int c = 0; c < 3; ++c) {
            Vec3 e{};
            e[c] = 1e-5;
            const Vec3 diff = (1.0 / 2e-5) * (d.to_model(x + e) - d.to_model(x - e));
            for (int r = 0; r < 3; ++r)
                CHECK(j[static_cast<std::size_t>(3 * r + c)] == doctest::Approx(diff[r]).epsilon(1e-6));
        }
    }

    TEST_CASE("drawn deformations have positive jacobian everywhere")
    {
        CohortSpec c;
        c.subjects = 10;
        c.seed = 17;
        c.deformation.translation_sd_mm = 2.0;
        c.deformation.scale_sd = 0.05;
        const Geometry g = default_phantom_spec().geometry;
        for (const SubjectDraw& d : draw_cohort(default_phantom_spec(), c)) {
            CHECK(d.spec.deformation.gradient_bound() < 1.0);
            double min_jd = 1e9;
            for (int k = 0; k < g.dims.z; k += 3)
                for (int j = 0; j < g.dims.y; j += 3)
                    for (int i = 0; i < g.dims.x; i += 3)
                        min_jd = std::min(min_jd, d.spec.deformation.jacobian_determinant(g.index_to_physical(i, j, k)));
            CHECK(min_jd > 0.0);
        }
    }

    TEST_CASE("cohort draws are deterministic and cover the age range")
    {
        CohortSpec c;
        c.subjects = 30;
        c.seed = 5;
        const auto a = draw_cohort(default_phantom_spec(), c);
        const auto b = draw_cohort(default_phantom_spec(), c);
        REQUIRE(a.size() == 30);
        for (std::size_t s = 0; s < a.size(); ++s) {
            CHECK(a[s].id == b[s].id);
            CHECK(a[s].age == b[s].age);
            CHECK(a[s].spec.seed == b[s].spec.seed);
            CHECK(a[s].age >= 50.0);
            CHECK(a[s].age <= 65.0);
        }
        CHECK(a[0].id == "sub001");
        c.seed = 6;
        CHECK(draw_cohort(default_phantom_spec(), c)[0].age != a[0].age);
    }

    TEST_CASE("same seed gives bit-identical cohort files")
    {
        testutil::TempDir dir("cohort");
        CohortSpec c;
        c.subjects = 2;
        c.seed = 9;
        const PhantomSpec base = default_phantom_spec();
        const GeneratedCohort g1 = generate_cohort(base, c, dir / "a");
        const GeneratedCohort g2 = generate_cohort(base, c, dir / "b");
        CHECK(g1.manifest.records.size() == 2);
        CHECK(file_bytes(dir / "a" / "manifest.csv") == file_bytes(dir / "b" / "manifest.csv"));
        CHECK(file_bytes(dir / "a" / "ground_truth.csv") == file_bytes(dir / "b" / "ground_truth.csv"));
        for (const auto& r : g1.manifest.records) {
            CHECK(file_bytes(dir / "a" / r.image_path) == file_bytes(dir / "b" / r.image_path));
            CHECK(read_scalar_volume(dir / "a" / r.image_path).dims() == base.geometry.dims);
            CHECK(r.covariate("LVV").has_value());
            CHECK(r.mask_paths.count("LV") == 1);
        }
    }

    TEST_CASE("no planted slope: volumes are unrelated to age")
    {
        CohortSpec c;
        c.subjects = 50;
        c.seed = 21;
        CHECK(std::abs(age_volume_r(c, "LV")) < 0.3);
    }

    TEST_CASE("planted volume slope shows in the ground truth")
    {
        CohortSpec c;
        c.subjects = 50;
        c.seed = 22;
        c.effects.push_back({"LV", PlantedChannel::Volume, -0.5, 0.05, false});
        CHECK(age_volume_r(c, "LV") <= -0.9);
    }

    TEST_CASE("planted density slope")
    {
        CohortSpec c;
        c.subjects = 20;
        c.seed = 23;
        c.effects.push_back({"MYO", PlantedChannel::Density, 2.0, 1.0, false});
        std::vector<double> age, hu;
        for (const SubjectDraw& d : draw_cohort(default_phantom_spec(), c)) {
            age.push_back(d.age);
            hu.push_back(d.spec.hu.at("MYO"));
        }
        CHECK(pearson(age, hu).r >= 0.95);
    }
}
