#include "voxmap/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "voxmap/analysis.hpp"
#include "voxmap/nifti.hpp"

namespace voxmap {

namespace fs = std::filesystem;

double Ellipsoid::volume() const
{
    return 4.0 / 3.0 * std::numbers::pi * radii.x * radii.y * radii.z;
}

bool Ellipsoid::contains(const Vec3& p) const
{
    const Vec3 q = divide(p - center, radii);
    return dot(q, q) <= 1.0;
}

bool Tube::contains(const Vec3& p) const
{
    const Vec3 axis = end - start;
    const double len2 = dot(axis, axis);
    if (len2 <= 0.0)
        return false;
    const double t = dot(p - start, axis) / len2;
    if (t < 0.0 || t > 1.0)
        return false;
    const Vec3 off = p - (start + t * axis);
    return dot(off, off) <= radius * radius;
}

Vec3 SmoothDeformation::displacement(const Vec3& x) const
{
    Vec3 g = hadamard(scale - Vec3{1.0, 1.0, 1.0}, x - center) + translation;
    for (const auto& t : terms)
        g += t.amplitude * std::sin(dot(t.wave, x) + t.phase);
    return g;
}

std::array<double, 9> SmoothDeformation::jacobian(const Vec3& x) const
{
    std::array<double, 9> j{scale.x, 0, 0, 0, scale.y, 0, 0, 0, scale.z};
    for (const auto& t : terms) {
        const double c = std::cos(dot(t.wave, x) + t.phase);
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b)
                j[static_cast<std::size_t>(3 * a + b)] += t.amplitude[a] * t.wave[b] * c;
    }
    return j;
}

double SmoothDeformation::jacobian_determinant(const Vec3& x) const
{
    const auto m = jacobian(x);
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

double SmoothDeformation::gradient_bound() const
{
    double b = std::max({std::abs(scale.x - 1.0), std::abs(scale.y - 1.0), std::abs(scale.z - 1.0)});
    for (const auto& t : terms)
        b += norm(t.amplitude) * norm(t.wave);
    return b;
}

Vec3 SmoothDeformation::to_subject(const Vec3& p) const
{
    if (!(gradient_bound() < 1.0))
        throw GeometryError("deformation is not invertible by fixed-point iteration");
    Vec3 x = p;
    for (int it = 0; it < 500; ++it) {
        const Vec3 next = p - displacement(x);
        const double step = norm(next - x);
        x = next;
        if (step < 1e-12 * (1.0 + norm(p)))
            break;
    }
    return x;
}

namespace {

// Internal region codes; 0 is fat/body.
enum Code : std::uint8_t { Fat = 0, LV, RV, LA, RA, MYO, Aorta, Lungs, Liver, CodeCount };

constexpr std::string_view kCodeName[CodeCount] = {"",
                                                   region::LV,
                                                   region::RV,
                                                   region::LA,
                                                   region::RA,
                                                   region::MYO,
                                                   region::Aorta,
                                                   region::Lungs,
                                                   region::Liver};

struct Layout {
    Ellipsoid chamber[4];
    Ellipsoid myo_outer;
    const PhantomSpec* spec;

    explicit Layout(const PhantomSpec& s) : spec(&s)
    {
        for (int c = 0; c < 4; ++c)
            chamber[c] = s.chambers.at(std::string(kCodeName[c + 1]));
        const double t = s.myo_thickness;
        myo_outer = Ellipsoid{chamber[0].center, chamber[0].radii + Vec3{t, t, t}};
    }

    Code at(const Vec3& p) const
    {
        for (int c = 0; c < 4; ++c)
            if (chamber[c].contains(p))
                return static_cast<Code>(c + 1);
        if (myo_outer.contains(p))
            return MYO;
        if (spec->aorta.contains(p))
            return Aorta;
        if (p.x < spec->lung_left || p.x > spec->lung_right)
            return Lungs;
        if (p.z < spec->liver_top)
            return Liver;
        return Fat;
    }
};

double hu_of(const PhantomSpec& s, std::string_view name)
{
    auto it = s.hu.find(std::string(name.empty() ? "fat" : name));
    if (it == s.hu.end())
        throw ConfigError("phantom has no HU value for '" + std::string(name.empty() ? "fat" : name) + "'");
    return it->second;
}

} // namespace

void PhantomSpec::validate() const
{
    geometry.validate();
    const Vec3 lo = geometry.origin;
    const Vec3 hi = geometry.index_to_physical(geometry.dims.x - 1, geometry.dims.y - 1, geometry.dims.z - 1);
    auto inside = [&](const Vec3& c, const Vec3& r, const std::string& what) {
        for (int a = 0; a < 3; ++a)
            if (c[a] - r[a] < lo[a] || c[a] + r[a] > hi[a])
                throw ConfigError("phantom region " + what + " extends outside the volume");
    };
    for (std::string_view n : region::chambers) {
        auto it = chambers.find(std::string(n));
        if (it == chambers.end())
            throw ConfigError("phantom is missing chamber " + std::string(n));
        const Vec3& r = it->second.radii;
        if (!(r.x > 0.0 && r.y > 0.0 && r.z > 0.0))
            throw ConfigError("phantom chamber " + std::string(n) + " needs positive radii");
        inside(it->second.center, r, std::string(n));
    }
    if (!(myo_thickness >= 0.0))
        throw ConfigError("myocardium thickness must be >= 0");
    const Ellipsoid& lv = chambers.at(std::string(region::LV));
    inside(lv.center, lv.radii + Vec3{myo_thickness, myo_thickness, myo_thickness}, "MYO");
    if (!(aorta.radius > 0.0))
        throw ConfigError("aorta radius must be > 0");
    for (const Vec3& e : {aorta.start, aorta.end})
        inside(e, Vec3{aorta.radius, aorta.radius, 0.0}, "Aorta");
    if (!(noise_sd >= 0.0))
        throw ConfigError("noise SD must be >= 0");
    for (std::string_view n : kCodeName)
        hu_of(*this, n);
    if (!(deformation.gradient_bound() < 1.0))
        throw ConfigError("phantom deformation may fold (gradient bound >= 1)");
}

PhantomSpec default_phantom_spec()
{
    PhantomSpec s;
    s.chambers[std::string(region::LV)] = {{58, 52, 44}, {11, 10, 12}};
    s.chambers[std::string(region::RV)] = {{31, 52, 44}, {10, 11, 12}};
    s.chambers[std::string(region::LA)] = {{58, 52, 70}, {9, 8, 8}};
    s.chambers[std::string(region::RA)] = {{31, 52, 70}, {8, 8, 8}};
    s.aorta = Tube{{45, 75, 28}, {45, 75, 90}, 5.0};
    s.hu = {{"fat", -100.0},
            {std::string(region::LV), 300.0},
            {std::string(region::RV), 300.0},
            {std::string(region::LA), 300.0},
            {std::string(region::RA), 300.0},
            {std::string(region::MYO), 50.0},
            {std::string(region::Aorta), 300.0},
            {std::string(region::Lungs), -800.0},
            {std::string(region::Liver), 60.0}};
    s.deformation.center = {48, 48, 48};
    return s;
}

std::string phantom_region_at(const PhantomSpec& spec, const Vec3& model_point)
{
    return std::string(kCodeName[Layout(spec).at(model_point)]);
}

Phantom generate_phantom(const PhantomSpec& spec)
{
    spec.validate();
    const Geometry& g = spec.geometry;
    const Layout layout(spec);
    double hu[CodeCount];
    for (int c = 0; c < CodeCount; ++c)
        hu[c] = hu_of(spec, kCodeName[c]);

    Phantom out;
    out.image = Volume(g);
    std::array<LabelVolume, CodeCount> masks;
    for (int c = 1; c < CodeCount; ++c)
        masks[c] = LabelVolume(g, 0u);
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::array<std::size_t, CodeCount> counts{};

    const Dims& d = g.dims;
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                const std::size_t idx = g.linear(i, j, k);
                const Code c = layout.at(spec.deformation.to_model(g.index_to_physical(i, j, k)));
                const double n = noise(rng);
                out.image[idx] = static_cast<float>(hu[c] + spec.noise_sd * n);
                ++counts[c];
                if (c != Fat)
                    masks[c][idx] = 1u;
            }

    const double voxel_ml = g.spacing.x * g.spacing.y * g.spacing.z / 1000.0;
    for (int c = 1; c < CodeCount; ++c) {
        const std::string name(kCodeName[c]);
        out.truth.mask_volume_ml[name] = static_cast<double>(counts[c]) * voxel_ml;
        out.truth.density_hu[name] = hu[c];
        out.masks[name] = std::move(masks[c]);
    }
    for (int c = 0; c < 4; ++c)
        out.truth.analytic_volume_ml[std::string(kCodeName[c + 1])] = layout.chamber[c].volume() / 1000.0;
    return out;
}

void CohortSpec::validate() const
{
    if (subjects < 1)
        throw ConfigError("cohort needs at least one subject");
    if (!(age_max >= age_min))
        throw ConfigError("age range is empty");
    if (!(female_fraction >= 0.0 && female_fraction <= 1.0))
        throw ConfigError("female fraction must lie in [0, 1]");
    for (const auto& e : effects) {
        if (!std::isfinite(e.slope_per_year) || !(e.noise_sd >= 0.0))
            throw ConfigError("planted effect on " + e.region + " needs a finite slope and noise SD >= 0");
        if (e.channel == PlantedChannel::Volume
            && std::find(region::chambers.begin(), region::chambers.end(), e.region) == region::chambers.end())
            throw ConfigError("volume effects are supported on chambers only, not " + e.region);
    }
    const auto& m = deformation;
    if (!(m.amplitude_mm >= 0.0) || m.terms < 0 || !(m.wavelength_min_mm > 0.0)
        || !(m.wavelength_max_mm >= m.wavelength_min_mm))
        throw ConfigError("invalid deformation model");
    if (!(m.max_gradient > 0.0 && m.max_gradient < 1.0))
        throw ConfigError("deformation max_gradient must lie in (0, 1)");
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index)
{
    // splitmix64 step
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

Vec3 random_unit(std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    while (true) {
        const Vec3 v{n(rng), n(rng), n(rng)};
        const double l = norm(v);
        if (l > 1e-6)
            return v * (1.0 / l);
    }
}

SmoothDeformation draw_deformation(const DeformationModel& m, const Vec3& center, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    SmoothDeformation d;
    d.center = center;
    for (int a = 0; a < 3; ++a) {
        d.scale[a] = 1.0 + m.scale_sd * n01(rng);
        d.translation[a] = m.translation_sd_mm * n01(rng);
    }
    double total = 0.0;
    for (int t = 0; t < m.terms; ++t) {
        SinusoidTerm s;
        const Vec3 dir = random_unit(rng);
        const double wavelength = m.wavelength_min_mm + (m.wavelength_max_mm - m.wavelength_min_mm) * u01(rng);
        s.wave = dir * (2.0 * std::numbers::pi / wavelength);
        // Transverse amplitude keeps each term volume preserving.
        Vec3 a = random_unit(rng);
        a -= dot(a, dir) * dir;
        if (norm(a) < 1e-6)
            a = std::abs(dir.x) < 0.9 ? Vec3{1, 0, 0} - dir.x * dir : Vec3{0, 1, 0} - dir.y * dir;
        s.amplitude = a * ((0.5 + 0.5 * u01(rng)) / norm(a));
        s.phase = 2.0 * std::numbers::pi * u01(rng);
        total += norm(s.amplitude);
        d.terms.push_back(s);
    }
    if (total > 0.0)
        for (auto& s : d.terms)
            s.amplitude *= m.amplitude_mm / total;
    const double global = std::max({std::abs(d.scale.x - 1.0), std::abs(d.scale.y - 1.0), std::abs(d.scale.z - 1.0)});
    if (global >= m.max_gradient)
        throw ConfigError("global scale jitter exceeds the deformation gradient bound");
    const double waves = d.gradient_bound() - global;
    if (waves > m.max_gradient - global)
        for (auto& s : d.terms)
            s.amplitude *= (m.max_gradient - global) / waves;
    return d;
}

} // namespace

std::vector<SubjectDraw> draw_cohort(const PhantomSpec& base, const CohortSpec& cohort)
{
    base.validate();
    cohort.validate();
    const int width = std::max<int>(3, static_cast<int>(std::to_string(cohort.subjects).size()));
    std::vector<SubjectDraw> out;
    out.reserve(static_cast<std::size_t>(cohort.subjects));
    const Geometry& g = base.geometry;
    const Vec3 center = 0.5 * (g.origin + g.index_to_physical(g.dims.x - 1, g.dims.y - 1, g.dims.z - 1));
    for (int s = 0; s < cohort.subjects; ++s) {
        std::mt19937_64 rng(mix_seed(cohort.seed, static_cast<std::uint64_t>(s)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::normal_distribution<double> n01(0.0, 1.0);

        SubjectDraw d;
        std::string num = std::to_string(s + 1);
        d.id = cohort.id_prefix + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(num.size(), width), '0')
             + num;
        d.age = cohort.age_min + (cohort.age_max - cohort.age_min) * u01(rng);
        d.sex = u01(rng) < cohort.female_fraction ? Sex::Female : Sex::Male;
        d.spec = base;
        d.spec.seed = rng();
        const double dage = d.age - cohort.age_center();
        for (const auto& e : cohort.effects) {
            const double eps = e.noise_sd * n01(rng);
            if (e.channel == PlantedChannel::Density) {
                d.spec.hu[e.region] += e.slope_per_year * dage + eps;
                continue;
            }
            Ellipsoid& el = d.spec.chambers.at(e.region);
            const double v0 = el.volume() / 1000.0;
            const double v = e.relative ? v0 * (1.0 + e.slope_per_year * dage + eps) : v0 + e.slope_per_year * dage + eps;
            if (!(v > 0.0))
                throw ConfigError("planted volume of " + e.region + " is not positive for " + d.id);
            el.radii *= std::cbrt(v / v0);
        }
        d.spec.deformation = draw_deformation(cohort.deformation, center, rng);
        out.push_back(std::move(d));
    }
    return out;
}

namespace {

std::string cell(const std::map<std::string, double>& m, const std::string& key)
{
    auto it = m.find(key);
    if (it == m.end())
        return {};
    std::ostringstream s;
    s.precision(12);
    s << it->second;
    return s.str();
}

} // namespace

void write_ground_truth(const std::vector<GroundTruthRow>& rows, const fs::path& path)
{
    std::set<std::string> regions;
    for (const auto& r : rows)
        for (const auto& [k, v] : r.truth.mask_volume_ml)
            regions.insert(k);
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write '" + path.string() + "'");
    os.precision(12);
    os << "id,sex,age,seed,gradient_bound";
    for (const auto& r : regions)
        os << ',' << r << "_volume_ml," << r << "_analytic_ml," << r << "_hu";
    os << '\n';
    for (const auto& row : rows) {
        os << csv_escape(row.id) << ',' << to_string(row.sex) << ',' << row.age << ',' << row.seed << ','
           << row.deformation_gradient_bound;
        for (const auto& r : regions) {
            os << ',' << cell(row.truth.mask_volume_ml, r) << ',' << cell(row.truth.analytic_volume_ml, r) << ','
               << cell(row.truth.density_hu, r);
        }
        os << '\n';
    }
}

GeneratedCohort generate_cohort(const PhantomSpec& base, const CohortSpec& cohort, const fs::path& out_dir)
{
    const auto draws = draw_cohort(base, cohort);
    GeneratedCohort out;
    out.manifest.data_root = out_dir;
    fs::create_directories(out_dir / "images");
    fs::create_directories(out_dir / "masks");
    for (const auto& d : draws) {
        const Phantom p = generate_phantom(d.spec);
        SubjectRecord r;
        r.id = d.id;
        r.sex = d.sex;
        r.covariates = region_measurements(p.image, p.masks);
        r.covariates["age"] = d.age;
        r.image_path = "images/" + d.id + ".nii.gz";
        write_volume(p.image, out_dir / r.image_path);
        for (const auto& [name, m] : p.masks) {
            const std::string rel = "masks/" + d.id + "_" + name + ".nii.gz";
            write_volume(m, out_dir / rel);
            r.mask_paths[name] = rel;
        }
        out.manifest.records.push_back(std::move(r));
        out.truth.push_back(GroundTruthRow{d.id, d.sex, d.age, d.spec.seed, p.truth, d.spec.deformation.gradient_bound()});
    }
    write_manifest(out.manifest, out_dir / "manifest.csv");
    write_ground_truth(out.truth, out_dir / "ground_truth.csv");
    return out;
}

} // namespace voxmap
