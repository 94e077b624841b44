#include "voxmap/analysis.hpp"

#include <cmath>
#include <fstream>

namespace voxmap {

double dice(const LabelVolume& a, const LabelVolume& b)
{
    require_same_geometry(a.geometry(), b.geometry(), "dice operands");
    std::size_t na = 0, nb = 0, both = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const bool x = a[i] != 0;
        const bool y = b[i] != 0;
        na += x;
        nb += y;
        both += x && y;
    }
    if (na + nb == 0)
        return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

Volume jacobian_determinant(const DisplacementField& field)
{
    const Geometry& g = field.geometry();
    const Dims& d = g.dims;
    Volume out(g, 1.0f);
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                const int idx[3] = {i, j, k};
                double m[3][3];
                for (int b = 0; b < 3; ++b) {
                    Vec3 du;
                    if (d[b] > 1) {
                        int lo[3] = {i, j, k};
                        int hi[3] = {i, j, k};
                        lo[b] = std::max(idx[b] - 1, 0);
                        hi[b] = std::min(idx[b] + 1, d[b] - 1);
                        du = (field(hi[0], hi[1], hi[2]) - field(lo[0], lo[1], lo[2]))
                           * (1.0 / ((hi[b] - lo[b]) * g.spacing[b]));
                    }
                    for (int a = 0; a < 3; ++a)
                        m[a][b] = (a == b ? 1.0 : 0.0) + du[a];
                }
                const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                                 - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                                 + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
                out(i, j, k) = static_cast<float>(det);
            }
    return out;
}

IceResult inverse_consistency(const DisplacementField& fwd, const DisplacementField& bwd, const LabelVolume* domain)
{
    const Geometry& g = fwd.geometry();
    if (domain)
        require_same_geometry(g, domain->geometry(), "ICE domain");
    IceResult r;
    r.map = Volume(g, 0.0f);
    double mean = 0.0, m2 = 0.0;
    const Dims& d = g.dims;
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                const std::size_t idx = g.linear(i, j, k);
                if (domain && (*domain)[idx] == 0)
                    continue;
                const Vec3 x = g.index_to_physical(i, j, k);
                const Vec3 y = x + fwd[idx];
                const auto ub = sample_field_inside(bwd, y);
                if (!ub) {
                    ++r.excluded;
                    continue;
                }
                const double e = norm(y + *ub - x);
                r.map[idx] = static_cast<float>(e);
                ++r.count;
                const double delta = e - mean;
                mean += delta / static_cast<double>(r.count);
                m2 += delta * (e - mean);
            }
    r.mean = mean;
    r.sd = r.count > 1 ? std::sqrt(m2 / static_cast<double>(r.count - 1)) : 0.0;
    return r;
}

MaskedSummary summarize(const Volume& v, const LabelVolume& mask)
{
    require_same_geometry(v.geometry(), mask.geometry(), "summary mask");
    MaskedSummary s;
    double mean = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (mask[i] == 0)
            continue;
        ++s.count;
        const double x = v[i];
        const double delta = x - mean;
        mean += delta / static_cast<double>(s.count);
        m2 += delta * (x - mean);
    }
    s.mean = mean;
    s.sd = s.count > 1 ? std::sqrt(m2 / static_cast<double>(s.count - 1)) : 0.0;
    return s;
}

void write_region_stats(const std::vector<RegionStats>& rows, const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write '" + path.string() + "'");
    os.precision(10);
    os << "region,dice,ice_mean,ice_sd\n";
    for (const auto& r : rows)
        os << r.region << ',' << r.dice << ',' << r.ice_mean << ',' << r.ice_sd << '\n';
}

void StreamingMoments::add(const Volume& v)
{
    if (n_ == 0) {
        geom_ = v.geometry();
        mean_.assign(v.size(), 0.0);
        m2_.assign(v.size(), 0.0);
    } else {
        require_same_geometry(geom_, v.geometry(), "aggregated volume");
    }
    ++n_;
    const double n = static_cast<double>(n_);
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double x = v[i];
        const double delta = x - mean_[i];
        mean_[i] += delta / n;
        m2_[i] += delta * (x - mean_[i]);
    }
}

Volume StreamingMoments::mean() const
{
    if (n_ == 0)
        throw ConfigError("no volumes aggregated");
    Volume out(geom_);
    for (std::size_t i = 0; i < mean_.size(); ++i)
        out[i] = static_cast<float>(mean_[i]);
    return out;
}

Volume StreamingMoments::sd() const
{
    if (n_ == 0)
        throw ConfigError("no volumes aggregated");
    Volume out(geom_, 0.0f);
    if (n_ < 2)
        return out;
    for (std::size_t i = 0; i < m2_.size(); ++i)
        out[i] = static_cast<float>(std::sqrt(std::max(m2_[i], 0.0) / static_cast<double>(n_ - 1)));
    return out;
}

AggregateMaps CohortAggregator::finish() const
{
    AggregateMaps m;
    m.hu_mean = hu.mean();
    m.hu_sd = hu.sd();
    m.jd_mean = jd.mean();
    m.jd_sd = jd.sd();
    if (ice.count() > 0)
        m.ice_mean = ice.mean();
    return m;
}

namespace {

struct FeatureNames {
    std::string_view region;
    const char* volume;
    const char* density;
};

constexpr FeatureNames kFeatures[] = {
    {region::LV, "LVV", "LVD"}, {region::RV, "RVV", "RVD"}, {region::LA, "LAV", "LAD"},
    {region::RA, "RAV", "RAD"}, {region::MYO, "MV", "MD"},  {region::Aorta, "AoV", "AoD"},
};

const FeatureNames& feature_of(std::string_view r)
{
    for (const auto& f : kFeatures)
        if (f.region == r)
            return f;
    throw ConfigError("no explicit measurement for region '" + std::string(r) + "'");
}

} // namespace

std::string volume_feature(std::string_view r)
{
    return feature_of(r).volume;
}

std::string density_feature(std::string_view r)
{
    return feature_of(r).density;
}

const std::vector<std::string>& measurement_names()
{
    static const std::vector<std::string> names = [] {
        std::vector<std::string> n;
        for (const auto& f : kFeatures)
            n.emplace_back(f.volume);
        for (const auto& f : kFeatures)
            n.emplace_back(f.density);
        return n;
    }();
    return names;
}

std::map<std::string, double> region_measurements(const Volume& hu, const MaskSet& masks)
{
    std::map<std::string, double> out;
    const Vec3& s = hu.spacing();
    const double voxel_ml = s.x * s.y * s.z / 1000.0;
    for (const auto& f : kFeatures) {
        auto it = masks.find(std::string(f.region));
        if (it == masks.end())
            continue;
        const MaskedSummary m = summarize(hu, it->second);
        out[f.volume] = static_cast<double>(m.count) * voxel_ml;
        if (m.count > 0)
            out[f.density] = m.mean;
    }
    return out;
}

} // namespace voxmap
