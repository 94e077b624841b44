#include "voxmap/field.hpp"

#include <algorithm>

namespace voxmap {

bool DisplacementField::all_finite() const
{
    return std::all_of(values().begin(), values().end(), [](const Vec3& u) {
        return std::isfinite(u.x) && std::isfinite(u.y) && std::isfinite(u.z);
    });
}

namespace {

struct Stencil {
    int i0[3];
    int i1[3];
    double t[3];
};

Stencil clamped_stencil(const Geometry& g, const Vec3& p)
{
    Stencil s{};
    const Vec3 c = g.physical_to_index(p);
    for (int a = 0; a < 3; ++a) {
        const int n = g.dims[a];
        const double cc = std::clamp(c[a], 0.0, static_cast<double>(n - 1));
        int f = static_cast<int>(cc);
        if (n == 1) {
            s.i0[a] = s.i1[a] = 0;
            s.t[a] = 0.0;
            continue;
        }
        f = std::min(f, n - 2);
        s.i0[a] = f;
        s.i1[a] = f + 1;
        s.t[a] = cc - f;
    }
    return s;
}

Vec3 lerp(const Vec3& a, const Vec3& b, double t)
{
    return t == 0.0 ? a : a + t * (b - a);
}

// Nested lerps reproduce constant fields exactly.
Vec3 interpolate(const DisplacementField& f, const Stencil& s)
{
    Vec3 plane[2];
    for (int dz = 0; dz < 2; ++dz) {
        const int k = dz ? s.i1[2] : s.i0[2];
        Vec3 row[2];
        for (int dy = 0; dy < 2; ++dy) {
            const int j = dy ? s.i1[1] : s.i0[1];
            row[dy] = lerp(f(s.i0[0], j, k), f(s.i1[0], j, k), s.t[0]);
        }
        plane[dz] = lerp(row[0], row[1], s.t[1]);
    }
    return lerp(plane[0], plane[1], s.t[2]);
}

} // namespace

Vec3 sample_field(const DisplacementField& f, const Vec3& p)
{
    return interpolate(f, clamped_stencil(f.geometry(), p));
}

std::optional<Vec3> sample_field_inside(const DisplacementField& f, const Vec3& p)
{
    const Geometry& g = f.geometry();
    const Vec3 c = g.physical_to_index(p);
    for (int a = 0; a < 3; ++a)
        if (!(c[a] >= 0.0) || c[a] > g.dims[a] - 1)
            return std::nullopt;
    return interpolate(f, clamped_stencil(g, p));
}

DisplacementField upsample_field(const DisplacementField& coarse, const Geometry& fine)
{
    DisplacementField out(fine);
    for (int k = 0; k < fine.dims.z; ++k)
        for (int j = 0; j < fine.dims.y; ++j)
            for (int i = 0; i < fine.dims.x; ++i)
                out(i, j, k) = sample_field(coarse, fine.index_to_physical(i, j, k));
    return out;
}

Volume field_component(const DisplacementField& f, int axis)
{
    Volume out(f.geometry());
    for (std::size_t i = 0; i < f.size(); ++i)
        out[i] = static_cast<float>(f[i][axis]);
    return out;
}

DisplacementField field_from_components(const Volume& ux, const Volume& uy, const Volume& uz)
{
    require_same_geometry(ux.geometry(), uy.geometry(), "field components");
    require_same_geometry(ux.geometry(), uz.geometry(), "field components");
    DisplacementField out(ux.geometry());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = Vec3{ux[i], uy[i], uz[i]};
    return out;
}

DisplacementField downsample_field(const DisplacementField& f)
{
    Volume c[3];
    for (int a = 0; a < 3; ++a)
        c[a] = gaussian_downsample(field_component(f, a));
    return field_from_components(c[0], c[1], c[2]);
}

Volume warp(const Volume& floating, const DisplacementField& field)
{
    const Geometry& g = field.geometry();
    const double fill = floating.fill_value();
    Volume out(g);
    if (floating.has_fill_value())
        out.set_fill_value(floating.fill_value());
    for (int k = 0; k < g.dims.z; ++k)
        for (int j = 0; j < g.dims.y; ++j)
            for (int i = 0; i < g.dims.x; ++i)
                out(i, j, k) = static_cast<float>(trilinear_sample(floating, field.transform(i, j, k), fill));
    return out;
}

LabelVolume warp_mask(const LabelVolume& floating, const DisplacementField& field)
{
    Volume fuzzy = to_volume(binarize(floating));
    fuzzy.set_fill_value(0.0f);
    const Volume w = warp(fuzzy, field);
    LabelVolume out(field.geometry());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = w[i] >= 0.5f ? 1u : 0u;
    return out;
}

} // namespace voxmap
