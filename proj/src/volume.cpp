#include "voxmap/volume.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace voxmap {

Geometry::Geometry(Dims d, Vec3 sp, Vec3 org) : dims(d), spacing(sp), origin(org) {}

bool Geometry::matches(const Geometry& other, double tol) const
{
    if (!(dims == other.dims))
        return false;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(spacing[a] - other.spacing[a]) > tol)
            return false;
        if (std::abs(origin[a] - other.origin[a]) > tol)
            return false;
    }
    return true;
}

void Geometry::validate() const
{
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0)
            throw GeometryError("dims must be positive: " + describe(*this));
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
            throw GeometryError("spacing must be positive: " + describe(*this));
        if (!std::isfinite(origin[a]))
            throw GeometryError("origin must be finite: " + describe(*this));
    }
}

std::string describe(const Geometry& g)
{
    std::ostringstream os;
    os << "dims(" << g.dims.x << "," << g.dims.y << "," << g.dims.z << ") spacing(" << g.spacing.x << ","
       << g.spacing.y << "," << g.spacing.z << ") origin(" << g.origin.x << "," << g.origin.y << ","
       << g.origin.z << ")";
    return os.str();
}

void require_same_geometry(const Geometry& a, const Geometry& b, const std::string& what)
{
    if (!a.matches(b))
        throw GeometryError(what + ": geometry mismatch " + describe(a) + " vs " + describe(b));
}

float Volume::fill_value() const
{
    if (fill_)
        return *fill_;
    return min_value();
}

float Volume::min_value() const
{
    if (empty())
        return 0.0f;
    return *std::min_element(values().begin(), values().end());
}

float Volume::max_value() const
{
    if (empty())
        return 0.0f;
    return *std::max_element(values().begin(), values().end());
}

std::optional<double> trilinear_at_index(const Grid<float>& v, const Vec3& idx)
{
    const Dims& d = v.dims();
    int i0[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        const double c = idx[a];
        const int n = d[a];
        if (!(c >= 0.0) || c > static_cast<double>(n - 1))
            return std::nullopt;
        if (n == 1) {
            i0[a] = 0;
            t[a] = 0.0;
            continue;
        }
        int f = static_cast<int>(c);
        if (f > n - 2)
            f = n - 2;
        i0[a] = f;
        t[a] = c - f;
    }
    const int x1 = d.x > 1 ? i0[0] + 1 : i0[0];
    const int y1 = d.y > 1 ? i0[1] + 1 : i0[1];
    const int z1 = d.z > 1 ? i0[2] + 1 : i0[2];

    const double c000 = v(i0[0], i0[1], i0[2]);
    const double c100 = v(x1, i0[1], i0[2]);
    const double c010 = v(i0[0], y1, i0[2]);
    const double c110 = v(x1, y1, i0[2]);
    const double c001 = v(i0[0], i0[1], z1);
    const double c101 = v(x1, i0[1], z1);
    const double c011 = v(i0[0], y1, z1);
    const double c111 = v(x1, y1, z1);

    const double c00 = c000 + t[0] * (c100 - c000);
    const double c10 = c010 + t[0] * (c110 - c010);
    const double c01 = c001 + t[0] * (c101 - c001);
    const double c11 = c011 + t[0] * (c111 - c011);
    const double c0 = c00 + t[1] * (c10 - c00);
    const double c1 = c01 + t[1] * (c11 - c01);
    return c0 + t[2] * (c1 - c0);
}

double trilinear_sample(const Volume& v, const Vec3& p, double fill)
{
    auto r = trilinear_at_index(v, v.geometry().physical_to_index(p));
    return r ? *r : fill;
}

double trilinear_sample(const Volume& v, const Vec3& p)
{
    auto r = trilinear_at_index(v, v.geometry().physical_to_index(p));
    return r ? *r : static_cast<double>(v.fill_value());
}

Volume median_filter(const Volume& v, int radius)
{
    if (radius < 0)
        throw ConfigError("median_filter: radius must be >= 0");
    Volume out(v.geometry());
    out.set_fill_value(v.has_fill_value() ? std::optional<float>(v.fill_value()) : std::nullopt);
    if (radius == 0) {
        out.values() = v.values();
        return out;
    }
    const Dims d = v.dims();
    std::vector<float> buf;
    buf.reserve(static_cast<std::size_t>(2 * radius + 1) * (2 * radius + 1) * (2 * radius + 1));
    for (int k = 0; k < d.z; ++k) {
        const int k0 = std::max(0, k - radius), k1 = std::min(d.z - 1, k + radius);
        for (int j = 0; j < d.y; ++j) {
            const int j0 = std::max(0, j - radius), j1 = std::min(d.y - 1, j + radius);
            for (int i = 0; i < d.x; ++i) {
                const int i0 = std::max(0, i - radius), i1 = std::min(d.x - 1, i + radius);
                buf.clear();
                for (int kk = k0; kk <= k1; ++kk)
                    for (int jj = j0; jj <= j1; ++jj) {
                        const float* row = &v(0, jj, kk);
                        buf.insert(buf.end(), row + i0, row + i1 + 1);
                    }
                const std::size_t n = buf.size();
                const std::size_t mid = n / 2;
                std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(mid), buf.end());
                double med = buf[mid];
                if (n % 2 == 0) {
                    const float lower = *std::max_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(mid));
                    med = 0.5 * (static_cast<double>(lower) + med);
                }
                out(i, j, k) = static_cast<float>(med);
            }
        }
    }
    return out;
}

BoundingBox mask_bounding_box(const LabelVolume& m, std::uint32_t label)
{
    const Dims d = m.dims();
    int lo[3] = {d.x, d.y, d.z};
    int hi[3] = {-1, -1, -1};
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                if (m(i, j, k) != label)
                    continue;
                lo[0] = std::min(lo[0], i); hi[0] = std::max(hi[0], i);
                lo[1] = std::min(lo[1], j); hi[1] = std::max(hi[1], j);
                lo[2] = std::min(lo[2], k); hi[2] = std::max(hi[2], k);
            }
    if (hi[0] < 0)
        throw EmptyRegionError("mask_bounding_box: label " + std::to_string(label) + " not present");
    const Geometry& g = m.geometry();
    const Vec3 half = 0.5 * g.spacing;
    return {g.index_to_physical(lo[0], lo[1], lo[2]) - half, g.index_to_physical(hi[0], hi[1], hi[2]) + half};
}

namespace {

std::vector<double> gaussian_kernel(double sigma)
{
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[static_cast<std::size_t>(i + r)];
    }
    for (auto& w : k)
        w /= sum;
    return k;
}

// One separable pass along `axis` with replicated borders.
void convolve_axis(const std::vector<double>& src, std::vector<double>& dst, const Dims& d, int axis,
                   const std::vector<double>& kernel)
{
    const int r = static_cast<int>(kernel.size() / 2);
    const int n = d[axis];
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? static_cast<std::size_t>(d.x) : static_cast<std::size_t>(d.x) * d.y);
    dst.assign(src.size(), 0.0);
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                const int pos = axis == 0 ? i : (axis == 1 ? j : k);
                const std::size_t base = static_cast<std::size_t>(i) + static_cast<std::size_t>(d.x) * (j + static_cast<std::size_t>(d.y) * k)
                                       - static_cast<std::size_t>(pos) * stride;
                double acc = 0.0;
                for (int o = -r; o <= r; ++o) {
                    const int q = std::clamp(pos + o, 0, n - 1);
                    acc += kernel[static_cast<std::size_t>(o + r)] * src[base + static_cast<std::size_t>(q) * stride];
                }
                dst[base + static_cast<std::size_t>(pos) * stride] = acc;
            }
}

} // namespace

Volume gaussian_smooth(const Volume& v, double sigma_voxels)
{
    const Dims d = v.dims();
    std::vector<double> a(v.values().begin(), v.values().end());
    std::vector<double> b;
    if (sigma_voxels > 0.0) {
        const auto kernel = gaussian_kernel(sigma_voxels);
        for (int axis = 0; axis < 3; ++axis) {
            if (d[axis] == 1)
                continue;
            convolve_axis(a, b, d, axis, kernel);
            a.swap(b);
        }
    }
    Volume out(v.geometry());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = static_cast<float>(a[i]);
    if (v.has_fill_value())
        out.set_fill_value(v.fill_value());
    return out;
}

Volume gaussian_downsample(const Volume& v)
{
    const Volume smooth = gaussian_smooth(v, 1.0);
    const Geometry& g = v.geometry();
    Geometry og = g;
    int step[3];
    for (int a = 0; a < 3; ++a) {
        step[a] = g.dims[a] > 1 ? 2 : 1;
        og.dims[a] = g.dims[a] > 1 ? (g.dims[a] + 1) / 2 : 1;
        og.spacing[a] = g.spacing[a] * step[a];
    }
    Volume out(og);
    for (int k = 0; k < og.dims.z; ++k)
        for (int j = 0; j < og.dims.y; ++j)
            for (int i = 0; i < og.dims.x; ++i)
                out(i, j, k) = smooth(i * step[0], j * step[1], k * step[2]);
    if (v.has_fill_value())
        out.set_fill_value(v.fill_value());
    return out;
}

LabelVolume binarize(const LabelVolume& m)
{
    LabelVolume out(m.geometry());
    for (std::size_t i = 0; i < m.size(); ++i)
        out[i] = m[i] != 0 ? 1u : 0u;
    return out;
}

std::size_t count_nonzero(const LabelVolume& m)
{
    return static_cast<std::size_t>(std::count_if(m.values().begin(), m.values().end(), [](auto l) { return l != 0; }));
}

Volume to_volume(const LabelVolume& m)
{
    Volume out(m.geometry());
    for (std::size_t i = 0; i < m.size(); ++i)
        out[i] = static_cast<float>(m[i]);
    return out;
}

} // namespace voxmap
