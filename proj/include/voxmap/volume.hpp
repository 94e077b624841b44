#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voxmap/error.hpp"

namespace voxmap {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

    constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }

    friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
    friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
    friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

// Componentwise product / quotient.
constexpr Vec3 hadamard(const Vec3& a, const Vec3& b) { return {a.x * b.x, a.y * b.y, a.z * b.z}; }
constexpr Vec3 divide(const Vec3& a, const Vec3& b) { return {a.x / b.x, a.y / b.y, a.z / b.z}; }
constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

struct Dims {
    int x = 0;
    int y = 0;
    int z = 0;

    constexpr int operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr int& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr std::size_t count() const
    {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
    }
    friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

// Axis-aligned voxel grid. Voxel (i,j,k) sits at origin + (i*sx, j*sy, k*sz).
struct Geometry {
    Dims dims;
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin;

    Geometry() = default;
    Geometry(Dims d, Vec3 sp = {1.0, 1.0, 1.0}, Vec3 org = {});

    std::size_t voxel_count() const { return dims.count(); }

    Vec3 index_to_physical(int i, int j, int k) const
    {
        return {origin.x + i * spacing.x, origin.y + j * spacing.y, origin.z + k * spacing.z};
    }
    // Continuous voxel index of a physical point.
    Vec3 physical_to_index(const Vec3& p) const
    {
        return {(p.x - origin.x) / spacing.x, (p.y - origin.y) / spacing.y, (p.z - origin.z) / spacing.z};
    }
    bool contains_index(int i, int j, int k) const
    {
        return i >= 0 && j >= 0 && k >= 0 && i < dims.x && j < dims.y && k < dims.z;
    }
    std::size_t linear(int i, int j, int k) const
    {
        return static_cast<std::size_t>(i)
             + static_cast<std::size_t>(dims.x)
                   * (static_cast<std::size_t>(j) + static_cast<std::size_t>(dims.y) * static_cast<std::size_t>(k));
    }

    // Same dims and spacing/origin within tol (mm).
    bool matches(const Geometry& other, double tol = 1e-6) const;
    void validate() const;
};

std::string describe(const Geometry& g);
void require_same_geometry(const Geometry& a, const Geometry& b, const std::string& what);

// Dense scalar grid, x fastest.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    explicit Grid(const Geometry& g, T fill = T{}) : geom_(g), data_(g.voxel_count(), fill) { geom_.validate(); }
    Grid(const Geometry& g, std::vector<T> values) : geom_(g), data_(std::move(values))
    {
        geom_.validate();
        if (data_.size() != geom_.voxel_count())
            throw GeometryError("value count does not match dims " + describe(geom_));
    }

    const Geometry& geometry() const { return geom_; }
    const Dims& dims() const { return geom_.dims; }
    const Vec3& spacing() const { return geom_.spacing; }
    const Vec3& origin() const { return geom_.origin; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(int i, int j, int k) { return data_[geom_.linear(i, j, k)]; }
    const T& operator()(int i, int j, int k) const { return data_[geom_.linear(i, j, k)]; }
    T& operator[](std::size_t idx) { return data_[idx]; }
    const T& operator[](std::size_t idx) const { return data_[idx]; }

    std::vector<T>& values() { return data_; }
    const std::vector<T>& values() const { return data_; }
    const T* data() const { return data_.data(); }
    T* data() { return data_.data(); }

private:
    Geometry geom_;
    std::vector<T> data_;
};

// Scalar volume (HU, JD, correlation maps, ...). Samples outside the domain
// return the fill value, which defaults to the volume minimum.
class Volume : public Grid<float> {
public:
    using Grid<float>::Grid;

    void set_fill_value(std::optional<float> v) { fill_ = v; }
    bool has_fill_value() const { return fill_.has_value(); }
    // O(N) when no explicit fill is configured; hot loops should fetch once.
    float fill_value() const;

    float min_value() const;
    float max_value() const;

private:
    std::optional<float> fill_;
};

// Label 0 is background.
using LabelVolume = Grid<std::uint32_t>;

struct BoundingBox {
    Vec3 min;
    Vec3 max;

    Vec3 center() const { return 0.5 * (min + max); }
    Vec3 extent() const { return max - min; }
};

double trilinear_sample(const Volume& v, const Vec3& p);
double trilinear_sample(const Volume& v, const Vec3& p, double fill);
// Trilinear interpolation at a continuous voxel index; nullopt outside [0, n-1].
std::optional<double> trilinear_at_index(const Grid<float>& v, const Vec3& idx);

Volume median_filter(const Volume& v, int radius);

BoundingBox mask_bounding_box(const LabelVolume& m, std::uint32_t label);

// Gaussian smoothing (sigma = 1 voxel) followed by decimation by 2. Axes of
// length 1 are left untouched.
Volume gaussian_downsample(const Volume& v);
Volume gaussian_smooth(const Volume& v, double sigma_voxels);

// Binary helpers used throughout the pipeline.
LabelVolume binarize(const LabelVolume& m);
std::size_t count_nonzero(const LabelVolume& m);
Volume to_volume(const LabelVolume& m);

} // namespace voxmap
