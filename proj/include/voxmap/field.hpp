#pragma once

#include "voxmap/volume.hpp"

namespace voxmap {

// Dense displacement u(x) in mm on the reference grid; T(x) = x + u(x) maps
// reference space into floating space.
class DisplacementField : public Grid<Vec3> {
public:
    using Grid<Vec3>::Grid;

    Vec3 transform(int i, int j, int k) const { return geometry().index_to_physical(i, j, k) + (*this)(i, j, k); }
    bool all_finite() const;
};

// Clamped trilinear interpolation of the field at a physical point.
Vec3 sample_field(const DisplacementField& f, const Vec3& p);
// Trilinear interpolation; nullopt when p falls outside the grid.
std::optional<Vec3> sample_field_inside(const DisplacementField& f, const Vec3& p);

// Resample a (coarser) field onto `fine` by clamped trilinear interpolation.
// Displacements are physical, so no rescaling is applied.
DisplacementField upsample_field(const DisplacementField& coarse, const Geometry& fine);
// Component-wise gaussian_downsample.
DisplacementField downsample_field(const DisplacementField& f);

Volume field_component(const DisplacementField& f, int axis);
DisplacementField field_from_components(const Volume& ux, const Volume& uy, const Volume& uz);

// out(x) = floatVol(x + u(x)), sampled on the field grid.
Volume warp(const Volume& floating, const DisplacementField& field);
// Warp a binary mask (fuzzy trilinear) and threshold at 0.5.
LabelVolume warp_mask(const LabelVolume& floating, const DisplacementField& field);

} // namespace voxmap
