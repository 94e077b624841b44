#pragma once

#include <filesystem>
#include <variant>

#include "voxmap/field.hpp"
#include "voxmap/volume.hpp"

namespace voxmap {

// NIfTI-1 single-file (.nii / .nii.gz) reading and writing. Volumes are
// treated as axis-aligned: spacing comes from pixdim, origin from the sform
// translation (qform offset when no sform is set).
//
// Scalar volumes are written as float32, label volumes as uint16.
// Displacement fields are written as one 5D vector image
// (dim = {5, nx, ny, nz, 1, 3}, intent NIFTI_INTENT_VECTOR, float32) with the
// component index slowest.

using AnyVolume = std::variant<Volume, LabelVolume>;

// Integer-typed files with non-negative values load as LabelVolume.
AnyVolume read_volume(const std::filesystem::path& path);
Volume read_scalar_volume(const std::filesystem::path& path);
LabelVolume read_label_volume(const std::filesystem::path& path);

void write_volume(const Volume& v, const std::filesystem::path& path);
void write_volume(const LabelVolume& v, const std::filesystem::path& path);

void write_field(const DisplacementField& f, const std::filesystem::path& path);
DisplacementField read_field(const std::filesystem::path& path);
// Throws GeometryError when the stored grid differs from `expected`.
DisplacementField read_field(const std::filesystem::path& path, const Geometry& expected);

} // namespace voxmap
