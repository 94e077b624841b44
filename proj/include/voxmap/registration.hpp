#pragma once

#include <array>
#include <functional>
#include <vector>

#include "voxmap/field.hpp"
#include "voxmap/maxflow.hpp"
#include "voxmap/preprocess.hpp"

namespace voxmap {

// Axis-aligned scale + shift, T(x) = scale * x + translation.
struct AffineInit {
    Vec3 scale{1.0, 1.0, 1.0};
    Vec3 translation;

    Vec3 apply(const Vec3& x) const { return hadamard(scale, x) + translation; }
};

// Maps the reference LV box onto the floating LV box, anchored at the box
// centers: T(x) = S (x - c_ref) + c_float with S = e_float / e_ref.
AffineInit bbox_affine_init(const BoundingBox& ref_lv, const BoundingBox& float_lv);
DisplacementField affine_to_field(const AffineInit& a, const Geometry& ref);

// One registration stage; defaults follow the first-stage configuration.
struct StageConfig {
    int levels = 6;
    int block_size = 8;
    double regularization_weight = 2.0;
    double image_weight = 0.25;
    // cavities, myocardium+aorta, high density, low density
    std::array<double, 4> mask_weights{1.0, 1.0, 0.3, 0.3};
    // Coarsest to finest; 0 skips a level.
    std::vector<int> max_iterations{300, 300, 300, 40, 20, 0};
    int ncc_radius = 2;
    // Move length as a fraction of the level voxel size.
    double step_fraction = 1.0;
    double convergence_epsilon = 1e-5;

    void validate() const;
};

StageConfig default_stage1();
StageConfig default_stage2();

struct EnergyBreakdown {
    double total = 0.0;
    // Weighted: [image NCC, cavities, myocardium+aorta, high density, low density]
    std::vector<double> data_per_channel;
    double regularization = 0.0;
};

inline constexpr int kChannelCount = 5;

// The five registration channels of one subject at one resolution.
struct ChannelSet {
    std::array<Volume, kChannelCount> channels;

    static ChannelSet from(const PreprocessedSubject& s);
    const Geometry& geometry() const { return channels[0].geometry(); }
    ChannelSet downsampled() const;
};

std::vector<ChannelSet> build_pyramid(const ChannelSet& base, int levels);

// Energy terms of one stage at one pyramid level. The data term of a voxel
// depends only on its own displacement (the floating NCC window is
// translated rigidly by u(x)), so the energy is a sum of unary terms plus
// pairwise regularization over 6-neighbours.
class LevelProblem {
public:
    LevelProblem(const ChannelSet& ref, const ChannelSet& flt, const StageConfig& cfg);

    const Geometry& geometry() const { return ref_->geometry(); }
    const StageConfig& config() const { return cfg_; }

    double unary(int i, int j, int k, const Vec3& u) const;
    // Weighted per-channel data terms at voxel (i,j,k).
    std::array<double, kChannelCount> unary_terms(int i, int j, int k, const Vec3& u) const;
    // lambda / spacing^2 along `axis`.
    double edge_weight(int axis) const { return edge_weight_[axis]; }
    double regularization(const DisplacementField& f) const;
    EnergyBreakdown energy(const DisplacementField& f) const;

private:
    void eval(int i, int j, int k, const Vec3& u, double* terms) const;
    double ncc_term(int i, int j, int k, const Vec3& flt_index) const;

    const ChannelSet* ref_;
    const ChannelSet* flt_;
    StageConfig cfg_;
    std::array<double, 3> edge_weight_{};
    Vec3 spacing_ratio_;
    bool unit_ratio_ = false;
    std::array<float, kChannelCount> flt_fill_{};
    std::vector<double> ref_sum_;
    std::vector<double> ref_sum_sq_;
    std::vector<int> ref_count_;
};

EnergyBreakdown channel_energy(const PreprocessedSubject& ref, const PreprocessedSubject& flt,
                               const DisplacementField& field, const StageConfig& cfg);

struct BlockSolveEvent {
    int level = 0;
    int move = 0;          // index into the 6 unit steps
    double before = 0.0;   // block energy with every voxel keeping u
    double after = 0.0;    // block energy under the min-cut labelling
    double total = 0.0;    // level energy before the solve
    bool accepted = false;
    int moved = 0;
};

// Aggregated descent diagnostics.
struct SolveLog {
    std::size_t block_solves = 0;
    std::size_t block_violations = 0;
    double max_block_relative_increase = 0.0;
    std::size_t sweeps = 0;
    std::size_t sweep_checks = 0;
    std::size_t sweep_violations = 0;
    double max_sweep_relative_increase = 0.0;
    std::size_t accepted_moves = 0;

    void merge(const SolveLog& o);
};

struct SweepResult {
    bool energy_decreased = false;
    double energy_before = 0.0;
    double energy_after = 0.0;
    std::size_t voxels_moved = 0;
    std::size_t blocks_solved = 0;
};

struct SweepOptions {
    double relative_tolerance = 1e-6;
    // Recompute the full energy without caches before/after each sweep.
    bool verify_energy = false;
    SolveLog* log = nullptr;
    std::function<void(const BlockSolveEvent&)> on_block;
    int level = 0;
};

// Block-wise binary move optimizer for one level. Keeps per-voxel cost
// caches and dirty-block flags between sweeps.
class LevelOptimizer {
public:
    LevelOptimizer(const LevelProblem& problem, DisplacementField& field, SweepOptions opt = {});

    // One full sweep: every unit step, both block offsets.
    SweepResult sweep();
    double energy() const { return energy_; }
    // Runs sweeps until no move is accepted, the relative decrease drops
    // below the configured epsilon, or `max_sweeps` is reached.
    int run(int max_sweeps);

private:
    // Returns the number of voxels moved.
    int solve_block(int pass, int bx, int by, int bz, int move);
    void mark_dirty(int i, int j, int k);
    double cached_candidate(std::size_t idx, int i, int j, int k, int move);
    double full_energy_from_cache() const;

    const LevelProblem& problem_;
    DisplacementField& field_;
    SweepOptions opt_;
    Geometry geom_;
    int block_size_;
    std::array<Vec3, 6> steps_;
    std::vector<double> cost_;
    std::vector<double> candidate_;
    std::array<Dims, 2> block_grid_;
    std::array<std::vector<char>, 2> dirty_prev_;
    std::array<std::vector<char>, 2> dirty_next_;
    double energy_ = 0.0;

    // scratch
    MaxFlowGraph graph_;
    std::vector<int> node_of_;
    std::vector<std::size_t> voxels_;
};

SweepResult graphcut_sweep(const LevelProblem& problem, DisplacementField& field, const SweepOptions& opt = {});

struct RegistrationOptions {
    SweepOptions sweep;
};

DisplacementField register_deformable(const PreprocessedSubject& ref, const PreprocessedSubject& flt,
                                      const AffineInit& init, const std::array<StageConfig, 2>& stages,
                                      const RegistrationOptions& opt = {});

// Runs a single stage starting from `initial` (reference geometry).
DisplacementField run_stage(const std::vector<ChannelSet>& ref_pyramid, const std::vector<ChannelSet>& flt_pyramid,
                            const StageConfig& cfg, const DisplacementField& initial, const RegistrationOptions& opt = {});

} // namespace voxmap
