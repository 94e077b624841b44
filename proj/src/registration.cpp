#include "voxmap/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "voxmap/maxflow.hpp"

namespace voxmap {

AffineInit bbox_affine_init(const BoundingBox& ref_lv, const BoundingBox& float_lv)
{
    const Vec3 er = ref_lv.extent();
    const Vec3 ef = float_lv.extent();
    for (int a = 0; a < 3; ++a)
        if (!(er[a] > 0.0) || !(ef[a] > 0.0))
            throw GeometryError("LV bounding box has zero extent");
    AffineInit t;
    t.scale = divide(ef, er);
    t.translation = float_lv.center() - hadamard(t.scale, ref_lv.center());
    return t;
}

DisplacementField affine_to_field(const AffineInit& a, const Geometry& ref)
{
    DisplacementField f(ref);
    for (int k = 0; k < ref.dims.z; ++k)
        for (int j = 0; j < ref.dims.y; ++j)
            for (int i = 0; i < ref.dims.x; ++i) {
                const Vec3 x = ref.index_to_physical(i, j, k);
                f(i, j, k) = a.apply(x) - x;
            }
    return f;
}

void StageConfig::validate() const
{
    if (levels < 1)
        throw ConfigError("stage levels must be >= 1");
    if (block_size < 1)
        throw ConfigError("block size must be >= 1");
    if (!(regularization_weight >= 0.0) || !(image_weight >= 0.0))
        throw ConfigError("stage weights must be non-negative");
    for (double w : mask_weights)
        if (!(w >= 0.0))
            throw ConfigError("mask weights must be non-negative");
    if (static_cast<int>(max_iterations.size()) != levels)
        throw ConfigError("max_iterations needs one entry per level (" + std::to_string(levels) + ")");
    for (int n : max_iterations)
        if (n < 0)
            throw ConfigError("max_iterations entries must be >= 0");
    if (ncc_radius < 0)
        throw ConfigError("NCC radius must be >= 0");
    if (!(step_fraction > 0.0))
        throw ConfigError("step fraction must be > 0");
    if (!(convergence_epsilon >= 0.0))
        throw ConfigError("convergence epsilon must be >= 0");
}

StageConfig default_stage1()
{
    return StageConfig{};
}

StageConfig default_stage2()
{
    StageConfig c;
    c.block_size = 32;
    c.regularization_weight = 0.15;
    c.image_weight = 0.5;
    c.mask_weights = {1.0, 1.0, 0.1, 0.1};
    return c;
}

ChannelSet ChannelSet::from(const PreprocessedSubject& s)
{
    return ChannelSet{{s.intensity, s.cavity_mask, s.myo_aorta_mask, s.high_density_mask, s.low_density_mask}};
}

ChannelSet ChannelSet::downsampled() const
{
    ChannelSet out;
    for (int c = 0; c < kChannelCount; ++c)
        out.channels[c] = gaussian_downsample(channels[c]);
    return out;
}

std::vector<ChannelSet> build_pyramid(const ChannelSet& base, int levels)
{
    std::vector<ChannelSet> p;
    p.reserve(static_cast<std::size_t>(std::max(levels, 1)));
    p.push_back(base);
    for (int l = 1; l < levels; ++l)
        p.push_back(p.back().downsampled());
    return p;
}

namespace {

struct Cell {
    std::size_t base;
    double tx, ty, tz;
};

// Same semantics as trilinear_at_index, split into cell lookup + blend so
// the NCC window can reuse strides.
inline bool locate(const Dims& d, const Vec3& c, Cell& out)
{
    int i0[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
        const double v = c[a];
        const int n = d[a];
        if (!(v >= 0.0) || v > static_cast<double>(n - 1))
            return false;
        if (n == 1) {
            i0[a] = 0;
            t[a] = 0.0;
            continue;
        }
        int f = static_cast<int>(v);
        if (f > n - 2)
            f = n - 2;
        i0[a] = f;
        t[a] = v - f;
    }
    out.base = static_cast<std::size_t>(i0[0])
             + static_cast<std::size_t>(d.x)
                   * (static_cast<std::size_t>(i0[1]) + static_cast<std::size_t>(d.y) * static_cast<std::size_t>(i0[2]));
    out.tx = t[0];
    out.ty = t[1];
    out.tz = t[2];
    return true;
}

inline double blend(const float* p, std::size_t sx, std::size_t sy, std::size_t sz, double tx, double ty, double tz)
{
    const double c000 = p[0];
    const double c100 = p[sx];
    const double c010 = p[sy];
    const double c110 = p[sx + sy];
    const double c001 = p[sz];
    const double c101 = p[sx + sz];
    const double c011 = p[sy + sz];
    const double c111 = p[sx + sy + sz];
    const double c00 = c000 + tx * (c100 - c000);
    const double c10 = c010 + tx * (c110 - c010);
    const double c01 = c001 + tx * (c101 - c001);
    const double c11 = c011 + tx * (c111 - c011);
    const double c0 = c00 + ty * (c10 - c00);
    const double c1 = c01 + ty * (c11 - c01);
    return c0 + tz * (c1 - c0);
}

struct Strides {
    std::size_t x, y, z;
};

inline Strides strides_of(const Dims& d)
{
    const std::size_t sy = static_cast<std::size_t>(d.x);
    const std::size_t sz = sy * static_cast<std::size_t>(d.y);
    return {d.x > 1 ? std::size_t{1} : 0, d.y > 1 ? sy : 0, d.z > 1 ? sz : 0};
}

constexpr double kVarianceFloor = 1e-12;

} // namespace

LevelProblem::LevelProblem(const ChannelSet& ref, const ChannelSet& flt, const StageConfig& cfg)
    : ref_(&ref), flt_(&flt), cfg_(cfg)
{
    cfg_.validate();
    const Geometry& g = ref.geometry();
    for (int c = 1; c < kChannelCount; ++c)
        require_same_geometry(g, ref.channels[c].geometry(), "reference channels");
    for (int c = 1; c < kChannelCount; ++c)
        require_same_geometry(flt.geometry(), flt.channels[c].geometry(), "floating channels");
    for (int a = 0; a < 3; ++a)
        edge_weight_[a] = cfg_.regularization_weight / (g.spacing[a] * g.spacing[a]);
    for (int c = 0; c < kChannelCount; ++c)
        flt_fill_[c] = flt.channels[c].fill_value();
    spacing_ratio_ = divide(g.spacing, flt.geometry().spacing);
    unit_ratio_ = spacing_ratio_ == Vec3{1.0, 1.0, 1.0} && flt.geometry().dims.x > 1 && flt.geometry().dims.y > 1
               && flt.geometry().dims.z > 1;

    const std::size_t n = g.voxel_count();
    ref_sum_.assign(n, 0.0);
    ref_sum_sq_.assign(n, 0.0);
    ref_count_.assign(n, 0);
    if (cfg_.image_weight <= 0.0)
        return;
    const Volume& r = ref.channels[0];
    const int rad = cfg_.ncc_radius;
    const Dims& d = g.dims;
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                double s = 0.0, ss = 0.0;
                int cnt = 0;
                for (int z = std::max(0, k - rad); z <= std::min(d.z - 1, k + rad); ++z)
                    for (int y = std::max(0, j - rad); y <= std::min(d.y - 1, j + rad); ++y)
                        for (int x = std::max(0, i - rad); x <= std::min(d.x - 1, i + rad); ++x) {
                            const double v = r(x, y, z);
                            s += v;
                            ss += v * v;
                            ++cnt;
                        }
                const std::size_t idx = g.linear(i, j, k);
                ref_sum_[idx] = s;
                ref_sum_sq_[idx] = ss;
                ref_count_[idx] = cnt;
            }
}

double LevelProblem::ncc_term(int i, int j, int k, const Vec3& c) const
{
    const Geometry& g = geometry();
    const Dims& d = g.dims;
    const int rad = cfg_.ncc_radius;
    const int x0 = std::max(-rad, -i), x1 = std::min(rad, d.x - 1 - i);
    const int y0 = std::max(-rad, -j), y1 = std::min(rad, d.y - 1 - j);
    const int z0 = std::max(-rad, -k), z1 = std::min(rad, d.z - 1 - k);

    const Volume& rv = ref_->channels[0];
    const Volume& fv = flt_->channels[0];
    const Dims& fd = fv.dims();
    const Strides fs = strides_of(fd);
    const float* fp = fv.data();
    const float* rp = rv.data();
    const double fill = flt_fill_[0];

    double sf = 0.0, sff = 0.0, srf = 0.0;
    bool fast = false;
    int b[3] = {0, 0, 0};
    double t[3] = {0.0, 0.0, 0.0};
    if (unit_ratio_) {
        const int lo[3] = {x0, y0, z0};
        const int hi[3] = {x1, y1, z1};
        fast = true;
        for (int a = 0; a < 3 && fast; ++a) {
            const double fl = std::floor(c[a]);
            if (!(fl >= -1e9 && fl <= 1e9)) {
                fast = false;
                break;
            }
            b[a] = static_cast<int>(fl);
            t[a] = c[a] - fl;
            if (b[a] + lo[a] < 0 || b[a] + hi[a] + 1 > fd[a] - 1)
                fast = false;
        }
    }

    if (fast) {
        for (int dz = z0; dz <= z1; ++dz)
            for (int dy = y0; dy <= y1; ++dy) {
                const std::size_t rrow = g.linear(i + x0, j + dy, k + dz);
                const std::size_t frow = static_cast<std::size_t>(b[0] + x0)
                                       + static_cast<std::size_t>(fd.x)
                                             * (static_cast<std::size_t>(b[1] + dy)
                                                + static_cast<std::size_t>(fd.y) * static_cast<std::size_t>(b[2] + dz));
                for (int dx = 0; dx <= x1 - x0; ++dx) {
                    const double r = rp[rrow + static_cast<std::size_t>(dx)];
                    const double f = blend(fp + frow + static_cast<std::size_t>(dx), fs.x, fs.y, fs.z, t[0], t[1], t[2]);
                    sf += f;
                    sff += f * f;
                    srf += r * f;
                }
            }
    } else {
        const Vec3& q = spacing_ratio_;
        for (int dz = z0; dz <= z1; ++dz)
            for (int dy = y0; dy <= y1; ++dy)
                for (int dx = x0; dx <= x1; ++dx) {
                    const double r = rv(i + dx, j + dy, k + dz);
                    const Vec3 s{c.x + dx * q.x, c.y + dy * q.y, c.z + dz * q.z};
                    Cell cell;
                    const double f = locate(fd, s, cell) ? blend(fp + cell.base, fs.x, fs.y, fs.z, cell.tx, cell.ty, cell.tz)
                                                         : fill;
                    sf += f;
                    sff += f * f;
                    srf += r * f;
                }
    }

    const std::size_t idx = g.linear(i, j, k);
    const double n = ref_count_[idx];
    const double sr = ref_sum_[idx];
    const double var_r = ref_sum_sq_[idx] - sr * sr / n;
    const double var_f = sff - sf * sf / n;
    if (var_r / n < kVarianceFloor || var_f / n < kVarianceFloor)
        return 0.0;
    double ncc = (srf - sr * sf / n) / std::sqrt(var_r * var_f);
    ncc = std::clamp(ncc, -1.0, 1.0);
    return 1.0 - ncc;
}

void LevelProblem::eval(int i, int j, int k, const Vec3& u, double* terms) const
{
    const Geometry& g = geometry();
    const Vec3 c = flt_->geometry().physical_to_index(g.index_to_physical(i, j, k) + u);
    terms[0] = cfg_.image_weight > 0.0 ? cfg_.image_weight * ncc_term(i, j, k, c) : 0.0;

    const std::size_t idx = g.linear(i, j, k);
    Cell cell{};
    const bool inside = locate(flt_->geometry().dims, c, cell);
    const Strides fs = strides_of(flt_->geometry().dims);
    for (int ch = 1; ch < kChannelCount; ++ch) {
        const double w = cfg_.mask_weights[static_cast<std::size_t>(ch - 1)];
        if (w <= 0.0) {
            terms[ch] = 0.0;
            continue;
        }
        const double m = inside ? blend(flt_->channels[ch].data() + cell.base, fs.x, fs.y, fs.z, cell.tx, cell.ty, cell.tz)
                                : static_cast<double>(flt_fill_[ch]);
        const double diff = static_cast<double>(ref_->channels[ch][idx]) - m;
        terms[ch] = w * diff * diff;
    }
}

double LevelProblem::unary(int i, int j, int k, const Vec3& u) const
{
    double t[kChannelCount];
    eval(i, j, k, u, t);
    double s = 0.0;
    for (double v : t)
        s += v;
    return s;
}

std::array<double, kChannelCount> LevelProblem::unary_terms(int i, int j, int k, const Vec3& u) const
{
    std::array<double, kChannelCount> t{};
    eval(i, j, k, u, t.data());
    return t;
}

double LevelProblem::regularization(const DisplacementField& f) const
{
    require_same_geometry(geometry(), f.geometry(), "displacement field");
    const Dims& d = f.dims();
    double s = 0.0;
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                const Vec3& u = f(i, j, k);
                if (i + 1 < d.x) {
                    const Vec3 e = u - f(i + 1, j, k);
                    s += edge_weight_[0] * dot(e, e);
                }
                if (j + 1 < d.y) {
                    const Vec3 e = u - f(i, j + 1, k);
                    s += edge_weight_[1] * dot(e, e);
                }
                if (k + 1 < d.z) {
                    const Vec3 e = u - f(i, j, k + 1);
                    s += edge_weight_[2] * dot(e, e);
                }
            }
    return s;
}

EnergyBreakdown LevelProblem::energy(const DisplacementField& f) const
{
    require_same_geometry(geometry(), f.geometry(), "displacement field");
    EnergyBreakdown e;
    e.data_per_channel.assign(kChannelCount, 0.0);
    const Dims& d = f.dims();
    double t[kChannelCount];
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                eval(i, j, k, f(i, j, k), t);
                for (int c = 0; c < kChannelCount; ++c)
                    e.data_per_channel[static_cast<std::size_t>(c)] += t[c];
            }
    e.regularization = regularization(f);
    e.total = e.regularization;
    for (double v : e.data_per_channel)
        e.total += v;
    return e;
}

EnergyBreakdown channel_energy(const PreprocessedSubject& ref, const PreprocessedSubject& flt,
                               const DisplacementField& field, const StageConfig& cfg)
{
    const ChannelSet r = ChannelSet::from(ref);
    const ChannelSet f = ChannelSet::from(flt);
    return LevelProblem(r, f, cfg).energy(field);
}

void SolveLog::merge(const SolveLog& o)
{
    block_solves += o.block_solves;
    block_violations += o.block_violations;
    max_block_relative_increase = std::max(max_block_relative_increase, o.max_block_relative_increase);
    sweeps += o.sweeps;
    sweep_checks += o.sweep_checks;
    sweep_violations += o.sweep_violations;
    max_sweep_relative_increase = std::max(max_sweep_relative_increase, o.max_sweep_relative_increase);
    accepted_moves += o.accepted_moves;
}

namespace {

constexpr double kNotCached = std::numeric_limits<double>::quiet_NaN();

double relative_to(double delta, double scale)
{
    return delta / std::max(std::abs(scale), 1e-300);
}

} // namespace

LevelOptimizer::LevelOptimizer(const LevelProblem& problem, DisplacementField& field, SweepOptions opt)
    : problem_(problem), field_(field), opt_(std::move(opt)), geom_(problem.geometry()),
      block_size_(problem.config().block_size)
{
    require_same_geometry(geom_, field.geometry(), "displacement field");
    const Vec3 h = geom_.spacing * problem.config().step_fraction;
    steps_ = {Vec3{h.x, 0, 0}, Vec3{-h.x, 0, 0}, Vec3{0, h.y, 0}, Vec3{0, -h.y, 0}, Vec3{0, 0, h.z}, Vec3{0, 0, -h.z}};

    const Dims& d = geom_.dims;
    const std::size_t n = d.count();
    cost_.resize(n);
    double data = 0.0;
    for (int k = 0; k < d.z; ++k)
        for (int j = 0; j < d.y; ++j)
            for (int i = 0; i < d.x; ++i) {
                const std::size_t idx = geom_.linear(i, j, k);
                cost_[idx] = problem_.unary(i, j, k, field_[idx]);
                data += cost_[idx];
            }
    energy_ = data + problem_.regularization(field_);
    candidate_.assign(6 * n, kNotCached);

    const int bs = block_size_;
    const int half = bs / 2;
    for (int pass = 0; pass < 2; ++pass) {
        const int off = pass == 0 ? 0 : half;
        Dims bg;
        for (int a = 0; a < 3; ++a)
            bg[a] = (d[a] + off + bs - 1) / bs;
        block_grid_[pass] = bg;
        dirty_prev_[pass].assign(bg.count(), 0);
        dirty_next_[pass].assign(bg.count(), 1);
    }
    const std::size_t bv = static_cast<std::size_t>(bs) * static_cast<std::size_t>(bs) * static_cast<std::size_t>(bs);
    node_of_.reserve(bv);
    voxels_.reserve(bv);
}

double LevelOptimizer::cached_candidate(std::size_t idx, int i, int j, int k, int move)
{
    double& slot = candidate_[6 * idx + static_cast<std::size_t>(move)];
    if (std::isnan(slot))
        slot = problem_.unary(i, j, k, field_[idx] + steps_[static_cast<std::size_t>(move)]);
    return slot;
}

void LevelOptimizer::mark_dirty(int i, int j, int k)
{
    const Dims& d = geom_.dims;
    const int bs = block_size_;
    for (int pass = 0; pass < 2; ++pass) {
        const int off = pass == 0 ? 0 : bs / 2;
        const Dims& bg = block_grid_[pass];
        const int bx0 = (std::max(i - 1, 0) + off) / bs, bx1 = (std::min(i + 1, d.x - 1) + off) / bs;
        const int by0 = (std::max(j - 1, 0) + off) / bs, by1 = (std::min(j + 1, d.y - 1) + off) / bs;
        const int bz0 = (std::max(k - 1, 0) + off) / bs, bz1 = (std::min(k + 1, d.z - 1) + off) / bs;
        for (int bz = bz0; bz <= bz1; ++bz)
            for (int by = by0; by <= by1; ++by)
                for (int bx = bx0; bx <= bx1; ++bx)
                    dirty_next_[pass][static_cast<std::size_t>(bx + bg.x * (by + bg.y * bz))] = 1;
    }
}

int LevelOptimizer::solve_block(int pass, int bx, int by, int bz, int move)
{
    const Dims& d = geom_.dims;
    const int bs = block_size_;
    const int off = pass == 0 ? 0 : -(bs / 2);
    const int lo[3] = {std::max(0, off + bx * bs), std::max(0, off + by * bs), std::max(0, off + bz * bs)};
    const int hi[3] = {std::min(d.x, off + (bx + 1) * bs), std::min(d.y, off + (by + 1) * bs),
                       std::min(d.z, off + (bz + 1) * bs)};
    if (lo[0] >= hi[0] || lo[1] >= hi[1] || lo[2] >= hi[2])
        return 0;
    const int nx = hi[0] - lo[0], ny = hi[1] - lo[1], nz = hi[2] - lo[2];
    const int n = nx * ny * nz;
    const Vec3 delta = steps_[static_cast<std::size_t>(move)];

    struct Pair {
        int p, q;
        double a, b, c;
    };
    std::vector<double> u0(static_cast<std::size_t>(n)), u1(static_cast<std::size_t>(n));
    std::vector<double> extra(static_cast<std::size_t>(n), 0.0);
    std::vector<Pair> pairs;
    pairs.reserve(static_cast<std::size_t>(3 * n));
    voxels_.resize(static_cast<std::size_t>(n));

    auto local = [&](int i, int j, int k) { return (i - lo[0]) + nx * ((j - lo[1]) + ny * (k - lo[2])); };

    for (int k = lo[2]; k < hi[2]; ++k)
        for (int j = lo[1]; j < hi[1]; ++j)
            for (int i = lo[0]; i < hi[0]; ++i) {
                const int p = local(i, j, k);
                const std::size_t idx = geom_.linear(i, j, k);
                voxels_[static_cast<std::size_t>(p)] = idx;
                const Vec3& up = field_[idx];
                double c0 = cost_[idx];
                double c1 = cached_candidate(idx, i, j, k, move);
                for (int a = 0; a < 3; ++a) {
                    const double w = problem_.edge_weight(a);
                    for (int sgn = -1; sgn <= 1; sgn += 2) {
                        int q3[3] = {i, j, k};
                        q3[a] += sgn;
                        if (q3[a] < 0 || q3[a] >= d[a])
                            continue;
                        const Vec3 e = up - field_(q3[0], q3[1], q3[2]);
                        if (q3[a] >= lo[a] && q3[a] < hi[a]) {
                            if (sgn < 0)
                                continue;
                            const Vec3 em = e - delta;
                            const Vec3 ep = e + delta;
                            const Pair pr{p, local(q3[0], q3[1], q3[2]), w * dot(e, e), w * dot(em, em), w * dot(ep, ep)};
                            pairs.push_back(pr);
                        } else {
                            const Vec3 ep = e + delta;
                            c0 += w * dot(e, e);
                            c1 += w * dot(ep, ep);
                        }
                    }
                }
                u0[static_cast<std::size_t>(p)] = c0;
                u1[static_cast<std::size_t>(p)] = c1;
            }

    double before = 0.0;
    for (int p = 0; p < n; ++p)
        before += u0[static_cast<std::size_t>(p)];
    for (const Pair& pr : pairs)
        before += pr.a;

    // V(0,0)=A, V(0,1)=B, V(1,0)=C, V(1,1)=A
    graph_.reset(n, 3 * n);
    for (const Pair& pr : pairs) {
        extra[static_cast<std::size_t>(pr.p)] += pr.c - pr.a;
        extra[static_cast<std::size_t>(pr.q)] += pr.a - pr.c;
        graph_.add_edge(pr.p, pr.q, pr.b + pr.c - 2.0 * pr.a, 0.0);
    }
    for (int p = 0; p < n; ++p) {
        const auto sp = static_cast<std::size_t>(p);
        const double diff = u1[sp] + extra[sp] - u0[sp];
        if (diff > 0.0)
            graph_.add_tweights(p, diff, 0.0);
        else
            graph_.add_tweights(p, 0.0, -diff);
    }
    graph_.maxflow();
    std::vector<char> label(static_cast<std::size_t>(n));
    for (int p = 0; p < n; ++p)
        label[static_cast<std::size_t>(p)] = graph_.what_segment(p) == MaxFlowGraph::Segment::Sink ? 1 : 0;

    int moved = 0;
    double after = 0.0;
    for (int p = 0; p < n; ++p) {
        const auto sp = static_cast<std::size_t>(p);
        moved += label[sp];
        after += label[sp] ? u1[sp] : u0[sp];
    }
    for (const Pair& pr : pairs) {
        const char lp = label[static_cast<std::size_t>(pr.p)];
        const char lq = label[static_cast<std::size_t>(pr.q)];
        after += lp == lq ? pr.a : (lp ? pr.c : pr.b);
    }

    const double rel = relative_to(after - before, energy_);
    const bool accepted = moved > 0 && after < before;
    if (opt_.log) {
        ++opt_.log->block_solves;
        if (rel > opt_.relative_tolerance)
            ++opt_.log->block_violations;
        opt_.log->max_block_relative_increase = std::max(opt_.log->max_block_relative_increase, rel);
    }
    if (opt_.on_block)
        opt_.on_block(BlockSolveEvent{opt_.level, move, before, after, energy_, accepted, moved});
    if (!accepted)
        return 0;

    for (int p = 0; p < n; ++p) {
        if (!label[static_cast<std::size_t>(p)])
            continue;
        const std::size_t idx = voxels_[static_cast<std::size_t>(p)];
        cost_[idx] = candidate_[6 * idx + static_cast<std::size_t>(move)];
        field_[idx] += delta;
        std::fill_n(candidate_.begin() + static_cast<std::ptrdiff_t>(6 * idx), 6, kNotCached);
        const int i = static_cast<int>(idx % static_cast<std::size_t>(d.x));
        const int j = static_cast<int>((idx / static_cast<std::size_t>(d.x)) % static_cast<std::size_t>(d.y));
        const int k = static_cast<int>(idx / (static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y)));
        mark_dirty(i, j, k);
    }
    energy_ += after - before;
    if (opt_.log)
        opt_.log->accepted_moves += static_cast<std::size_t>(moved);
    return moved;
}

SweepResult LevelOptimizer::sweep()
{
    SweepResult r;
    r.energy_before = energy_;
    double checked_before = 0.0;
    if (opt_.verify_energy)
        checked_before = problem_.energy(field_).total;

    for (int pass = 0; pass < 2; ++pass) {
        std::swap(dirty_prev_[pass], dirty_next_[pass]);
        std::fill(dirty_next_[pass].begin(), dirty_next_[pass].end(), 0);
    }
    std::size_t moved = 0;
    for (int move = 0; move < 6; ++move)
        for (int pass = 0; pass < 2; ++pass) {
            const Dims& bg = block_grid_[pass];
            for (int bz = 0; bz < bg.z; ++bz)
                for (int by = 0; by < bg.y; ++by)
                    for (int bx = 0; bx < bg.x; ++bx) {
                        const auto b = static_cast<std::size_t>(bx + bg.x * (by + bg.y * bz));
                        if (!dirty_prev_[pass][b] && !dirty_next_[pass][b])
                            continue;
                        ++r.blocks_solved;
                        moved += static_cast<std::size_t>(solve_block(pass, bx, by, bz, move));
                    }
        }

    // Resync with the exact sum to keep rounding drift out of the
    // convergence test.
    energy_ = full_energy_from_cache();
    r.energy_after = energy_;
    r.voxels_moved = moved;
    r.energy_decreased = r.energy_after < r.energy_before;
    if (opt_.log) {
        ++opt_.log->sweeps;
        if (opt_.verify_energy) {
            const double checked_after = problem_.energy(field_).total;
            const double rel = relative_to(checked_after - checked_before, checked_before);
            ++opt_.log->sweep_checks;
            if (rel > opt_.relative_tolerance)
                ++opt_.log->sweep_violations;
            opt_.log->max_sweep_relative_increase = std::max(opt_.log->max_sweep_relative_increase, rel);
        }
    }
    return r;
}

int LevelOptimizer::run(int max_sweeps)
{
    const double eps = problem_.config().convergence_epsilon;
    int done = 0;
    while (done < max_sweeps) {
        const SweepResult r = sweep();
        ++done;
        if (r.voxels_moved == 0)
            break;
        if (relative_to(r.energy_before - r.energy_after, r.energy_before) < eps)
            break;
    }
    return done;
}

SweepResult graphcut_sweep(const LevelProblem& problem, DisplacementField& field, const SweepOptions& opt)
{
    LevelOptimizer o(problem, field, opt);
    return o.sweep();
}

DisplacementField run_stage(const std::vector<ChannelSet>& ref_pyramid, const std::vector<ChannelSet>& flt_pyramid,
                            const StageConfig& cfg, const DisplacementField& initial, const RegistrationOptions& opt)
{
    cfg.validate();
    const int levels = cfg.levels;
    if (static_cast<int>(ref_pyramid.size()) < levels || static_cast<int>(flt_pyramid.size()) < levels)
        throw ConfigError("image pyramid is shallower than the stage level count");
    require_same_geometry(ref_pyramid[0].geometry(), initial.geometry(), "initial displacement field");

    std::vector<DisplacementField> fields;
    fields.reserve(static_cast<std::size_t>(levels));
    fields.push_back(initial);
    for (int l = 1; l < levels; ++l)
        fields.push_back(downsample_field(fields.back()));
    std::vector<DisplacementField> residual(static_cast<std::size_t>(std::max(levels - 1, 0)));
    for (int l = 1; l < levels; ++l) {
        DisplacementField r = upsample_field(fields[static_cast<std::size_t>(l)], fields[static_cast<std::size_t>(l - 1)].geometry());
        const DisplacementField& fine = fields[static_cast<std::size_t>(l - 1)];
        for (std::size_t v = 0; v < r.size(); ++v)
            r[v] = fine[v] - r[v];
        residual[static_cast<std::size_t>(l - 1)] = std::move(r);
    }

    DisplacementField current = std::move(fields.back());
    fields.clear();
    for (int l = levels - 1; l >= 0; --l) {
        const int iters = cfg.max_iterations[static_cast<std::size_t>(levels - 1 - l)];
        if (iters > 0) {
            const LevelProblem problem(ref_pyramid[static_cast<std::size_t>(l)], flt_pyramid[static_cast<std::size_t>(l)], cfg);
            SweepOptions so = opt.sweep;
            so.level = l;
            LevelOptimizer o(problem, current, so);
            o.run(iters);
        }
        if (l > 0) {
            const DisplacementField& res = residual[static_cast<std::size_t>(l - 1)];
            DisplacementField up = upsample_field(current, res.geometry());
            for (std::size_t v = 0; v < up.size(); ++v)
                up[v] += res[v];
            current = std::move(up);
        }
    }
    return current;
}

DisplacementField register_deformable(const PreprocessedSubject& ref, const PreprocessedSubject& flt,
                                      const AffineInit& init, const std::array<StageConfig, 2>& stages,
                                      const RegistrationOptions& opt)
{
    int levels = 1;
    for (const auto& s : stages) {
        s.validate();
        levels = std::max(levels, s.levels);
    }
    const auto ref_pyr = build_pyramid(ChannelSet::from(ref), levels);
    const auto flt_pyr = build_pyramid(ChannelSet::from(flt), levels);
    DisplacementField field = affine_to_field(init, ref.geometry());
    for (const auto& s : stages)
        field = run_stage(ref_pyr, flt_pyr, s, field, opt);
    return field;
}

double LevelOptimizer::full_energy_from_cache() const
{
    double s = 0.0;
    for (double c : cost_)
        s += c;
    return s + problem_.regularization(field_);
}

} // namespace voxmap
