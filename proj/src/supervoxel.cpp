#include "voxmap/supervoxel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>

#include "voxmap/nifti.hpp"

namespace voxmap {

namespace {

constexpr int kOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};

struct Center {
    double x, y, z, value;
};

double gradient_energy(const Volume& v, int i, int j, int k)
{
    const Dims& d = v.dims();
    auto at = [&](int a, int b, int c) {
        return static_cast<double>(v(std::clamp(a, 0, d.x - 1), std::clamp(b, 0, d.y - 1), std::clamp(c, 0, d.z - 1)));
    };
    const double gx = at(i + 1, j, k) - at(i - 1, j, k);
    const double gy = at(i, j + 1, k) - at(i, j - 1, k);
    const double gz = at(i, j, k + 1) - at(i, j, k - 1);
    return gx * gx + gy * gy + gz * gz;
}

// 6-connected components; comp[i] is a component index, sizes[c] its size.
std::vector<std::int32_t> components(const LabelVolume& labels, std::vector<std::size_t>& sizes,
                                     std::vector<std::uint32_t>& comp_label)
{
    const Geometry& g = labels.geometry();
    const Dims& d = g.dims;
    std::vector<std::int32_t> comp(labels.size(), -1);
    std::vector<std::size_t> stack;
    sizes.clear();
    comp_label.clear();
    for (std::size_t seed = 0; seed < labels.size(); ++seed) {
        if (comp[seed] >= 0)
            continue;
        const auto c = static_cast<std::int32_t>(sizes.size());
        const std::uint32_t lab = labels[seed];
        std::size_t count = 0;
        comp[seed] = c;
        stack.push_back(seed);
        while (!stack.empty()) {
            const std::size_t idx = stack.back();
            stack.pop_back();
            ++count;
            const int i = static_cast<int>(idx % d.x);
            const int j = static_cast<int>((idx / d.x) % d.y);
            const int k = static_cast<int>(idx / (static_cast<std::size_t>(d.x) * d.y));
            for (const auto& o : kOffsets) {
                const int a = i + o[0], b = j + o[1], e = k + o[2];
                if (!g.contains_index(a, b, e))
                    continue;
                const std::size_t n = g.linear(a, b, e);
                if (comp[n] < 0 && labels[n] == lab) {
                    comp[n] = c;
                    stack.push_back(n);
                }
            }
        }
        sizes.push_back(count);
        comp_label.push_back(lab);
    }
    return comp;
}

void enforce_connectivity(LabelVolume& labels)
{
    const Geometry& g = labels.geometry();
    const Dims& d = g.dims;
    for (;;) {
        std::vector<std::size_t> sizes;
        std::vector<std::uint32_t> comp_label;
        const auto comp = components(labels, sizes, comp_label);

        // Main component: the largest one of each non-zero label.
        std::map<std::uint32_t, std::int32_t> main;
        for (std::size_t c = 0; c < sizes.size(); ++c) {
            const std::uint32_t lab = comp_label[c];
            if (lab == 0)
                continue;
            auto it = main.find(lab);
            if (it == main.end() || sizes[c] > sizes[static_cast<std::size_t>(it->second)])
                main[lab] = static_cast<std::int32_t>(c);
        }
        std::vector<char> is_main(sizes.size(), 0);
        for (const auto& [lab, c] : main)
            is_main[static_cast<std::size_t>(c)] = 1;
        if (std::all_of(is_main.begin(), is_main.end(), [](char m) { return m != 0; }))
            return;

        // For every fragment, the largest adjacent main component.
        std::vector<std::int32_t> target(sizes.size(), -1);
        for (int k = 0; k < d.z; ++k)
            for (int j = 0; j < d.y; ++j)
                for (int i = 0; i < d.x; ++i) {
                    const std::size_t idx = g.linear(i, j, k);
                    const auto c = static_cast<std::size_t>(comp[idx]);
                    if (is_main[c])
                        continue;
                    for (const auto& o : kOffsets) {
                        const int a = i + o[0], b = j + o[1], e = k + o[2];
                        if (!g.contains_index(a, b, e))
                            continue;
                        const auto n = comp[g.linear(a, b, e)];
                        if (!is_main[static_cast<std::size_t>(n)])
                            continue;
                        std::int32_t& t = target[c];
                        if (t < 0 || sizes[static_cast<std::size_t>(n)] > sizes[static_cast<std::size_t>(t)]
                            || (sizes[static_cast<std::size_t>(n)] == sizes[static_cast<std::size_t>(t)]
                                && comp_label[static_cast<std::size_t>(n)] < comp_label[static_cast<std::size_t>(t)]))
                            t = n;
                    }
                }
        bool changed = false;
        for (std::size_t idx = 0; idx < labels.size(); ++idx) {
            const std::int32_t t = target[static_cast<std::size_t>(comp[idx])];
            if (t >= 0) {
                labels[idx] = comp_label[static_cast<std::size_t>(t)];
                changed = true;
            }
        }
        if (!changed)
            throw ConfigError("supervoxel connectivity repair made no progress");
    }
}

int relabel_sequential(LabelVolume& labels)
{
    std::map<std::uint32_t, std::uint32_t> remap;
    for (std::size_t i = 0; i < labels.size(); ++i)
        remap.emplace(labels[i], 0);
    std::uint32_t next = 1;
    for (auto& [from, to] : remap)
        to = next++;
    for (std::size_t i = 0; i < labels.size(); ++i)
        labels[i] = remap[labels[i]];
    return static_cast<int>(remap.size());
}

} // namespace

int slic_seeds_per_axis(int dim, int spacing)
{
    return std::max(1, dim / spacing);
}

SupervoxelDecomposition slic_cluster(const Volume& intensity, const SlicOptions& opt)
{
    if (opt.seed_spacing < 1)
        throw ConfigError("supervoxel seed spacing must be at least 1");
    if (!(opt.compactness >= 0.0))
        throw ConfigError("supervoxel compactness must be non-negative");
    if (opt.max_iterations < 1)
        throw ConfigError("supervoxel iterations must be at least 1");
    const Geometry& g = intensity.geometry();
    const Dims& d = g.dims;
    const int S = opt.seed_spacing;

    int n[3];
    double step[3];
    for (int a = 0; a < 3; ++a) {
        n[a] = slic_seeds_per_axis(d[a], S);
        step[a] = static_cast<double>(d[a]) / n[a];
    }

    std::vector<Center> centers;
    centers.reserve(static_cast<std::size_t>(n[0]) * n[1] * n[2]);
    for (int c = 0; c < n[2]; ++c)
        for (int b = 0; b < n[1]; ++b)
            for (int a = 0; a < n[0]; ++a) {
                const int si = static_cast<int>(std::floor(step[0] * (a + 0.5)));
                const int sj = static_cast<int>(std::floor(step[1] * (b + 0.5)));
                const int sk = static_cast<int>(std::floor(step[2] * (c + 0.5)));
                int bi = si, bj = sj, bk = sk;
                double best = std::numeric_limits<double>::infinity();
                for (int dk = -1; dk <= 1; ++dk)
                    for (int dj = -1; dj <= 1; ++dj)
                        for (int di = -1; di <= 1; ++di) {
                            const int i = si + di, j = sj + dj, k = sk + dk;
                            if (!g.contains_index(i, j, k))
                                continue;
                            const double e = gradient_energy(intensity, i, j, k);
                            if (e < best) {
                                best = e;
                                bi = i;
                                bj = j;
                                bk = k;
                            }
                        }
                centers.push_back({static_cast<double>(bi), static_cast<double>(bj), static_cast<double>(bk),
                                   static_cast<double>(intensity(bi, bj, bk))});
            }

    const double spatial = opt.compactness / S;
    const double spatial2 = spatial * spatial;
    LabelVolume labels(g, 0);
    std::vector<double> dist(intensity.size());
    for (int it = 0; it < opt.max_iterations; ++it) {
        std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
        std::fill(labels.values().begin(), labels.values().end(), 0u);
        for (std::size_t c = 0; c < centers.size(); ++c) {
            const Center& ct = centers[c];
            const int lo[3] = {std::max(0, static_cast<int>(std::ceil(ct.x - S))),
                               std::max(0, static_cast<int>(std::ceil(ct.y - S))),
                               std::max(0, static_cast<int>(std::ceil(ct.z - S)))};
            const int hi[3] = {std::min(d.x - 1, static_cast<int>(std::floor(ct.x + S))),
                               std::min(d.y - 1, static_cast<int>(std::floor(ct.y + S))),
                               std::min(d.z - 1, static_cast<int>(std::floor(ct.z + S)))};
            const auto lab = static_cast<std::uint32_t>(c + 1);
            for (int k = lo[2]; k <= hi[2]; ++k)
                for (int j = lo[1]; j <= hi[1]; ++j)
                    for (int i = lo[0]; i <= hi[0]; ++i) {
                        const std::size_t idx = g.linear(i, j, k);
                        const double dc = intensity[idx] - ct.value;
                        const double dx = i - ct.x, dy = j - ct.y, dz = k - ct.z;
                        const double D = dc * dc + spatial2 * (dx * dx + dy * dy + dz * dz);
                        if (D < dist[idx]) {
                            dist[idx] = D;
                            labels[idx] = lab;
                        }
                    }
        }
        std::vector<Center> sum(centers.size(), Center{0, 0, 0, 0});
        std::vector<std::size_t> count(centers.size(), 0);
        for (int k = 0; k < d.z; ++k)
            for (int j = 0; j < d.y; ++j)
                for (int i = 0; i < d.x; ++i) {
                    const std::size_t idx = g.linear(i, j, k);
                    if (labels[idx] == 0)
                        continue;
                    const std::size_t c = labels[idx] - 1;
                    sum[c].x += i;
                    sum[c].y += j;
                    sum[c].z += k;
                    sum[c].value += intensity[idx];
                    ++count[c];
                }
        double shift = 0.0;
        for (std::size_t c = 0; c < centers.size(); ++c) {
            if (count[c] == 0)
                continue;
            const double w = 1.0 / static_cast<double>(count[c]);
            const Center next{sum[c].x * w, sum[c].y * w, sum[c].z * w, sum[c].value * w};
            shift = std::max({shift, std::abs(next.x - centers[c].x), std::abs(next.y - centers[c].y),
                              std::abs(next.z - centers[c].z)});
            centers[c] = next;
        }
        if (shift == 0.0)
            break;
    }

    enforce_connectivity(labels);
    SupervoxelDecomposition out;
    out.count = relabel_sequential(labels);
    out.labels = std::move(labels);
    out.seed_spacing = S;
    out.compactness = opt.compactness;
    return out;
}

std::vector<LabelMean> supervoxel_means(const SupervoxelDecomposition& d, const Volume& v,
                                        const LabelVolume* exclusion)
{
    require_same_geometry(d.labels.geometry(), v.geometry(), "supervoxel mean input");
    if (exclusion)
        require_same_geometry(d.labels.geometry(), exclusion->geometry(), "supervoxel exclusion mask");
    std::vector<double> sum(static_cast<std::size_t>(d.count), 0.0);
    std::vector<LabelMean> out(static_cast<std::size_t>(d.count));
    for (std::size_t i = 0; i < v.size(); ++i) {
        const std::uint32_t lab = d.labels[i];
        if (lab == 0 || (exclusion && (*exclusion)[i] != 0))
            continue;
        if (lab > static_cast<std::uint32_t>(d.count))
            throw GeometryError("supervoxel label exceeds the label count");
        sum[lab - 1] += v[i];
        ++out[lab - 1].count;
    }
    for (std::size_t c = 0; c < out.size(); ++c)
        if (out[c].count > 0)
            out[c].mean = sum[c] / static_cast<double>(out[c].count);
    return out;
}

void write_supervoxels(const SupervoxelDecomposition& d, const std::filesystem::path& nifti_path,
                       const std::filesystem::path& csv_path)
{
    write_volume(d.labels, nifti_path);
    const Geometry& g = d.labels.geometry();
    std::vector<std::size_t> size(static_cast<std::size_t>(d.count), 0);
    std::vector<Vec3> centroid(static_cast<std::size_t>(d.count));
    for (int k = 0; k < g.dims.z; ++k)
        for (int j = 0; j < g.dims.y; ++j)
            for (int i = 0; i < g.dims.x; ++i) {
                const std::uint32_t lab = d.labels(i, j, k);
                if (lab == 0)
                    continue;
                ++size[lab - 1];
                centroid[lab - 1] += g.index_to_physical(i, j, k);
            }
    if (csv_path.has_parent_path())
        std::filesystem::create_directories(csv_path.parent_path());
    std::ofstream os(csv_path);
    if (!os)
        throw IoError("cannot write '" + csv_path.string() + "'");
    os.precision(10);
    os << "label,voxels,x_mm,y_mm,z_mm\n";
    for (std::size_t c = 0; c < size.size(); ++c) {
        const Vec3 m = size[c] ? centroid[c] * (1.0 / static_cast<double>(size[c])) : Vec3{};
        os << c + 1 << ',' << size[c] << ',' << m.x << ',' << m.y << ',' << m.z << '\n';
    }
}

SupervoxelDecomposition read_supervoxels(const std::filesystem::path& nifti_path)
{
    SupervoxelDecomposition d;
    d.labels = read_label_volume(nifti_path);
    std::uint32_t max_label = 0;
    for (std::size_t i = 0; i < d.labels.size(); ++i)
        max_label = std::max(max_label, d.labels[i]);
    d.count = static_cast<int>(max_label);
    return d;
}

bool labels_are_connected(const LabelVolume& labels)
{
    std::vector<std::size_t> sizes;
    std::vector<std::uint32_t> comp_label;
    components(labels, sizes, comp_label);
    std::vector<std::uint32_t> seen = comp_label;
    std::sort(seen.begin(), seen.end());
    return std::adjacent_find(seen.begin(), seen.end()) == seen.end();
}

} // namespace voxmap
