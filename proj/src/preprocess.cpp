#include "voxmap/preprocess.hpp"

#include <algorithm>

namespace voxmap {

const LabelVolume& require_mask(const MaskSet& masks, std::string_view name)
{
    auto it = masks.find(std::string(name));
    if (it == masks.end())
        throw ConfigError("missing required mask '" + std::string(name) + "'");
    return it->second;
}

LabelVolume union_of(const MaskSet& masks, const Geometry& g, std::span<const std::string_view> names)
{
    LabelVolume out(g, 0u);
    for (auto name : names) {
        auto it = masks.find(std::string(name));
        if (it == masks.end())
            continue;
        require_same_geometry(g, it->second.geometry(), "mask '" + std::string(name) + "'");
        for (std::size_t i = 0; i < out.size(); ++i)
            if (it->second[i] != 0)
                out[i] = 1u;
    }
    return out;
}

namespace {

// Inclusive prefix counts over a (nx+1)(ny+1)(nz+1) table.
class BoxCounter {
public:
    template <typename Pred>
    BoxCounter(const Volume& v, Pred pred) : d_(v.dims()), table_(static_cast<std::size_t>(d_.x + 1) * (d_.y + 1) * (d_.z + 1), 0)
    {
        for (int k = 0; k < d_.z; ++k)
            for (int j = 0; j < d_.y; ++j)
                for (int i = 0; i < d_.x; ++i) {
                    const int c = pred(v(i, j, k)) ? 1 : 0;
                    at(i + 1, j + 1, k + 1) = c + at(i, j + 1, k + 1) + at(i + 1, j, k + 1) + at(i + 1, j + 1, k)
                                            - at(i, j, k + 1) - at(i, j + 1, k) - at(i + 1, j, k) + at(i, j, k);
                }
    }

    // Count over the inclusive box [i0,i1]x[j0,j1]x[k0,k1].
    int count(int i0, int i1, int j0, int j1, int k0, int k1) const
    {
        ++i1; ++j1; ++k1;
        return at(i1, j1, k1) - at(i0, j1, k1) - at(i1, j0, k1) - at(i1, j1, k0) + at(i0, j0, k1) + at(i0, j1, k0)
             + at(i1, j0, k0) - at(i0, j0, k0);
    }

private:
    int& at(int i, int j, int k) { return table_[idx(i, j, k)]; }
    int at(int i, int j, int k) const { return table_[idx(i, j, k)]; }
    std::size_t idx(int i, int j, int k) const
    {
        return static_cast<std::size_t>(i) + static_cast<std::size_t>(d_.x + 1) * (static_cast<std::size_t>(j) + static_cast<std::size_t>(d_.y + 1) * k);
    }

    Dims d_;
    std::vector<int> table_;
};

float exact_median(const Volume& v, int i0, int i1, int j0, int j1, int k0, int k1, std::vector<float>& buf)
{
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
    return static_cast<float>(med);
}

} // namespace

Volume median_threshold_mask(const Volume& v, int radius, double lo, std::optional<double> hi)
{
    if (radius < 0)
        throw ConfigError("median_threshold_mask: radius must be >= 0");
    const Dims d = v.dims();
    const BoxCounter above_lo(v, [lo](float x) { return x >= lo; });
    std::optional<BoxCounter> above_hi;
    if (hi)
        above_hi.emplace(v, [h = *hi](float x) { return x >= h; });

    Volume out(v.geometry(), 0.0f);
    std::vector<float> buf;
    for (int k = 0; k < d.z; ++k) {
        const int k0 = std::max(0, k - radius), k1 = std::min(d.z - 1, k + radius);
        for (int j = 0; j < d.y; ++j) {
            const int j0 = std::max(0, j - radius), j1 = std::min(d.y - 1, j + radius);
            for (int i = 0; i < d.x; ++i) {
                const int i0 = std::max(0, i - radius), i1 = std::min(d.x - 1, i + radius);
                const int n = (i1 - i0 + 1) * (j1 - j0 + 1) * (k1 - k0 + 1);
                bool inside;
                if (n % 2 == 1) {
                    // The median is the ((n+1)/2)-th largest value.
                    const int need = (n + 1) / 2;
                    inside = above_lo.count(i0, i1, j0, j1, k0, k1) >= need;
                    if (inside && above_hi)
                        inside = n - above_hi->count(i0, i1, j0, j1, k0, k1) >= need;
                } else {
                    const float med = exact_median(v, i0, i1, j0, j1, k0, k1, buf);
                    inside = med >= lo && (!hi || med < *hi);
                }
                out(i, j, k) = inside ? 1.0f : 0.0f;
            }
        }
    }
    return out;
}

PreprocessedSubject preprocess_subject(const Volume& image, const MaskSet& masks, const PreprocessOptions& opt)
{
    const Geometry& g = image.geometry();
    for (auto name : region::cardiac)
        require_same_geometry(g, require_mask(masks, name).geometry(), "mask '" + std::string(name) + "'");

    PreprocessedSubject out;
    out.exclusion_mask = union_of(masks, g, region::excluded);

    Volume masked(g);
    for (std::size_t i = 0; i < masked.size(); ++i)
        masked[i] = out.exclusion_mask[i] != 0 ? static_cast<float>(opt.removed_hu) : image[i];

    // Density classes come from the unclipped HU so that [-400, 0) stays reachable.
    out.high_density_mask = median_threshold_mask(masked, opt.median_radius, opt.high_density_min);
    out.low_density_mask = median_threshold_mask(masked, opt.median_radius, opt.low_density_min, opt.high_density_min);

    out.intensity = Volume(g);
    for (std::size_t i = 0; i < masked.size(); ++i) {
        const double hu = std::clamp(static_cast<double>(masked[i]), opt.clip_low, opt.clip_high);
        out.intensity[i] = static_cast<float>(hu * opt.rescale);
    }

    out.cavity_mask = to_volume(union_of(masks, g, region::chambers));
    constexpr std::array<std::string_view, 2> myo_aorta = {region::MYO, region::Aorta};
    out.myo_aorta_mask = to_volume(union_of(masks, g, myo_aorta));

    out.intensity.set_fill_value(static_cast<float>(opt.clip_low * opt.rescale));
    out.cavity_mask.set_fill_value(0.0f);
    out.myo_aorta_mask.set_fill_value(0.0f);
    out.high_density_mask.set_fill_value(0.0f);
    out.low_density_mask.set_fill_value(0.0f);
    return out;
}

} // namespace voxmap
