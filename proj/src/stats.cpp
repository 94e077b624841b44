#include "voxmap/stats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>

namespace voxmap {

namespace {

std::ofstream open_csv(const std::filesystem::path& path)
{
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write '" + path.string() + "'");
    os.precision(12);
    return os;
}

} // namespace

double quantile_sorted(const std::vector<double>& sorted, double q)
{
    if (sorted.empty())
        throw ConfigError("quantile of an empty list");
    const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

IqrResult iqr_filter(const std::vector<double>& values)
{
    IqrResult r;
    r.keep.assign(values.size(), 1);
    if (values.size() < 4) {
        if (!values.empty()) {
            r.low = *std::min_element(values.begin(), values.end());
            r.high = *std::max_element(values.begin(), values.end());
        }
        return r;
    }
    std::vector<double> s = values;
    std::sort(s.begin(), s.end());
    const double q1 = quantile_sorted(s, 0.25);
    const double q3 = quantile_sorted(s, 0.75);
    const double iqr = q3 - q1;
    r.low = q1 - 1.5 * iqr;
    r.high = q3 + 1.5 * iqr;
    r.filtered = true;
    for (std::size_t i = 0; i < values.size(); ++i)
        r.keep[i] = values[i] >= r.low && values[i] <= r.high;
    return r;
}

double pearson_p_value(double r, std::size_t n)
{
    if (n < 3 || std::isnan(r))
        return 1.0;
    r = std::clamp(r, -1.0, 1.0);
    const double df = static_cast<double>(n) - 2.0;
    const double r2 = r * r;
    if (r2 >= 1.0)
        return 0.0;
    // P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2) with t^2 = df r^2 / (1 - r^2).
    const double x = (1.0 - r2);
    return std::clamp(boost::math::ibeta(df / 2.0, 0.5, x), 0.0, 1.0);
}

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size())
        throw ConfigError("pearson: length mismatch (" + std::to_string(x.size()) + " vs " + std::to_string(y.size())
                          + ")");
    PearsonResult res;
    res.n = x.size();
    res.r = std::numeric_limits<double>::quiet_NaN();
    res.p = 1.0;
    if (res.n < 3)
        return res;
    const double n = static_cast<double>(res.n);
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (!(sxx > 0.0) || !(syy > 0.0))
        return res;
    res.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    res.p = pearson_p_value(res.r, res.n);
    res.defined = true;
    return res;
}

Significance classify_p(double p)
{
    if (p < 0.05)
        return Significance::Significant;
    if (p <= 0.2)
        return Significance::Near;
    return Significance::NotSignificant;
}

const char* to_string(Significance s)
{
    switch (s) {
    case Significance::Significant: return "significant";
    case Significance::Near: return "near";
    case Significance::NotSignificant: return "NS";
    }
    return "NS";
}

std::vector<double> benjamini_hochberg(const std::vector<double>& p)
{
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (!std::isnan(p[i]))
            order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::vector<double> q(p.size(), std::numeric_limits<double>::quiet_NaN());
    const double m = static_cast<double>(order.size());
    double running = 1.0;
    for (std::size_t r = order.size(); r-- > 0;) {
        const std::size_t i = order[r];
        running = std::min(running, p[i] * m / static_cast<double>(r + 1));
        q[i] = running;
    }
    return q;
}

const char* to_string(Channel c)
{
    return c == Channel::Density ? "hu" : "jd";
}

Channel parse_channel(const std::string& s)
{
    if (s == "hu" || s == "density")
        return Channel::Density;
    if (s == "jd" || s == "jacobian")
        return Channel::Jacobian;
    throw ConfigError("unknown channel '" + s + "' (expected jd or hu)");
}

void FeatureMatrix::add_subject(const std::string& id, std::vector<double> density, std::vector<double> jacobian,
                                std::vector<char> valid)
{
    const auto k = static_cast<std::size_t>(k_);
    if (density.size() != k || jacobian.size() != k || valid.size() != k)
        throw ConfigError("feature vector length for subject '" + id + "' does not match " + std::to_string(k_)
                          + " supervoxels");
    if (std::find(ids_.begin(), ids_.end(), id) != ids_.end())
        throw ConfigError("duplicate subject '" + id + "' in feature matrix");
    ids_.push_back(id);
    density_.insert(density_.end(), density.begin(), density.end());
    jacobian_.insert(jacobian_.end(), jacobian.begin(), jacobian.end());
    density_ok_.insert(density_ok_.end(), valid.begin(), valid.end());
    jacobian_ok_.insert(jacobian_ok_.end(), valid.begin(), valid.end());
}

double FeatureMatrix::value(Channel c, int k, std::size_t s) const
{
    return c == Channel::Density ? density_[at(k, s)] : jacobian_[at(k, s)];
}

bool FeatureMatrix::eligible(Channel c, int k, std::size_t s) const
{
    return (c == Channel::Density ? density_ok_[at(k, s)] : jacobian_ok_[at(k, s)]) != 0;
}

void FeatureMatrix::set_eligible(Channel c, int k, std::size_t s, bool e)
{
    (c == Channel::Density ? density_ok_ : jacobian_ok_)[at(k, s)] = e ? 1 : 0;
}

void FeatureMatrix::apply_cohort_iqr()
{
    std::vector<double> vals;
    std::vector<std::size_t> who;
    for (Channel c : {Channel::Density, Channel::Jacobian})
        for (int k = 0; k < k_; ++k) {
            vals.clear();
            who.clear();
            for (std::size_t s = 0; s < subjects(); ++s)
                if (eligible(c, k, s)) {
                    vals.push_back(value(c, k, s));
                    who.push_back(s);
                }
            const IqrResult r = iqr_filter(vals);
            for (std::size_t i = 0; i < who.size(); ++i)
                if (!r.keep[i])
                    set_eligible(c, k, who[i], false);
        }
}

FeatureBuilder::FeatureBuilder(const SupervoxelDecomposition& d) : d_(d), m_(d.count)
{
    members_.resize(static_cast<std::size_t>(d.count));
    for (std::size_t i = 0; i < d.labels.size(); ++i) {
        const std::uint32_t lab = d.labels[i];
        if (lab == 0 || lab > static_cast<std::uint32_t>(d.count))
            throw GeometryError("supervoxel label " + std::to_string(lab) + " outside 1.." + std::to_string(d.count));
        members_[lab - 1].push_back(i);
    }
}

void FeatureBuilder::add(const std::string& id, const Volume& warped_hu, const Volume& jacobian)
{
    require_same_geometry(d_.labels.geometry(), warped_hu.geometry(), "warped density of '" + id + "'");
    require_same_geometry(d_.labels.geometry(), jacobian.geometry(), "Jacobian map of '" + id + "'");
    const std::size_t k = members_.size();
    std::vector<double> density(k, 0.0), jd(k, 0.0);
    std::vector<char> valid(k, 0);
    std::vector<double> vals;
    for (std::size_t c = 0; c < k; ++c) {
        const auto& idx = members_[c];
        vals.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            vals[i] = warped_hu[idx[i]];
        const IqrResult r = iqr_filter(vals);
        double sd = 0.0, sj = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (!r.keep[i])
                continue;
            sd += vals[i];
            sj += jacobian[idx[i]];
            ++n;
        }
        if (n == 0)
            continue;
        density[c] = sd / static_cast<double>(n);
        jd[c] = sj / static_cast<double>(n);
        valid[c] = 1;
    }
    m_.add_subject(id, std::move(density), std::move(jd), std::move(valid));
}

FeatureMatrix FeatureBuilder::finish()
{
    m_.apply_cohort_iqr();
    return std::move(m_);
}

std::size_t AssociationMap::tested() const
{
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.tested; }));
}

std::size_t AssociationMap::significant() const
{
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [](const auto& r) { return r.significant; }));
}

double AssociationMap::significant_fraction() const
{
    const std::size_t t = tested();
    return t ? static_cast<double>(significant()) / static_cast<double>(t) : 0.0;
}

AssociationMap associate(const FeatureMatrix& fm, const SupervoxelDecomposition& d, Channel channel,
                         const std::vector<double>& covariate, const std::string& covariate_name,
                         const AssociationOptions& opt, const LabelVolume* exclusion)
{
    if (covariate.size() != fm.subjects())
        throw ConfigError("covariate '" + covariate_name + "' has " + std::to_string(covariate.size())
                          + " values for " + std::to_string(fm.subjects()) + " subjects");
    if (fm.supervoxels() != d.count)
        throw ConfigError("feature matrix and supervoxel decomposition disagree on the supervoxel count");
    if (!(opt.alpha > 0.0 && opt.alpha < 1.0))
        throw ConfigError("alpha must lie in (0, 1)");
    const auto K = static_cast<std::size_t>(d.count);
    AssociationMap out;
    out.channel = channel;
    out.covariate = covariate_name;
    out.rows.resize(K);

    std::vector<char> excluded(K, 0);
    if (exclusion) {
        require_same_geometry(d.labels.geometry(), exclusion->geometry(), "region filter");
        std::vector<std::size_t> inside(K, 0), total(K, 0);
        for (std::size_t i = 0; i < d.labels.size(); ++i) {
            const std::size_t c = d.labels[i] - 1;
            ++total[c];
            inside[c] += (*exclusion)[i] != 0;
        }
        for (std::size_t c = 0; c < K; ++c)
            excluded[c] = 2 * inside[c] > total[c];
    }

    std::vector<double> x, y;
    for (std::size_t c = 0; c < K; ++c) {
        SupervoxelAssociation& row = out.rows[c];
        row.region_excluded = excluded[c] != 0;
        x.clear();
        y.clear();
        for (std::size_t s = 0; s < fm.subjects(); ++s)
            if (fm.eligible(channel, static_cast<int>(c), s)) {
                x.push_back(fm.value(channel, static_cast<int>(c), s));
                y.push_back(covariate[s]);
            }
        row.n = x.size();
        const PearsonResult pr = pearson(x, y);
        row.r = pr.r;
        row.p = pr.p;
        row.tested = !row.region_excluded && pr.defined && row.n >= std::max<std::size_t>(opt.min_subjects, 3);
    }

    std::vector<double> p(K, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < K; ++c)
        if (out.rows[c].tested)
            p[c] = out.rows[c].p;
    const std::vector<double> q = opt.benjamini_hochberg ? benjamini_hochberg(p) : p;
    for (std::size_t c = 0; c < K; ++c) {
        SupervoxelAssociation& row = out.rows[c];
        row.q = row.tested ? q[c] : 1.0;
        row.significant = row.tested && row.q < opt.alpha;
    }

    out.map = Volume(d.labels.geometry(), 0.0f);
    out.map.set_fill_value(0.0f);
    for (std::size_t i = 0; i < d.labels.size(); ++i) {
        const auto& row = out.rows[d.labels[i] - 1];
        if (row.significant)
            out.map[i] = static_cast<float>(row.r);
    }
    return out;
}

void write_association_csv(const AssociationMap& m, const std::filesystem::path& path)
{
    std::ofstream os = open_csv(path);
    os << "supervoxel,r,p,q,n_eff,tested,significant,region_filtered\n";
    for (std::size_t c = 0; c < m.rows.size(); ++c) {
        const auto& r = m.rows[c];
        os << c + 1 << ',';
        if (std::isnan(r.r))
            os << "NaN";
        else
            os << r.r;
        os << ',' << r.p << ',' << r.q << ',' << r.n << ',' << int(r.tested) << ',' << int(r.significant) << ','
           << int(r.region_excluded) << '\n';
    }
}

std::map<std::string, double> default_template_weights()
{
    return {{"age", 1.0}, {"LVV", 0.2}, {"RVV", 0.2}, {"LAV", 0.2}, {"RAV", 0.2}, {"MV", 0.2}};
}

TemplateSelection select_template(const std::vector<TemplateCandidate>& candidates,
                                  const std::map<std::string, double>& weights)
{
    if (candidates.size() < 2)
        throw ConfigError("template selection needs at least 2 subjects, got " + std::to_string(candidates.size()));
    if (weights.empty())
        throw ConfigError("template selection needs at least one weighted feature");
    TemplateSelection sel;
    sel.scores.resize(candidates.size());
    for (std::size_t s = 0; s < candidates.size(); ++s)
        sel.scores[s].id = candidates[s].id;

    for (const auto& [feature, weight] : weights) {
        std::vector<double> v(candidates.size());
        for (std::size_t s = 0; s < candidates.size(); ++s) {
            auto it = candidates[s].features.find(feature);
            if (it == candidates[s].features.end() || !std::isfinite(it->second))
                throw ConfigError("subject '" + candidates[s].id + "' is missing template feature '" + feature + "'");
            v[s] = it->second;
        }
        std::vector<double> sorted = v;
        std::sort(sorted.begin(), sorted.end());
        const double lo = quantile_sorted(sorted, 0.01);
        const double hi = quantile_sorted(sorted, 0.99);
        for (double& x : v)
            x = std::clamp(x, lo, hi);
        const double n = static_cast<double>(v.size());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
        double ss = 0.0;
        for (double x : v)
            ss += (x - mean) * (x - mean);
        const double sd = std::sqrt(ss / (n - 1.0));
        for (std::size_t s = 0; s < v.size(); ++s) {
            const double z = sd > 0.0 ? (v[s] - mean) / sd : 0.0;
            sel.scores[s].z[feature] = z;
            sel.scores[s].score += weight * std::abs(z);
        }
    }

    std::size_t best = 0;
    for (std::size_t s = 1; s < sel.scores.size(); ++s) {
        const auto& a = sel.scores[s];
        const auto& b = sel.scores[best];
        if (a.score < b.score || (a.score == b.score && a.id < b.id))
            best = s;
    }
    sel.id = sel.scores[best].id;
    return sel;
}

const CorrelationCell& CorrelationTable::at(const std::string& a, const std::string& b) const
{
    for (const auto& c : cells)
        if (c.a == a && c.b == b)
            return c;
    throw ConfigError("no correlation cell for (" + a + ", " + b + ")");
}

CorrelationTable correlation_table(const std::vector<std::string>& names,
                                   const std::vector<std::vector<double>>& columns)
{
    if (names.size() != columns.size())
        throw ConfigError("correlation table: names and columns differ in count");
    CorrelationTable t;
    t.names = names;
    for (std::size_t a = 0; a < names.size(); ++a)
        for (std::size_t b = 0; b < names.size(); ++b) {
            CorrelationCell cell;
            cell.a = names[a];
            cell.b = names[b];
            cell.result = pearson(columns[a], columns[b]);
            cell.significance = classify_p(cell.result.p);
            t.cells.push_back(cell);
        }
    return t;
}

void write_correlation_csv(const CorrelationTable& t, const std::filesystem::path& path)
{
    std::ofstream os = open_csv(path);
    os << "feature_a,feature_b,r,p,n,class\n";
    for (const auto& c : t.cells) {
        os << c.a << ',' << c.b << ',';
        if (std::isnan(c.result.r))
            os << "NaN";
        else
            os << c.result.r;
        os << ',' << c.result.p << ',' << c.result.n << ',' << to_string(c.significance) << '\n';
    }
}

} // namespace voxmap
