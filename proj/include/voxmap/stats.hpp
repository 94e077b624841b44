#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "voxmap/supervoxel.hpp"
#include "voxmap/volume.hpp"

namespace voxmap {

// Linear-interpolation quantile of sorted data, position (n-1)q.
double quantile_sorted(const std::vector<double>& sorted, double q);

struct IqrResult {
    std::vector<char> keep; // one flag per input
    double low = 0.0;
    double high = 0.0;
    bool filtered = false; // false when n < 4 and every value is kept
};

// Keeps values within [Q1 - 1.5 IQR, Q3 + 1.5 IQR].
IqrResult iqr_filter(const std::vector<double>& values);

struct PearsonResult {
    double r = 0.0;
    double p = 1.0;
    std::size_t n = 0;
    bool defined = false; // false for zero variance or n < 3
};

// Two-sided p-value from t = r sqrt((n-2)/(1-r^2)) with n-2 degrees of freedom.
PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);
double pearson_p_value(double r, std::size_t n);

enum class Significance { Significant, Near, NotSignificant };
Significance classify_p(double p);
const char* to_string(Significance s);

// Benjamini-Hochberg adjusted p-values; NaN entries stay NaN.
std::vector<double> benjamini_hochberg(const std::vector<double>& p);

enum class Channel { Density, Jacobian };
const char* to_string(Channel c);
Channel parse_channel(const std::string& s);

// Per-subject supervoxel features for the two channels.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    explicit FeatureMatrix(int supervoxels) : k_(supervoxels) {}

    int supervoxels() const { return k_; }
    std::size_t subjects() const { return ids_.size(); }
    const std::vector<std::string>& ids() const { return ids_; }

    void add_subject(const std::string& id, std::vector<double> density, std::vector<double> jacobian,
                     std::vector<char> valid);

    // Feature value of supervoxel k (0-based) for subject s.
    double value(Channel c, int k, std::size_t s) const;
    bool eligible(Channel c, int k, std::size_t s) const;
    void set_eligible(Channel c, int k, std::size_t s, bool e);

    // Marks across-subject IQR outliers per supervoxel and channel ineligible.
    void apply_cohort_iqr();

private:
    std::size_t at(int k, std::size_t s) const { return s * static_cast<std::size_t>(k_) + static_cast<std::size_t>(k); }

    int k_ = 0;
    std::vector<std::string> ids_;
    std::vector<double> density_, jacobian_;
    std::vector<char> density_ok_, jacobian_ok_;
};

// Builds a FeatureMatrix one subject at a time. Within each supervoxel the
// voxels outside the IQR bounds of the warped density are dropped from both
// channel means.
class FeatureBuilder {
public:
    explicit FeatureBuilder(const SupervoxelDecomposition& d);

    void add(const std::string& id, const Volume& warped_hu, const Volume& jacobian);
    FeatureMatrix finish();

private:
    const SupervoxelDecomposition& d_;
    std::vector<std::vector<std::size_t>> members_;
    FeatureMatrix m_;
};

struct SupervoxelAssociation {
    double r = 0.0;
    double p = 1.0;
    double q = 1.0; // BH-adjusted when requested, otherwise equal to p
    std::size_t n = 0;
    bool tested = false;
    bool significant = false;
    bool region_excluded = false;
};

struct AssociationOptions {
    double alpha = 0.05;
    bool benjamini_hochberg = false;
    std::size_t min_subjects = 3;
};

struct AssociationMap {
    Channel channel = Channel::Jacobian;
    std::string covariate;
    std::vector<SupervoxelAssociation> rows; // index k holds label k+1
    Volume map; // r painted onto significant supervoxels, 0 elsewhere

    std::size_t tested() const;
    std::size_t significant() const;
    double significant_fraction() const;
};

// Supervoxels with more than half their voxels in `exclusion` are not tested.
AssociationMap associate(const FeatureMatrix& fm, const SupervoxelDecomposition& d, Channel channel,
                         const std::vector<double>& covariate, const std::string& covariate_name,
                         const AssociationOptions& opt = {}, const LabelVolume* exclusion = nullptr);

void write_association_csv(const AssociationMap& m, const std::filesystem::path& path);

struct TemplateScore {
    std::string id;
    std::map<std::string, double> z;
    double score = 0.0;
};

struct TemplateSelection {
    std::string id;
    std::vector<TemplateScore> scores; // input order
};

struct TemplateCandidate {
    std::string id;
    std::map<std::string, double> features;
};

// Features are winsorized at the 1st/99th percentiles, z-scored with the
// sample SD and combined as sum w_f |z_f| over the weighted features, which
// every candidate must provide.
TemplateSelection select_template(const std::vector<TemplateCandidate>& candidates,
                                  const std::map<std::string, double>& weights);

// Age weighted 1 and each of LVV, RVV, LAV, RAV, MV weighted 1/5.
std::map<std::string, double> default_template_weights();

struct CorrelationCell {
    std::string a, b;
    PearsonResult result;
    Significance significance = Significance::NotSignificant;
};

struct CorrelationTable {
    std::vector<std::string> names;
    std::vector<CorrelationCell> cells; // row-major over names x names

    const CorrelationCell& at(const std::string& a, const std::string& b) const;
};

// Pairwise Pearson correlations among the named columns.
CorrelationTable correlation_table(const std::vector<std::string>& names,
                                   const std::vector<std::vector<double>>& columns);

void write_correlation_csv(const CorrelationTable& t, const std::filesystem::path& path);

} // namespace voxmap
