#include "voxmap/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>

#include "voxmap/nifti.hpp"
#include "voxmap/parallel.hpp"

namespace voxmap {

namespace fs = std::filesystem;

namespace {

std::mutex& log_mutex()
{
    static std::mutex m;
    return m;
}

std::ofstream open_out(const fs::path& path)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write '" + path.string() + "'");
    os.precision(10);
    return os;
}

const char* stratum_name(Sex s)
{
    return s == Sex::Female ? "female" : "male";
}

LabelVolume chamber_union(const MaskSet& masks, const Geometry& g)
{
    return union_of(masks, g, region::chambers);
}

struct QcRow {
    std::string id;
    std::string status;
    double seconds = 0.0;
    std::map<std::string, double> dice;
    std::map<std::string, double> ice;
    std::string reason;
};

fs::path field_path(const fs::path& dir, const std::string& id) { return dir / "fields" / (id + ".nii.gz"); }
fs::path backward_path(const fs::path& dir, const std::string& id) { return dir / "fields" / (id + "_backward.nii.gz"); }
fs::path warped_path(const fs::path& dir, const std::string& id) { return dir / "warped" / (id + ".nii.gz"); }
fs::path jd_path(const fs::path& dir, const std::string& id) { return dir / "jd" / (id + ".nii.gz"); }
fs::path ice_path(const fs::path& dir, const std::string& id) { return dir / "ice" / (id + ".nii.gz"); }

std::vector<std::string> read_registered_ids(const fs::path& dir)
{
    std::ifstream in(dir / "qc.csv");
    if (!in)
        throw IoError("no registration results in '" + dir.string() + "' (qc.csv missing)");
    std::string line;
    std::getline(in, line);
    const auto header = split_csv_line(line);
    std::size_t status_col = header.size();
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == "status")
            status_col = i;
    if (status_col == header.size())
        throw IoError("'" + (dir / "qc.csv").string() + "' has no status column");
    std::vector<std::string> ids;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        const auto cells = split_csv_line(line);
        if (cells.size() > status_col && (cells[status_col] == "ok" || cells[status_col] == "reference"))
            ids.push_back(cells[0]);
    }
    return ids;
}

std::string read_reference(const fs::path& dir)
{
    std::ifstream in(dir / "reference.txt");
    if (!in)
        throw IoError("no reference.txt in '" + dir.string() + "'");
    std::string id;
    std::getline(in, id);
    return id;
}

} // namespace

void log_line(const std::string& line)
{
    std::lock_guard<std::mutex> lock(log_mutex());
    std::cerr << line << '\n' << std::flush;
}

SubjectRegistration register_pair(const RegistrationInput& ref, const RegistrationInput& flt,
                                  const std::array<StageConfig, 2>& stages, bool reverse,
                                  const RegistrationOptions& opt)
{
    if (!ref.image || !ref.masks || !ref.pre || !flt.image || !flt.masks || !flt.pre)
        throw ConfigError("register_pair: incomplete input");
    const auto t0 = std::chrono::steady_clock::now();
    const BoundingBox ref_box = mask_bounding_box(require_mask(*ref.masks, region::LV), 1);
    const BoundingBox flt_box = mask_bounding_box(require_mask(*flt.masks, region::LV), 1);

    SubjectRegistration out;
    RegistrationOptions o = opt;
    SolveLog local;
    if (!o.sweep.log)
        o.sweep.log = &local;
    out.forward = register_deformable(*ref.pre, *flt.pre, bbox_affine_init(ref_box, flt_box), stages, o);
    out.warped_hu = warp(*flt.image, out.forward);
    out.jacobian = jacobian_determinant(out.forward);
    for (const auto& [name, mask] : *ref.masks) {
        auto it = flt.masks->find(name);
        if (it != flt.masks->end())
            out.dice[name] = dice(mask, warp_mask(it->second, out.forward));
    }
    if (reverse) {
        out.backward = register_deformable(*flt.pre, *ref.pre, bbox_affine_init(flt_box, ref_box), stages, o);
        const Geometry& g = ref.image->geometry();
        for (std::string_view r : region::chambers) {
            auto it = ref.masks->find(std::string(r));
            if (it == ref.masks->end())
                continue;
            const IceResult ice = inverse_consistency(out.forward, *out.backward, &it->second);
            out.ice_mean[std::string(r)] = ice.mean;
            out.ice_sd[std::string(r)] = ice.sd;
        }
        const LabelVolume all = chamber_union(*ref.masks, g);
        const IceResult ice = inverse_consistency(out.forward, *out.backward, &all);
        out.ice_mean["chambers"] = ice.mean;
        out.ice_sd["chambers"] = ice.sd;
    }
    out.log = *o.sweep.log;
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

std::vector<TemplateChoice> select_templates(const CohortManifest& m, const std::map<std::string, double>& weights,
                                             bool stratify_by_sex)
{
    auto candidates_for = [&](std::optional<Sex> sex) {
        std::vector<TemplateCandidate> c;
        for (const auto& r : m.records) {
            if (sex && r.sex != *sex)
                continue;
            TemplateCandidate t;
            t.id = r.id;
            for (const auto& [f, w] : weights)
                t.features[f] = r.require_covariate(f);
            c.push_back(std::move(t));
        }
        return c;
    };
    std::vector<TemplateChoice> out;
    if (!stratify_by_sex) {
        TemplateChoice ch;
        ch.stratum = "all";
        ch.selection = select_template(candidates_for(std::nullopt), weights);
        ch.id = ch.selection.id;
        out.push_back(std::move(ch));
        return out;
    }
    for (Sex s : {Sex::Female, Sex::Male}) {
        auto c = candidates_for(s);
        if (c.size() < 2)
            throw ConfigError("stratum '" + std::string(stratum_name(s)) + "' has " + std::to_string(c.size())
                              + " subjects; template selection needs at least 2");
        TemplateChoice ch;
        ch.stratum = stratum_name(s);
        ch.selection = select_template(c, weights);
        ch.id = ch.selection.id;
        out.push_back(std::move(ch));
    }
    return out;
}

void write_template_report(const std::vector<TemplateChoice>& choices, const CohortManifest& m, const fs::path& dir)
{
    std::ofstream summary = open_out(dir / "templates.csv");
    summary << "stratum,id,score\n";
    for (const auto& ch : choices) {
        double score = 0.0;
        std::set<std::string> features;
        for (const auto& s : ch.selection.scores) {
            if (s.id == ch.id)
                score = s.score;
            for (const auto& [f, z] : s.z)
                features.insert(f);
        }
        summary << ch.stratum << ',' << csv_escape(ch.id) << ',' << score << '\n';
        for (const auto& f : features) {
            std::ofstream os = open_out(dir / ("template_" + ch.stratum + "_" + f + ".csv"));
            os << "id,value,z,selected\n";
            for (const auto& s : ch.selection.scores)
                os << csv_escape(s.id) << ',' << m.find(s.id).require_covariate(f) << ',' << s.z.at(f) << ','
                   << (s.id == ch.id ? 1 : 0) << '\n';
        }
    }
}

RegisterSummary run_register(const CohortManifest& m, const std::string& reference_id, const PipelineConfig& cfg,
                             const fs::path& dir)
{
    cfg.validate();
    const SubjectRecord& ref_rec = m.find(reference_id);
    const Volume ref_image = load_subject_image(m, ref_rec);
    const MaskSet ref_masks = load_subject_masks(m, ref_rec);
    require_mask(ref_masks, region::LV);
    const PreprocessedSubject ref_pre = preprocess_subject(ref_image, ref_masks, cfg.preprocess);
    const Geometry& g = ref_image.geometry();

    std::vector<const SubjectRecord*> todo;
    for (const auto& r : m.records) {
        if (cfg.stratify_by_sex && r.sex != ref_rec.sex)
            continue;
        todo.push_back(&r);
    }
    fs::create_directories(dir);
    open_out(dir / "reference.txt") << reference_id << '\n';

    std::vector<std::string> qc_regions;
    for (const auto& [name, mask] : ref_masks)
        qc_regions.push_back(name);

    RegisterSummary summary;
    std::vector<QcRow> rows(todo.size());
    std::mutex mu;
    const RegistrationInput ref_in{&ref_image, &ref_masks, &ref_pre};
    parallel_for(todo.size(), cfg.jobs, [&](std::size_t i) {
        const SubjectRecord& r = *todo[i];
        QcRow& row = rows[i];
        row.id = r.id;
        try {
            if (r.id == reference_id) {
                DisplacementField zero(g, Vec3{});
                write_field(zero, field_path(dir, r.id));
                write_volume(ref_image, warped_path(dir, r.id));
                write_volume(Volume(g, 1.0f), jd_path(dir, r.id));
                row.status = "reference";
                for (const auto& name : qc_regions)
                    row.dice[name] = 1.0;
                log_line("[register] " + r.id + ": reference");
                return;
            }
            const Volume image = load_subject_image(m, r);
            const MaskSet masks = load_subject_masks(m, r);
            require_mask(masks, region::LV);
            const PreprocessedSubject pre = preprocess_subject(image, masks, cfg.preprocess);
            SubjectRegistration reg = register_pair(ref_in, {&image, &masks, &pre}, cfg.stages, cfg.reverse);
            write_field(reg.forward, field_path(dir, r.id));
            write_volume(reg.warped_hu, warped_path(dir, r.id));
            write_volume(reg.jacobian, jd_path(dir, r.id));
            if (reg.backward) {
                write_field(*reg.backward, backward_path(dir, r.id));
                const LabelVolume all = chamber_union(ref_masks, g);
                write_volume(inverse_consistency(reg.forward, *reg.backward, &all).map, ice_path(dir, r.id));
            }
            row.status = "ok";
            row.seconds = reg.seconds;
            row.dice = reg.dice;
            row.ice = reg.ice_mean;
            {
                std::lock_guard<std::mutex> lock(mu);
                summary.log.merge(reg.log);
            }
            std::ostringstream msg;
            msg.precision(4);
            msg << "[register] " << r.id << ": " << reg.seconds << " s, LV Dice "
                << (reg.dice.count("LV") ? reg.dice.at("LV") : 0.0);
            log_line(msg.str());
        } catch (const std::exception& e) {
            row.status = "failed";
            row.reason = e.what();
            log_line("[register] " + r.id + ": skipped (" + row.reason + ")");
        }
    });

    std::set<std::string> ice_regions;
    for (const auto& row : rows)
        for (const auto& [k, v] : row.ice)
            ice_regions.insert(k);
    std::ofstream qc = open_out(dir / "qc.csv");
    qc << "id,status,seconds";
    for (const auto& r : qc_regions)
        qc << ",dice_" << r;
    for (const auto& r : ice_regions)
        qc << ",ice_" << r;
    qc << ",reason\n";
    for (const auto& row : rows) {
        qc << csv_escape(row.id) << ',' << row.status << ',' << row.seconds;
        for (const auto& r : qc_regions) {
            qc << ',';
            if (auto it = row.dice.find(r); it != row.dice.end())
                qc << it->second;
        }
        for (const auto& r : ice_regions) {
            qc << ',';
            if (auto it = row.ice.find(r); it != row.ice.end())
                qc << it->second;
        }
        qc << ',' << csv_escape(row.reason) << '\n';
        if (row.status == "failed")
            summary.failed[row.id] = row.reason;
        else
            summary.registered.push_back(row.id);
    }
    qc.close();

    // Aggregates are accumulated in manifest order so they do not depend on scheduling.
    CohortAggregator agg;
    for (const auto& id : summary.registered) {
        agg.hu.add(read_scalar_volume(warped_path(dir, id)));
        agg.jd.add(read_scalar_volume(jd_path(dir, id)));
        if (fs::exists(ice_path(dir, id)))
            agg.ice.add(read_scalar_volume(ice_path(dir, id)));
    }
    if (!summary.registered.empty()) {
        const AggregateMaps maps = agg.finish();
        write_volume(maps.hu_mean, dir / "aggregate" / "hu_mean.nii.gz");
        write_volume(maps.hu_sd, dir / "aggregate" / "hu_sd.nii.gz");
        write_volume(maps.jd_mean, dir / "aggregate" / "jd_mean.nii.gz");
        write_volume(maps.jd_sd, dir / "aggregate" / "jd_sd.nii.gz");
        if (!maps.ice_mean.empty())
            write_volume(maps.ice_mean, dir / "aggregate" / "ice_mean.nii.gz");
    }
    return summary;
}

AnalyzeSummary run_analyze(const CohortManifest& m, const std::string& reference_id, const std::string& covariate,
                           const std::vector<Channel>& channels, const PipelineConfig& cfg,
                           const fs::path& register_dir, const fs::path& out_dir)
{
    cfg.validate();
    const auto names = m.covariate_names();
    if (std::find(names.begin(), names.end(), covariate) == names.end()) {
        std::string list;
        for (const auto& n : names)
            list += (list.empty() ? "" : ", ") + n;
        throw ConfigError("unknown covariate '" + covariate + "'; available: " + list);
    }
    const std::string stored = read_reference(register_dir);
    if (stored != reference_id)
        throw ConfigError("registration results in '" + register_dir.string() + "' use reference '" + stored
                          + "', not '" + reference_id + "'");
    const SubjectRecord& ref_rec = m.find(reference_id);
    const Volume ref_image = load_subject_image(m, ref_rec);
    const MaskSet ref_masks = load_subject_masks(m, ref_rec);
    const PreprocessedSubject ref_pre = preprocess_subject(ref_image, ref_masks, cfg.preprocess);

    AnalyzeSummary out;
    out.supervoxels = slic_cluster(ref_pre.intensity, cfg.slic);
    write_supervoxels(out.supervoxels, out_dir / "supervoxels.nii.gz", out_dir / "supervoxels.csv");
    log_line("[analyze] " + std::to_string(out.supervoxels.count) + " supervoxels");

    const auto registered = read_registered_ids(register_dir);
    const std::set<std::string> have(registered.begin(), registered.end());
    FeatureBuilder builder(out.supervoxels);
    std::vector<double> cov;
    for (const auto& r : m.records) {
        if (!have.count(r.id) || (cfg.stratify_by_sex && r.sex != ref_rec.sex))
            continue;
        const double c = r.require_covariate(covariate);
        builder.add(r.id, read_scalar_volume(warped_path(register_dir, r.id)),
                    read_scalar_volume(jd_path(register_dir, r.id)));
        cov.push_back(c);
        out.subjects.push_back(r.id);
    }
    if (out.subjects.size() < 3)
        throw ConfigError("association needs at least 3 registered subjects, found "
                          + std::to_string(out.subjects.size()));
    out.features = builder.finish();
    out.covariate = cov;
    out.exclusion = union_of(ref_masks, ref_image.geometry(), region::excluded);

    for (Channel ch : channels) {
        AssociationMap map
            = associate(out.features, out.supervoxels, ch, cov, covariate, cfg.analysis, &out.exclusion);
        const std::string stem = covariate + "_" + to_string(ch);
        write_volume(map.map, out_dir / (stem + "_r.nii.gz"));
        write_association_csv(map, out_dir / (stem + ".csv"));
        std::ostringstream msg;
        msg << "[analyze] " << stem << ": " << map.significant() << " of " << map.tested()
            << " supervoxels significant";
        log_line(msg.str());
        out.maps.push_back(std::move(map));
    }

    std::vector<std::string> cols{"age"};
    for (const auto& n : measurement_names())
        cols.push_back(n);
    std::vector<std::string> used;
    std::vector<std::vector<double>> data;
    for (const auto& c : cols) {
        std::vector<double> v;
        for (const auto& id : out.subjects)
            if (auto x = m.find(id).covariate(c))
                v.push_back(*x);
        if (v.size() == out.subjects.size()) {
            used.push_back(c);
            data.push_back(std::move(v));
        }
    }
    write_correlation_csv(correlation_table(used, data), out_dir / "explicit_correlations.csv");
    return out;
}

} // namespace voxmap
