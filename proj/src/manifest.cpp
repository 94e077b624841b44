#include "voxmap/manifest.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "voxmap/nifti.hpp"

namespace voxmap {

namespace fs = std::filesystem;

std::string to_string(Sex s)
{
    return s == Sex::Female ? "female" : "male";
}

Sex parse_sex(const std::string& s)
{
    std::string l = s;
    std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (l == "female" || l == "f")
        return Sex::Female;
    if (l == "male" || l == "m")
        return Sex::Male;
    throw ParseError("unknown sex '" + s + "' (expected female/male)");
}

std::optional<double> SubjectRecord::covariate(const std::string& name) const
{
    auto it = covariates.find(name);
    if (it == covariates.end())
        return std::nullopt;
    return it->second;
}

double SubjectRecord::require_covariate(const std::string& name) const
{
    auto v = covariate(name);
    if (!v)
        throw ConfigError("subject '" + id + "' has no value for '" + name + "'");
    return *v;
}

const SubjectRecord& CohortManifest::find(const std::string& id) const
{
    for (const auto& r : records)
        if (r.id == id)
            return r;
    throw ConfigError("subject '" + id + "' not in manifest");
}

bool CohortManifest::contains(const std::string& id) const
{
    return std::any_of(records.begin(), records.end(), [&](const SubjectRecord& r) { return r.id == id; });
}

fs::path CohortManifest::resolve(const std::string& relative) const
{
    fs::path p(relative);
    if (p.is_absolute())
        return p;
    return data_root / p;
}

std::vector<std::string> CohortManifest::covariate_names() const
{
    std::set<std::string> names;
    for (const auto& r : records)
        for (const auto& [k, v] : r.covariates)
            names.insert(k);
    return {names.begin(), names.end()};
}

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string csv_escape(const std::string& field)
{
    if (field.find_first_of(",\"\n") == std::string::npos)
        return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"')
            out += '"';
        out += c;
    }
    return out + "\"";
}

namespace {

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos)
        return {};
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

std::optional<double> parse_number(const std::string& cell, const std::string& column, std::size_t line)
{
    const std::string t = trim(cell);
    if (t.empty())
        return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end == t.c_str() || *end != '\0')
        throw ParseError("manifest line " + std::to_string(line) + ": non-numeric " + column + " '" + t + "'");
    return v;
}

} // namespace

CohortManifest parse_manifest(const std::string& csv_text, const fs::path& data_root)
{
    std::istringstream in(csv_text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header = split_csv_line(line);
            break;
        }
    }
    if (header.empty())
        throw ParseError("manifest is empty");
    for (auto& h : header)
        h = trim(h);

    auto column = [&](const std::string& name) -> std::ptrdiff_t {
        auto it = std::find(header.begin(), header.end(), name);
        return it == header.end() ? -1 : it - header.begin();
    };
    for (const char* required : {"id", "sex", "age", "image"})
        if (column(required) < 0)
            throw ParseError(std::string("manifest is missing required column '") + required + "'");

    CohortManifest m;
    m.data_root = data_root;
    std::set<std::string> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected " + std::to_string(header.size())
                             + " fields, got " + std::to_string(cells.size()));
        SubjectRecord r;
        for (std::size_t c = 0; c < header.size(); ++c) {
            const std::string& name = header[c];
            const std::string cell = trim(cells[c]);
            if (name == "id") {
                r.id = cell;
            } else if (name == "sex") {
                r.sex = parse_sex(cell);
            } else if (name == "image") {
                r.image_path = cell;
            } else if (name.rfind("mask_", 0) == 0) {
                if (!cell.empty())
                    r.mask_paths[name.substr(5)] = cell;
            } else if (auto v = parse_number(cell, name, line_no)) {
                r.covariates[name] = *v;
            }
        }
        if (r.id.empty())
            throw ParseError("manifest line " + std::to_string(line_no) + ": empty id");
        if (!seen.insert(r.id).second)
            throw ParseError("manifest has duplicate id '" + r.id + "'");
        m.records.push_back(std::move(r));
    }
    return m;
}

CohortManifest read_manifest(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open manifest '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    fs::path root = path.has_parent_path() ? path.parent_path() : fs::path(".");
    if (const char* env = std::getenv("VOXMAP_DATA_ROOT"); env && *env)
        root = env;
    return parse_manifest(ss.str(), root);
}

void write_manifest(const CohortManifest& m, const fs::path& path)
{
    std::set<std::string> mask_names;
    std::set<std::string> cov_names;
    for (const auto& r : m.records) {
        for (const auto& [k, v] : r.mask_paths)
            mask_names.insert(k);
        for (const auto& [k, v] : r.covariates)
            if (k != "age")
                cov_names.insert(k);
    }
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os)
        throw IoError("cannot write manifest '" + path.string() + "'");
    os.precision(17);
    os << "id,sex,age,image";
    for (const auto& n : mask_names)
        os << ",mask_" << n;
    for (const auto& n : cov_names)
        os << ',' << n;
    os << '\n';
    for (const auto& r : m.records) {
        os << csv_escape(r.id) << ',' << to_string(r.sex) << ',';
        if (auto a = r.covariate("age"))
            os << *a;
        os << ',' << csv_escape(r.image_path);
        for (const auto& n : mask_names) {
            os << ',';
            if (auto it = r.mask_paths.find(n); it != r.mask_paths.end())
                os << csv_escape(it->second);
        }
        for (const auto& n : cov_names) {
            os << ',';
            if (auto v = r.covariate(n))
                os << *v;
        }
        os << '\n';
    }
}

Volume load_subject_image(const CohortManifest& m, const SubjectRecord& r)
{
    return read_scalar_volume(m.resolve(r.image_path));
}

MaskSet load_subject_masks(const CohortManifest& m, const SubjectRecord& r)
{
    MaskSet out;
    for (const auto& [name, rel] : r.mask_paths)
        out[name] = binarize(read_label_volume(m.resolve(rel)));
    return out;
}

} // namespace voxmap
