#include "voxmap/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <limits>

namespace voxmap {

namespace fs = std::filesystem;

namespace {

constexpr int kHeaderSize = 348;
constexpr int kDataOffset = 352;

enum DataType : short {
    DT_UINT8 = 2,
    DT_INT16 = 4,
    DT_INT32 = 8,
    DT_FLOAT32 = 16,
    DT_FLOAT64 = 64,
    DT_INT8 = 256,
    DT_UINT16 = 512,
    DT_UINT32 = 768,
};

constexpr short kIntentVector = 1007;

bool has_gz_suffix(const fs::path& p)
{
    return p.extension() == ".gz";
}

std::vector<unsigned char> slurp(const fs::path& path)
{
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f)
        throw IoError("cannot open '" + path.string() + "'");
    std::vector<unsigned char> out;
    std::array<unsigned char, 1 << 16> chunk{};
    while (true) {
        const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
        if (n < 0) {
            int errnum = 0;
            std::string msg = gzerror(f, &errnum);
            gzclose(f);
            throw ParseError("'" + path.string() + "': decompression failed: " + msg);
        }
        if (n == 0)
            break;
        out.insert(out.end(), chunk.begin(), chunk.begin() + n);
    }
    gzclose(f);
    return out;
}

void dump(const fs::path& path, const std::vector<unsigned char>& bytes)
{
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    if (has_gz_suffix(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (!f)
            throw IoError("cannot write '" + path.string() + "'");
        const int n = gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
        const int rc = gzclose(f);
        if (n != static_cast<int>(bytes.size()) || rc != Z_OK)
            throw IoError("write failed for '" + path.string() + "'");
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw IoError("cannot write '" + path.string() + "'");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os)
        throw IoError("write failed for '" + path.string() + "'");
}

// Little helper over a raw header buffer with optional byte swapping.
class HeaderView {
public:
    HeaderView(const unsigned char* p, bool swap) : p_(p), swap_(swap) {}

    template <typename T>
    T get(int offset) const
    {
        T v;
        std::memcpy(&v, p_ + offset, sizeof(T));
        if (swap_) {
            auto* b = reinterpret_cast<unsigned char*>(&v);
            std::reverse(b, b + sizeof(T));
        }
        return v;
    }

private:
    const unsigned char* p_;
    bool swap_;
};

template <typename T>
void put(std::vector<unsigned char>& buf, int offset, T v)
{
    std::memcpy(buf.data() + offset, &v, sizeof(T));
}

struct Parsed {
    std::array<short, 8> dim{};
    Geometry geometry;
    short datatype = 0;
    short intent = 0;
    float slope = 0.0f;
    float inter = 0.0f;
    std::size_t offset = 0;
    bool swap = false;
    std::size_t elements = 0;
};

int bytes_per_voxel(short dt)
{
    switch (dt) {
    case DT_UINT8:
    case DT_INT8:
        return 1;
    case DT_INT16:
    case DT_UINT16:
        return 2;
    case DT_INT32:
    case DT_UINT32:
    case DT_FLOAT32:
        return 4;
    case DT_FLOAT64:
        return 8;
    default:
        return 0;
    }
}

Parsed parse_header(const std::vector<unsigned char>& bytes, const fs::path& path)
{
    const std::string where = "'" + path.string() + "': ";
    if (bytes.size() < static_cast<std::size_t>(kHeaderSize))
        throw ParseError(where + "file too short for a NIfTI-1 header");

    Parsed p;
    int sizeof_hdr;
    std::memcpy(&sizeof_hdr, bytes.data(), 4);
    if (sizeof_hdr != kHeaderSize) {
        p.swap = true;
        if (HeaderView(bytes.data(), true).get<int>(0) != kHeaderSize)
            throw ParseError(where + "bad sizeof_hdr");
    }
    const HeaderView h(bytes.data(), p.swap);
    if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0)
        throw ParseError(where + "bad magic (only single-file NIfTI-1 'n+1' is supported)");

    for (int i = 0; i < 8; ++i)
        p.dim[static_cast<std::size_t>(i)] = h.get<short>(40 + 2 * i);
    p.intent = h.get<short>(68);
    p.datatype = h.get<short>(70);
    p.slope = h.get<float>(112);
    p.inter = h.get<float>(116);
    const float vox_offset = h.get<float>(108);
    if (!(vox_offset >= kHeaderSize))
        throw ParseError(where + "invalid vox_offset");
    p.offset = static_cast<std::size_t>(vox_offset);

    if (p.dim[0] < 1 || p.dim[0] > 7)
        throw ParseError(where + "invalid dim[0]");
    for (int i = 1; i <= p.dim[0]; ++i)
        if (p.dim[static_cast<std::size_t>(i)] < 1)
            throw ParseError(where + "invalid dim[" + std::to_string(i) + "]");

    Dims d{p.dim[1], p.dim[0] >= 2 ? p.dim[2] : 1, p.dim[0] >= 3 ? p.dim[3] : 1};
    Vec3 spacing;
    for (int a = 0; a < 3; ++a) {
        const float pd = std::abs(h.get<float>(76 + 4 * (a + 1)));
        spacing[a] = pd > 0.0f ? pd : 1.0;
    }
    Vec3 origin;
    const short qform = h.get<short>(252);
    const short sform = h.get<short>(254);
    if (sform > 0)
        origin = {h.get<float>(280 + 12), h.get<float>(296 + 12), h.get<float>(312 + 12)};
    else if (qform > 0)
        origin = {h.get<float>(268), h.get<float>(272), h.get<float>(276)};
    p.geometry = Geometry(d, spacing, origin);

    if (bytes_per_voxel(p.datatype) == 0)
        throw ParseError(where + "unsupported datatype " + std::to_string(p.datatype));

    p.elements = 1;
    for (int i = 1; i <= p.dim[0]; ++i)
        p.elements *= static_cast<std::size_t>(p.dim[static_cast<std::size_t>(i)]);
    const std::size_t need = p.offset + p.elements * static_cast<std::size_t>(bytes_per_voxel(p.datatype));
    if (bytes.size() < need)
        throw ParseError(where + "truncated data (" + std::to_string(bytes.size()) + " bytes, need " + std::to_string(need) + ")");
    return p;
}

std::vector<double> decode(const std::vector<unsigned char>& bytes, const Parsed& p)
{
    std::vector<double> out(p.elements);
    const int bpv = bytes_per_voxel(p.datatype);
    for (std::size_t i = 0; i < p.elements; ++i) {
        constexpr int off = 0;
        const unsigned char* at = bytes.data() + p.offset + i * static_cast<std::size_t>(bpv);
        const HeaderView v(at, p.swap);
        switch (p.datatype) {
        case DT_UINT8: out[i] = v.get<std::uint8_t>(off); break;
        case DT_INT8: out[i] = v.get<std::int8_t>(off); break;
        case DT_INT16: out[i] = v.get<std::int16_t>(off); break;
        case DT_UINT16: out[i] = v.get<std::uint16_t>(off); break;
        case DT_INT32: out[i] = v.get<std::int32_t>(off); break;
        case DT_UINT32: out[i] = v.get<std::uint32_t>(off); break;
        case DT_FLOAT32: out[i] = v.get<float>(off); break;
        case DT_FLOAT64: out[i] = v.get<double>(off); break;
        default: break;
        }
    }
    return out;
}

bool is_integer_type(short dt)
{
    return dt != DT_FLOAT32 && dt != DT_FLOAT64;
}

bool scaling_active(const Parsed& p)
{
    return p.slope != 0.0f && !(p.slope == 1.0f && p.inter == 0.0f);
}

std::vector<unsigned char> make_header(const Geometry& g, short datatype, short bitpix, std::array<short, 8> dim,
                                       short intent, std::size_t payload_bytes)
{
    std::vector<unsigned char> buf(static_cast<std::size_t>(kDataOffset) + payload_bytes, 0);
    put<int>(buf, 0, kHeaderSize);
    buf[38] = 'r';
    for (int i = 0; i < 8; ++i)
        put<short>(buf, 40 + 2 * i, dim[static_cast<std::size_t>(i)]);
    put<short>(buf, 68, intent);
    put<short>(buf, 70, datatype);
    put<short>(buf, 72, bitpix);
    put<float>(buf, 76, 1.0f);
    for (int a = 0; a < 3; ++a)
        put<float>(buf, 80 + 4 * a, static_cast<float>(g.spacing[a]));
    put<float>(buf, 108, static_cast<float>(kDataOffset));
    put<float>(buf, 112, 1.0f);
    put<float>(buf, 116, 0.0f);
    buf[123] = 2; // NIFTI_UNITS_MM
    const char descrip[] = "voxmap";
    std::memcpy(buf.data() + 148, descrip, sizeof(descrip));
    put<short>(buf, 252, 1);
    put<short>(buf, 254, 1);
    put<float>(buf, 268, static_cast<float>(g.origin.x));
    put<float>(buf, 272, static_cast<float>(g.origin.y));
    put<float>(buf, 276, static_cast<float>(g.origin.z));
    for (int r = 0; r < 3; ++r) {
        const int base = 280 + 16 * r;
        for (int c = 0; c < 3; ++c)
            put<float>(buf, base + 4 * c, r == c ? static_cast<float>(g.spacing[r]) : 0.0f);
        put<float>(buf, base + 12, static_cast<float>(g.origin[r]));
    }
    std::memcpy(buf.data() + 344, "n+1\0", 4);
    return buf;
}

std::array<short, 8> dims3(const Geometry& g)
{
    return {3, static_cast<short>(g.dims.x), static_cast<short>(g.dims.y), static_cast<short>(g.dims.z), 1, 1, 1, 1};
}

void check_writable_dims(const Geometry& g, const fs::path& path)
{
    for (int a = 0; a < 3; ++a)
        if (g.dims[a] > std::numeric_limits<short>::max())
            throw IoError("'" + path.string() + "': dimension too large for NIfTI-1");
}

} // namespace

AnyVolume read_volume(const fs::path& path)
{
    const auto bytes = slurp(path);
    const Parsed p = parse_header(bytes, path);
    bool extra = false;
    for (int i = 4; i <= p.dim[0]; ++i)
        extra = extra || p.dim[static_cast<std::size_t>(i)] > 1;
    if (p.dim[0] < 3 || extra)
        throw ParseError("'" + path.string() + "': unsupported dimensionality " + std::to_string(p.dim[0])
                         + " (expected a 3D volume)");

    const std::size_t n = p.geometry.voxel_count();
    const auto raw = decode(bytes, p);
    if (is_integer_type(p.datatype) && !scaling_active(p)
        && std::all_of(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(n), [](double v) { return v >= 0.0; })) {
        LabelVolume out(p.geometry);
        for (std::size_t i = 0; i < n; ++i)
            out[i] = static_cast<std::uint32_t>(raw[i]);
        return out;
    }
    Volume out(p.geometry);
    const bool scale = scaling_active(p);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = static_cast<float>(scale ? raw[i] * p.slope + p.inter : raw[i]);
    return out;
}

Volume read_scalar_volume(const fs::path& path)
{
    auto any = read_volume(path);
    if (auto* v = std::get_if<Volume>(&any))
        return std::move(*v);
    return to_volume(std::get<LabelVolume>(any));
}

LabelVolume read_label_volume(const fs::path& path)
{
    auto any = read_volume(path);
    if (auto* l = std::get_if<LabelVolume>(&any))
        return std::move(*l);
    const Volume& v = std::get<Volume>(any);
    LabelVolume out(v.geometry());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const float x = v[i];
        if (x < 0.0f || x != std::floor(x))
            throw ParseError("'" + path.string() + "': not a label volume (non-integer or negative values)");
        out[i] = static_cast<std::uint32_t>(x);
    }
    return out;
}

void write_volume(const Volume& v, const fs::path& path)
{
    const Geometry& g = v.geometry();
    check_writable_dims(g, path);
    auto buf = make_header(g, DT_FLOAT32, 32, dims3(g), 0, v.size() * sizeof(float));
    std::memcpy(buf.data() + kDataOffset, v.data(), v.size() * sizeof(float));
    dump(path, buf);
}

void write_volume(const LabelVolume& v, const fs::path& path)
{
    const Geometry& g = v.geometry();
    check_writable_dims(g, path);
    auto buf = make_header(g, DT_UINT16, 16, dims3(g), 0, v.size() * sizeof(std::uint16_t));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] > std::numeric_limits<std::uint16_t>::max())
            throw IoError("'" + path.string() + "': label " + std::to_string(v[i]) + " exceeds uint16 range");
        put<std::uint16_t>(buf, kDataOffset + static_cast<int>(i * 2), static_cast<std::uint16_t>(v[i]));
    }
    dump(path, buf);
}

void write_field(const DisplacementField& f, const fs::path& path)
{
    const Geometry& g = f.geometry();
    check_writable_dims(g, path);
    std::array<short, 8> dim = {5, static_cast<short>(g.dims.x), static_cast<short>(g.dims.y),
                                static_cast<short>(g.dims.z), 1, 3, 1, 1};
    const std::size_t n = f.size();
    auto buf = make_header(g, DT_FLOAT32, 32, dim, kIntentVector, 3 * n * sizeof(float));
    for (int c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i)
            put<float>(buf, kDataOffset + static_cast<int>((c * n + i) * sizeof(float)), static_cast<float>(f[i][c]));
    dump(path, buf);
}

DisplacementField read_field(const fs::path& path)
{
    const auto bytes = slurp(path);
    const Parsed p = parse_header(bytes, path);
    if (p.dim[0] != 5 || p.dim[4] != 1 || p.dim[5] != 3)
        throw ParseError("'" + path.string() + "': not a 3-component displacement field");
    const auto raw = decode(bytes, p);
    DisplacementField out(p.geometry);
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i)
        out[i] = Vec3{raw[i], raw[n + i], raw[2 * n + i]};
    return out;
}

DisplacementField read_field(const fs::path& path, const Geometry& expected)
{
    auto f = read_field(path);
    // Header stores float32 spacing/origin.
    if (!f.geometry().matches(expected, 1e-4))
        throw GeometryError("'" + path.string() + "': field geometry " + describe(f.geometry())
                            + " does not match expected " + describe(expected));
    return f;
}

} // namespace voxmap
