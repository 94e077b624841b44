#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

#include "voxmap/pipeline.hpp"

namespace voxmap {

namespace fs = std::filesystem;

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t to_byte(double v)
{
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

} // namespace

std::array<std::uint8_t, 3> diverging_color(double r)
{
    r = std::clamp(r, -1.0, 1.0);
    if (r < 0.0) {
        const double t = 1.0 + r; // 0 at -1 (blue), 1 at 0 (white)
        return {to_byte(255.0 * t), to_byte(255.0 * t), 255};
    }
    const double t = 1.0 - r;
    return {255, to_byte(255.0 * t), to_byte(255.0 * t)};
}

void write_png(const fs::path& path, int width, int height, const std::vector<std::uint8_t>& rgb)
{
    if (width <= 0 || height <= 0 || rgb.size() != static_cast<std::size_t>(width) * height * 3)
        throw ConfigError("write_png: pixel buffer does not match " + std::to_string(width) + "x"
                          + std::to_string(height));
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    FilePtr f(std::fopen(path.string().c_str(), "wb"));
    if (!f)
        throw IoError("cannot write '" + path.string() + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        throw IoError("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng failed writing '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < height; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb.data() + static_cast<std::size_t>(y) * width * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

std::vector<std::uint8_t> read_png_rgb(const fs::path& path, int& width, int& height)
{
    FilePtr f(std::fopen(path.string().c_str(), "rb"));
    if (!f)
        throw IoError("cannot open '" + path.string() + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png)
        throw IoError("libpng initialisation failed");
    png_infop info = png_create_info_struct(png);
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng failed reading '" + path.string() + "'");
    }
    png_init_io(png, f.get());
    png_read_info(png, info);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_palette_to_rgb(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3);
    for (int y = 0; y < height; ++y)
        png_read_row(png, rgb.data() + static_cast<std::size_t>(y) * width * 3, nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return rgb;
}

std::vector<fs::path> render_map(const Volume& map, const Volume& base, const RenderOptions& opt,
                                 const fs::path& out_dir, const std::string& stem)
{
    require_same_geometry(map.geometry(), base.geometry(), "rendered map and base image");
    if (opt.axis < 0 || opt.axis > 2)
        throw ConfigError("render axis must be 0, 1 or 2");
    if (!(opt.window_high > opt.window_low))
        throw ConfigError("render window must satisfy low < high");
    const Dims& d = map.dims();
    // In-plane axes: the two remaining axes in increasing order.
    const int u = opt.axis == 0 ? 1 : 0;
    const int v = opt.axis == 2 ? 1 : 2;
    const int w = d[u], h = d[v];
    static const char axis_name[3] = {'x', 'y', 'z'};

    std::vector<fs::path> written;
    for (int s : opt.slices) {
        if (s < 0 || s >= d[opt.axis])
            throw ConfigError("slice " + std::to_string(s) + " out of range [0, " + std::to_string(d[opt.axis] - 1)
                              + "] along " + axis_name[opt.axis]);
        std::vector<std::uint8_t> rgb(static_cast<std::size_t>(w) * h * 3);
        for (int b = 0; b < h; ++b)
            for (int a = 0; a < w; ++a) {
                int idx[3];
                idx[opt.axis] = s;
                idx[u] = a;
                idx[v] = b;
                const float r = map(idx[0], idx[1], idx[2]);
                std::array<std::uint8_t, 3> c{0, 0, 0};
                if (r != 0.0f) {
                    c = diverging_color(r);
                } else if (!opt.map_only) {
                    const double g = 255.0 * (base(idx[0], idx[1], idx[2]) - opt.window_low)
                                   / (opt.window_high - opt.window_low);
                    const std::uint8_t gray = to_byte(g);
                    c = {gray, gray, gray};
                }
                // Image rows run from the highest in-plane index down.
                const std::size_t px = (static_cast<std::size_t>(h - 1 - b) * w + a) * 3;
                rgb[px] = c[0];
                rgb[px + 1] = c[1];
                rgb[px + 2] = c[2];
            }
        const fs::path p = out_dir / (stem + "_" + axis_name[opt.axis] + std::to_string(s) + ".png");
        write_png(p, w, h, rgb);
        written.push_back(p);
    }

    constexpr int bar_w = 256, bar_h = 16;
    std::vector<std::uint8_t> bar(static_cast<std::size_t>(bar_w) * bar_h * 3);
    for (int x = 0; x < bar_w; ++x) {
        const auto c = diverging_color(-1.0 + 2.0 * x / (bar_w - 1));
        for (int y = 0; y < bar_h; ++y)
            for (int ch = 0; ch < 3; ++ch)
                bar[(static_cast<std::size_t>(y) * bar_w + x) * 3 + ch] = c[ch];
    }
    write_png(out_dir / "colorbar.png", bar_w, bar_h, bar);
    written.push_back(out_dir / "colorbar.png");
    return written;
}

} // namespace voxmap
