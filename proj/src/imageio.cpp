#include "xcam/imageio.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "xcam/error.hpp"

namespace xcam {

namespace {

int next_pnm_int(std::istream& is) {
    // Skips whitespace and '#' comments between header tokens.
    int ch = is.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = is.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = is.get();
    }
    if (ch == EOF) throw ValidationError("truncated PNM header");
    int value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        ch = is.get();
    }
    return value;
}

} // namespace

Grid read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open image: " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (m0 != 'P' || m1 != '5') throw ValidationError("not a P5 PGM: " + path);
    const int w = next_pnm_int(is);
    const int h = next_pnm_int(is);
    const int maxval = next_pnm_int(is);
    if (w < 1 || h < 1 || maxval != 255)
        throw ValidationError("unsupported PGM geometry/maxval in " + path);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw ValidationError("truncated PGM pixel data: " + path);
    Grid g(h, w);
    for (std::size_t i = 0; i < buf.size(); ++i) g.v[i] = static_cast<double>(buf[i]);
    return g;
}

Grid read_png_gray(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ValidationError("cannot open image: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ValidationError("libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ValidationError("failed decoding PNG: " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);

    png_set_strip_16(png);
    png_set_strip_alpha(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR)
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    png_read_update_info(png, info);

    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
    Grid g(h, w);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x) g.at(y, x) = static_cast<double>(row[static_cast<std::size_t>(x)]);
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return g;
}

Grid load_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open image: " + path);
    unsigned char sig[2] = {0, 0};
    is.read(reinterpret_cast<char*>(sig), 2);
    is.close();
    if (sig[0] == 'P' && sig[1] == '5') return read_pgm(path);
    if (sig[0] == 0x89 && sig[1] == 'P') return read_png_gray(path);
    throw ValidationError("unsupported image format (expected PGM P5 or PNG): " + path);
}

void write_pgm(const std::string& path, int h, int w, const std::uint8_t* data) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write image: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(h) * w);
    if (!os) throw ValidationError("failed writing image: " + path);
}

void write_ppm(const std::string& path, const RgbImage& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write image: " + path);
    os << "P6\n" << img.w << " " << img.h << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.rgb.data()),
             static_cast<std::streamsize>(img.rgb.size()));
    if (!os) throw ValidationError("failed writing image: " + path);
}

std::vector<std::uint8_t> quantize_unit(const Grid& g) {
    std::vector<std::uint8_t> out(g.v.size());
    for (std::size_t i = 0; i < g.v.size(); ++i) {
        double v = g.v[i];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        out[i] = static_cast<std::uint8_t>(std::lround(255.0 * v));
    }
    return out;
}

} // namespace xcam
