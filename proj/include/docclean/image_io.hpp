#pragma once

// PNG (8-bit gray or RGB) and binary/ASCII PGM/PPM reading and writing.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "docclean/common.hpp"
#include "docclean/raster.hpp"

namespace docclean {

namespace detail {

inline std::string lower_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return ext;
}

inline std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline PageRaster read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.string().c_str()))
        throw FormatError("cannot read PNG " + path.string() + ": " + image.message);
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = image.message;
        png_image_free(&image);
        throw FormatError("cannot decode PNG " + path.string() + ": " + msg);
    }
    PageRaster page(image.width, image.height, color ? 3 : 1);
    for (std::size_t i = 0; i < buf.size(); ++i) page.data[i] = buf[i] / 255.0;
    return page;
}

inline void write_png(const PageRaster& page, const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(page.width);
    image.height = static_cast<png_uint_32>(page.height);
    image.format = page.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(page.data.size());
    std::transform(page.data.begin(), page.data.end(), buf.begin(), to_byte);
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
}

inline void skip_pnm_space(std::istream& in) {
    while (true) {
        const int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            return;
        }
    }
}

inline std::size_t read_pnm_int(std::istream& in, const std::string& what) {
    skip_pnm_space(in);
    long long v = -1;
    if (!(in >> v) || v < 0) throw FormatError("malformed PNM header (" + what + ")");
    return static_cast<std::size_t>(v);
}

inline PageRaster read_pnm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::string magic(2, '\0');
    in.read(magic.data(), 2);
    if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
        throw FormatError(path.string() + ": unsupported PNM magic");
    const bool color = magic == "P3" || magic == "P6";
    const bool binary = magic == "P5" || magic == "P6";
    const std::size_t w = read_pnm_int(in, "width"), h = read_pnm_int(in, "height"), maxval = read_pnm_int(in, "maxval");
    if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw FormatError(path.string() + ": invalid PNM header");
    PageRaster page(w, h, color ? 3 : 1);
    if (binary) {
        in.get();
        const std::size_t bytes = maxval > 255 ? 2 : 1;
        std::vector<unsigned char> buf(page.data.size() * bytes);
        if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw FormatError(path.string() + ": truncated PNM data");
        for (std::size_t i = 0; i < page.data.size(); ++i) {
            const std::size_t v = bytes == 2 ? (std::size_t(buf[2 * i]) << 8) | buf[2 * i + 1] : buf[i];
            page.data[i] = std::min(1.0, double(v) / double(maxval));
        }
    } else {
        for (double& v : page.data) v = std::min(1.0, double(read_pnm_int(in, "sample")) / double(maxval));
    }
    return page;
}

inline void write_pnm(const PageRaster& page, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << (page.channels == 3 ? "P6" : "P5") << "\n" << page.width << " " << page.height << "\n255\n";
    std::vector<char> buf(page.data.size());
    std::transform(page.data.begin(), page.data.end(), buf.begin(), [](double v) { return static_cast<char>(to_byte(v)); });
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace detail

/// Reads a page by extension: .png, .pgm, .ppm, .pnm.
inline PageRaster read_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw FormatError("no such image: " + path.string());
    const auto ext = detail::lower_extension(path);
    if (ext == ".png") return detail::read_png(path);
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return detail::read_pnm(path);
    throw FormatError("unsupported image extension: " + path.string());
}

inline void write_image(const PageRaster& page, const std::filesystem::path& path) {
    page.validate();
    const auto ext = detail::lower_extension(path);
    if (ext == ".png") return detail::write_png(page, path);
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") return detail::write_pnm(page, path);
    throw std::invalid_argument("unsupported image extension: " + path.string());
}

}  // namespace docclean
