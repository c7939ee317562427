#pragma once

#include <png.h>

#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "image.hpp"

namespace roadstereo {

enum class DisparityFormat { Png16, Pfm, Csv };

inline DisparityFormat parse_disparity_format(std::string_view name) {
    if (name == "png16" || name == "png") return DisparityFormat::Png16;
    if (name == "pfm") return DisparityFormat::Pfm;
    if (name == "csv") return DisparityFormat::Csv;
    throw Error(ErrorCode::InvalidArgument, "unknown disparity format '" + std::string(name) + "'");
}

inline const char* extension_for(DisparityFormat format) {
    switch (format) {
    case DisparityFormat::Png16: return ".png";
    case DisparityFormat::Pfm: return ".pfm";
    case DisparityFormat::Csv: return ".csv";
    }
    return "";
}

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Unwritable, "cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Unwritable, "write failed for '" + path.string() + "'");
}

/// Cursor over a netpbm-style header: whitespace-separated tokens with '#' comments.
class HeaderReader {
public:
    HeaderReader(const std::vector<std::uint8_t>& bytes, const std::string& name)
        : bytes_(bytes), name_(name) {}

    std::string token() {
        skip_space_and_comments();
        std::string out;
        while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) out.push_back(static_cast<char>(bytes_[pos_++]));
        if (out.empty()) throw Error(ErrorCode::Truncated, "header of '" + name_ + "' ends early");
        return out;
    }

    long integer() {
        const std::string t = token();
        long value = 0;
        const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
        if (ec != std::errc{} || ptr != t.data() + t.size())
            throw Error(ErrorCode::Truncated, "bad header field '" + t + "' in '" + name_ + "'");
        return value;
    }

    /// Consumes the single whitespace byte that separates header and payload.
    void end_header() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
            throw Error(ErrorCode::Truncated, "header of '" + name_ + "' not terminated");
        ++pos_;
    }

    std::size_t position() const noexcept { return pos_; }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<std::uint8_t>& bytes_;
    std::string name_;
    std::size_t pos_ = 0;
};

struct PngRaster {
    int width = 0;
    int height = 0;
    int bit_depth = 0;
    std::vector<std::uint16_t> samples;
};

struct PngReadState {
    std::FILE* file = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    ~PngReadState() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (file) std::fclose(file);
    }
};

inline void png_quiet_warning(png_structp, png_const_charp) {}

/// Reads a single-channel PNG of 8 or 16 bits; samples are returned unscaled.
inline PngRaster read_png_gray(const std::filesystem::path& path) {
    PngReadState st;
    st.file = std::fopen(path.c_str(), "rb");
    if (!st.file) throw Error(ErrorCode::MissingFile, "cannot open '" + path.string() + "'");

    std::array<png_byte, 8> sig{};
    if (std::fread(sig.data(), 1, sig.size(), st.file) != sig.size() || png_sig_cmp(sig.data(), 0, sig.size()) != 0)
        throw Error(ErrorCode::Truncated, "'" + path.string() + "' is not a PNG file");

    st.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_quiet_warning);
    if (!st.png) throw Error(ErrorCode::Truncated, "libpng init failed");
    st.info = png_create_info_struct(st.png);
    if (!st.info) throw Error(ErrorCode::Truncated, "libpng init failed");

    PngRaster out;
    std::vector<png_bytep> rows;
    std::vector<png_byte> buffer;
    int color_type = 0;

    if (setjmp(png_jmpbuf(st.png)))
        throw Error(ErrorCode::Truncated, "corrupt or truncated PNG '" + path.string() + "'");

    png_init_io(st.png, st.file);
    png_set_sig_bytes(st.png, static_cast<int>(sig.size()));
    png_read_info(st.png, st.info);

    out.width = static_cast<int>(png_get_image_width(st.png, st.info));
    out.height = static_cast<int>(png_get_image_height(st.png, st.info));
    out.bit_depth = png_get_bit_depth(st.png, st.info);
    color_type = png_get_color_type(st.png, st.info);

    if (color_type != PNG_COLOR_TYPE_GRAY)
        throw Error(ErrorCode::WrongChannels, "'" + path.string() + "' is not a single-channel grayscale PNG");
    if (out.bit_depth != 8 && out.bit_depth != 16)
        throw Error(ErrorCode::UnsupportedDepth,
                    "'" + path.string() + "' has bit depth " + std::to_string(out.bit_depth));
    if (out.bit_depth == 16 && std::endian::native == std::endian::little) png_set_swap(st.png);
    png_read_update_info(st.png, st.info);

    const std::size_t row_bytes = png_get_rowbytes(st.png, st.info);
    buffer.resize(row_bytes * static_cast<std::size_t>(out.height));
    rows.resize(static_cast<std::size_t>(out.height));
    for (int v = 0; v < out.height; ++v) rows[v] = buffer.data() + row_bytes * static_cast<std::size_t>(v);
    png_read_image(st.png, rows.data());
    png_read_end(st.png, nullptr);

    const std::size_t count = static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height);
    out.samples.resize(count);
    if (out.bit_depth == 8) {
        for (int v = 0; v < out.height; ++v)
            for (int u = 0; u < out.width; ++u)
                out.samples[static_cast<std::size_t>(v) * out.width + u] = rows[v][u];
    } else {
        for (int v = 0; v < out.height; ++v) {
            for (int u = 0; u < out.width; ++u) {
                std::uint16_t s = 0;
                std::memcpy(&s, rows[v] + 2 * u, 2);
                out.samples[static_cast<std::size_t>(v) * out.width + u] = s;
            }
        }
    }
    return out;
}

struct PngWriteState {
    std::FILE* file = nullptr;
    png_structp png = nullptr;
    png_infop info = nullptr;

    ~PngWriteState() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (file) std::fclose(file);
    }
};

inline void write_png_gray(const std::filesystem::path& path, int width, int height, int bit_depth,
                           const std::vector<std::uint16_t>& samples) {
    PngWriteState st;
    st.file = std::fopen(path.c_str(), "wb");
    if (!st.file) throw Error(ErrorCode::Unwritable, "cannot open '" + path.string() + "' for writing");
    st.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_quiet_warning);
    if (!st.png) throw Error(ErrorCode::Unwritable, "libpng init failed");
    st.info = png_create_info_struct(st.png);
    if (!st.info) throw Error(ErrorCode::Unwritable, "libpng init failed");

    const std::size_t bytes_per_sample = bit_depth == 16 ? 2 : 1;
    std::vector<png_byte> buffer(samples.size() * bytes_per_sample);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (bit_depth == 16) {
            buffer[2 * i] = static_cast<png_byte>(samples[i] >> 8);
            buffer[2 * i + 1] = static_cast<png_byte>(samples[i] & 0xff);
        } else {
            buffer[i] = static_cast<png_byte>(samples[i]);
        }
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int v = 0; v < height; ++v)
        rows[v] = buffer.data() + static_cast<std::size_t>(v) * width * bytes_per_sample;

    if (setjmp(png_jmpbuf(st.png))) throw Error(ErrorCode::Unwritable, "libpng failed writing '" + path.string() + "'");

    png_init_io(st.png, st.file);
    png_set_IHDR(st.png, st.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(st.png, st.info);
    png_write_image(st.png, rows.data());
    png_write_end(st.png, nullptr);
}

inline bool has_png_signature(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0;
}

inline void append_number(std::string& out, double value) {
    std::array<char, 32> buf{};
    const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    out.append(buf.data(), ptr);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Gray images

inline GrayImage read_pgm(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    detail::HeaderReader header(bytes, path.string());
    if (header.token() != "P5")
        throw Error(ErrorCode::UnsupportedDepth, "'" + path.string() + "' is not a binary (P5) PGM");
    const long width = header.integer();
    const long height = header.integer();
    const long maxval = header.integer();
    header.end_header();
    if (width < 1 || height < 1) throw Error(ErrorCode::Truncated, "bad PGM dimensions in '" + path.string() + "'");
    if (maxval < 1 || maxval > 255)
        throw Error(ErrorCode::UnsupportedDepth,
                    "'" + path.string() + "' has maxval " + std::to_string(maxval) + "; only 8-bit PGM is supported");

    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() - header.position() < count)
        throw Error(ErrorCode::Truncated, "'" + path.string() + "' payload is shorter than " + std::to_string(count) + " bytes");
    std::vector<std::uint8_t> data(bytes.begin() + static_cast<std::ptrdiff_t>(header.position()),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(header.position() + count));
    return GrayImage(static_cast<int>(width), static_cast<int>(height), std::move(data));
}

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
    std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    const auto data = img.data();
    out.append(reinterpret_cast<const char*>(data.data()), data.size());
    detail::write_file_bytes(path, out);
}

inline void write_png8(const GrayImage& img, const std::filesystem::path& path) {
    const auto data = img.data();
    std::vector<std::uint16_t> samples(data.begin(), data.end());
    detail::write_png_gray(path, img.width(), img.height(), 8, samples);
}

/// Loads an 8-bit gray image from binary PGM or PNG; intensities are returned as stored.
inline GrayImage load_gray_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    if (detail::has_png_signature(bytes)) {
        auto png = detail::read_png_gray(path);
        if (png.bit_depth != 8)
            throw Error(ErrorCode::UnsupportedDepth,
                        "'" + path.string() + "' is a " + std::to_string(png.bit_depth) + "-bit PNG; expected 8-bit");
        std::vector<std::uint8_t> data(png.samples.begin(), png.samples.end());
        return GrayImage(png.width, png.height, std::move(data));
    }
    return read_pgm(path);
}

/// Writes PGM or 8-bit PNG depending on the extension.
inline void save_gray_image(const GrayImage& img, const std::filesystem::path& path) {
    if (path.extension() == ".png")
        write_png8(img, path);
    else
        write_pgm(img, path);
}

// ---------------------------------------------------------------------------
// Disparity maps

/// KITTI convention: stored s maps to s/256, s == 0 is INVALID.
inline DisparityMap load_disparity_png16(const std::filesystem::path& path) {
    auto png = detail::read_png_gray(path);
    if (png.bit_depth != 16)
        throw Error(ErrorCode::UnsupportedDepth,
                    "'" + path.string() + "' is a " + std::to_string(png.bit_depth) + "-bit PNG; expected 16-bit");
    DisparityMap map(png.width, png.height);
    for (int v = 0; v < png.height; ++v) {
        for (int u = 0; u < png.width; ++u) {
            const std::uint16_t s = png.samples[static_cast<std::size_t>(v) * png.width + u];
            if (s != 0) map.set(u, v, static_cast<double>(s) / 256.0);
        }
    }
    return map;
}

inline DisparityMap load_disparity_pfm(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    detail::HeaderReader header(bytes, path.string());
    const std::string kind = header.token();
    if (kind != "Pf") {
        if (kind == "PF") throw Error(ErrorCode::WrongChannels, "'" + path.string() + "' is a 3-channel PFM");
        throw Error(ErrorCode::UnsupportedDepth, "'" + path.string() + "' is not a PFM file");
    }
    const long width = header.integer();
    const long height = header.integer();
    const std::string scale_token = header.token();
    header.end_header();
    const double scale = std::strtod(scale_token.c_str(), nullptr);
    if (width < 1 || height < 1 || scale == 0.0)
        throw Error(ErrorCode::Truncated, "bad PFM header in '" + path.string() + "'");
    const bool little = scale < 0.0;

    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() - header.position() < count * 4)
        throw Error(ErrorCode::Truncated, "'" + path.string() + "' payload too short");

    DisparityMap map(static_cast<int>(width), static_cast<int>(height));
    const std::uint8_t* payload = bytes.data() + header.position();
    for (long file_row = 0; file_row < height; ++file_row) {
        const int v = static_cast<int>(height - 1 - file_row);
        for (long u = 0; u < width; ++u) {
            const std::uint8_t* b = payload + 4 * (static_cast<std::size_t>(file_row) * width + u);
            std::uint32_t bits = little ? (std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
                                           std::uint32_t(b[3]) << 24)
                                        : (std::uint32_t(b[3]) | std::uint32_t(b[2]) << 8 | std::uint32_t(b[1]) << 16 |
                                           std::uint32_t(b[0]) << 24);
            const float value = std::bit_cast<float>(bits);
            if (std::isfinite(value) && value >= 0.0f) map.set(static_cast<int>(u), v, value);
        }
    }
    return map;
}

inline DisparityMap load_disparity_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open '" + path.string() + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            if (cell == "inv") {
                row.push_back(DisparityMap::kInvalid);
                continue;
            }
            double value = 0.0;
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
            if (ec != std::errc{} || ptr != cell.data() + cell.size())
                throw Error(ErrorCode::Truncated, "bad CSV cell '" + cell + "' in '" + path.string() + "'");
            row.push_back(value);
        }
        if (!rows.empty() && row.size() != rows.front().size())
            throw Error(ErrorCode::Truncated, "ragged CSV rows in '" + path.string() + "'");
        rows.push_back(std::move(row));
    }
    if (rows.empty() || rows.front().empty()) throw Error(ErrorCode::Truncated, "empty CSV '" + path.string() + "'");

    DisparityMap map(static_cast<int>(rows.front().size()), static_cast<int>(rows.size()));
    for (int v = 0; v < map.height(); ++v)
        for (int u = 0; u < map.width(); ++u)
            if (!std::isnan(rows[v][u])) map.set(u, v, rows[v][u]);
    return map;
}

/// Picks the reader from the file's content (PNG signature, "Pf" magic) and falls back to CSV.
inline DisparityMap load_disparity(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    if (detail::has_png_signature(bytes)) return load_disparity_png16(path);
    if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == 'f' || bytes[1] == 'F')) return load_disparity_pfm(path);
    return load_disparity_csv(path);
}

inline std::string encode_disparity_pfm(const DisparityMap& map) {
    std::string out = "Pf\n" + std::to_string(map.width()) + " " + std::to_string(map.height()) + "\n-1.0\n";
    out.reserve(out.size() + map.size() * 4);
    for (int v = map.height() - 1; v >= 0; --v) {
        for (int u = 0; u < map.width(); ++u) {
            const float value = map.valid(u, v) ? static_cast<float>(map.raw(u, v))
                                                : -std::numeric_limits<float>::infinity();
            const auto bits = std::bit_cast<std::uint32_t>(value);
            for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xff));
        }
    }
    return out;
}

inline std::string encode_disparity_csv(const DisparityMap& map) {
    std::string out;
    for (int v = 0; v < map.height(); ++v) {
        for (int u = 0; u < map.width(); ++u) {
            if (u > 0) out.push_back(',');
            if (map.valid(u, v))
                detail::append_number(out, map.raw(u, v));
            else
                out += "inv";
        }
        out.push_back('\n');
    }
    return out;
}

/// png16 stores round(256 d); a valid value that would round to 0 is stored as 1
/// so it cannot collide with the INVALID sentinel.
inline void save_disparity(const DisparityMap& map, const std::filesystem::path& path, DisparityFormat format) {
    switch (format) {
    case DisparityFormat::Png16: {
        std::vector<std::uint16_t> samples(map.size(), 0);
        for (int v = 0; v < map.height(); ++v) {
            for (int u = 0; u < map.width(); ++u) {
                if (!map.valid(u, v)) continue;
                const double scaled = std::round(map.raw(u, v) * 256.0);
                if (scaled > 65535.0)
                    throw Error(ErrorCode::Overflow, "disparity " + std::to_string(map.raw(u, v)) + " at (" +
                                                         std::to_string(u) + "," + std::to_string(v) +
                                                         ") does not fit png16");
                samples[static_cast<std::size_t>(v) * map.width() + u] =
                    static_cast<std::uint16_t>(std::max(1.0, scaled));
            }
        }
        detail::write_png_gray(path, map.width(), map.height(), 16, samples);
        return;
    }
    case DisparityFormat::Pfm: detail::write_file_bytes(path, encode_disparity_pfm(map)); return;
    case DisparityFormat::Csv: detail::write_file_bytes(path, encode_disparity_csv(map)); return;
    }
}

/// Any 8-bit gray image; nonzero pixels are road.
inline RoadMask load_road_mask(const std::filesystem::path& path) {
    const GrayImage img = load_gray_image(path);
    RoadMask mask(img.width(), img.height());
    for (int v = 0; v < img.height(); ++v)
        for (int u = 0; u < img.width(); ++u) mask.set(u, v, img(u, v) != 0);
    return mask;
}

inline void save_road_mask(const RoadMask& mask, const std::filesystem::path& path) {
    GrayImage img(mask.width(), mask.height());
    for (int v = 0; v < mask.height(); ++v)
        for (int u = 0; u < mask.width(); ++u) img(u, v) = mask(u, v) ? 255 : 0;
    save_gray_image(img, path);
}

} // namespace roadstereo
