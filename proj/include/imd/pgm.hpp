#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "imd/mask.hpp"

namespace imd {

// Binary PGM (P5, maxval 255) read/write.
//   BinaryMask: 0 -> 0, 1 -> 255 on write; any value >= 128 -> 1 on read.
//   ProbMask: linear scale to 0..255 (round on write, /255 on read).
// BinaryMask round-trips bit-exactly.

namespace detail {

inline int pgm_next_token(std::istream& in) {
    // Skips whitespace and '#' comments, per the PNM header grammar.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF) throw std::runtime_error("pgm: truncated header");
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw std::runtime_error("pgm: malformed header token");
    return value;
}

struct PgmImage {
    int width = 0, height = 0;
    std::vector<std::uint8_t> bytes;
};

inline PgmImage read_pgm_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("pgm: cannot open " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] != 'P' || magic[1] != '5')
        throw std::runtime_error("pgm: not a P5 file: " + path);
    PgmImage img;
    img.width = pgm_next_token(in);
    img.height = pgm_next_token(in);
    const int maxval = pgm_next_token(in);
    if (img.width < 1 || img.height < 1)
        throw std::runtime_error("pgm: bad dimensions in " + path);
    if (maxval != 255)
        throw std::runtime_error("pgm: unsupported maxval (want 255) in " + path);
    // Exactly one whitespace byte separates the header from the raster; the
    // token reader has already consumed it.
    img.bytes.resize(static_cast<std::size_t>(img.width) * img.height);
    in.read(reinterpret_cast<char*>(img.bytes.data()),
            static_cast<std::streamsize>(img.bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.bytes.size()))
        throw std::runtime_error("pgm: truncated raster in " + path);
    return img;
}

inline void write_pgm_bytes(const std::string& path, int width, int height,
                            const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("pgm: cannot write " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("pgm: write failed for " + path);
}

}  // namespace detail

inline void write_pgm(const std::string& path, const BinaryMask& mask) {
    std::vector<std::uint8_t> bytes(mask.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = mask.data()[i] ? 255 : 0;
    detail::write_pgm_bytes(path, mask.width(), mask.height(), bytes);
}

inline void write_pgm(const std::string& path, const ProbMask& p) {
    std::vector<std::uint8_t> bytes(p.data().size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<std::uint8_t>(std::lround(p.data()[i] * 255.0));
    detail::write_pgm_bytes(path, p.width(), p.height(), bytes);
}

inline BinaryMask read_pgm_mask(const std::string& path) {
    const auto img = detail::read_pgm_bytes(path);
    std::vector<std::uint8_t> data(img.bytes.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = img.bytes[i] >= 128 ? 1 : 0;
    return BinaryMask(img.width, img.height, std::move(data));
}

inline ProbMask read_pgm_prob(const std::string& path) {
    const auto img = detail::read_pgm_bytes(path);
    std::vector<double> data(img.bytes.size());
    for (std::size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<double>(img.bytes[i]) / 255.0;
    return ProbMask(img.width, img.height, std::move(data));
}

}  // namespace imd
