#include "nerfba/image.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "nerfba/errors.hpp"

namespace nerfba {

uint8_t quantize8(double v) {
    if (!(v > 0.0)) return 0;
    if (v >= 1.0) return 255;
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

void write_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = quantize8(img.at(x, y, c));
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError("short write: " + path);
}

namespace {

int read_pnm_token(std::istream& in, const std::string& path) {
    // Skips whitespace and '#' comments per the PNM spec.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw ParseError("truncated header: " + path);
    int value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw ParseError("malformed header token: " + path);
    return value;
}

}  // namespace

Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[2];
    in.read(magic, 2);
    if (!in || magic[0] != 'P' || magic[1] != '6') throw ParseError("not a P6 PPM: " + path);
    int w = read_pnm_token(in, path);
    int h = read_pnm_token(in, path);
    int maxval = read_pnm_token(in, path);
    if (w <= 0 || h <= 0 || maxval != 255) throw ParseError("unsupported PPM geometry: " + path);
    Image img(w, h);
    std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<size_t>(in.gcount()) != buf.size()) throw ParseError("truncated pixel data: " + path);
    for (size_t i = 0; i < buf.size(); ++i) img.rgb[i] = buf[i] / 255.0;
    return img;
}

void write_pgm(const std::vector<double>& gray, int width, int height, const std::string& path) {
    if (gray.size() != static_cast<size_t>(width) * height) throw ValidationError("gray buffer size mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "P5\n" << width << " " << height << "\n255\n";
    std::vector<uint8_t> buf(gray.size());
    for (size_t i = 0; i < gray.size(); ++i) buf[i] = quantize8(gray[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write: " + path);
}

}  // namespace nerfba
