#include "dvqa/io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dvqa/error.hpp"

namespace dvqa {

namespace {

// The spatial extents of an image tensor: last two dims, all leading dims 1.
std::pair<int64_t, int64_t> image_hw(const Tensor& img) {
    const Shape& s = img.shape();
    if (s.size() < 2) throw ShapeError("image tensor must have at least 2 dims");
    for (size_t i = 0; i + 2 < s.size(); ++i)
        if (s[i] != 1) throw ShapeError("image tensor leading extents must be 1, got " + shape_str(s));
    return {s[s.size() - 2], s[s.size() - 1]};
}

int next_pnm_int(std::istream& in, const std::string& path) {
    // PNM headers allow whitespace and '#' comments between fields.
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
    if (c == EOF || !std::isdigit(c)) throw IoError("malformed PGM header in " + path);
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = in.get();
    }
    return v;
}

}  // namespace

void write_pgm(const std::string& path, const Tensor& img) {
    auto [h, w] = image_hw(img);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "P5\n" << w << " " << h << "\n255\n";
    const double* d = img.data();
    std::string bytes(static_cast<size_t>(h * w), '\0');
    for (int64_t i = 0; i < h * w; ++i) {
        double v = d[i];
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        bytes[static_cast<size_t>(i)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw IoError(path + " is not a binary PGM (P5) file");
    int w = next_pnm_int(in, path);
    int h = next_pnm_int(in, path);
    int maxval = next_pnm_int(in, path);
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError("unsupported PGM geometry in " + path);
    // exactly one whitespace byte separates the header from the raster; the
    // header parser already consumed it while scanning past maxval
    std::string bytes(static_cast<size_t>(w) * static_cast<size_t>(h), '\0');
    in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError("truncated PGM raster in " + path);
    std::vector<double> v(bytes.size());
    for (size_t i = 0; i < bytes.size(); ++i)
        v[i] = static_cast<double>(static_cast<unsigned char>(bytes[i])) / 255.0;
    return Tensor::from_vector({1, h, w}, std::move(v));
}

void dump_csv(const std::string& path, const Tensor& t) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const Shape& s = t.shape();
    for (size_t i = 0; i < s.size(); ++i) out << (i ? "," : "") << s[i];
    out << "\n";
    int64_t cols = s.back();
    int64_t rows = t.numel() / cols;
    const double* d = t.data();
    char buf[40];
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", d[r * cols + c]);
            out << (c ? "," : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw IoError("short write to " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw IoError("short write to " + path);
}

}  // namespace dvqa
