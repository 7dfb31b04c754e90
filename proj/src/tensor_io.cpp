#include "bimac/tensor_io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace bimac {

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw DataError("truncated tensor file: " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
}

float get_f32(std::istream& is, const std::string& what) {
    std::uint32_t bits = get_u32(is, what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

} // namespace

void write_bmt(std::ostream& os, const Tensor& t) {
    os.write("BMT1", 4);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape) put_u32(os, static_cast<std::uint32_t>(e));
    for (double v : t.data) put_f32(os, static_cast<float>(v));
}

void write_bmt(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    write_bmt(os, t);
    if (!os) throw DataError("write failed: " + path);
}

Tensor read_bmt(std::istream& is, const std::string& what) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "BMT1", 4) != 0)
        throw DataError("bad tensor magic in " + what);
    const std::uint32_t rank = get_u32(is, what);
    if (rank > 8) throw DataError("implausible tensor rank in " + what);
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = get_u32(is, what);
    Tensor t(shape);
    for (double& v : t.data) v = static_cast<double>(get_f32(is, what));
    return t;
}

Tensor read_bmt(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open tensor file: " + path);
    return read_bmt(is, path);
}

void write_pgm(const std::string& path, const Tensor& slice2d, double lo, double hi) {
    if (slice2d.rank() != 2)
        throw DimensionError("write_pgm: need a 2-D slice, got " + shape_str(slice2d));
    const std::size_t h = slice2d.shape[0];
    const std::size_t w = slice2d.shape[1];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "P5\n" << w << " " << h << "\n255\n";
    const double span = hi - lo;
    for (std::size_t p = 0; p < h * w; ++p) {
        double v = span > 0.0 ? (slice2d[p] - lo) / span : 0.0;
        v = std::min(1.0, std::max(0.0, v));
        os.put(static_cast<char>(static_cast<int>(std::lround(v * 255.0))));
    }
    if (!os) throw DataError("write failed: " + path);
}

void write_pgm_autoscale(const std::string& path, const Tensor& slice2d) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (double v : slice2d.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (slice2d.data.empty()) lo = hi = 0.0;
    write_pgm(path, slice2d, lo, hi);
}

Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open image file: " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw DataError("unsupported image format (want binary P5): " + path);
    auto next_int = [&is, &path]() {
        // skip whitespace and '#' comment lines
        int c = is.get();
        while (c != EOF && (std::isspace(c) || c == '#')) {
            if (c == '#')
                while (c != EOF && c != '\n') c = is.get();
            c = is.get();
        }
        long v = -1;
        while (c != EOF && std::isdigit(c)) {
            if (v < 0) v = 0;
            v = v * 10 + (c - '0');
            c = is.get();
        }
        if (v < 0) throw DataError("malformed PGM header: " + path);
        return v;
    };
    const long w = next_int();
    const long h = next_int();
    const long maxval = next_int();
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
        throw DataError("unsupported PGM geometry/maxval: " + path);
    Tensor t({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (std::size_t p = 0; p < t.numel(); ++p) {
        const int c = is.get();
        if (c == EOF) throw DataError("truncated PGM payload: " + path);
        t[p] = static_cast<double>(c) / static_cast<double>(maxval);
    }
    return t;
}

} // namespace bimac
