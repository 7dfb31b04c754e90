#include "bimac/tensor.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <sstream>

namespace bimac {

std::string shape_str(const Tensor& t) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
        if (i) os << ',';
        os << t.shape[i];
    }
    os << ')';
    return os.str();
}

void require_finite(const Tensor& t, const char* what) {
    for (double v : t.data) {
        if (!std::isfinite(v))
            throw NumericError(std::string(what) + ": non-finite value in output tensor");
    }
}

static void check_conv_args(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1)
        throw DimensionError("conv2d: expected x(C,H,W), w(Co,Ci,k,k), b(Co), got x" +
                             shape_str(x) + " w" + shape_str(w) + " b" + shape_str(b));
    if (w.shape[2] != w.shape[3])
        throw DimensionError("conv2d: kernel must be square, got w" + shape_str(w));
    if (w.shape[2] % 2 == 0)
        throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(w.shape[2]));
    if (pad != static_cast<int>(w.shape[2] - 1) / 2)
        throw ConfigError("conv2d: pad must be (k-1)/2 for same-size output");
    if (w.shape[1] != x.shape[0])
        throw DimensionError("conv2d: input channels mismatch, x" + shape_str(x) +
                             " vs w" + shape_str(w));
    if (b.shape[0] != w.shape[0])
        throw DimensionError("conv2d: bias length mismatch, w" + shape_str(w) +
                             " vs b" + shape_str(b));
}

// One output pixel: bias-seeded accumulation in fixed row-major (c,u,v) order.
static inline double conv_pixel(const Tensor& x, const Tensor& w, double bias,
                                int pad, std::size_t o, int i, int j) {
    const int ci = static_cast<int>(x.shape[0]);
    const int h = static_cast<int>(x.shape[1]);
    const int wd = static_cast<int>(x.shape[2]);
    const int k = static_cast<int>(w.shape[2]);
    double acc = bias;
    for (int c = 0; c < ci; ++c) {
        const double* xrow = x.ptr() + static_cast<std::size_t>(c) * h * wd;
        const double* wrow = w.ptr() + ((o * ci + c) * k) * k;
        for (int u = 0; u < k; ++u) {
            const int y = i + u - pad;
            if (y < 0 || y >= h) continue;
            for (int v = 0; v < k; ++v) {
                const int z = j + v - pad;
                if (z < 0 || z >= wd) continue;
                acc += xrow[y * wd + z] * wrow[u * k + v];
            }
        }
    }
    return acc;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad, OpCount* tally) {
    check_conv_args(x, w, b, pad);
    const std::size_t co = w.shape[0];
    const std::size_t ci = x.shape[0];
    const std::size_t h = x.shape[1];
    const std::size_t wd = x.shape[2];
    const std::size_t k = w.shape[2];
    // shift-and-accumulate: per output pixel the contributions still arrive in
    // bias, then row-major (c,u,v) order, so results are bit-identical to the
    // per-pixel formulation in conv_pixel
    Tensor y({co, h, wd});
    for (std::size_t o = 0; o < co; ++o) {
        double* yo = y.ptr() + o * h * wd;
        std::fill(yo, yo + h * wd, b[o]);
        for (std::size_t c = 0; c < ci; ++c) {
            const double* xc = x.ptr() + c * h * wd;
            const double* woc = w.ptr() + (o * ci + c) * k * k;
            for (std::size_t u = 0; u < k; ++u)
                for (std::size_t v = 0; v < k; ++v) {
                    const double wv = woc[u * k + v];
                    const int di = static_cast<int>(u) - pad;
                    const int dj = static_cast<int>(v) - pad;
                    const int imin = std::max(0, -di);
                    const int imax = std::min<int>(static_cast<int>(h),
                                                   static_cast<int>(h) - di);
                    const int jmin = std::max(0, -dj);
                    const int jmax = std::min<int>(static_cast<int>(wd),
                                                   static_cast<int>(wd) - dj);
                    for (int i = imin; i < imax; ++i) {
                        double* yrow = yo + static_cast<std::size_t>(i) * wd;
                        const double* xrow =
                            xc + static_cast<std::size_t>(i + di) * wd + dj;
                        for (int j = jmin; j < jmax; ++j) yrow[j] += wv * xrow[j];
                    }
                }
        }
    }
    if (tally) {
        const double macs = static_cast<double>(h) * wd * co * x.shape[0] *
                            w.shape[2] * w.shape[3];
        tally->mul += macs;
        tally->add += macs;
    }
    require_finite(y, "conv2d");
    return y;
}

void conv2d_at_into(const Tensor& x, const Tensor& w, const Tensor& b, int pad,
                    const std::vector<Position>& positions, Tensor& out, OpCount* tally) {
    check_conv_args(x, w, b, pad);
    const int h = static_cast<int>(x.shape[1]);
    const int wd = static_cast<int>(x.shape[2]);
    const std::size_t co = w.shape[0];
    if (out.rank() != 3 || out.shape[0] != co || out.shape[1] != x.shape[1] ||
        out.shape[2] != x.shape[2])
        throw DimensionError("conv2d_at: output must be (C_out,H,W)");
    for (const Position& p : positions) {
        if (p.i < 0 || p.i >= h || p.j < 0 || p.j >= wd)
            throw IndexError("conv2d_at: position (" + std::to_string(p.i) + "," +
                             std::to_string(p.j) + ") outside " + shape_str(x));
        for (std::size_t o = 0; o < co; ++o)
            out.at3(o, p.i, p.j) = conv_pixel(x, w, b[o], pad, o, p.i, p.j);
    }
    if (tally) {
        const double macs = static_cast<double>(positions.size()) * co * x.shape[0] *
                            w.shape[2] * w.shape[3];
        tally->mul += macs;
        tally->add += macs;
    }
}

std::vector<std::pair<Position, Tensor>> conv2d_at(const Tensor& x, const Tensor& w,
                                                   const Tensor& b, int pad,
                                                   const std::vector<Position>& positions,
                                                   OpCount* tally) {
    Tensor scratch({w.shape[0], x.shape[1], x.shape[2]});
    conv2d_at_into(x, w, b, pad, positions, scratch, tally);
    std::vector<std::pair<Position, Tensor>> result;
    result.reserve(positions.size());
    for (const Position& p : positions) {
        Tensor vec({w.shape[0]});
        for (std::size_t o = 0; o < w.shape[0]; ++o) vec[o] = scratch.at3(o, p.i, p.j);
        require_finite(vec, "conv2d_at");
        result.emplace_back(p, std::move(vec));
    }
    return result;
}

Tensor masked_gap(const Tensor& x, const Tensor& keep, OpCount* tally) {
    if (x.rank() != 3 || keep.rank() != 3 || keep.shape[0] != 1 ||
        keep.shape[1] != x.shape[1] || keep.shape[2] != x.shape[2])
        throw DimensionError("masked_gap: x(C,H,W) with keep(1,H,W) required, got x" +
                             shape_str(x) + " keep" + shape_str(keep));
    const std::size_t c = x.shape[0];
    const std::size_t hw = x.shape[1] * x.shape[2];
    std::size_t n = 0;
    for (std::size_t p = 0; p < hw; ++p)
        if (keep[p] != 0.0) ++n;
    Tensor v({c});
    const bool all = (n == 0); // fall back to a plain global average
    const std::size_t denom = all ? hw : n;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double* row = x.ptr() + ch * hw;
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p)
            if (all || keep[p] != 0.0) acc += row[p];
        v[ch] = acc / static_cast<double>(denom);
    }
    if (tally) tally->add += static_cast<double>(c) * denom;
    require_finite(v, "masked_gap");
    return v;
}

Tensor linear(const Tensor& v, const Tensor& w, const Tensor& b, OpCount* tally) {
    if (v.rank() != 1 || w.rank() != 2 || b.rank() != 1 || w.shape[1] != v.shape[0] ||
        w.shape[0] != b.shape[0])
        throw DimensionError("linear: shapes v" + shape_str(v) + " w" + shape_str(w) +
                             " b" + shape_str(b) + " inconsistent");
    const std::size_t dout = w.shape[0];
    const std::size_t din = w.shape[1];
    Tensor y({dout});
    for (std::size_t r = 0; r < dout; ++r) {
        const double* wr = w.ptr() + r * din;
        double acc = b[r];
        for (std::size_t c = 0; c < din; ++c) acc += wr[c] * v[c];
        y[r] = acc;
    }
    if (tally) {
        tally->mul += static_cast<double>(dout) * din;
        tally->add += static_cast<double>(dout) * din;
    }
    require_finite(y, "linear");
    return y;
}

double sigmoid_scalar(double t) {
    const double s = 1.0 / (1.0 + std::exp(-t));
    // keep the output strictly inside (0,1) even where the exact value
    // rounds to an endpoint
    if (s <= 0.0) return std::numeric_limits<double>::min();
    if (s >= 1.0) return 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return s;
}

Tensor sigmoid(const Tensor& t) {
    Tensor y = t;
    for (double& v : y.data) v = sigmoid_scalar(v);
    return y;
}

Tensor relu(const Tensor& t) {
    Tensor y = t;
    for (double& v : y.data) v = v > 0.0 ? v : 0.0;
    return y;
}

} // namespace bimac
