#ifndef BIMAC_TEST_ORACLES_HPP
#define BIMAC_TEST_ORACLES_HPP

// Test-only reference implementations. These stay deliberately naive and
// independent of the library's fused execution paths.

#include <cmath>
#include <random>

#include "bimac/tensor.hpp"

namespace oracle {

inline bimac::Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed,
                                   double lo = -1.0, double hi = 1.0) {
    bimac::Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data) v = d(rng);
    return t;
}

inline double max_abs_diff(const bimac::Tensor& a, const bimac::Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

// six nested loops, nothing shared with the library inner kernels
inline bimac::Tensor conv2d_naive(const bimac::Tensor& x, const bimac::Tensor& w,
                                  const bimac::Tensor& b, int pad) {
    const int co = static_cast<int>(w.shape[0]);
    const int ci = static_cast<int>(w.shape[1]);
    const int k = static_cast<int>(w.shape[2]);
    const int h = static_cast<int>(x.shape[1]);
    const int wd = static_cast<int>(x.shape[2]);
    bimac::Tensor y({w.shape[0], x.shape[1], x.shape[2]});
    for (int o = 0; o < co; ++o)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < wd; ++j) {
                double acc = b[o];
                for (int c = 0; c < ci; ++c)
                    for (int u = 0; u < k; ++u)
                        for (int v = 0; v < k; ++v) {
                            const int y0 = i + u - pad;
                            const int x0 = j + v - pad;
                            if (y0 < 0 || y0 >= h || x0 < 0 || x0 >= wd) continue;
                            acc += x.at3(c, y0, x0) * w.at4(o, c, u, v);
                        }
                y.at3(o, i, j) = acc;
            }
    return y;
}

} // namespace oracle

#endif
