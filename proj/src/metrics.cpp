#include "bimac/metrics.hpp"

#include <array>
#include <cmath>
#include <cstring>

namespace bimac {

double sam(const Tensor& pred, const Tensor& gt) {
    if (!pred.same_shape(gt) || pred.rank() != 3)
        throw DimensionError("sam: need matching (C,H,W) tensors");
    const std::size_t c = pred.shape[0];
    if (c < 2) throw DimensionError("sam: needs at least two bands");
    const std::size_t hw = pred.shape[1] * pred.shape[2];
    double acc = 0.0;
    std::size_t valid = 0;
    for (std::size_t p = 0; p < hw; ++p) {
        double pg = 0.0, pp = 0.0, gg = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double pv = pred[ch * hw + p];
            const double gv = gt[ch * hw + p];
            pg += pv * gv;
            pp += pv * pv;
            gg += gv * gv;
        }
        if (pp == 0.0 || gg == 0.0) continue; // degenerate pixel, skipped
        double cosv = pg / std::sqrt(pp * gg);
        cosv = std::min(1.0, std::max(-1.0, cosv));
        acc += std::acos(cosv);
        ++valid;
    }
    if (valid == 0) throw MetricError("sam: every pixel is degenerate");
    return acc / static_cast<double>(valid) * (180.0 / M_PI);
}

double ergas(const Tensor& pred, const Tensor& gt, int ratio) {
    if (!pred.same_shape(gt) || pred.rank() != 3)
        throw DimensionError("ergas: need matching (C,H,W) tensors");
    const std::size_t c = pred.shape[0];
    const std::size_t hw = pred.shape[1] * pred.shape[2];
    double acc = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean_g = 0.0;
        for (std::size_t p = 0; p < hw; ++p) mean_g += gt[ch * hw + p];
        mean_g /= static_cast<double>(hw);
        if (mean_g == 0.0) throw MetricError("ergas: zero mean in band " + std::to_string(ch));
        double mse = 0.0;
        for (std::size_t p = 0; p < hw; ++p) {
            const double d = pred[ch * hw + p] - gt[ch * hw + p];
            mse += d * d;
        }
        mse /= static_cast<double>(hw);
        const double rel = std::sqrt(mse) / mean_g;
        acc += rel * rel;
    }
    return 100.0 / static_cast<double>(ratio) * std::sqrt(acc / static_cast<double>(c));
}

// --- hypercomplex helpers (Cayley-Dickson, dim 1/2/4/8) -------------------------------

namespace {

// (p,q)(r,s) = (p r - s* q, s p + q r*), conjugation negates all but the
// first component.
void cd_mul(const double* a, const double* b, double* out, std::size_t n) {
    if (n == 1) {
        out[0] = a[0] * b[0];
        return;
    }
    const std::size_t h = n / 2;
    std::array<double, 8> conj_s{}, conj_r{}, t1{}, t2{}, t3{}, t4{};
    for (std::size_t i = 0; i < h; ++i) {
        conj_s[i] = i == 0 ? b[h] : -b[h + i];
        conj_r[i] = i == 0 ? b[0] : -b[i];
    }
    cd_mul(a, b, t1.data(), h);                 // p r
    cd_mul(conj_s.data(), a + h, t2.data(), h); // s* q
    cd_mul(b + h, a, t3.data(), h);             // s p
    cd_mul(a + h, conj_r.data(), t4.data(), h); // q r*
    for (std::size_t i = 0; i < h; ++i) {
        out[i] = t1[i] - t2[i];
        out[h + i] = t3[i] + t4[i];
    }
}

double block_q(const Tensor& pred, const Tensor& gt, std::size_t bi, std::size_t bj,
               std::size_t block) {
    const std::size_t c = pred.shape[0];
    const std::size_t hw = pred.shape[1] * pred.shape[2];
    const std::size_t w = pred.shape[2];
    const double n = static_cast<double>(block * block);

    bool identical = true;
    for (std::size_t ch = 0; ch < c && identical; ++ch)
        for (std::size_t y = 0; y < block && identical; ++y)
            for (std::size_t x = 0; x < block; ++x) {
                const std::size_t p = (bi + y) * w + (bj + x);
                if (pred[ch * hw + p] != gt[ch * hw + p]) {
                    identical = false;
                    break;
                }
            }
    if (identical) return 1.0; // exact fixed point

    std::array<double, 8> mu1{}, mu2{}, cov{}, z1{}, z2{}, conj2{}, prod{};
    double e1 = 0.0, e2 = 0.0;
    for (std::size_t y = 0; y < block; ++y)
        for (std::size_t x = 0; x < block; ++x) {
            const std::size_t p = (bi + y) * w + (bj + x);
            for (std::size_t ch = 0; ch < c; ++ch) {
                z1[ch] = gt[ch * hw + p];
                z2[ch] = pred[ch * hw + p];
                mu1[ch] += z1[ch];
                mu2[ch] += z2[ch];
                e1 += z1[ch] * z1[ch];
                e2 += z2[ch] * z2[ch];
            }
            for (std::size_t ch = 0; ch < c; ++ch)
                conj2[ch] = ch == 0 ? z2[ch] : -z2[ch];
            cd_mul(z1.data(), conj2.data(), prod.data(), c);
            for (std::size_t ch = 0; ch < c; ++ch) cov[ch] += prod[ch];
        }
    for (std::size_t ch = 0; ch < c; ++ch) {
        mu1[ch] /= n;
        mu2[ch] /= n;
        cov[ch] /= n;
    }
    double nmu1 = 0.0, nmu2 = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
        nmu1 += mu1[ch] * mu1[ch];
        nmu2 += mu2[ch] * mu2[ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch)
        conj2[ch] = ch == 0 ? mu2[ch] : -mu2[ch];
    cd_mul(mu1.data(), conj2.data(), prod.data(), c);
    for (std::size_t ch = 0; ch < c; ++ch) cov[ch] -= prod[ch];
    const double var1 = std::max(0.0, e1 / n - nmu1);
    const double var2 = std::max(0.0, e2 / n - nmu2);
    double ncov = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) ncov += cov[ch] * cov[ch];
    ncov = std::sqrt(ncov);
    const double denom1 = var1 + var2;
    const double denom2 = nmu1 + nmu2;
    if (denom1 == 0.0 || denom2 == 0.0) return 0.0; // no measurable structure
    return 4.0 * ncov * std::sqrt(nmu1) * std::sqrt(nmu2) / (denom1 * denom2);
}

} // namespace

double q2n(const Tensor& pred, const Tensor& gt, std::size_t block) {
    if (!pred.same_shape(gt) || pred.rank() != 3)
        throw DimensionError("q2n: need matching (C,H,W) tensors");
    const std::size_t c = pred.shape[0];
    if (c != 4 && c != 8)
        throw ConfigError("q2n: supports 4- or 8-band images, got " + std::to_string(c));
    const std::size_t h = pred.shape[1];
    const std::size_t w = pred.shape[2];
    if (h < block || w < block)
        throw DimensionError("q2n: image smaller than the block size");
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t bi = 0; bi + block <= h; bi += block)
        for (std::size_t bj = 0; bj + block <= w; bj += block) {
            acc += block_q(pred, gt, bi, bj, block);
            ++count;
        }
    return acc / static_cast<double>(count);
}

} // namespace bimac
