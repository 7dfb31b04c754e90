#include "bimac/region.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

namespace bimac {

// --- one-sided Jacobi SVD -------------------------------------------------------------

std::vector<double> singular_values(const Tensor& patch) {
    if (patch.rank() != 2 || patch.shape[0] < 2 || patch.shape[1] < 2)
        throw DimensionError("singular_values: need an (h,w) patch with h,w >= 2");
    // work column-major on the taller orientation so columns are short
    const bool transpose = patch.shape[0] < patch.shape[1];
    const std::size_t m = transpose ? patch.shape[1] : patch.shape[0];
    const std::size_t n = transpose ? patch.shape[0] : patch.shape[1];
    std::vector<double> a(m * n); // column j at a[j*m]
    for (std::size_t i = 0; i < patch.shape[0]; ++i)
        for (std::size_t j = 0; j < patch.shape[1]; ++j) {
            const double v = patch.at2(i, j);
            if (transpose)
                a[i * m + j] = v;
            else
                a[j * m + i] = v;
        }
    const int max_sweeps = 60;
    const double tol = 1e-15;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (std::size_t p = 0; p + 1 < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                double* cp = a.data() + p * m;
                double* cq = a.data() + q * m;
                double app = 0.0, aqq = 0.0, apq = 0.0;
                for (std::size_t i = 0; i < m; ++i) {
                    app += cp[i] * cp[i];
                    aqq += cq[i] * cq[i];
                    apq += cp[i] * cq[i];
                }
                if (std::fabs(apq) <= tol * std::sqrt(app * aqq)) continue;
                rotated = true;
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::fabs(tau) + std::sqrt(1.0 + tau * tau));
                const double cs = 1.0 / std::sqrt(1.0 + t * t);
                const double sn = cs * t;
                for (std::size_t i = 0; i < m; ++i) {
                    const double vp = cp[i];
                    const double vq = cq[i];
                    cp[i] = cs * vp - sn * vq;
                    cq[i] = sn * vp + cs * vq;
                }
            }
        if (!rotated) break;
    }
    std::vector<double> s(n);
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < m; ++i) acc += a[j * m + i] * a[j * m + i];
        s[j] = std::sqrt(acc);
    }
    std::sort(s.begin(), s.end(), std::greater<double>());
    return s;
}

std::vector<double> svd_spectrum(const Tensor& patch) {
    std::vector<double> s = singular_values(patch);
    if (s.empty() || s[0] == 0.0) {
        std::fill(s.begin(), s.end(), 0.0);
        return s;
    }
    const double s1 = s[0];
    for (double& v : s) v /= s1;
    return s;
}

// --- 2-D DFT and radial binning ---------------------------------------------------------

namespace {

using cplx = std::complex<double>;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// iterative radix-2, forward (e^{-i...}), unnormalized
void fft_pow2(std::vector<cplx>& v) {
    const std::size_t n = v.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j |= bit;
        if (i < j) std::swap(v[i], v[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len)
            for (std::size_t k = 0; k < len / 2; ++k) {
                const cplx w(std::cos(ang * static_cast<double>(k)),
                             std::sin(ang * static_cast<double>(k)));
                const cplx u = v[i + k];
                const cplx t = w * v[i + k + len / 2];
                v[i + k] = u + t;
                v[i + k + len / 2] = u - t;
            }
    }
}

// O(n^2) fallback for non power-of-two lines
std::vector<cplx> dft_naive(const std::vector<cplx>& v) {
    const std::size_t n = v.size();
    std::vector<cplx> out(n);
    for (std::size_t k = 0; k < n; ++k) {
        cplx acc(0.0, 0.0);
        for (std::size_t t = 0; t < n; ++t) {
            const double ang = -2.0 * M_PI * static_cast<double>(k) *
                               static_cast<double>(t) / static_cast<double>(n);
            acc += v[t] * cplx(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    return out;
}

void transform_line(std::vector<cplx>& v) {
    if (is_pow2(v.size()))
        fft_pow2(v);
    else
        v = dft_naive(v);
}

} // namespace

std::vector<double> radial_power_spectrum(const Tensor& patch,
                                          std::vector<std::size_t>* counts) {
    if (patch.rank() != 2) throw DimensionError("radial_power_spectrum: need an (h,w) patch");
    if (patch.shape[0] != patch.shape[1])
        throw DimensionError("radial_power_spectrum: patch must be square");
    const std::size_t n = patch.shape[0];
    std::vector<std::vector<cplx>> f(n, std::vector<cplx>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) f[i][j] = cplx(patch.at2(i, j), 0.0);
    for (std::size_t i = 0; i < n; ++i) transform_line(f[i]);
    std::vector<cplx> col(n);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = 0; i < n; ++i) col[i] = f[i][j];
        transform_line(col);
        for (std::size_t i = 0; i < n; ++i) f[i][j] = col[i];
    }
    const long half = static_cast<long>(n) / 2;
    const std::size_t maxr = static_cast<std::size_t>(
        std::lround(std::sqrt(2.0) * static_cast<double>(half))) + 1;
    std::vector<double> sum(maxr + 1, 0.0);
    std::vector<std::size_t> cnt(maxr + 1, 0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const long fu = static_cast<long>(i) > half ? static_cast<long>(i) - static_cast<long>(n)
                                                        : static_cast<long>(i);
            const long fv = static_cast<long>(j) > half ? static_cast<long>(j) - static_cast<long>(n)
                                                        : static_cast<long>(j);
            const std::size_t r = static_cast<std::size_t>(std::lround(
                std::sqrt(static_cast<double>(fu * fu + fv * fv))));
            sum[r] += std::norm(f[i][j]);
            cnt[r] += 1;
        }
    std::vector<double> bins(maxr + 1, 0.0);
    for (std::size_t r = 0; r <= maxr; ++r)
        bins[r] = cnt[r] ? sum[r] / static_cast<double>(cnt[r]) : 0.0;
    if (counts) *counts = cnt;
    return bins;
}

PatchProfile analyze_patch(const Tensor& patch, double rank_cutoff) {
    PatchProfile prof;
    prof.singular = svd_spectrum(patch);
    prof.effective_rank = 0;
    for (double s : prof.singular)
        if (s >= rank_cutoff) ++prof.effective_rank;
    prof.radial_power = radial_power_spectrum(patch, &prof.radial_count);
    const std::size_t n = patch.shape[0];
    double total = 0.0, hf = 0.0;
    for (std::size_t r = 0; r < prof.radial_power.size(); ++r) {
        const double e = prof.radial_power[r] * static_cast<double>(prof.radial_count[r]);
        total += e;
        if (4 * r > n) hf += e; // strictly above half the Nyquist radius n/2
    }
    prof.hf_ratio = total > 0.0 ? hf / total : 0.0;
    return prof;
}

PatchClass classify_patch(const PatchProfile& profile, std::size_t rank_thresh,
                          double hf_thresh) {
    if (profile.effective_rank >= rank_thresh || profile.hf_ratio >= hf_thresh)
        return PatchClass::complex_region;
    return PatchClass::redundant;
}

} // namespace bimac
