#include "bimac/camg.hpp"

#include <cmath>

namespace bimac {

Tensor soft_mask(const Tensor& x, const CamgParams& p, OpCount* tally) {
    if (p.conv_w.rank() != 4 || p.conv_w.shape[0] != x.shape[0] ||
        p.conv_w.shape[1] != x.shape[0])
        throw DimensionError("soft_mask: mask conv must be C_in->C_in, got w" +
                             shape_str(p.conv_w) + " for x" + shape_str(x));
    const int pad = static_cast<int>(p.conv_w.shape[2] - 1) / 2;
    return sigmoid(conv2d(x, p.conv_w, p.conv_b, pad, tally));
}

Tensor modulate(const Tensor& x, const Tensor& sm, OpCount* tally) {
    if (!x.same_shape(sm))
        throw DimensionError("modulate: shape mismatch x" + shape_str(x) + " vs sm" +
                             shape_str(sm));
    Tensor y = x;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= sm[i];
    if (tally) tally->mul += static_cast<double>(y.numel());
    return y;
}

HardMask hard_mask(const Tensor& sm, double alpha, OpCount* tally) {
    if (sm.rank() != 3) throw DimensionError("hard_mask: sm must be (C,H,W)");
    const std::size_t c = sm.shape[0];
    const std::size_t h = sm.shape[1];
    const std::size_t w = sm.shape[2];
    const std::size_t hw = h * w;
    HardMask out;
    out.sm_f = Tensor({1, h, w});
    for (std::size_t p = 0; p < hw; ++p) {
        double acc = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) acc += sm[ch * hw + p];
        out.sm_f[p] = acc / static_cast<double>(c);
    }
    if (tally) tally->add += static_cast<double>(c) * hw;

    double mu = 0.0;
    for (std::size_t p = 0; p < hw; ++p) mu += out.sm_f[p];
    mu /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
        const double d = out.sm_f[p] - mu;
        var += d * d;
    }
    var /= static_cast<double>(hw); // population variance
    out.mu = mu;
    out.sigma_s = std::sqrt(var);
    out.T = mu + alpha * out.sigma_s;
    out.hm = Tensor({1, h, w});
    for (std::size_t p = 0; p < hw; ++p) out.hm[p] = out.sm_f[p] > out.T ? 1.0 : 0.0;
    return out;
}

MaskPair camg_forward(const Tensor& x, const CamgParams& p, OpCount* tally) {
    MaskPair mp;
    mp.sm = soft_mask(x, p, tally);
    mp.x_mod = modulate(x, mp.sm, tally);
    HardMask hmr = hard_mask(mp.sm, p.alpha, tally);
    mp.sm_f = std::move(hmr.sm_f);
    mp.mu = hmr.mu;
    mp.sigma_s = hmr.sigma_s;
    mp.alpha = p.alpha;
    mp.T = hmr.T;
    mp.hm = std::move(hmr.hm);
    std::size_t ones = 0;
    for (double v : mp.hm.data)
        if (v != 0.0) ++ones;
    mp.focused_fraction = static_cast<double>(ones) / static_cast<double>(mp.hm.numel());
    return mp;
}

} // namespace bimac
