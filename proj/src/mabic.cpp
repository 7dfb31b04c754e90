#include "bimac/mabic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace bimac {

namespace {

Tensor uniform_tensor(std::vector<std::size_t> shape, double bound, std::mt19937_64& rng) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(-bound, bound);
    for (double& v : t.data) v = d(rng);
    return t;
}

LinearP make_linear(std::size_t dout, std::size_t din, std::mt19937_64& rng) {
    const double a = 1.0 / std::sqrt(static_cast<double>(din));
    LinearP lp;
    lp.w = Param(uniform_tensor({dout, din}, a, rng));
    lp.b = Param(uniform_tensor({dout}, a, rng));
    return lp;
}

ConvP make_conv(std::size_t co, std::size_t ci, std::size_t k, std::mt19937_64& rng) {
    const double a = 1.0 / std::sqrt(static_cast<double>(ci * k * k));
    ConvP cp;
    cp.w = Param(uniform_tensor({co, ci, k, k}, a, rng));
    cp.b = Param(uniform_tensor({co}, a, rng));
    return cp;
}

// gpre is the gradient at the affine output; accumulates into lp and g_in.
void linear_backward(LinearP& lp, const double* vin, const double* gpre,
                     std::size_t dout, std::size_t din, double* g_in) {
    for (std::size_t r = 0; r < dout; ++r) {
        const double g = gpre[r];
        lp.b.g[r] += g;
        double* gw = lp.w.g.ptr() + r * din;
        const double* w = lp.w.v.ptr() + r * din;
        for (std::size_t c = 0; c < din; ++c) {
            gw[c] += g * vin[c];
            if (g_in) g_in[c] += g * w[c];
        }
    }
}

std::vector<double> linear_fwd(const LinearP& lp, const double* vin, OpCount* tally) {
    const std::size_t dout = lp.w.v.shape[0];
    const std::size_t din = lp.w.v.shape[1];
    std::vector<double> y(dout);
    for (std::size_t r = 0; r < dout; ++r) {
        const double* w = lp.w.v.ptr() + r * din;
        double acc = lp.b.v[r];
        for (std::size_t c = 0; c < din; ++c) acc += w[c] * vin[c];
        y[r] = acc;
    }
    if (tally) {
        tally->mul += static_cast<double>(dout) * din;
        tally->add += static_cast<double>(dout) * din;
    }
    return y;
}

void sigmoid_inplace(std::vector<double>& v) {
    for (double& t : v) t = sigmoid_scalar(t);
}

} // namespace

// --- KernelParam --------------------------------------------------------------

Tensor KernelParam::materialize(OpCount* tally) const {
    if (!lowrank) return dense.v;
    Tensor w = expand_component(coef1.v, nav1.v, tally);
    Tensor w2 = expand_component(coef2.v, nav2.v, tally);
    for (std::size_t t = 0; t < w.numel(); ++t) w[t] += w2[t];
    if (tally) tally->add += static_cast<double>(w.numel());
    return w;
}

void KernelParam::accumulate_grad(const Tensor& gk) {
    if (!lowrank) {
        for (std::size_t t = 0; t < gk.numel(); ++t) dense.g[t] += gk[t];
        return;
    }
    const std::size_t co = coef1.v.shape[0];
    const std::size_t ci = coef1.v.shape[1];
    const std::size_t kk = nav1.v.shape[2] * nav1.v.shape[3];
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < ci; ++i) {
            const double* g = gk.ptr() + (o * ci + i) * kk;
            const double* n1 = nav1.v.ptr() + i * kk;
            const double* n2 = nav2.v.ptr() + i * kk;
            double* gn1 = nav1.g.ptr() + i * kk;
            double* gn2 = nav2.g.ptr() + i * kk;
            const double l1 = coef1.v.at2(o, i);
            const double l2 = coef2.v.at2(o, i);
            double acc1 = 0.0, acc2 = 0.0;
            for (std::size_t t = 0; t < kk; ++t) {
                acc1 += g[t] * n1[t];
                acc2 += g[t] * n2[t];
                gn1[t] += g[t] * l1;
                gn2[t] += g[t] * l2;
            }
            coef1.g.at2(o, i) += acc1;
            coef2.g.at2(o, i) += acc2;
        }
}

std::size_t KernelParam::weight_param_count() const {
    if (!lowrank)
        return dense.v.numel() + bias.v.numel();
    return nav1.v.numel() + nav2.v.numel() + coef1.v.numel() + coef2.v.numel() +
           bias.v.numel();
}

// --- parameter construction ----------------------------------------------------

BiMACParams make_bimac_params(std::size_t c_in, std::size_t c_out, const BiMACOptions& opt,
                              std::uint64_t seed) {
    BiMACParams p;
    p.c_in = c_in;
    p.c_out = c_out;
    p.k = opt.k;
    p.embed_r = opt.embed_r ? opt.embed_r : std::max<std::size_t>(c_in / 2, 8);
    p.bias_mid = opt.bias_mid;
    p.alpha = opt.alpha;
    p.use_camg = opt.use_camg;
    p.mask_mode = opt.mask_mode;
    p.random_fraction = opt.random_fraction;
    p.mask_seed = seed ^ 0xb1acb1ac5eedULL;

    std::mt19937_64 rng(seed);
    if (p.use_camg) p.camg = make_conv(c_in, c_in, opt.camg_k, rng);
    p.h_ci = make_linear(c_in, c_in, rng);
    p.h_co = make_linear(c_out, c_in, rng);
    p.h_kk = make_linear(opt.k * opt.k, c_in, rng);
    p.fc1 = make_linear(p.embed_r, c_in, rng);
    p.fc2 = make_linear(p.embed_r, p.embed_r, rng);
    p.g_ci = make_linear(c_in, p.embed_r, rng);
    p.g_co = make_linear(c_out, p.embed_r, rng);
    p.g_kk = make_linear(opt.k * opt.k, p.embed_r, rng);

    auto make_kernel = [&](std::uint64_t kseed) {
        auto kp = std::make_shared<KernelParam>();
        kp->lowrank = opt.lowrank;
        if (opt.lowrank) {
            LowRankKernel lk = make_lowrank_kernel(c_out, c_in, opt.k, kseed);
            kp->nav1 = Param(std::move(lk.nav1));
            kp->coef1 = Param(std::move(lk.coef1));
            kp->nav2 = Param(std::move(lk.nav2));
            kp->coef2 = Param(std::move(lk.coef2));
            kp->bias = Param(std::move(lk.bias));
        } else {
            std::mt19937_64 krng(kseed);
            const double a = 1.0 / std::sqrt(static_cast<double>(c_in * opt.k * opt.k));
            kp->dense = Param(uniform_tensor({c_out, c_in, opt.k, opt.k}, a, krng));
            kp->bias = Param(Tensor({c_out}));
        }
        return kp;
    };
    p.w0 = make_kernel(rng());
    p.w1 = opt.share_kernels ? p.w0 : make_kernel(rng());

    p.bb1 = make_conv(opt.bias_mid, c_in, 3, rng);
    p.bb2 = make_conv(opt.bias_mid, opt.bias_mid, 3, rng);
    p.bb3 = make_conv(c_out, opt.bias_mid, 3, rng);
    return p;
}

void BiMACParams::zero_grad() {
    auto zp = [](Param& q) {
        if (!q.v.empty()) q.zero_grad();
    };
    zp(camg.w); zp(camg.b);
    for (LinearP* lp : {&h_ci, &h_co, &h_kk, &fc1, &fc2, &g_ci, &g_co, &g_kk}) {
        zp(lp->w);
        zp(lp->b);
    }
    for (auto& kp : {w0, w1}) {
        zp(kp->nav1); zp(kp->coef1); zp(kp->nav2); zp(kp->coef2);
        zp(kp->dense); zp(kp->bias);
    }
    zp(bb1.w); zp(bb1.b); zp(bb2.w); zp(bb2.b); zp(bb3.w); zp(bb3.b);
}

// --- stand-alone pieces ---------------------------------------------------------

ModulationWeights compact_weights(const Tensor& v, const BiMACParams& p, FlopsReport* t) {
    if (v.rank() != 1 || v.shape[0] != p.c_in)
        throw DimensionError("compact_weights: v must be (C_in)");
    OpCount* oc = t ? &t->compact_heads : nullptr;
    ModulationWeights m;
    m.w_ci = sigmoid(linear(v, p.h_ci.w.v, p.h_ci.b.v, oc));
    m.w_co = sigmoid(linear(v, p.h_co.w.v, p.h_co.b.v, oc));
    Tensor kkv = sigmoid(linear(v, p.h_kk.w.v, p.h_kk.b.v, oc));
    m.w_kk = Tensor({p.k, p.k});
    m.w_kk.data = std::move(kkv.data);
    return m;
}

ModulationWeights focused_weights(const Tensor& c_ij, const BiMACParams& p, FlopsReport* t) {
    if (c_ij.rank() != 1 || c_ij.shape[0] != p.c_in)
        throw DimensionError("focused_weights: channel vector must be (C_in)");
    OpCount* oe = t ? &t->focused_embed : nullptr;
    OpCount* oh = t ? &t->focused_heads : nullptr;
    std::vector<double> h1 = linear_fwd(p.fc1, c_ij.ptr(), oe);
    for (double& v : h1) v = v > 0.0 ? v : 0.0;
    std::vector<double> h2 = linear_fwd(p.fc2, h1.data(), oe);
    for (double& v : h2) v = v > 0.0 ? v : 0.0;
    std::vector<double> mci = linear_fwd(p.g_ci, h2.data(), oh);
    std::vector<double> mco = linear_fwd(p.g_co, h2.data(), oh);
    std::vector<double> mkk = linear_fwd(p.g_kk, h2.data(), oh);
    sigmoid_inplace(mci);
    sigmoid_inplace(mco);
    sigmoid_inplace(mkk);
    ModulationWeights m;
    m.w_ci = Tensor({p.c_in});
    m.w_ci.data = std::move(mci);
    m.w_co = Tensor({p.c_out});
    m.w_co.data = std::move(mco);
    m.w_kk = Tensor({p.k, p.k});
    m.w_kk.data = std::move(mkk);
    return m;
}

Tensor modulate_kernel(const Tensor& w_base, const ModulationWeights& m, OpCount* tally) {
    if (w_base.rank() != 4 || m.w_co.shape[0] != w_base.shape[0] ||
        m.w_ci.shape[0] != w_base.shape[1] || m.w_kk.numel() != w_base.shape[2] * w_base.shape[3])
        throw DimensionError("modulate_kernel: weight shapes inconsistent with base " +
                             shape_str(w_base));
    const std::size_t co = w_base.shape[0];
    const std::size_t ci = w_base.shape[1];
    const std::size_t kk = w_base.shape[2] * w_base.shape[3];
    Tensor w = w_base;
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t c = 0; c < ci; ++c) {
            const double s = m.w_co[o] * m.w_ci[c];
            double* row = w.ptr() + (o * ci + c) * kk;
            for (std::size_t t = 0; t < kk; ++t) row[t] *= s * m.w_kk[t];
        }
    if (tally) tally->mul += static_cast<double>(co) * ci * (1 + 2 * kk);
    return w;
}

Tensor bias_block(const Tensor& x, const BiMACParams& p, FlopsReport* t) {
    OpCount* oc = t ? &t->bias_block : nullptr;
    Tensor a = relu(conv2d(x, p.bb1.w.v, p.bb1.b.v, 1, oc));
    Tensor b = relu(conv2d(a, p.bb2.w.v, p.bb2.b.v, 1, oc));
    return conv2d(b, p.bb3.w.v, p.bb3.b.v, 1, oc);
}

// --- routing -------------------------------------------------------------------

namespace {

Tensor seeded_random_mask(std::size_t h, std::size_t w, double fraction,
                          std::uint64_t seed) {
    const std::size_t hw = h * w;
    const std::size_t ones =
        static_cast<std::size_t>(std::llround(fraction * static_cast<double>(hw)));
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (h * 8191 + w)));
    std::vector<std::size_t> idx(hw);
    for (std::size_t i = 0; i < hw; ++i) idx[i] = i;
    Tensor hm({1, h, w});
    for (std::size_t t = 0; t < ones && t < hw; ++t) {
        std::uniform_int_distribution<std::size_t> pick(t, hw - 1);
        std::swap(idx[t], idx[pick(rng)]);
        hm[idx[t]] = 1.0;
    }
    return hm;
}

} // namespace

// --- forward ---------------------------------------------------------------------

Tensor bimac_forward_cached(const Tensor& x, const BiMACParams& p, BiMacCache& cc,
                            FlopsReport* t, const Tensor* forced_hm) {
    if (x.rank() != 3 || x.shape[0] != p.c_in)
        throw DimensionError("bimac_forward: x must be (C_in,H,W), got " + shape_str(x));
    const std::size_t h = x.shape[1];
    const std::size_t w = x.shape[2];
    const std::size_t hw = h * w;
    const std::size_t k = p.k;
    const std::size_t kk = k * k;
    const int pad = static_cast<int>(k - 1) / 2;
    const double inf = std::numeric_limits<double>::infinity();

    cc = BiMacCache{};
    cc.x = x;

    // 1. soft mask, modulation, routing statistics
    if (p.use_camg) {
        CamgParams cp{p.camg.w.v, p.camg.b.v, p.alpha};
        cc.mask = camg_forward(x, cp, t ? &t->camg : nullptr);
    } else {
        cc.mask.x_mod = x;
        cc.mask.alpha = p.alpha;
        cc.mask.mu = cc.mask.sigma_s = cc.mask.T = std::numeric_limits<double>::quiet_NaN();
    }
    switch (p.mask_mode) {
        case MaskMode::camg:
            if (!p.use_camg)
                throw ConfigError("bimac_forward: camg routing requires the mask generator");
            break;
        case MaskMode::all_compact:
            cc.mask.T = inf;
            cc.mask.hm = Tensor({1, h, w});
            break;
        case MaskMode::all_focused:
            cc.mask.T = -inf;
            cc.mask.hm = Tensor({1, h, w}, 1.0);
            break;
        case MaskMode::seeded_random:
            cc.mask.hm = seeded_random_mask(h, w, p.random_fraction, p.mask_seed);
            break;
    }
    if (forced_hm) {
        if (forced_hm->rank() != 3 || forced_hm->shape[1] != h || forced_hm->shape[2] != w)
            throw DimensionError("bimac_forward: forced mask must be (1,H,W)");
        cc.mask.hm = *forced_hm;
    }
    std::size_t ones = 0;
    for (double v : cc.mask.hm.data)
        if (v != 0.0) ++ones;
    cc.mask.focused_fraction = static_cast<double>(ones) / static_cast<double>(hw);

    cc.compact_pos.reserve(hw - ones);
    cc.focused_pos.reserve(ones);
    for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < w; ++j) {
            const Position pos{static_cast<int>(i), static_cast<int>(j)};
            if (cc.mask.hm[i * w + j] != 0.0)
                cc.focused_pos.push_back(pos);
            else
                cc.compact_pos.push_back(pos);
        }

    const Tensor& xm = cc.mask.x_mod;
    Tensor y({p.c_out, h, w});

    // 2. compact branch: one globally modulated kernel over the HM==0 pixels
    if (!cc.compact_pos.empty()) {
        cc.compact_active = true;
        Tensor keep({1, h, w});
        for (std::size_t q = 0; q < hw; ++q) keep[q] = cc.mask.hm[q] == 0.0 ? 1.0 : 0.0;
        cc.v = masked_gap(xm, keep, t ? &t->compact_gap : nullptr);
        cc.gap_count = cc.compact_pos.size();
        cc.cw = compact_weights(cc.v, p, t);
        cc.w0_base = p.w0->materialize(t ? &t->lowrank_expand : nullptr);
        cc.w0_mod = modulate_kernel(cc.w0_base, cc.cw, t ? &t->compact_heads : nullptr);
        if (!t && 2 * cc.compact_pos.size() >= hw) {
            // dense evaluation then selection; bit-identical to the
            // position-wise path and much faster when most pixels are compact
            Tensor dense = conv2d(xm, cc.w0_mod, p.w0->bias.v, pad);
            for (const Position& pos : cc.compact_pos)
                for (std::size_t o = 0; o < p.c_out; ++o)
                    y.at3(o, pos.i, pos.j) = dense.at3(o, pos.i, pos.j);
        } else {
            conv2d_at_into(xm, cc.w0_mod, p.w0->bias.v, pad, cc.compact_pos, y,
                           t ? &t->compact_conv : nullptr);
        }
    }

    // 3. focused branch: per-pixel modulated kernels over the HM==1 pixels
    if (!cc.focused_pos.empty()) {
        cc.focused_active = true;
        cc.w1_base = p.w1->materialize(t ? &t->lowrank_expand : nullptr);
        cc.fpix.reserve(cc.focused_pos.size());
        std::vector<double> cvec(p.c_in), patchmod(p.c_in * kk);
        for (const Position& pos : cc.focused_pos) {
            FocusedPixCache fc;
            fc.i = pos.i;
            fc.j = pos.j;
            for (std::size_t c = 0; c < p.c_in; ++c) cvec[c] = xm.at3(c, pos.i, pos.j);
            fc.h1p = linear_fwd(p.fc1, cvec.data(), t ? &t->focused_embed : nullptr);
            std::vector<double> h1 = fc.h1p;
            for (double& q : h1) q = q > 0.0 ? q : 0.0;
            fc.h2p = linear_fwd(p.fc2, h1.data(), t ? &t->focused_embed : nullptr);
            std::vector<double> h2 = fc.h2p;
            for (double& q : h2) q = q > 0.0 ? q : 0.0;
            fc.mci = linear_fwd(p.g_ci, h2.data(), t ? &t->focused_heads : nullptr);
            fc.mco = linear_fwd(p.g_co, h2.data(), t ? &t->focused_heads : nullptr);
            fc.mkk = linear_fwd(p.g_kk, h2.data(), t ? &t->focused_heads : nullptr);
            sigmoid_inplace(fc.mci);
            sigmoid_inplace(fc.mco);
            sigmoid_inplace(fc.mkk);

            // modulated patch: X'(c,u,v) * w_ci[c] * w_kk[u,v]; zero padding
            std::fill(patchmod.begin(), patchmod.end(), 0.0);
            for (std::size_t c = 0; c < p.c_in; ++c)
                for (std::size_t u = 0; u < k; ++u) {
                    const int yy = pos.i + static_cast<int>(u) - pad;
                    if (yy < 0 || yy >= static_cast<int>(h)) continue;
                    for (std::size_t v = 0; v < k; ++v) {
                        const int zz = pos.j + static_cast<int>(v) - pad;
                        if (zz < 0 || zz >= static_cast<int>(w)) continue;
                        patchmod[(c * k + u) * k + v] =
                            xm.at3(c, yy, zz) * fc.mci[c] * fc.mkk[u * k + v];
                    }
                }
            fc.dotf.resize(p.c_out);
            const std::size_t cikk = p.c_in * kk;
            for (std::size_t o = 0; o < p.c_out; ++o) {
                const double* wrow = cc.w1_base.ptr() + o * cikk;
                double acc = 0.0;
                for (std::size_t q = 0; q < cikk; ++q) acc += patchmod[q] * wrow[q];
                fc.dotf[o] = acc;
                y.at3(o, pos.i, pos.j) = fc.mco[o] * acc + p.w1->bias.v[o];
            }
            if (t) {
                t->focused_heads.mul += static_cast<double>(2 * cikk + p.c_out);
                t->focused_conv.mul += static_cast<double>(p.c_out) * cikk;
                t->focused_conv.add += static_cast<double>(p.c_out) * cikk;
            }
            cc.fpix.push_back(std::move(fc));
        }
    }

    // 4. smoothing bias from the original input
    cc.bb1p = conv2d(x, p.bb1.w.v, p.bb1.b.v, 1, t ? &t->bias_block : nullptr);
    Tensor a = relu(cc.bb1p);
    cc.bb2p = conv2d(a, p.bb2.w.v, p.bb2.b.v, 1, t ? &t->bias_block : nullptr);
    Tensor b2 = relu(cc.bb2p);
    Tensor bias = conv2d(b2, p.bb3.w.v, p.bb3.b.v, 1, t ? &t->bias_block : nullptr);
    for (std::size_t q = 0; q < y.numel(); ++q) y[q] += bias[q];
    if (t) t->bias_block.add += static_cast<double>(y.numel());

    require_finite(y, "bimac_forward");
    return y;
}

std::pair<Tensor, MaskPair> bimac_forward(const Tensor& x, const BiMACParams& p) {
    BiMacCache cc;
    Tensor y = bimac_forward_cached(x, p, cc);
    return {std::move(y), std::move(cc.mask)};
}

// --- backward ----------------------------------------------------------------------

void conv2d_backward(const Tensor& x, const Tensor& w, int pad, const Tensor& g_y,
                     Tensor& gw, Tensor& gb, Tensor* gx) {
    const std::size_t ci = x.shape[0];
    const std::size_t h = x.shape[1];
    const std::size_t wd = x.shape[2];
    const std::size_t co = w.shape[0];
    const std::size_t k = w.shape[2];
    for (std::size_t o = 0; o < co; ++o) {
        const double* gyo = g_y.ptr() + o * h * wd;
        double acc_b = 0.0;
        for (std::size_t q = 0; q < h * wd; ++q) acc_b += gyo[q];
        gb[o] += acc_b;
    }
    // weight gradient: one shifted-plane dot product per tap
    for (std::size_t o = 0; o < co; ++o) {
        const double* gyo = g_y.ptr() + o * h * wd;
        for (std::size_t c = 0; c < ci; ++c) {
            const double* xc = x.ptr() + c * h * wd;
            double* gwoc = gw.ptr() + (o * ci + c) * k * k;
            for (std::size_t u = 0; u < k; ++u)
                for (std::size_t v = 0; v < k; ++v) {
                    const int di = static_cast<int>(u) - pad;
                    const int dj = static_cast<int>(v) - pad;
                    const int imin = std::max(0, -di);
                    const int imax =
                        std::min<int>(static_cast<int>(h), static_cast<int>(h) - di);
                    const int jmin = std::max(0, -dj);
                    const int jmax =
                        std::min<int>(static_cast<int>(wd), static_cast<int>(wd) - dj);
                    // four fixed-order partial sums so the reduction vectorizes
                    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                    for (int i = imin; i < imax; ++i) {
                        const double* gyr = gyo + static_cast<std::size_t>(i) * wd;
                        const double* xr = xc + static_cast<std::size_t>(i + di) * wd + dj;
                        int j = jmin;
                        for (; j + 4 <= jmax; j += 4) {
                            a0 += gyr[j] * xr[j];
                            a1 += gyr[j + 1] * xr[j + 1];
                            a2 += gyr[j + 2] * xr[j + 2];
                            a3 += gyr[j + 3] * xr[j + 3];
                        }
                        for (; j < jmax; ++j) a0 += gyr[j] * xr[j];
                    }
                    gwoc[u * k + v] += (a0 + a1) + (a2 + a3);
                }
        }
    }
    if (!gx) return;
    // input gradient: transposed shift-and-accumulate
    for (std::size_t o = 0; o < co; ++o) {
        const double* gyo = g_y.ptr() + o * h * wd;
        for (std::size_t c = 0; c < ci; ++c) {
            double* gxc = gx->ptr() + c * h * wd;
            const double* woc = w.ptr() + (o * ci + c) * k * k;
            for (std::size_t u = 0; u < k; ++u)
                for (std::size_t v = 0; v < k; ++v) {
                    const double wv = woc[u * k + v];
                    const int di = static_cast<int>(u) - pad;
                    const int dj = static_cast<int>(v) - pad;
                    const int imin = std::max(0, -di);
                    const int imax =
                        std::min<int>(static_cast<int>(h), static_cast<int>(h) - di);
                    const int jmin = std::max(0, -dj);
                    const int jmax =
                        std::min<int>(static_cast<int>(wd), static_cast<int>(wd) - dj);
                    for (int i = imin; i < imax; ++i) {
                        double* __restrict gxr = gxc + static_cast<std::size_t>(i + di) * wd + dj;
                        const double* __restrict gyr = gyo + static_cast<std::size_t>(i) * wd;
                        for (int j = jmin; j < jmax; ++j) gxr[j] += wv * gyr[j];
                    }
                }
        }
    }
}

namespace {

// d(sigmoid)/dpre expressed through the post-activation value
inline double dsig(double s) { return s * (1.0 - s); }

} // namespace

Tensor bimac_backward(const Tensor& g_y, BiMACParams& p, const BiMacCache& cc) {
    const Tensor& x = cc.x;
    if (x.empty()) throw StateError("bimac_backward: forward cache missing");
    const std::size_t h = x.shape[1];
    const std::size_t w = x.shape[2];
    const std::size_t k = p.k;
    const std::size_t kk = k * k;
    const int pad = static_cast<int>(k - 1) / 2;
    const Tensor& xm = cc.mask.x_mod;

    Tensor gx({p.c_in, h, w});
    Tensor gxm({p.c_in, h, w});

    // bias block
    {
        Tensor a = relu(cc.bb1p);
        Tensor b2 = relu(cc.bb2p);
        Tensor gb2({p.bias_mid, h, w});
        conv2d_backward(b2, p.bb3.w.v, 1, g_y, p.bb3.w.g, p.bb3.b.g, &gb2);
        for (std::size_t q = 0; q < gb2.numel(); ++q)
            if (cc.bb2p[q] <= 0.0) gb2[q] = 0.0;
        Tensor ga({p.bias_mid, h, w});
        conv2d_backward(a, p.bb2.w.v, 1, gb2, p.bb2.w.g, p.bb2.b.g, &ga);
        for (std::size_t q = 0; q < ga.numel(); ++q)
            if (cc.bb1p[q] <= 0.0) ga[q] = 0.0;
        conv2d_backward(x, p.bb1.w.v, 1, ga, p.bb1.w.g, p.bb1.b.g, &gx);
    }

    // focused branch
    if (cc.focused_active) {
        const std::size_t r = p.embed_r;
        const std::size_t cikk = p.c_in * kk;
        Tensor gw1({p.c_out, p.c_in, k, k});
        std::vector<double> patch(cikk), patchmod(cikk), dpm(cikk);
        std::vector<double> gmci(p.c_in), gmco(p.c_out), gmkk(kk), gdot(p.c_out);
        std::vector<double> gh2(r), gh1(r), gcvec(p.c_in), cvec(p.c_in);
        for (const FocusedPixCache& fc : cc.fpix) {
            // rebuild the raw and modulated patches from the cached weights
            std::fill(patch.begin(), patch.end(), 0.0);
            std::fill(patchmod.begin(), patchmod.end(), 0.0);
            for (std::size_t c = 0; c < p.c_in; ++c)
                for (std::size_t u = 0; u < k; ++u) {
                    const int yy = fc.i + static_cast<int>(u) - pad;
                    if (yy < 0 || yy >= static_cast<int>(h)) continue;
                    for (std::size_t v = 0; v < k; ++v) {
                        const int zz = fc.j + static_cast<int>(v) - pad;
                        if (zz < 0 || zz >= static_cast<int>(w)) continue;
                        const std::size_t q = (c * k + u) * k + v;
                        patch[q] = xm.at3(c, yy, zz);
                        patchmod[q] = patch[q] * fc.mci[c] * fc.mkk[u * k + v];
                    }
                }
            std::fill(dpm.begin(), dpm.end(), 0.0);
            for (std::size_t o = 0; o < p.c_out; ++o) {
                const double g = g_y.at3(o, fc.i, fc.j);
                p.w1->bias.g[o] += g;
                gmco[o] = g * fc.dotf[o];
                gdot[o] = g * fc.mco[o];
                const double* wrow = cc.w1_base.ptr() + o * cikk;
                double* gwrow = gw1.ptr() + o * cikk;
                const double gd = gdot[o];
                for (std::size_t q = 0; q < cikk; ++q) {
                    gwrow[q] += gd * patchmod[q];
                    dpm[q] += gd * wrow[q];
                }
            }
            // patch gradient and modulation-weight gradients
            std::fill(gmci.begin(), gmci.end(), 0.0);
            std::fill(gmkk.begin(), gmkk.end(), 0.0);
            for (std::size_t c = 0; c < p.c_in; ++c)
                for (std::size_t u = 0; u < k; ++u) {
                    const int yy = fc.i + static_cast<int>(u) - pad;
                    if (yy < 0 || yy >= static_cast<int>(h)) continue;
                    for (std::size_t v = 0; v < k; ++v) {
                        const int zz = fc.j + static_cast<int>(v) - pad;
                        if (zz < 0 || zz >= static_cast<int>(w)) continue;
                        const std::size_t q = (c * k + u) * k + v;
                        gxm.at3(c, yy, zz) += dpm[q] * fc.mci[c] * fc.mkk[u * k + v];
                        gmci[c] += dpm[q] * patch[q] * fc.mkk[u * k + v];
                        gmkk[u * k + v] += dpm[q] * patch[q] * fc.mci[c];
                    }
                }
            // heads, embedding, and the channel-vector read
            std::fill(gh2.begin(), gh2.end(), 0.0);
            std::vector<double> h1 = fc.h1p, h2 = fc.h2p;
            for (double& q : h1) q = q > 0.0 ? q : 0.0;
            for (double& q : h2) q = q > 0.0 ? q : 0.0;
            for (std::size_t c = 0; c < p.c_in; ++c) gmci[c] *= dsig(fc.mci[c]);
            for (std::size_t o = 0; o < p.c_out; ++o) gmco[o] *= dsig(fc.mco[o]);
            for (std::size_t q = 0; q < kk; ++q) gmkk[q] *= dsig(fc.mkk[q]);
            linear_backward(p.g_ci, h2.data(), gmci.data(), p.c_in, r, gh2.data());
            linear_backward(p.g_co, h2.data(), gmco.data(), p.c_out, r, gh2.data());
            linear_backward(p.g_kk, h2.data(), gmkk.data(), kk, r, gh2.data());
            for (std::size_t q = 0; q < r; ++q)
                if (fc.h2p[q] <= 0.0) gh2[q] = 0.0;
            std::fill(gh1.begin(), gh1.end(), 0.0);
            linear_backward(p.fc2, h1.data(), gh2.data(), r, r, gh1.data());
            for (std::size_t q = 0; q < r; ++q)
                if (fc.h1p[q] <= 0.0) gh1[q] = 0.0;
            for (std::size_t c = 0; c < p.c_in; ++c) cvec[c] = xm.at3(c, fc.i, fc.j);
            std::fill(gcvec.begin(), gcvec.end(), 0.0);
            linear_backward(p.fc1, cvec.data(), gh1.data(), r, p.c_in, gcvec.data());
            for (std::size_t c = 0; c < p.c_in; ++c) gxm.at3(c, fc.i, fc.j) += gcvec[c];
        }
        p.w1->accumulate_grad(gw1);
    }

    // compact branch: restrict the output gradient to the compact pixels, then
    // the dense convolution adjoint applies (masked-out terms contribute 0)
    if (cc.compact_active) {
        Tensor gyc({p.c_out, h, w});
        for (const Position& pos : cc.compact_pos)
            for (std::size_t o = 0; o < p.c_out; ++o)
                gyc.at3(o, pos.i, pos.j) = g_y.at3(o, pos.i, pos.j);
        Tensor gw0m({p.c_out, p.c_in, k, k});
        conv2d_backward(xm, cc.w0_mod, pad, gyc, gw0m, p.w0->bias.g, &gxm);
        // through the kernel modulation
        Tensor gw0base({p.c_out, p.c_in, k, k});
        Tensor gwci({p.c_in}), gwco({p.c_out}), gwkk({kk});
        for (std::size_t o = 0; o < p.c_out; ++o)
            for (std::size_t c = 0; c < p.c_in; ++c) {
                const double oc = cc.cw.w_co[o] * cc.cw.w_ci[c];
                const std::size_t base = (o * p.c_in + c) * kk;
                for (std::size_t q = 0; q < kk; ++q) {
                    const double gm = gw0m[base + q];
                    const double wb = cc.w0_base[base + q];
                    gw0base[base + q] = gm * oc * cc.cw.w_kk[q];
                    gwco[o] += gm * wb * cc.cw.w_ci[c] * cc.cw.w_kk[q];
                    gwci[c] += gm * wb * cc.cw.w_co[o] * cc.cw.w_kk[q];
                    gwkk[q] += gm * wb * oc;
                }
            }
        p.w0->accumulate_grad(gw0base);
        // heads back to the pooled vector
        Tensor gv({p.c_in});
        for (std::size_t c = 0; c < p.c_in; ++c) gwci[c] *= dsig(cc.cw.w_ci[c]);
        for (std::size_t o = 0; o < p.c_out; ++o) gwco[o] *= dsig(cc.cw.w_co[o]);
        for (std::size_t q = 0; q < kk; ++q) gwkk[q] *= dsig(cc.cw.w_kk[q]);
        linear_backward(p.h_ci, cc.v.ptr(), gwci.ptr(), p.c_in, p.c_in, gv.ptr());
        linear_backward(p.h_co, cc.v.ptr(), gwco.ptr(), p.c_out, p.c_in, gv.ptr());
        linear_backward(p.h_kk, cc.v.ptr(), gwkk.ptr(), kk, p.c_in, gv.ptr());
        // GAP spreads the vector gradient uniformly over the pooled pixels
        const double inv = 1.0 / static_cast<double>(cc.gap_count);
        for (const Position& pos : cc.compact_pos)
            for (std::size_t c = 0; c < p.c_in; ++c)
                gxm.at3(c, pos.i, pos.j) += gv[c] * inv;
    }

    // mask generator
    if (p.use_camg) {
        const Tensor& sm = cc.mask.sm;
        Tensor gz({p.c_in, h, w});
        for (std::size_t q = 0; q < gz.numel(); ++q) {
            gx[q] += gxm[q] * sm[q];
            gz[q] = gxm[q] * x[q] * dsig(sm[q]);
        }
        const int cpad = static_cast<int>(p.camg.w.v.shape[2] - 1) / 2;
        conv2d_backward(x, p.camg.w.v, cpad, gz, p.camg.w.g, p.camg.b.g, &gx);
    } else {
        for (std::size_t q = 0; q < gx.numel(); ++q) gx[q] += gxm[q];
    }
    return gx;
}

} // namespace bimac
