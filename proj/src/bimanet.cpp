#include "bimac/bimanet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <unordered_map>
#include <unordered_set>

#include "bimac/tensor_io.hpp"

namespace bimac {

Ablation ablation_from_string(const std::string& s) {
    if (s == "full") return Ablation::full;
    if (s == "no_focused") return Ablation::no_focused;
    if (s == "no_compact") return Ablation::no_compact;
    if (s == "no_camg") return Ablation::no_camg;
    if (s == "no_lrk") return Ablation::no_lrk;
    if (s == "shared_weights") return Ablation::shared_weights;
    throw ConfigError("unknown ablation variant: " + s);
}

std::string ablation_to_string(Ablation a) {
    switch (a) {
        case Ablation::full: return "full";
        case Ablation::no_focused: return "no_focused";
        case Ablation::no_compact: return "no_compact";
        case Ablation::no_camg: return "no_camg";
        case Ablation::no_lrk: return "no_lrk";
        case Ablation::shared_weights: return "shared_weights";
    }
    return "full";
}

// --- resampling helpers ---------------------------------------------------------

namespace {

// Catmull-Rom kernel (a = -0.5)
double cubic_weight(double d) {
    d = std::fabs(d);
    if (d <= 1.0) return (1.5 * d - 2.5) * d * d + 1.0;
    if (d < 2.0) return ((-0.5 * d + 2.5) * d - 4.0) * d + 2.0;
    return 0.0;
}

struct TapPlan {
    std::vector<int> base;      // leftmost source index per output position
    std::vector<double> weight; // 4 weights per output position
};

TapPlan plan_cubic(std::size_t n_in, std::size_t n_out, std::size_t factor) {
    TapPlan plan;
    plan.base.resize(n_out);
    plan.weight.resize(n_out * 4);
    for (std::size_t o = 0; o < n_out; ++o) {
        const double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
        const int i0 = static_cast<int>(std::floor(src)) - 1;
        plan.base[o] = i0;
        for (int m = 0; m < 4; ++m)
            plan.weight[o * 4 + m] = cubic_weight(src - static_cast<double>(i0 + m));
        (void)n_in;
    }
    return plan;
}

inline int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

} // namespace

Tensor upsample_bicubic(const Tensor& x, std::size_t factor) {
    if (x.rank() != 3) throw DimensionError("upsample_bicubic: x must be (C,h,w)");
    const std::size_t c = x.shape[0];
    const std::size_t h = x.shape[1];
    const std::size_t w = x.shape[2];
    const std::size_t H = h * factor;
    const std::size_t W = w * factor;
    const TapPlan px = plan_cubic(w, W, factor);
    const TapPlan py = plan_cubic(h, H, factor);
    Tensor rows({c, h, W});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < h; ++i) {
            const double* src = x.ptr() + (ch * h + i) * w;
            double* dst = rows.ptr() + (ch * h + i) * W;
            for (std::size_t j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int m = 0; m < 4; ++m) {
                    const int s = clampi(px.base[j] + m, 0, static_cast<int>(w) - 1);
                    acc += px.weight[j * 4 + m] * src[s];
                }
                dst[j] = acc;
            }
        }
    Tensor out({c, H, W});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < H; ++i) {
            double* dst = out.ptr() + (ch * H + i) * W;
            for (std::size_t j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int m = 0; m < 4; ++m) {
                    const int s = clampi(py.base[i] + m, 0, static_cast<int>(h) - 1);
                    acc += py.weight[i * 4 + m] * rows.at3(ch, s, j);
                }
                dst[j] = acc + 0.0; // normalizes -0.0 so injection stays bitwise
            }
        }
    return out;
}

// --- plumbing convolutions --------------------------------------------------------

namespace {

Tensor conv_stride2(const Tensor& x, const ConvP& p) {
    const std::size_t ci = x.shape[0];
    const std::size_t h = x.shape[1];
    const std::size_t w = x.shape[2];
    const std::size_t co = p.w.v.shape[0];
    const std::size_t k = p.w.v.shape[2];
    const int pad = static_cast<int>(k - 1) / 2;
    Tensor y({co, h / 2, w / 2});
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t I = 0; I < h / 2; ++I)
            for (std::size_t J = 0; J < w / 2; ++J) {
                double acc = p.b.v[o];
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t u = 0; u < k; ++u) {
                        const int yy = static_cast<int>(2 * I + u) - pad;
                        if (yy < 0 || yy >= static_cast<int>(h)) continue;
                        for (std::size_t v = 0; v < k; ++v) {
                            const int zz = static_cast<int>(2 * J + v) - pad;
                            if (zz < 0 || zz >= static_cast<int>(w)) continue;
                            acc += x.at3(c, yy, zz) * p.w.v.at4(o, c, u, v);
                        }
                    }
                y.at3(o, I, J) = acc;
            }
    return y;
}

Tensor conv_stride2_backward(const Tensor& x, ConvP& p, const Tensor& g_y) {
    const std::size_t ci = x.shape[0];
    const std::size_t h = x.shape[1];
    const std::size_t w = x.shape[2];
    const std::size_t co = p.w.v.shape[0];
    const std::size_t k = p.w.v.shape[2];
    const int pad = static_cast<int>(k - 1) / 2;
    Tensor gx({ci, h, w});
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t I = 0; I < h / 2; ++I)
            for (std::size_t J = 0; J < w / 2; ++J) {
                const double g = g_y.at3(o, I, J);
                p.b.g[o] += g;
                if (g == 0.0) continue;
                for (std::size_t c = 0; c < ci; ++c)
                    for (std::size_t u = 0; u < k; ++u) {
                        const int yy = static_cast<int>(2 * I + u) - pad;
                        if (yy < 0 || yy >= static_cast<int>(h)) continue;
                        for (std::size_t v = 0; v < k; ++v) {
                            const int zz = static_cast<int>(2 * J + v) - pad;
                            if (zz < 0 || zz >= static_cast<int>(w)) continue;
                            p.w.g.at4(o, c, u, v) += g * x.at3(c, yy, zz);
                            gx.at3(c, yy, zz) += g * p.w.v.at4(o, c, u, v);
                        }
                    }
            }
    return gx;
}

Tensor nearest_up2(const Tensor& x) {
    const std::size_t c = x.shape[0];
    const std::size_t h = x.shape[1];
    const std::size_t w = x.shape[2];
    Tensor y({c, 2 * h, 2 * w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < 2 * h; ++i)
            for (std::size_t j = 0; j < 2 * w; ++j)
                y.at3(ch, i, j) = x.at3(ch, i / 2, j / 2);
    return y;
}

Tensor nearest_up2_backward(const Tensor& g_y) {
    const std::size_t c = g_y.shape[0];
    const std::size_t h = g_y.shape[1] / 2;
    const std::size_t w = g_y.shape[2] / 2;
    Tensor gx({c, h, w});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < 2 * h; ++i)
            for (std::size_t j = 0; j < 2 * w; ++j)
                gx.at3(ch, i / 2, j / 2) += g_y.at3(ch, i, j);
    return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.shape[1] != b.shape[1] || a.shape[2] != b.shape[2])
        throw DimensionError("concat: spatial extents differ");
    Tensor y({a.shape[0] + b.shape[0], a.shape[1], a.shape[2]});
    std::copy(a.data.begin(), a.data.end(), y.data.begin());
    std::copy(b.data.begin(), b.data.end(), y.data.begin() + a.numel());
    return y;
}

Tensor uniform_conv_weight(std::size_t co, std::size_t ci, std::size_t k,
                           std::mt19937_64& rng) {
    Tensor t({co, ci, k, k});
    const double a = 1.0 / std::sqrt(static_cast<double>(ci * k * k));
    std::uniform_real_distribution<double> d(-a, a);
    for (double& v : t.data) v = d(rng);
    return t;
}

ConvP make_plumbing_conv(std::size_t co, std::size_t ci, std::size_t k,
                         std::mt19937_64& rng) {
    ConvP p;
    p.w = Param(uniform_conv_weight(co, ci, k, rng));
    const double a = 1.0 / std::sqrt(static_cast<double>(ci * k * k));
    std::uniform_real_distribution<double> d(-a, a);
    Tensor b({co});
    for (double& v : b.data) v = d(rng);
    p.b = Param(std::move(b));
    return p;
}

BiMACOptions options_for(const NetConfig& cfg) {
    BiMACOptions opt;
    opt.k = cfg.k;
    opt.embed_r = cfg.embed_r;
    opt.camg_k = cfg.camg_k;
    opt.alpha = cfg.alpha;
    opt.random_fraction = cfg.random_hm_fraction;
    switch (cfg.ablation) {
        case Ablation::full: break;
        case Ablation::no_focused: opt.mask_mode = MaskMode::all_compact; break;
        case Ablation::no_compact: opt.mask_mode = MaskMode::all_focused; break;
        case Ablation::no_camg:
            opt.use_camg = false;
            opt.mask_mode = MaskMode::seeded_random;
            break;
        case Ablation::no_lrk: opt.lowrank = false; break;
        case Ablation::shared_weights: opt.share_kernels = true; break;
    }
    return opt;
}

} // namespace

// --- construction ------------------------------------------------------------------

Bi2MANet::Bi2MANet(const NetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.depth < 1) throw ConfigError("net depth must be >= 1");
    if (cfg.blocks < 1) throw ConfigError("blocks per level must be >= 1");
    std::mt19937_64 master(seed);
    const std::size_t B = cfg.base_channels;
    const BiMACOptions opt = options_for(cfg);

    stem_ = make_plumbing_conv(B, cfg.bands + 1, 3, master);
    enc_.resize(cfg.depth - 1);
    for (std::size_t l = 0; l + 1 < cfg.depth; ++l) {
        for (std::size_t b = 0; b < cfg.blocks; ++b) {
            ResBlockP rb;
            rb.m1 = make_bimac_params(B, B, opt, master());
            rb.m2 = make_bimac_params(B, B, opt, master());
            enc_[l].push_back(std::move(rb));
        }
        down_.push_back(make_plumbing_conv(B, B, 3, master));
    }
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        ResBlockP rb;
        rb.m1 = make_bimac_params(B, B, opt, master());
        rb.m2 = make_bimac_params(B, B, opt, master());
        bott_.push_back(std::move(rb));
    }
    decb_.resize(cfg.depth - 1);
    for (std::size_t d = 0; d + 1 < cfg.depth; ++d) {
        up_.push_back(make_plumbing_conv(B, B, 3, master));
        fuse_.push_back(make_plumbing_conv(B, 2 * B, 1, master));
        for (std::size_t b = 0; b < cfg.blocks; ++b) {
            ResBlockP rb;
            rb.m1 = make_bimac_params(B, B, opt, master());
            rb.m2 = make_bimac_params(B, B, opt, master());
            decb_[d].push_back(std::move(rb));
        }
    }
    head_ = make_plumbing_conv(cfg.bands, B, 3, master);
}

// --- forward ------------------------------------------------------------------------

namespace {

struct LayerCtx {
    std::size_t counter = 0;
    std::vector<LayerMaskRecord>* capture = nullptr;
    const std::vector<Tensor>* forced = nullptr;
    FlopsReport* tally = nullptr;
};

Tensor bimac_step(const Tensor& x, BiMACParams& p, BiMacCache& cache, LayerCtx& ctx,
                  std::size_t scale) {
    const Tensor* forced = nullptr;
    if (ctx.forced) {
        if (ctx.counter >= ctx.forced->size())
            throw StateError("forced mask list shorter than layer count");
        forced = &(*ctx.forced)[ctx.counter];
    }
    Tensor y = bimac_forward_cached(x, p, cache, ctx.tally, forced);
    if (ctx.capture) {
        LayerMaskRecord rec;
        rec.layer = ctx.counter;
        rec.scale = scale;
        rec.sm_f = cache.mask.sm_f;
        rec.hm = cache.mask.hm;
        rec.focused_fraction = cache.mask.focused_fraction;
        rec.T = cache.mask.T;
        rec.mu = cache.mask.mu;
        rec.sigma_s = cache.mask.sigma_s;
        ctx.capture->push_back(std::move(rec));
    }
    ++ctx.counter;
    return y;
}

Tensor resblock_step(const Tensor& x, ResBlockP& rb, ResBlockCache& cache, LayerCtx& ctx,
                     std::size_t scale) {
    Tensor t = bimac_step(x, rb.m1, cache.c1, ctx, scale);
    cache.mid_pre = t;
    Tensor a = relu(t);
    Tensor y = bimac_step(a, rb.m2, cache.c2, ctx, scale);
    for (std::size_t q = 0; q < y.numel(); ++q) y[q] += x[q];
    return y;
}

Tensor resblock_back(ResBlockP& rb, const ResBlockCache& cc, const Tensor& g_y) {
    Tensor ga = bimac_backward(g_y, rb.m2, cc.c2);
    for (std::size_t q = 0; q < ga.numel(); ++q)
        if (cc.mid_pre[q] <= 0.0) ga[q] = 0.0;
    Tensor gx = bimac_backward(ga, rb.m1, cc.c1);
    for (std::size_t q = 0; q < gx.numel(); ++q) gx[q] += g_y[q];
    return gx;
}

} // namespace

Tensor resblock_forward(const Tensor& x, ResBlockP& rb) {
    LayerCtx ctx;
    ResBlockCache cache;
    return resblock_step(x, rb, cache, ctx, 1);
}

Tensor Bi2MANet::forward(const Tensor& pan, const Tensor& lrms, NetCache* cache,
                         std::vector<LayerMaskRecord>* mask_capture,
                         const std::vector<Tensor>* forced_masks, FlopsReport* engine_tally) {
    if (pan.rank() != 3 || pan.shape[0] != 1)
        throw DimensionError("net forward: pan must be (1,H,W), got " + shape_str(pan));
    if (lrms.rank() != 3 || lrms.shape[0] != cfg_.bands)
        throw DimensionError("net forward: lrms must be (C,H/4,W/4), got " + shape_str(lrms));
    const std::size_t H = pan.shape[1];
    const std::size_t W = pan.shape[2];
    if (lrms.shape[1] * 4 != H || lrms.shape[2] * 4 != W)
        throw DimensionError("net forward: lrms extents must be exactly H/4 x W/4");
    const std::size_t unit = 4u << (cfg_.depth - 1);
    if (H % unit != 0 || W % unit != 0)
        throw DimensionError("net forward: H,W must be multiples of " + std::to_string(unit));

    NetCache local;
    NetCache& nc = cache ? *cache : local;
    nc = NetCache{};
    LayerCtx ctx;
    ctx.capture = mask_capture;
    ctx.forced = forced_masks;
    ctx.tally = engine_tally;

    nc.up4 = upsample_bicubic(lrms, 4);
    nc.x0 = concat_channels(pan, nc.up4);
    Tensor s = conv2d(nc.x0, stem_.w.v, stem_.b.v, 1);

    nc.enc.resize(enc_.size());
    nc.enc_out.resize(enc_.size());
    for (std::size_t l = 0; l < enc_.size(); ++l) {
        const std::size_t scale = 1u << l;
        for (std::size_t b = 0; b < enc_[l].size(); ++b) {
            nc.enc[l].emplace_back();
            s = resblock_step(s, enc_[l][b], nc.enc[l].back(), ctx, scale);
        }
        nc.enc_out[l] = s;
        s = conv_stride2(s, down_[l]);
    }
    const std::size_t bot_scale = 1u << (cfg_.depth - 1);
    for (std::size_t b = 0; b < bott_.size(); ++b) {
        nc.bott.emplace_back();
        s = resblock_step(s, bott_[b], nc.bott.back(), ctx, bot_scale);
    }
    nc.dec.resize(decb_.size());
    for (std::size_t d = 0; d < decb_.size(); ++d) {
        const std::size_t skip_level = decb_.size() - 1 - d;
        const std::size_t scale = 1u << skip_level;
        DecCache& dc = nc.dec[d];
        dc.up_nn = nearest_up2(s);
        Tensor u = conv2d(dc.up_nn, up_[d].w.v, up_[d].b.v, 1);
        dc.cat = concat_channels(u, nc.enc_out[skip_level]);
        s = conv2d(dc.cat, fuse_[d].w.v, fuse_[d].b.v, 0);
        for (std::size_t b = 0; b < decb_[d].size(); ++b) {
            dc.blocks.emplace_back();
            s = resblock_step(s, decb_[d][b], dc.blocks.back(), ctx, scale);
        }
    }
    nc.dec_out = s;
    Tensor out = conv2d(s, head_.w.v, head_.b.v, 1);
    for (std::size_t q = 0; q < out.numel(); ++q) out[q] += nc.up4[q];
    require_finite(out, "net_forward");
    return out;
}

void Bi2MANet::backward(const Tensor& g_out, const NetCache& nc) {
    if (nc.dec_out.empty() && nc.x0.empty())
        throw StateError("net backward: forward cache missing");
    const std::size_t B = cfg_.base_channels;
    Tensor g_s({B, nc.dec_out.shape[1], nc.dec_out.shape[2]});
    conv2d_backward(nc.dec_out, head_.w.v, 1, g_out, head_.w.g, head_.b.g, &g_s);

    std::vector<Tensor> g_skip(enc_.size());
    for (std::size_t d = decb_.size(); d-- > 0;) {
        const std::size_t skip_level = decb_.size() - 1 - d;
        const DecCache& dc = nc.dec[d];
        for (std::size_t b = decb_[d].size(); b-- > 0;)
            g_s = resblock_back(decb_[d][b], dc.blocks[b], g_s);
        Tensor g_cat({2 * B, dc.cat.shape[1], dc.cat.shape[2]});
        conv2d_backward(dc.cat, fuse_[d].w.v, 0, g_s, fuse_[d].w.g, fuse_[d].b.g, &g_cat);
        Tensor g_u({B, dc.cat.shape[1], dc.cat.shape[2]});
        g_skip[skip_level] = Tensor({B, dc.cat.shape[1], dc.cat.shape[2]});
        std::copy(g_cat.data.begin(), g_cat.data.begin() + g_u.numel(), g_u.data.begin());
        std::copy(g_cat.data.begin() + g_u.numel(), g_cat.data.end(),
                  g_skip[skip_level].data.begin());
        Tensor g_nn({B, dc.up_nn.shape[1], dc.up_nn.shape[2]});
        conv2d_backward(dc.up_nn, up_[d].w.v, 1, g_u, up_[d].w.g, up_[d].b.g, &g_nn);
        g_s = nearest_up2_backward(g_nn);
    }
    for (std::size_t b = bott_.size(); b-- > 0;) g_s = resblock_back(bott_[b], nc.bott[b], g_s);
    for (std::size_t l = enc_.size(); l-- > 0;) {
        Tensor g_eo = conv_stride2_backward(nc.enc_out[l], down_[l], g_s);
        if (!g_skip[l].empty())
            for (std::size_t q = 0; q < g_eo.numel(); ++q) g_eo[q] += g_skip[l][q];
        for (std::size_t b = enc_[l].size(); b-- > 0;)
            g_eo = resblock_back(enc_[l][b], nc.enc[l][b], g_eo);
        g_s = std::move(g_eo);
    }
    conv2d_backward(nc.x0, stem_.w.v, 1, g_s, stem_.w.g, stem_.b.g, nullptr);
}

// --- registry/checkpoint --------------------------------------------------------------

namespace {

void collect_linear(std::vector<NamedParam>& out, LinearP& lp, const std::string& pre) {
    out.push_back({pre + ".w", &lp.w});
    out.push_back({pre + ".b", &lp.b});
}

void collect_conv(std::vector<NamedParam>& out, ConvP& cp, const std::string& pre) {
    out.push_back({pre + ".w", &cp.w});
    out.push_back({pre + ".b", &cp.b});
}

void collect_kernel(std::vector<NamedParam>& out, KernelParam& kp, const std::string& pre) {
    if (kp.lowrank) {
        out.push_back({pre + ".nav1", &kp.nav1});
        out.push_back({pre + ".coef1", &kp.coef1});
        out.push_back({pre + ".nav2", &kp.nav2});
        out.push_back({pre + ".coef2", &kp.coef2});
    } else {
        out.push_back({pre + ".dense", &kp.dense});
    }
    out.push_back({pre + ".bias", &kp.bias});
}

void collect_bimac(std::vector<NamedParam>& out, BiMACParams& p, const std::string& pre) {
    if (p.use_camg) collect_conv(out, p.camg, pre + ".camg");
    collect_linear(out, p.h_ci, pre + ".hci");
    collect_linear(out, p.h_co, pre + ".hco");
    collect_linear(out, p.h_kk, pre + ".hkk");
    collect_linear(out, p.fc1, pre + ".fc1");
    collect_linear(out, p.fc2, pre + ".fc2");
    collect_linear(out, p.g_ci, pre + ".gci");
    collect_linear(out, p.g_co, pre + ".gco");
    collect_linear(out, p.g_kk, pre + ".gkk");
    collect_kernel(out, *p.w0, pre + ".w0");
    collect_kernel(out, *p.w1, pre + ".w1");
    collect_conv(out, p.bb1, pre + ".bb1");
    collect_conv(out, p.bb2, pre + ".bb2");
    collect_conv(out, p.bb3, pre + ".bb3");
}

void collect_resblock(std::vector<NamedParam>& out, ResBlockP& rb, const std::string& pre) {
    collect_bimac(out, rb.m1, pre + ".m1");
    collect_bimac(out, rb.m2, pre + ".m2");
}

std::vector<NamedParam> dedup(std::vector<NamedParam> all) {
    std::vector<NamedParam> out;
    std::unordered_set<Param*> seen;
    for (NamedParam& np : all)
        if (seen.insert(np.p).second) out.push_back(np);
    return out;
}

} // namespace

std::vector<NamedParam> Bi2MANet::params() {
    std::vector<NamedParam> all;
    collect_conv(all, stem_, "stem");
    for (std::size_t l = 0; l < enc_.size(); ++l) {
        for (std::size_t b = 0; b < enc_[l].size(); ++b)
            collect_resblock(all, enc_[l][b],
                             "enc" + std::to_string(l) + ".rb" + std::to_string(b));
        collect_conv(all, down_[l], "down" + std::to_string(l));
    }
    for (std::size_t b = 0; b < bott_.size(); ++b)
        collect_resblock(all, bott_[b], "bott.rb" + std::to_string(b));
    for (std::size_t d = 0; d < decb_.size(); ++d) {
        collect_conv(all, up_[d], "dec" + std::to_string(d) + ".up");
        collect_conv(all, fuse_[d], "dec" + std::to_string(d) + ".fuse");
        for (std::size_t b = 0; b < decb_[d].size(); ++b)
            collect_resblock(all, decb_[d][b],
                             "dec" + std::to_string(d) + ".rb" + std::to_string(b));
    }
    collect_conv(all, head_, "head");
    return dedup(std::move(all));
}

void Bi2MANet::zero_grad() {
    for (NamedParam& np : params()) np.p->zero_grad();
}

void Bi2MANet::set_all_zero() {
    for (NamedParam& np : params()) np.p->v.fill(0.0);
}

std::size_t Bi2MANet::param_count() {
    std::size_t n = 0;
    for (NamedParam& np : params()) n += np.p->v.numel();
    return n;
}

std::size_t Bi2MANet::engine_param_count() {
    std::vector<NamedParam> all;
    for (std::size_t l = 0; l < enc_.size(); ++l)
        for (std::size_t b = 0; b < enc_[l].size(); ++b)
            collect_resblock(all, enc_[l][b], "e");
    for (std::size_t b = 0; b < bott_.size(); ++b) collect_resblock(all, bott_[b], "b");
    for (std::size_t d = 0; d < decb_.size(); ++d)
        for (std::size_t b = 0; b < decb_[d].size(); ++b)
            collect_resblock(all, decb_[d][b], "d");
    std::size_t n = 0;
    for (NamedParam& np : dedup(std::move(all))) n += np.p->v.numel();
    return n;
}

std::size_t Bi2MANet::bimac_layer_count() const {
    std::size_t rb = bott_.size();
    for (const auto& lv : enc_) rb += lv.size();
    for (const auto& lv : decb_) rb += lv.size();
    return 2 * rb;
}

std::vector<LayerGeometry> Bi2MANet::layer_geometries(std::size_t h, std::size_t w) const {
    std::vector<LayerGeometry> out;
    std::size_t idx = 0;
    auto add_level = [&](std::size_t scale, std::size_t nblocks) {
        for (std::size_t b = 0; b < nblocks; ++b)
            for (int m = 0; m < 2; ++m)
                out.push_back({idx++, scale, cfg_.base_channels, cfg_.base_channels});
    };
    for (std::size_t l = 0; l < enc_.size(); ++l) add_level(1u << l, enc_[l].size());
    add_level(1u << (cfg_.depth - 1), bott_.size());
    for (std::size_t d = 0; d < decb_.size(); ++d)
        add_level(1u << (decb_.size() - 1 - d), decb_[d].size());
    (void)h;
    (void)w;
    return out;
}

void Bi2MANet::save_checkpoint(const std::string& path) {
    std::vector<NamedParam> ps = params();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write("BMCK", 4);
    const std::uint32_t n = static_cast<std::uint32_t>(ps.size());
    unsigned char nb[4] = {static_cast<unsigned char>(n & 0xff),
                           static_cast<unsigned char>((n >> 8) & 0xff),
                           static_cast<unsigned char>((n >> 16) & 0xff),
                           static_cast<unsigned char>((n >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(nb), 4);
    for (NamedParam& np : ps) {
        const std::uint16_t len = static_cast<std::uint16_t>(np.name.size());
        unsigned char lb[2] = {static_cast<unsigned char>(len & 0xff),
                               static_cast<unsigned char>((len >> 8) & 0xff)};
        os.write(reinterpret_cast<const char*>(lb), 2);
        os.write(np.name.data(), len);
        write_bmt(os, np.p->v);
    }
    if (!os) throw DataError("checkpoint write failed: " + path);
}

void Bi2MANet::load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "BMCK", 4) != 0)
        throw DataError("bad checkpoint magic: " + path);
    unsigned char nb[4];
    if (!is.read(reinterpret_cast<char*>(nb), 4)) throw DataError("truncated checkpoint");
    const std::uint32_t n = static_cast<std::uint32_t>(nb[0]) | (nb[1] << 8) | (nb[2] << 16) |
                            (static_cast<std::uint32_t>(nb[3]) << 24);
    std::unordered_map<std::string, Tensor> records;
    for (std::uint32_t i = 0; i < n; ++i) {
        unsigned char lb[2];
        if (!is.read(reinterpret_cast<char*>(lb), 2)) throw DataError("truncated checkpoint");
        const std::uint16_t len = static_cast<std::uint16_t>(lb[0] | (lb[1] << 8));
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw DataError("truncated checkpoint");
        records.emplace(std::move(name), read_bmt(is, path));
    }
    std::vector<NamedParam> ps = params();
    if (records.size() != ps.size())
        throw DataError("checkpoint record count mismatch for this configuration");
    for (NamedParam& np : ps) {
        auto it = records.find(np.name);
        if (it == records.end())
            throw DataError("checkpoint missing parameter: " + np.name);
        if (it->second.shape != np.p->v.shape)
            throw DataError("checkpoint shape mismatch for " + np.name);
        np.p->v = std::move(it->second);
    }
}

FlopsReport flops_instrumented(Bi2MANet& net, const Tensor& pan, const Tensor& lrms) {
    FlopsReport report;
    std::vector<LayerMaskRecord> masks;
    net.forward(pan, lrms, nullptr, &masks, nullptr, &report);
    double pix = 0.0, focused = 0.0;
    for (const LayerMaskRecord& r : masks) {
        const double n = static_cast<double>(r.hm.numel());
        pix += n;
        focused += r.focused_fraction * n;
    }
    report.routing_fraction = pix > 0.0 ? focused / pix : 0.0;
    return report;
}

} // namespace bimac
