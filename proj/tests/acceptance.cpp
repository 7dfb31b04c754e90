// Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdarg>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bimac/bimanet.hpp"
#include "bimac/camg.hpp"
#include "bimac/lowrank.hpp"
#include "bimac/mabic.hpp"
#include "bimac/metrics.hpp"
#include "bimac/region.hpp"
#include "bimac/train.hpp"

using namespace bimac;

namespace {

using clk = std::chrono::steady_clock;

struct Outcome {
    int id;
    std::string title;
    bool pass;
    double seconds;
    std::string note;
};

std::vector<Outcome> g_results;

void run_criterion(int id, const std::string& title, const std::function<std::string()>& body) {
    Outcome out{id, title, false, 0.0, ""};
    const auto t0 = clk::now();
    try {
        out.note = body();
        out.pass = true;
    } catch (const std::exception& e) {
        out.note = e.what();
    }
    out.seconds = std::chrono::duration<double>(clk::now() - t0).count();
    g_results.push_back(out);
    std::printf("criterion %2d [%s]  %-38s %7.1f s  %s\n", id, out.pass ? "PASS" : "FAIL",
                title.c_str(), out.seconds, out.note.c_str());
    std::fflush(stdout);
}

struct CheckFail : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
    if (!cond) throw CheckFail(what);
}

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data) v = d(rng);
    return t;
}

Tensor conv2d_naive(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    const int co = static_cast<int>(w.shape[0]);
    const int ci = static_cast<int>(w.shape[1]);
    const int k = static_cast<int>(w.shape[2]);
    const int h = static_cast<int>(x.shape[1]);
    const int wd = static_cast<int>(x.shape[2]);
    Tensor y({w.shape[0], x.shape[1], x.shape[2]});
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

double focused_pixel_oracle(const Tensor& xm, const BiMACParams& p, const Tensor& w1_base,
                            int i, int j, std::size_t o) {
    Tensor cvec({p.c_in});
    for (std::size_t c = 0; c < p.c_in; ++c) cvec[c] = xm.at3(c, i, j);
    ModulationWeights m = focused_weights(cvec, p);
    Tensor w1p = modulate_kernel(w1_base, m);
    const int pad = static_cast<int>(p.k - 1) / 2;
    double acc = p.w1->bias.v[o];
    for (std::size_t c = 0; c < p.c_in; ++c)
        for (std::size_t u = 0; u < p.k; ++u)
            for (std::size_t v = 0; v < p.k; ++v) {
                const int y = i + static_cast<int>(u) - pad;
                const int x = j + static_cast<int>(v) - pad;
                if (y < 0 || y >= static_cast<int>(xm.shape[1]) || x < 0 ||
                    x >= static_cast<int>(xm.shape[2]))
                    continue;
                acc += xm.at3(c, y, x) * w1p.at4(o, c, u, v);
            }
    return acc;
}

std::string fmt(const char* f, ...) {
    char buf[256];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

// --- criterion bodies ---------------------------------------------------------------

std::string criterion1_branch_oracles() {
    double worst = 0.0;
    std::size_t compact_seen = 0, focused_seen = 0;
    for (std::uint64_t inst = 0; inst < 100; ++inst) {
        BiMACOptions opt;
        opt.alpha = -0.5 + static_cast<double>(inst % 13) / 6.0; // mixed routing variety
        BiMACParams p = make_bimac_params(4, 8, opt, 9000 + inst);
        Tensor x = random_tensor({4, 8, 8}, 700 + inst);
        auto [y, mask] = bimac_forward(x, p);
        Tensor keep({1, 8, 8});
        for (std::size_t q = 0; q < 64; ++q) keep[q] = mask.hm[q] == 0.0 ? 1.0 : 0.0;
        Tensor compact_ref;
        if (mask.focused_fraction < 1.0) {
            Tensor v = masked_gap(mask.x_mod, keep);
            Tensor w0p = modulate_kernel(p.w0->materialize(), compact_weights(v, p));
            compact_ref = conv2d_naive(mask.x_mod, w0p, p.w0->bias.v, 1);
        }
        Tensor w1b;
        if (mask.focused_fraction > 0.0) w1b = p.w1->materialize();
        Tensor bb = bias_block(x, p);
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) {
                const bool focused = mask.hm[i * 8 + j] == 1.0;
                (focused ? focused_seen : compact_seen) += 1;
                for (std::size_t o = 0; o < 8; ++o) {
                    const double ref = (focused ? focused_pixel_oracle(mask.x_mod, p, w1b, i, j, o)
                                                : compact_ref.at3(o, i, j)) +
                                       bb.at3(o, i, j);
                    worst = std::max(worst, std::fabs(y.at3(o, i, j) - ref));
                }
            }
    }
    require(compact_seen > 0 && focused_seen > 0, "both branches must be exercised");
    require(worst < 1e-10, fmt("max |diff| %.3e exceeds 1e-10", worst));
    return fmt("100 instances, max |diff| %.2e, %zu compact / %zu focused pixels",
               worst, compact_seen, focused_seen);
}

std::string criterion2_gradients() {
    NetConfig nc;
    nc.bands = 4;
    nc.base_channels = 8;
    nc.depth = 2;
    Bi2MANet net(nc, 77);
    WaldSample s = wald_degrade(synth_scene(78, 4, 16, 16));
    auto results = gradient_check(net, s, 20, 1e-5, 1e-4, 79);
    require(results.size() >= 9, "expected at least nine parameter groups");
    double worst = 0.0;
    std::size_t probes = 0;
    for (const auto& r : results) {
        worst = std::max(worst, r.max_rel_err);
        probes += r.probes;
        require(r.probes >= 20, r.group + ": fewer than 20 probes");
        require(r.pass, fmt("%s: max rel err %.3e", r.group.c_str(), r.max_rel_err));
    }
    return fmt("%zu groups, %zu probes, worst rel err %.2e", results.size(), probes, worst);
}

std::string criterion3_mask_invariants() {
    double worst_gap = 1.0;
    for (std::uint64_t inst = 0; inst < 1000; ++inst) {
        Tensor x = random_tensor({4, 12, 12}, 40000 + inst, -2.0, 2.0);
        CamgParams p;
        p.conv_w = random_tensor({4, 4, 3, 3}, 41000 + inst, -0.7, 0.7);
        p.conv_b = random_tensor({4}, 42000 + inst, -0.7, 0.7);
        p.alpha = -1.0 + static_cast<double>(inst % 7);
        MaskPair mp = camg_forward(x, p);
        for (double v : mp.sm.data) require(v > 0.0 && v < 1.0, "SM left (0,1)");
        require(mp.T == mp.mu + mp.alpha * mp.sigma_s, "T != mu + alpha*sigma");
        // sort-based threshold oracle
        std::vector<double> sorted(mp.sm_f.data);
        std::sort(sorted.begin(), sorted.end());
        const std::size_t above =
            sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), mp.T);
        std::size_t ones = 0;
        for (std::size_t q = 0; q < mp.sm_f.numel(); ++q) {
            require((mp.hm[q] == 1.0) == (mp.sm_f[q] > mp.T), "strict threshold violated");
            if (mp.hm[q] == 1.0) ++ones;
        }
        require(ones == above, "focused count disagrees with the sort oracle");
        if (inst % 25 == 0) { // alpha-monotonicity of the focused set
            std::vector<char> prev(mp.sm.shape[1] * mp.sm.shape[2], 1);
            for (double alpha : {0.0, 0.7, 1.4, 2.1, 2.8}) {
                HardMask hm = hard_mask(mp.sm, alpha);
                for (std::size_t q = 0; q < hm.hm.numel(); ++q) {
                    if (hm.hm[q] == 1.0)
                        require(prev[q] == 1, "focused set not shrinking in alpha");
                }
                for (std::size_t q = 0; q < hm.hm.numel(); ++q)
                    prev[q] = hm.hm[q] == 1.0 ? 1 : 0;
            }
        }
    }
    // exceedance calibration on exponential samples
    const std::size_t n = 100000;
    std::mt19937_64 rng(4242);
    std::exponential_distribution<double> expd(1.0);
    Tensor sm({1, 1, n});
    for (std::size_t i = 0; i < n; ++i) sm[i] = expd(rng);
    for (double alpha : {1.0, 2.0}) {
        HardMask hm = hard_mask(sm, alpha);
        std::size_t ones = 0;
        for (double v : hm.hm.data)
            if (v == 1.0) ++ones;
        const double measured = static_cast<double>(ones) / n;
        const double analytic = std::exp(-(1.0 + alpha));
        worst_gap = std::min(worst_gap, 0.01 - std::fabs(measured - analytic));
        require(std::fabs(measured - analytic) < 0.01,
                fmt("exceedance at alpha=%.0f off by %.4f", alpha, measured - analytic));
    }
    return fmt("1000 masks ok; exponential tail within %.4f of analytic", 0.01 - worst_gap);
}

std::string criterion4_lowrank() {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        LowRankKernel kr = make_lowrank_kernel(6, 5, 3, seed);
        Tensor w1 = expand_component(kr.coef1, kr.nav1);
        Tensor w2 = expand_component(kr.coef2, kr.nav2);
        for (std::size_t o = 0; o < 6; ++o)
            for (std::size_t i = 0; i < 5; ++i)
                for (std::size_t t = 0; t < 9; ++t) {
                    require(w1[(o * 5 + i) * 9 + t] == kr.coef1.at2(o, i) * kr.nav1[i * 9 + t],
                            "component slice is not an exact scalar multiple");
                    require(w2[(o * 5 + i) * 9 + t] == kr.coef2.at2(o, i) * kr.nav2[i * 9 + t],
                            "component slice is not an exact scalar multiple");
                }
    }
    const auto [lr, dense] = param_count(32, 32, 3);
    require(lr == 2656 && dense == 9248, fmt("param_count(32,32,3) = (%zu,%zu)", lr, dense));
    return fmt("slice property exact; params (2656, 9248), %.2fx reduction",
               static_cast<double>(dense) / static_cast<double>(lr));
}

std::string criterion5_flops() {
    // analytic vs instrumented on three random configurations
    struct Setting {
        std::size_t ci, co, hw;
        double f;
        std::uint64_t seed;
    };
    const Setting settings[] = {{8, 8, 16, 0.30, 11}, {4, 6, 24, 0.15, 12}, {6, 4, 32, 0.60, 13}};
    double worst = 0.0;
    for (const Setting& s : settings) {
        BiMACOptions opt;
        opt.mask_mode = MaskMode::seeded_random;
        opt.random_fraction = s.f;
        BiMACParams p = make_bimac_params(s.ci, s.co, opt, s.seed);
        Tensor x = random_tensor({s.ci, s.hw, s.hw}, s.seed + 5);
        FlopsReport inst;
        BiMacCache cc;
        bimac_forward_cached(x, p, cc, &inst);
        FlopsWidths w{p.embed_r, p.bias_mid, p.camg.w.v.shape[2]};
        FlopsReport ana =
            flops_analytic(s.ci, s.co, p.k, s.hw, s.hw, cc.mask.focused_fraction, w);
        const double rel =
            std::fabs(inst.total_flops() - ana.total_flops()) / ana.total_flops();
        worst = std::max(worst, rel);
        require(rel < 0.01, fmt("analytic/instrumented disagree by %.3f%%", rel * 100));
    }
    // monotone in the routing fraction
    FlopsWidths w{16, 8, 3};
    double prev = -1.0;
    for (int i = 0; i <= 10; ++i) {
        const double total = flops_analytic(32, 32, 3, 64, 64, i / 10.0, w).total_flops();
        require(total >= prev, "total FLOPs decreased in f");
        prev = total;
    }
    // context report at the published operating point (informational)
    FlopsReport ref = flops_analytic(32, 32, 3, 64, 64, 0.15, w);
    std::printf("  one layer at C=32, 64x64, f=0.15: %.2f MFLOPs/layer (published engine "
                "reference: 152.91 MFLOPs total, different internal widths)\n",
                ref.total_flops() / 1e6);
    return fmt("3 configs within %.2e rel; monotone over f grid", worst);
}

std::string criterion6_training() {
    NetConfig nc;
    nc.bands = 4;
    nc.base_channels = 16;
    nc.depth = 2;
    std::vector<WaldSample> tr, va;
    for (int i = 0; i < 64; ++i) tr.push_back(wald_degrade(synth_scene(1000 + i, 4, 32, 32)));
    for (int i = 0; i < 8; ++i) va.push_back(wald_degrade(synth_scene(2000 + i, 4, 32, 32)));
    TrainConfig cfg;
    cfg.batch = 8;
    cfg.epochs = 50;
    cfg.max_iters = 300;
    cfg.seed = 7;

    auto eval_train_l1 = [&](Bi2MANet& n) {
        double acc = 0.0;
        for (auto& s : tr) acc += l1_loss(n.forward(s.pan, s.lrms), s.gt);
        return acc / static_cast<double>(tr.size());
    };
    auto eval_val = [&](Bi2MANet* n) {
        double vs = 0.0, ve = 0.0;
        for (auto& s : va) {
            Tensor pred = n ? n->forward(s.pan, s.lrms) : upsample_bicubic(s.lrms, 4);
            vs += sam(pred, s.gt);
            ve += ergas(pred, s.gt);
        }
        return std::pair{vs / va.size(), ve / va.size()};
    };

    Bi2MANet net(nc, cfg.seed);
    const double init_l1 = eval_train_l1(net);
    const auto [bsam, bergas] = eval_val(nullptr);
    TrainResult run_a = train(net, tr, va, cfg);
    require(run_a.iterations == 300, "expected exactly 300 iterations");
    const double final_l1 = eval_train_l1(net);
    const auto [nsam, nergas] = eval_val(&net);

    require(final_l1 <= 0.5 * init_l1,
            fmt("final l1 %.5f > 0.5 x initial %.5f", final_l1, init_l1));
    require(nsam < bsam, fmt("val SAM %.4f not better than bicubic %.4f", nsam, bsam));
    require(nergas < bergas,
            fmt("val ERGAS %.4f not better than bicubic %.4f", nergas, bergas));

    // bitwise rerun
    Bi2MANet net2(nc, cfg.seed);
    TrainResult run_b = train(net2, tr, va, cfg);
    require(run_a.trace.size() == run_b.trace.size(), "trace lengths differ across reruns");
    for (std::size_t i = 0; i < run_a.trace.size(); ++i) {
        require(std::memcmp(&run_a.trace[i].train_l1, &run_b.trace[i].train_l1,
                            sizeof(double)) == 0 &&
                    std::memcmp(&run_a.trace[i].val_sam, &run_b.trace[i].val_sam,
                                sizeof(double)) == 0,
                "loss traces differ across reruns");
    }
    auto pa = net.params();
    auto pb = net2.params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        require(std::memcmp(pa[i].p->v.data.data(), pb[i].p->v.data.data(),
                            pa[i].p->v.numel() * sizeof(double)) == 0,
                "parameters differ bitwise across reruns");
    return fmt("l1 %.4f->%.4f (%.2fx); SAM %.3f<%.3f; ERGAS %.3f<%.3f; rerun bitwise",
               init_l1, final_l1, final_l1 / init_l1, nsam, bsam, nergas, bergas);
}

std::string criterion7_ablations() {
    std::vector<WaldSample> tr;
    for (int i = 0; i < 16; ++i) tr.push_back(wald_degrade(synth_scene(3000 + i, 4, 16, 16)));
    std::vector<WaldSample> va(tr.begin(), tr.begin() + 2);
    TrainConfig cfg;
    cfg.batch = 4;
    cfg.epochs = 100;
    cfg.max_iters = 50;
    cfg.seed = 5;
    const Ablation variants[] = {Ablation::full,    Ablation::no_focused,
                                 Ablation::no_compact, Ablation::no_camg,
                                 Ablation::no_lrk,  Ablation::shared_weights};
    for (Ablation ab : variants) {
        NetConfig nc;
        nc.bands = 4;
        nc.base_channels = 8;
        nc.depth = 2;
        nc.ablation = ab;
        Bi2MANet net(nc, 31);
        TrainResult res = train(net, tr, va, cfg); // throws on NaN
        require(res.iterations == 50, "expected 50 iterations");
        std::vector<LayerMaskRecord> masks;
        net.forward(tr[0].pan, tr[0].lrms, nullptr, &masks);
        for (const auto& m : masks) {
            if (ab == Ablation::no_focused)
                require(m.focused_fraction == 0.0, "no_focused must keep HM at zero");
            if (ab == Ablation::no_compact)
                require(m.focused_fraction == 1.0, "no_compact must keep HM at one");
            if (ab == Ablation::no_camg) {
                std::size_t ones = 0;
                for (double v : m.hm.data)
                    if (v == 1.0) ++ones;
                require(ones == static_cast<std::size_t>(std::llround(
                                    0.15 * static_cast<double>(m.hm.numel()))),
                        "no_camg must route exactly 15% of pixels");
            }
        }
        if (ab == Ablation::shared_weights) {
            BiMACOptions opt;
            opt.share_kernels = true;
            BiMACParams p = make_bimac_params(8, 8, opt, 3);
            require(p.w0.get() == p.w1.get(), "kernels not aliased");
            p.w0->nav1.v[0] = 123.0;
            require(p.w1->nav1.v[0] == 123.0, "aliased write not observable");
            NetConfig full = nc;
            full.ablation = Ablation::full;
            Bi2MANet netf(full, 31);
            require(net.param_count() < netf.param_count(),
                    "shared variant must deduplicate kernel parameters");
        }
    }
    return "6 variants trained 50 iterations, structural assertions hold";
}

std::string criterion8_metric_fixed_points() {
    Tensor x = random_tensor({4, 32, 32}, 81, 0.1, 1.0);
    require(sam(x, x) == 0.0, "SAM(x,x) != 0");
    require(ergas(x, x) == 0.0, "ERGAS(x,x) != 0");
    require(q2n(x, x) == 1.0, "Q2n(x,x) != 1");
    Tensor x2 = x;
    for (double& v : x2.data) v *= 2.0;
    require(sam(x2, x) == 0.0, "SAM not invariant to doubling");
    Tensor g({1, 4, 4}, 1.0);
    Tensor p({1, 4, 4}, 1.1);
    require(std::fabs(ergas(p, g, 4) - 2.5) < 1e-12,
            fmt("ERGAS closed form off by %.2e", ergas(p, g, 4) - 2.5));
    return "SAM/ERGAS/Q2n fixed points exact; scale invariance and 2.5 case hold";
}

std::string criterion9_region() {
    // rank-1 patch
    Tensor u = random_tensor({9}, 91), v = random_tensor({9}, 92);
    Tensor outer({9, 9});
    for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j) outer.at2(i, j) = u[i] * v[j];
    std::vector<double> s = svd_spectrum(outer);
    require(s[1] < 1e-10, fmt("rank-1 s2/s1 = %.2e", s[1]));
    // constant patch: all energy at DC
    Tensor c({16, 16}, 0.8);
    std::vector<std::size_t> counts;
    std::vector<double> bins = radial_power_spectrum(c, &counts);
    double total = 0.0;
    for (std::size_t r = 0; r < bins.size(); ++r) total += bins[r] * counts[r];
    require(bins[0] * counts[0] > (1.0 - 1e-12) * total, "constant patch energy left DC");
    // pure cosine localization
    const std::size_t n = 32, q = 6;
    Tensor cosp({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            cosp.at2(i, j) = std::cos(2.0 * M_PI * static_cast<double>(q * j) / n);
    bins = radial_power_spectrum(cosp, &counts);
    double non_dc = 0.0;
    for (std::size_t r = 1; r < bins.size(); ++r) non_dc += bins[r] * counts[r];
    require(bins[q] * counts[q] > 0.99 * non_dc, "cosine energy not localized");
    // Parseval
    Tensor rp = random_tensor({32, 32}, 93);
    bins = radial_power_spectrum(rp, &counts);
    double freq = 0.0;
    for (std::size_t r = 0; r < bins.size(); ++r) freq += bins[r] * counts[r];
    double pix = 0.0;
    for (double t : rp.data) pix += t * t;
    require(std::fabs(pix - freq / 1024.0) / pix < 1e-8, "Parseval violated");
    // blob-only vs rectangle ensembles separate in mean hf ratio
    double mean_blob = 0.0, mean_rect = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Tensor blobs = synth_scene(7000 + seed, 1, 32, 32, 5, 0);
        Tensor rects = synth_scene(7000 + seed, 1, 32, 32, 5, 6);
        Tensor a({32, 32}), b({32, 32});
        a.data = blobs.data;
        b.data = rects.data;
        mean_blob += analyze_patch(a).hf_ratio;
        mean_rect += analyze_patch(b).hf_ratio;
    }
    mean_blob /= 50.0;
    mean_rect /= 50.0;
    require(mean_rect > mean_blob,
            fmt("hf ratios failed to separate: %.4f vs %.4f", mean_rect, mean_blob));
    return fmt("SVD/spectral checks hold; hf ratio %.4f (rect) > %.4f (blob)", mean_rect,
               mean_blob);
}

std::string criterion10_zero_identity() {
    NetConfig nc;
    nc.bands = 4;
    nc.base_channels = 16;
    nc.depth = 3;
    Bi2MANet net(nc, 101);
    net.set_all_zero();
    Tensor lrms = random_tensor({4, 8, 8}, 102, 0.0, 1.0);
    Tensor pan = random_tensor({1, 32, 32}, 103, 0.0, 1.0);
    Tensor out = net.forward(pan, lrms);
    Tensor up = upsample_bicubic(lrms, 4);
    require(out.shape == up.shape, "shape mismatch");
    require(std::memcmp(out.data.data(), up.data.data(), out.numel() * sizeof(double)) == 0,
            "output is not bitwise the upsampled input");
    return "bitwise identity on the injected upsampled input";
}

} // namespace

int main() {
    std::printf("acceptance suite\n");
    run_criterion(1, "branch-oracle equivalence", criterion1_branch_oracles);
    run_criterion(2, "gradient verification", criterion2_gradients);
    run_criterion(3, "mask invariants", criterion3_mask_invariants);
    run_criterion(4, "low-rank structure", criterion4_lowrank);
    run_criterion(5, "operation-count triage", criterion5_flops);
    run_criterion(6, "desk-scale training", criterion6_training);
    run_criterion(7, "ablation harness", criterion7_ablations);
    run_criterion(8, "metric fixed points", criterion8_metric_fixed_points);
    run_criterion(9, "region analysis", criterion9_region);
    run_criterion(10, "zero-parameter identity", criterion10_zero_identity);

    std::size_t passed = 0;
    for (const Outcome& o : g_results)
        if (o.pass) ++passed;
    std::printf("%zu/%zu criteria passed\n", passed, g_results.size());
    return passed == g_results.size() ? 0 : 1;
}
