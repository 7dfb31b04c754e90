#include <doctest.h>

#include "bimac/flops.hpp"
#include "bimac/mabic.hpp"
#include "bimac/metrics.hpp"
#include "oracles.hpp"

using namespace bimac;

TEST_CASE("sam") {
    Tensor gt = oracle::random_tensor({4, 8, 8}, 601, 0.1, 1.0);
    CHECK(sam(gt, gt) == 0.0);
    SUBCASE("invariant to positive scaling") {
        Tensor scaled = gt;
        for (double& v : scaled.data) v *= 2.0;
        CHECK(sam(scaled, gt) == 0.0);
        Tensor scaled2 = gt;
        for (double& v : scaled2.data) v *= 3.7;
        // acos amplifies rounding near cos=1 to ~sqrt(eps) radians
        CHECK(sam(scaled2, gt) < 1e-5);
    }
    SUBCASE("orthogonal two-band pixels give 90 degrees") {
        Tensor g({2, 3, 3});
        Tensor p({2, 3, 3});
        for (std::size_t q = 0; q < 9; ++q) {
            g[q] = 1.0;       // band 0
            p[9 + q] = 1.0;   // band 1
        }
        CHECK(sam(p, g) == doctest::Approx(90.0).epsilon(1e-12));
    }
    SUBCASE("degenerate pixels are skipped, all-degenerate is an error") {
        Tensor g({2, 1, 2});
        Tensor p({2, 1, 2});
        g.at3(0, 0, 0) = 1.0;
        p.at3(0, 0, 0) = 1.0; // pixel 1 is zero in both -> skipped
        CHECK(sam(p, g) == 0.0);
        Tensor z({2, 1, 2});
        CHECK_THROWS_AS(sam(z, z), MetricError);
    }
}

TEST_CASE("ergas") {
    Tensor gt = oracle::random_tensor({3, 8, 8}, 611, 0.2, 1.0);
    CHECK(ergas(gt, gt) == 0.0);
    SUBCASE("closed-form single band with a 10% offset") {
        Tensor g({1, 4, 4}, 1.0);
        Tensor p({1, 4, 4}, 1.1);
        CHECK(std::fabs(ergas(p, g, 4) - 2.5) < 1e-12);
    }
    SUBCASE("joint positive scaling leaves it unchanged") {
        Tensor pred = oracle::random_tensor({3, 8, 8}, 612, 0.2, 1.0);
        const double base = ergas(pred, gt);
        Tensor p2 = pred, g2 = gt;
        for (double& v : p2.data) v *= 4.0;
        for (double& v : g2.data) v *= 4.0;
        CHECK(ergas(p2, g2) == doctest::Approx(base).epsilon(1e-12));
    }
    SUBCASE("zero band mean is undefined") {
        Tensor g({2, 2, 2});
        Tensor p({2, 2, 2}, 0.1);
        CHECK_THROWS_AS(ergas(p, g), MetricError);
    }
}

TEST_CASE("q2n") {
    Tensor gt = oracle::random_tensor({4, 32, 32}, 621, 0.1, 1.0);
    SUBCASE("perfect reconstruction scores exactly one") {
        CHECK(q2n(gt, gt) == 1.0);
        Tensor gt8 = oracle::random_tensor({8, 32, 32}, 622, 0.1, 1.0);
        CHECK(q2n(gt8, gt8) == 1.0);
    }
    SUBCASE("a large constant offset is penalized by the luminance term") {
        Tensor p = gt;
        for (double& v : p.data) v += 5.0;
        const double q = q2n(p, gt);
        CHECK(q < 1.0);
        CHECK(q > 0.0);
    }
    SUBCASE("an uncorrelated constant prediction is near zero") {
        Tensor p({4, 32, 32});
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t i = 0; i < 1024; ++i) p[c * 1024 + i] = 0.3 + 0.1 * c;
        CHECK(std::fabs(q2n(p, gt)) < 0.2);
    }
    SUBCASE("unsupported band counts are rejected") {
        Tensor g3 = oracle::random_tensor({3, 32, 32}, 623);
        CHECK_THROWS_AS(q2n(g3, g3), ConfigError);
        Tensor small = oracle::random_tensor({4, 16, 16}, 624);
        CHECK_THROWS_AS(q2n(small, small, 32), DimensionError);
    }
    SUBCASE("averages over non-overlapping blocks") {
        Tensor g = oracle::random_tensor({4, 64, 32}, 625, 0.1, 1.0);
        Tensor p = g;
        // corrupt only the lower block
        for (std::size_t q = 0; q < 1024; ++q) p[32 * 32 + 1024 + q] += 0.5;
        const double q = q2n(p, g);
        CHECK(q < 1.0);
        CHECK(q > 0.4); // the untouched block still contributes 1.0/2
    }
}

namespace {

FlopsWidths widths_for(const BiMACParams& p) {
    FlopsWidths w;
    w.embed_r = p.embed_r;
    w.bias_mid = p.bias_mid;
    w.camg_k = p.camg.w.v.empty() ? 3 : p.camg.w.v.shape[2];
    return w;
}

} // namespace

TEST_CASE("flops_analytic structure") {
    FlopsWidths w{16, 8, 3};
    SUBCASE("f = 0 zeroes every focused term") {
        FlopsReport r = flops_analytic(32, 32, 3, 64, 64, 0.0, w);
        CHECK(r.focused_embed.flops() == 0.0);
        CHECK(r.focused_heads.flops() == 0.0);
        CHECK(r.focused_conv.flops() == 0.0);
        CHECK(r.compact_conv.mul == 2.0 * 4096 * 32 * 32 * 9 / 2.0);
    }
    SUBCASE("total is the sum of the parts") {
        FlopsReport r = flops_analytic(32, 32, 3, 64, 64, 0.37, w);
        double acc = 0.0;
        for (auto& [name, oc] : r.parts()) acc += oc->flops();
        CHECK(r.total_flops() == doctest::Approx(acc));
    }
    SUBCASE("total non-decreasing in f; focused/compact terms scale linearly") {
        double prev = -1.0;
        for (int i = 0; i <= 10; ++i) {
            const double f = i / 10.0;
            FlopsReport r = flops_analytic(32, 32, 3, 64, 64, f, w);
            CHECK(r.total_flops() >= prev);
            prev = r.total_flops();
        }
        FlopsReport full = flops_analytic(32, 32, 3, 64, 64, 1.0, w);
        FlopsReport part = flops_analytic(32, 32, 3, 64, 64, 0.15, w);
        CHECK(full.total_flops() > part.total_flops());
        // the per-pixel MLP savings are exactly 0.85*H*W*(embed+heads cost)
        const double per_pixel_mlp =
            (full.focused_embed.flops() + full.focused_heads.flops()) / 4096.0;
        const double saved = (full.focused_embed.flops() + full.focused_heads.flops()) -
                             (part.focused_embed.flops() + part.focused_heads.flops());
        CHECK(saved == doctest::Approx(0.85 * 4096.0 * per_pixel_mlp).epsilon(1e-12));
    }
}

TEST_CASE("instrumented conv2d counts the closed-form multiplies") {
    Tensor x = oracle::random_tensor({1, 8, 8}, 631);
    Tensor w = oracle::random_tensor({1, 1, 3, 3}, 632);
    Tensor b({1});
    OpCount oc;
    conv2d(x, w, b, 1, &oc);
    CHECK(oc.mul == 576.0); // 64 pixels x 9 taps
    CHECK(oc.add == 576.0);
}

TEST_CASE("instrumented layer agrees with the analytic model") {
    struct Setting {
        std::size_t ci, co, hw;
        double f;
        std::uint64_t seed;
    };
    const Setting settings[] = {{8, 8, 16, 0.3, 641}, {4, 6, 24, 0.15, 642}, {6, 4, 32, 0.6, 643}};
    for (const Setting& s : settings) {
        BiMACOptions opt;
        opt.mask_mode = MaskMode::seeded_random; // fixed fraction, camg still active
        opt.random_fraction = s.f;
        BiMACParams p = make_bimac_params(s.ci, s.co, opt, s.seed);
        Tensor x = oracle::random_tensor({s.ci, s.hw, s.hw}, s.seed + 7);
        FlopsReport inst;
        BiMacCache cc;
        bimac_forward_cached(x, p, cc, &inst);
        inst.routing_fraction = cc.mask.focused_fraction;
        FlopsReport ana = flops_analytic(s.ci, s.co, p.k, s.hw, s.hw,
                                         cc.mask.focused_fraction, widths_for(p));
        const double rel = std::fabs(inst.total_flops() - ana.total_flops()) /
                           ana.total_flops();
        INFO("setting ", s.ci, "x", s.co, " ", s.hw, " f=", s.f, " rel=", rel);
        CHECK(rel < 0.01);  // the contract
        CHECK(rel < 1e-9);  // the model actually mirrors the implementation
        for (std::size_t part = 0; part < ana.parts().size(); ++part) {
            const OpCount* a = ana.parts()[part].second;
            const OpCount* i = inst.parts()[part].second;
            CHECK(a->mul == doctest::Approx(i->mul).epsilon(1e-9));
            CHECK(a->add == doctest::Approx(i->add).epsilon(1e-9));
        }
    }
}

TEST_CASE("focused counters vanish when the focused branch is off") {
    BiMACOptions opt;
    opt.mask_mode = MaskMode::all_compact;
    BiMACParams p = make_bimac_params(4, 4, opt, 651);
    Tensor x = oracle::random_tensor({4, 12, 12}, 652);
    FlopsReport off;
    BiMacCache cc;
    bimac_forward_cached(x, p, cc, &off);
    CHECK(off.focused_embed.flops() == 0.0);
    CHECK(off.focused_heads.flops() == 0.0);
    CHECK(off.focused_conv.flops() == 0.0);

    BiMACOptions opt_full;
    opt_full.alpha = 0.3;
    BiMACParams pf = make_bimac_params(4, 4, opt_full, 651);
    FlopsReport on;
    BiMacCache cc2;
    bimac_forward_cached(x, pf, cc2, &on);
    CHECK(on.camg.flops() == off.camg.flops()); // same mask generator work
    CHECK(on.focused_conv.flops() >= off.focused_conv.flops());
}
