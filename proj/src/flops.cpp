#include "bimac/flops.hpp"

#include <iomanip>
#include <ostream>

namespace bimac {

OpCount FlopsReport::total() const {
    OpCount t;
    for (auto& [name, oc] : parts()) t += *oc;
    return t;
}

FlopsReport& FlopsReport::operator+=(const FlopsReport& o) {
    camg += o.camg;
    compact_gap += o.compact_gap;
    compact_heads += o.compact_heads;
    compact_conv += o.compact_conv;
    focused_embed += o.focused_embed;
    focused_heads += o.focused_heads;
    focused_conv += o.focused_conv;
    bias_block += o.bias_block;
    lowrank_expand += o.lowrank_expand;
    return *this;
}

std::vector<std::pair<std::string, const OpCount*>> FlopsReport::parts() const {
    return {{"camg", &camg},
            {"compact_gap", &compact_gap},
            {"compact_heads", &compact_heads},
            {"compact_conv", &compact_conv},
            {"focused_embed", &focused_embed},
            {"focused_heads", &focused_heads},
            {"focused_conv", &focused_conv},
            {"bias_block", &bias_block},
            {"lowrank_expand", &lowrank_expand}};
}

void FlopsReport::print_text(std::ostream& os) const {
    os << "# operation counts per submodule (1 MAC = 1 mul + 1 add = 2 FLOPs;\n"
          "# nominal counts incl. zero padding; activations/statistics not counted)\n";
    os << std::fixed << std::setprecision(0);
    os << std::left << std::setw(16) << "submodule" << std::right << std::setw(16) << "mul"
       << std::setw(16) << "add" << std::setw(16) << "flops" << '\n';
    for (auto& [name, oc] : parts())
        os << std::left << std::setw(16) << name << std::right << std::setw(16) << oc->mul
           << std::setw(16) << oc->add << std::setw(16) << oc->flops() << '\n';
    const OpCount t = total();
    os << std::left << std::setw(16) << "total" << std::right << std::setw(16) << t.mul
       << std::setw(16) << t.add << std::setw(16) << t.flops() << '\n';
    os << std::setprecision(3) << "routing fraction f = " << routing_fraction
       << ", total = " << t.flops() / 1e6 << " MFLOPs\n";
}

void FlopsReport::print_csv(std::ostream& os) const {
    os << "submodule,mul,add,flops\n" << std::fixed << std::setprecision(0);
    for (auto& [name, oc] : parts())
        os << name << ',' << oc->mul << ',' << oc->add << ',' << oc->flops() << '\n';
    const OpCount t = total();
    os << "total," << t.mul << ',' << t.add << ',' << t.flops() << '\n';
}

FlopsReport flops_analytic(std::size_t c_in, std::size_t c_out, std::size_t k,
                           std::size_t h, std::size_t w, double f,
                           const FlopsWidths& widths) {
    if (f < 0.0 || f > 1.0) throw ConfigError("flops_analytic: f must be in [0,1]");
    const double ci = static_cast<double>(c_in);
    const double co = static_cast<double>(c_out);
    const double kk = static_cast<double>(k * k);
    const double hw = static_cast<double>(h * w);
    const double r = static_cast<double>(widths.embed_r);
    const double mid = static_cast<double>(widths.bias_mid);
    const double ckk = static_cast<double>(widths.camg_k * widths.camg_k);
    const double nf = f * hw;
    const double nc = (1.0 - f) * hw;

    FlopsReport rep;
    rep.routing_fraction = f;

    rep.camg.mul = hw * ci * ci * ckk + ci * hw;
    rep.camg.add = hw * ci * ci * ckk + ci * hw;

    if (f < 1.0) {
        rep.compact_gap.add = ci * nc;
        rep.compact_heads.mul = ci * ci + co * ci + kk * ci + co * ci * (1.0 + 2.0 * kk);
        rep.compact_heads.add = ci * ci + co * ci + kk * ci;
        rep.compact_conv.mul = nc * co * ci * kk;
        rep.compact_conv.add = nc * co * ci * kk;
        rep.lowrank_expand.mul += 2.0 * co * ci * kk;
        rep.lowrank_expand.add += co * ci * kk;
    }
    if (f > 0.0) {
        rep.focused_embed.mul = nf * (r * ci + r * r);
        rep.focused_embed.add = nf * (r * ci + r * r);
        rep.focused_heads.mul = nf * (ci * r + co * r + kk * r + 2.0 * ci * kk + co);
        rep.focused_heads.add = nf * (ci * r + co * r + kk * r);
        rep.focused_conv.mul = nf * co * ci * kk;
        rep.focused_conv.add = nf * co * ci * kk;
        rep.lowrank_expand.mul += 2.0 * co * ci * kk;
        rep.lowrank_expand.add += co * ci * kk;
    }
    rep.bias_block.mul = hw * 9.0 * (mid * ci + mid * mid + co * mid);
    rep.bias_block.add = hw * 9.0 * (mid * ci + mid * mid + co * mid) + co * hw;
    return rep;
}

} // namespace bimac
