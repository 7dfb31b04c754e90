#include "bimac/lowrank.hpp"

#include <cmath>
#include <random>

namespace bimac {

LowRankKernel make_lowrank_kernel(std::size_t c_out, std::size_t c_in, std::size_t k,
                                  std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double nav_a = 1.0 / std::sqrt(static_cast<double>(c_in * k * k));
    const double coef_a = 1.0 / std::sqrt(static_cast<double>(c_in));
    std::uniform_real_distribution<double> nav_d(-nav_a, nav_a);
    std::uniform_real_distribution<double> coef_d(-coef_a, coef_a);
    LowRankKernel kr;
    kr.nav1 = Tensor({1, c_in, k, k});
    kr.nav2 = Tensor({1, c_in, k, k});
    kr.coef1 = Tensor({c_out, c_in});
    kr.coef2 = Tensor({c_out, c_in});
    kr.bias = Tensor({c_out});
    for (double& v : kr.nav1.data) v = nav_d(rng);
    for (double& v : kr.nav2.data) v = nav_d(rng);
    for (double& v : kr.coef1.data) v = coef_d(rng);
    for (double& v : kr.coef2.data) v = coef_d(rng);
    return kr;
}

Tensor expand_component(const Tensor& coef, const Tensor& nav, OpCount* tally) {
    if (nav.rank() != 4 || nav.shape[0] != 1 || coef.rank() != 2 ||
        coef.shape[1] != nav.shape[1])
        throw DimensionError("expand_component: coef" + shape_str(coef) + " nav" +
                             shape_str(nav) + " inconsistent");
    const std::size_t co = coef.shape[0];
    const std::size_t ci = coef.shape[1];
    const std::size_t k = nav.shape[2];
    const std::size_t kk = k * nav.shape[3];
    Tensor w({co, ci, k, nav.shape[3]});
    for (std::size_t o = 0; o < co; ++o)
        for (std::size_t i = 0; i < ci; ++i) {
            const double lam = coef.at2(o, i);
            const double* src = nav.ptr() + i * kk;
            double* dst = w.ptr() + (o * ci + i) * kk;
            for (std::size_t t = 0; t < kk; ++t) dst[t] = lam * src[t];
        }
    if (tally) tally->mul += static_cast<double>(co) * ci * kk;
    return w;
}

Tensor assemble(const LowRankKernel& kernel, OpCount* tally) {
    Tensor w1 = expand_component(kernel.coef1, kernel.nav1, tally);
    Tensor w2 = expand_component(kernel.coef2, kernel.nav2, tally);
    if (!w1.same_shape(w2))
        throw DimensionError("assemble: component shapes differ");
    for (std::size_t t = 0; t < w1.numel(); ++t) w1[t] += w2[t];
    if (tally) tally->add += static_cast<double>(w1.numel());
    return w1;
}

std::pair<std::size_t, std::size_t> param_count(std::size_t c_in, std::size_t c_out,
                                                std::size_t k) {
    const std::size_t lowrank = 2 * (c_in * k * k + c_out * c_in) + c_out;
    const std::size_t dense = c_out * c_in * k * k + c_out;
    return {lowrank, dense};
}

} // namespace bimac
