#ifndef BIMAC_LOWRANK_HPP
#define BIMAC_LOWRANK_HPP

#include <cstdint>
#include <utility>

#include "bimac/tensor.hpp"

namespace bimac {

// Low-rank convolution kernel: two depthwise navigators with per-(out,in)
// combination coefficients, plus the branch bias. Expanding component n gives
//   W(n)[o,i,u,v] = lambda(n)[o,i] * nav(n)[0,i,u,v]
// and the full kernel is W(1) + W(2).
struct LowRankKernel {
    Tensor nav1;  // (1, C_in, k, k)
    Tensor coef1; // (C_out, C_in)
    Tensor nav2;
    Tensor coef2;
    Tensor bias;  // (C_out)
};

// Seeded init: navigators uniform in +-1/sqrt(C_in*k*k), coefficients uniform
// in +-1/sqrt(C_in), bias zero. Keeps assembled-kernel variance near a
// standard fan-in initialization.
LowRankKernel make_lowrank_kernel(std::size_t c_out, std::size_t c_in, std::size_t k,
                                  std::uint64_t seed);

Tensor expand_component(const Tensor& coef, const Tensor& nav, OpCount* tally = nullptr);

Tensor assemble(const LowRankKernel& kernel, OpCount* tally = nullptr);

// (lowrank, dense) trainable-scalar counts for one kernel of each kind,
// bias included for lowrank per its field list, dense = C_out*C_in*k^2 + C_out.
std::pair<std::size_t, std::size_t> param_count(std::size_t c_in, std::size_t c_out,
                                                std::size_t k);

} // namespace bimac

#endif
