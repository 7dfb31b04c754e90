#ifndef BIMAC_MABIC_HPP
#define BIMAC_MABIC_HPP

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "bimac/camg.hpp"
#include "bimac/flops.hpp"
#include "bimac/lowrank.hpp"
#include "bimac/tensor.hpp"

namespace bimac {

// Trainable tensor with its gradient accumulator.
struct Param {
    Tensor v;
    Tensor g;
    explicit Param() = default;
    explicit Param(Tensor value) : v(std::move(value)), g(v.shape) {}
    void zero_grad() { g.fill(0.0); }
};

struct LinearP {
    Param w, b;
};
struct ConvP {
    Param w, b;
};

// Base kernel of one branch: low-rank navigators/coefficients by default,
// or a dense kernel of identical interface for the no-LRK ablation. Carries
// the branch bias (the b0/b1 added after the branch convolution).
struct KernelParam {
    bool lowrank = true;
    Param nav1, coef1, nav2, coef2; // low-rank form
    Param dense;                    // dense form, (C_out,C_in,k,k)
    Param bias;                     // (C_out)

    Tensor materialize(OpCount* tally = nullptr) const;
    void accumulate_grad(const Tensor& g_kernel);
    std::size_t weight_param_count() const;
};

enum class MaskMode {
    camg,          // threshold the generated soft mask
    all_compact,   // T = +inf, every pixel routed to the compact branch
    all_focused,   // T = -inf, every pixel routed to the focused branch
    seeded_random, // fixed random mask with round(fraction*H*W) focused pixels
};

struct ModulationWeights {
    Tensor w_ci; // (C_in)
    Tensor w_co; // (C_out)
    Tensor w_kk; // (k,k)
};

struct BiMACOptions {
    std::size_t k = 3;
    std::size_t embed_r = 0; // 0 -> max(C_in/2, 8)
    std::size_t camg_k = 3;
    std::size_t bias_mid = 8;
    double alpha = 2.0;
    bool use_camg = true;
    MaskMode mask_mode = MaskMode::camg;
    double random_fraction = 0.15;
    bool lowrank = true;
    bool share_kernels = false;
};

struct BiMACParams {
    std::size_t c_in = 0, c_out = 0, k = 3, embed_r = 0, bias_mid = 8;
    double alpha = 2.0;
    bool use_camg = true;
    MaskMode mask_mode = MaskMode::camg;
    double random_fraction = 0.15;
    std::uint64_t mask_seed = 0;

    ConvP camg;               // unused when !use_camg
    LinearP h_ci, h_co, h_kk; // compact heads, input width C_in
    LinearP fc1, fc2;         // focused embedding, C_in -> r -> r
    LinearP g_ci, g_co, g_kk; // focused heads, input width r
    std::shared_ptr<KernelParam> w0, w1;
    ConvP bb1, bb2, bb3; // bias block C_in -> mid -> mid -> C_out

    void zero_grad();
};

BiMACParams make_bimac_params(std::size_t c_in, std::size_t c_out, const BiMACOptions& opt,
                              std::uint64_t seed);

// --- stand-alone pieces -----------------------------------------------------

ModulationWeights compact_weights(const Tensor& v, const BiMACParams& p,
                                  FlopsReport* tally = nullptr);

ModulationWeights focused_weights(const Tensor& c_ij, const BiMACParams& p,
                                  FlopsReport* tally = nullptr);

// W'[o,i,u,v] = W[o,i,u,v] * w_co[o] * w_ci[i] * w_kk[u,v]
Tensor modulate_kernel(const Tensor& w_base, const ModulationWeights& m,
                       OpCount* tally = nullptr);

// Three 3x3 convolutions with ReLU between, applied to the ORIGINAL input.
Tensor bias_block(const Tensor& x, const BiMACParams& p, FlopsReport* tally = nullptr);

// --- full layer --------------------------------------------------------------

struct FocusedPixCache {
    int i = 0, j = 0;
    std::vector<double> h1p, h2p;      // embedding preactivations
    std::vector<double> mci, mco, mkk; // post-sigmoid modulation weights
    std::vector<double> dotf;          // modulated patch . W1 per out channel
};

struct BiMacCache {
    Tensor x;
    MaskPair mask;
    std::vector<Position> compact_pos, focused_pos;
    bool compact_active = false;
    bool focused_active = false;
    Tensor v;                  // compact GAP vector
    std::size_t gap_count = 0; // pixels pooled by the GAP
    ModulationWeights cw;
    Tensor w0_base, w0_mod;
    Tensor w1_base;
    std::vector<FocusedPixCache> fpix;
    Tensor bb1p, bb2p; // bias-block preactivations
};

// Forward pass with cached intermediates. `forced_hm` (1,H,W binary)
// overrides the routing mask; used to freeze routing during gradient checks.
Tensor bimac_forward_cached(const Tensor& x, const BiMACParams& p, BiMacCache& cache,
                            FlopsReport* tally = nullptr, const Tensor* forced_hm = nullptr);

// Contract form: output feature map plus the full mask record.
std::pair<Tensor, MaskPair> bimac_forward(const Tensor& x, const BiMACParams& p);

// Reverse-mode pass. Accumulates parameter gradients into p.*.g and returns
// the gradient w.r.t. x. Routing is treated as constant: gradients flow
// through the soft mask and all branch parameters, never through HM.
Tensor bimac_backward(const Tensor& g_y, BiMACParams& p, const BiMacCache& cache);

// --- shared adjoint helpers (also used by the surrounding network) -----------

// Accumulates gw/gb for a same-size stride-1 convolution and, when gx is
// non-null, adds the input gradient.
void conv2d_backward(const Tensor& x, const Tensor& w, int pad, const Tensor& g_y,
                     Tensor& gw, Tensor& gb, Tensor* gx);

} // namespace bimac

#endif
