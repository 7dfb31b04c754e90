#ifndef BIMAC_BIMANET_HPP
#define BIMAC_BIMANET_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "bimac/mabic.hpp"

namespace bimac {

enum class Ablation { full, no_focused, no_compact, no_camg, no_lrk, shared_weights };

Ablation ablation_from_string(const std::string& s);
std::string ablation_to_string(Ablation a);

struct NetConfig {
    std::size_t bands = 4;         // spectral bands C (4 or 8 for Q2n)
    std::size_t base_channels = 32;
    std::size_t depth = 3;         // scales 1,2,...,2^(depth-1)
    std::size_t blocks = 1;        // residual blocks per level
    std::size_t k = 3;
    double alpha = 2.0;
    std::size_t embed_r = 0;       // 0 -> max(base/2, 8)
    std::size_t camg_k = 3;
    Ablation ablation = Ablation::full;
    double random_hm_fraction = 0.15; // routing fraction of the random-mask ablation
};

// Catmull-Rom bicubic upsampling with half-pixel alignment and replicated
// borders. (C,h,w) -> (C, factor*h, factor*w).
Tensor upsample_bicubic(const Tensor& x, std::size_t factor);

struct ResBlockP {
    BiMACParams m1, m2;
};

// y = x + M2(relu(M1(x)))
Tensor resblock_forward(const Tensor& x, ResBlockP& rb);

struct ResBlockCache {
    BiMacCache c1, c2;
    Tensor mid_pre; // output of the first layer, before ReLU
};

struct DecCache {
    Tensor up_nn;   // nearest-neighbor upsampled input (conv input)
    Tensor cat;     // concat(up conv output, skip)
    std::vector<ResBlockCache> blocks;
};

struct NetCache {
    Tensor up4;
    Tensor x0;
    std::vector<std::vector<ResBlockCache>> enc;
    std::vector<Tensor> enc_out; // skip sources / downsample inputs
    std::vector<ResBlockCache> bott;
    std::vector<DecCache> dec;
    Tensor dec_out; // head conv input
};

struct LayerMaskRecord {
    std::size_t layer = 0;
    std::size_t scale = 1;
    Tensor sm_f;
    Tensor hm;
    double focused_fraction = 0.0;
    double T = 0.0, mu = 0.0, sigma_s = 0.0;
};

struct NamedParam {
    std::string name;
    Param* p;
};

struct LayerGeometry {
    std::size_t layer = 0;
    std::size_t scale = 1;
    std::size_t c_in = 0, c_out = 0;
};

// U-Net over mask-aware bimodal convolution ResBlocks. Input is the channel
// concatenation of PAN and the 4x-upsampled LRMS; the upsampled LRMS is added
// back onto the head output, so the all-zero network is the identity on it.
class Bi2MANet {
public:
    Bi2MANet(const NetConfig& cfg, std::uint64_t seed);

    Tensor forward(const Tensor& pan, const Tensor& lrms, NetCache* cache = nullptr,
                   std::vector<LayerMaskRecord>* mask_capture = nullptr,
                   const std::vector<Tensor>* forced_masks = nullptr,
                   FlopsReport* engine_tally = nullptr);

    // Accumulates parameter gradients for d(loss)/d(output) = g_out.
    void backward(const Tensor& g_out, const NetCache& cache);

    std::vector<NamedParam> params(); // deduplicated, deterministic order
    void zero_grad();
    void set_all_zero();
    std::size_t param_count();         // whole network
    std::size_t engine_param_count();  // adaptive-convolution layers only
    std::size_t bimac_layer_count() const;
    std::vector<LayerGeometry> layer_geometries(std::size_t h, std::size_t w) const;

    void save_checkpoint(const std::string& path);
    void load_checkpoint(const std::string& path);

    const NetConfig& config() const { return cfg_; }

private:
    NetConfig cfg_;
    ConvP stem_;
    std::vector<std::vector<ResBlockP>> enc_;
    std::vector<ConvP> down_;
    std::vector<ResBlockP> bott_;
    std::vector<ConvP> up_;   // conv after nearest-neighbor upsample
    std::vector<ConvP> fuse_; // 1x1 conv after skip concatenation
    std::vector<std::vector<ResBlockP>> decb_;
    ConvP head_;

    friend struct NetWalk;
};

// Engine-level operation tally of one full forward pass; routing_fraction is
// the pixel-weighted mean focused fraction across layers.
FlopsReport flops_instrumented(Bi2MANet& net, const Tensor& pan, const Tensor& lrms);

} // namespace bimac

#endif
