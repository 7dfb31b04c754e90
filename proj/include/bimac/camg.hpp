#ifndef BIMAC_CAMG_HPP
#define BIMAC_CAMG_HPP

#include "bimac/tensor.hpp"

namespace bimac {

// Parameters of the content-adaptive mask generator: one same-size
// convolution (C_in -> C_in, odd kernel) plus the threshold multiplier alpha.
struct CamgParams {
    Tensor conv_w; // (C_in, C_in, k, k)
    Tensor conv_b; // (C_in)
    double alpha = 2.0;
};

// Everything the mask generator produces for one input.
//   sm        soft mask, entries strictly in (0,1)
//   x_mod     sm-modulated input features
//   sm_f      per-pixel channel mean of sm, (1,H,W)
//   mu        spatial mean of sm_f
//   sigma_s   population standard deviation of sm_f
//   T         mu + alpha * sigma_s
//   hm        binary routing mask, 1 where sm_f > T (strict)
struct MaskPair {
    Tensor sm;
    Tensor x_mod;
    Tensor sm_f;
    double mu = 0.0;
    double sigma_s = 0.0;
    double alpha = 0.0;
    double T = 0.0;
    Tensor hm;
    double focused_fraction = 0.0;
};

struct HardMask {
    Tensor sm_f;
    double mu = 0.0;
    double sigma_s = 0.0;
    double T = 0.0;
    Tensor hm;
};

// sigmoid(conv(x)); output entries are strictly inside (0,1).
Tensor soft_mask(const Tensor& x, const CamgParams& p, OpCount* tally = nullptr);

// Elementwise product x * sm.
Tensor modulate(const Tensor& x, const Tensor& sm, OpCount* tally = nullptr);

// Channel-mean flattening, threshold statistics, strict binarization.
// Ties (sm_f == T) go to the compact branch.
HardMask hard_mask(const Tensor& sm, double alpha, OpCount* tally = nullptr);

MaskPair camg_forward(const Tensor& x, const CamgParams& p, OpCount* tally = nullptr);

} // namespace bimac

#endif
