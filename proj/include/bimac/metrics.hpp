#ifndef BIMAC_METRICS_HPP
#define BIMAC_METRICS_HPP

#include "bimac/tensor.hpp"

namespace bimac {

// Mean spectral angle over pixels, in degrees. Pixels with a zero-norm vector
// in either image are skipped; throws MetricError when every pixel is
// degenerate.
double sam(const Tensor& pred, const Tensor& gt);

// 100/ratio * sqrt(mean_b (RMSE_b / mean(gt_b))^2). Throws MetricError on a
// zero band mean.
double ergas(const Tensor& pred, const Tensor& gt, int ratio = 4);

// Hypercomplex universal image-quality index for 4- or 8-band images,
// averaged over non-overlapping block x block windows (partial margins are
// ignored). Identical blocks score exactly 1.
double q2n(const Tensor& pred, const Tensor& gt, std::size_t block = 32);

} // namespace bimac

#endif
