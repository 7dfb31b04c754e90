#ifndef BIMAC_REGION_HPP
#define BIMAC_REGION_HPP

#include <vector>

#include "bimac/tensor.hpp"

namespace bimac {

struct PatchProfile {
    std::vector<double> singular;         // descending, normalized so s1 == 1
    std::size_t effective_rank = 0;       // count of s_i >= cutoff * s1
    std::vector<double> radial_power;     // mean |F|^2 per integer radius bin
    std::vector<std::size_t> radial_count;
    double hf_ratio = 0.0;                // energy at radii > Nyquist/2 over total
};

enum class PatchClass { redundant, complex_region };

// Raw singular values of the h x w patch (one-sided Jacobi), descending.
std::vector<double> singular_values(const Tensor& patch);

// Singular values normalized by s1; an all-zero patch yields all zeros.
std::vector<double> svd_spectrum(const Tensor& patch);

// Mean squared DFT magnitude per integer radius around DC (square patches
// only). `counts` receives the number of frequency samples per bin.
std::vector<double> radial_power_spectrum(const Tensor& patch,
                                          std::vector<std::size_t>* counts = nullptr);

PatchProfile analyze_patch(const Tensor& patch, double rank_cutoff = 0.01);

PatchClass classify_patch(const PatchProfile& profile, std::size_t rank_thresh = 5,
                          double hf_thresh = 0.25);

} // namespace bimac

#endif
