#ifndef BIMAC_FLOPS_HPP
#define BIMAC_FLOPS_HPP

#include <iosfwd>
#include <string>

#include "bimac/tensor.hpp"

namespace bimac {

// Per-submodule operation accounting for one (or several aggregated) mask-
// aware bimodal convolution layers. Counts are nominal: zero-padded taps are
// included, activation functions and routing statistics are not counted.
// 1 multiply-accumulate = 1 mul + 1 add = 2 FLOPs.
struct FlopsReport {
    OpCount camg;
    OpCount compact_gap;
    OpCount compact_heads;
    OpCount compact_conv;
    OpCount focused_embed;
    OpCount focused_heads;
    OpCount focused_conv;
    OpCount bias_block;
    OpCount lowrank_expand;
    double routing_fraction = 0.0;

    OpCount total() const;
    double total_flops() const { return total().flops(); }
    FlopsReport& operator+=(const FlopsReport& o);

    // (name, counts) view in a fixed order for reporting and tests
    std::vector<std::pair<std::string, const OpCount*>> parts() const;

    void print_text(std::ostream& os) const;
    void print_csv(std::ostream& os) const;
};

struct FlopsWidths {
    std::size_t embed_r = 16;  // focused-branch hidden width
    std::size_t bias_mid = 8;  // bias-block middle channels
    std::size_t camg_k = 3;    // mask-generator kernel size
};

// Closed-form counts for one layer at routing fraction f (fraction of pixels
// in the focused branch). Mirrors the instrumented tally exactly, up to the
// fractional pixel counts f*H*W.
FlopsReport flops_analytic(std::size_t c_in, std::size_t c_out, std::size_t k,
                           std::size_t h, std::size_t w, double f,
                           const FlopsWidths& widths);

} // namespace bimac

#endif
