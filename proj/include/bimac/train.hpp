#ifndef BIMAC_TRAIN_HPP
#define BIMAC_TRAIN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "bimac/bimanet.hpp"
#include "bimac/tensor.hpp"

namespace bimac {

struct TrainConfig {
    double lr0 = 6e-4;
    double decay = 0.8;
    int period = 200;      // epochs between decays
    int batch = 32;
    int epochs = 400;
    long max_iters = 0;    // 0 = no iteration cap
    std::uint64_t seed = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct WaldSample {
    Tensor gt;   // (C,h,w)
    Tensor pan;  // (1,h,w)
    Tensor lrms; // (C,h/4,w/4)
};

// Mean absolute error.
double l1_loss(const Tensor& pred, const Tensor& gt);
// d(l1)/d(pred), scaled by `scale`; the subgradient at pred==gt is 0.
Tensor l1_loss_grad(const Tensor& pred, const Tensor& gt, double scale = 1.0);

struct AdamState {
    std::vector<Tensor> m, v;
    long t = 0;
};
void adam_init(AdamState& st, const std::vector<NamedParam>& params);
void adam_step(std::vector<NamedParam>& params, AdamState& st, double lr,
               const TrainConfig& cfg);

// Synthetic scene: K1 smooth Gaussian blobs (redundant background) plus K2
// hard-edged rectangles/ellipses with band-correlated intensities (complex
// foreground), clamped to [0,1].
Tensor synth_scene(std::uint64_t seed, std::size_t c, std::size_t h, std::size_t w,
                   std::size_t k1 = 6, std::size_t k2 = 8);

// Gaussian blur (mirrored borders, normalized kernel), point decimation at
// phase ratio/2, and a normalized band mix for the PAN channel.
WaldSample wald_degrade(const Tensor& gt, int ratio = 4, double blur_sigma = 1.7,
                        const std::vector<double>& pan_weights = {});

Tensor gaussian_blur(const Tensor& x, double sigma);

struct EpochRow {
    int epoch = 0;
    double lr = 0.0;
    double train_l1 = 0.0;
    double val_sam = 0.0;
    double val_ergas = 0.0;
};

struct TrainResult {
    std::vector<EpochRow> trace;
    long iterations = 0;
};

TrainResult train(Bi2MANet& net, const std::vector<WaldSample>& train_set,
                  const std::vector<WaldSample>& val_set, const TrainConfig& cfg);

void write_trace_csv(const std::string& path, const std::vector<EpochRow>& rows);

// Dataset directory: gt_i.bmt / pan_i.bmt / lrms_i.bmt plus manifest.txt
// (count, val_count, bands, h, w). Validation samples occupy the tail indices.
void save_dataset(const std::string& dir, const std::vector<WaldSample>& train_set,
                  const std::vector<WaldSample>& val_set);
std::pair<std::vector<WaldSample>, std::vector<WaldSample>> load_dataset(
    const std::string& dir);

// --- gradient verification ------------------------------------------------------

struct GradCheckResult {
    std::string group;
    std::size_t probes = 0;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Central finite differences against the reverse-mode gradients of the mean
// l1 loss on one sample, with the routing masks frozen at their baseline
// values. Probes are drawn per parameter group.
std::vector<GradCheckResult> gradient_check(Bi2MANet& net, const WaldSample& sample,
                                            std::size_t probes_per_group, double step,
                                            double tol, std::uint64_t seed);

} // namespace bimac

#endif
