#include "bimac/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "bimac/metrics.hpp"
#include "bimac/tensor_io.hpp"

namespace bimac {

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
    return cfg.lr0 * std::pow(cfg.decay, static_cast<double>(epoch / cfg.period));
}

double l1_loss(const Tensor& pred, const Tensor& gt) {
    if (!pred.same_shape(gt))
        throw DimensionError("l1_loss: shape mismatch " + shape_str(pred) + " vs " +
                             shape_str(gt));
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) acc += std::fabs(pred[i] - gt[i]);
    const double loss = acc / static_cast<double>(pred.numel());
    if (!std::isfinite(loss)) throw NumericError("l1_loss: non-finite loss");
    return loss;
}

Tensor l1_loss_grad(const Tensor& pred, const Tensor& gt, double scale) {
    if (!pred.same_shape(gt)) throw DimensionError("l1_loss_grad: shape mismatch");
    Tensor g(pred.shape);
    const double s = scale / static_cast<double>(pred.numel());
    for (std::size_t i = 0; i < pred.numel(); ++i) {
        const double d = pred[i] - gt[i];
        g[i] = d > 0.0 ? s : (d < 0.0 ? -s : 0.0);
    }
    return g;
}

void adam_init(AdamState& st, const std::vector<NamedParam>& params) {
    st.m.clear();
    st.v.clear();
    st.t = 0;
    for (const NamedParam& np : params) {
        st.m.emplace_back(np.p->v.shape);
        st.v.emplace_back(np.p->v.shape);
    }
}

void adam_step(std::vector<NamedParam>& params, AdamState& st, double lr,
               const TrainConfig& cfg) {
    if (st.m.size() != params.size()) throw StateError("adam_step: state not initialized");
    st.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& theta = params[k].p->v;
        const Tensor& g = params[k].p->g;
        Tensor& m = st.m[k];
        Tensor& v = st.v[k];
        for (std::size_t i = 0; i < theta.numel(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

// --- synthetic data ------------------------------------------------------------------

Tensor synth_scene(std::uint64_t seed, std::size_t c, std::size_t h, std::size_t w,
                   std::size_t k1, std::size_t k2) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Tensor scene({c, h, w});
    const double hd = static_cast<double>(h);
    const double wd = static_cast<double>(w);
    std::vector<double> bands(c);
    for (std::size_t b = 0; b < k1; ++b) {
        // the first blob is a scene-wide illumination floor so no region is
        // left near-black; the rest are ordinary local blobs
        const bool floor_blob = b == 0;
        const double cy = uni(rng) * hd;
        const double cx = uni(rng) * wd;
        const double sig = floor_blob ? 3.0 * hd
                                      : hd / 8.0 + uni(rng) * (hd / 3.0 - hd / 8.0);
        const double amp = floor_blob ? 0.25 + uni(rng) * 0.15 : 0.10 + uni(rng) * 0.25;
        for (std::size_t ch = 0; ch < c; ++ch)
            bands[ch] = floor_blob ? 0.6 + uni(rng) * 0.4 : 0.4 + uni(rng) * 0.6;
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double a = amp * bands[ch];
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x) {
                    const double dy = static_cast<double>(y) - cy;
                    const double dx = static_cast<double>(x) - cx;
                    scene.at3(ch, y, x) += a * std::exp(-(dy * dy + dx * dx) / (2.0 * sig * sig));
                }
        }
    }
    for (std::size_t s = 0; s < k2; ++s) {
        // every third shape is a thin bright bar: sub-decimation width, so it
        // survives only in the panchromatic channel after degradation
        const bool thin = s % 3 == 2;
        const bool rect = thin || uni(rng) < 0.5;
        const double cy = uni(rng) * hd;
        const double cx = uni(rng) * wd;
        double ay, ax;
        if (thin) {
            const bool vertical = uni(rng) < 0.5;
            const double t = 0.6 + 0.6 * uni(rng);
            const double l = hd / 8.0 + uni(rng) * hd / 8.0;
            ay = vertical ? l : t;
            ax = vertical ? t : l;
        } else {
            ay = hd / 16.0 + uni(rng) * (hd / 5.0 - hd / 16.0);
            ax = wd / 16.0 + uni(rng) * (wd / 5.0 - wd / 16.0);
        }
        const double amp = thin ? 0.55 + uni(rng) * 0.35 : 0.45 + uni(rng) * 0.55;
        // block shapes draw bimodal per-band intensities (signatures near
        // hypercube corners mix through wide spectral angles at boundaries);
        // thin bars stay near-white so their spectra are recoverable
        for (std::size_t ch = 0; ch < c; ++ch)
            bands[ch] = thin ? 0.85 + 0.15 * uni(rng)
                             : (uni(rng) < 0.5 ? 0.08 + 0.20 * uni(rng)
                                               : 0.80 + 0.20 * uni(rng));
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) {
                const double dy = static_cast<double>(y) - cy;
                const double dx = static_cast<double>(x) - cx;
                const bool inside = rect
                                        ? (std::fabs(dy) <= ay && std::fabs(dx) <= ax)
                                        : ((dy / ay) * (dy / ay) + (dx / ax) * (dx / ax) <= 1.0);
                if (!inside) continue;
                for (std::size_t ch = 0; ch < c; ++ch)
                    scene.at3(ch, y, x) += amp * bands[ch];
            }
    }
    for (double& v : scene.data) v = std::min(1.0, std::max(0.0, v));
    return scene;
}

namespace {

std::vector<double> gaussian_kernel_1d(double sigma) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-(static_cast<double>(i) * i) / (2.0 * sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    return k;
}

inline int mirror_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -i - 1;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

} // namespace

Tensor gaussian_blur(const Tensor& x, double sigma) {
    if (x.rank() != 3) throw DimensionError("gaussian_blur: x must be (C,h,w)");
    const std::vector<double> ker = gaussian_kernel_1d(sigma);
    const int radius = static_cast<int>(ker.size() / 2);
    const std::size_t c = x.shape[0];
    const int h = static_cast<int>(x.shape[1]);
    const int w = static_cast<int>(x.shape[2]);
    Tensor rows({c, x.shape[1], x.shape[2]});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t)
                    acc += ker[t + radius] * x.at3(ch, i, mirror_index(j + t, w));
                rows.at3(ch, i, j) = acc;
            }
    Tensor out({c, x.shape[1], x.shape[2]});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                double acc = 0.0;
                for (int t = -radius; t <= radius; ++t)
                    acc += ker[t + radius] * rows.at3(ch, mirror_index(i + t, h), j);
                out.at3(ch, i, j) = acc;
            }
    return out;
}

WaldSample wald_degrade(const Tensor& gt, int ratio, double blur_sigma,
                        const std::vector<double>& pan_weights) {
    if (gt.rank() != 3) throw DimensionError("wald_degrade: gt must be (C,h,w)");
    const std::size_t c = gt.shape[0];
    const std::size_t h = gt.shape[1];
    const std::size_t w = gt.shape[2];
    if (h % ratio != 0 || w % ratio != 0)
        throw DimensionError("wald_degrade: extents must be divisible by the ratio");
    std::vector<double> pw = pan_weights;
    if (pw.empty()) pw.assign(c, 1.0 / static_cast<double>(c));
    if (pw.size() != c) throw ConfigError("wald_degrade: pan weight count != bands");
    double sum = 0.0;
    for (double v : pw) {
        if (v < 0.0) throw ConfigError("wald_degrade: pan weights must be non-negative");
        sum += v;
    }
    if (sum <= 0.0) throw ConfigError("wald_degrade: pan weights sum to zero");
    for (double& v : pw) v /= sum;

    WaldSample s;
    s.gt = gt;
    Tensor blurred = gaussian_blur(gt, blur_sigma);
    const std::size_t off = static_cast<std::size_t>(ratio) / 2;
    s.lrms = Tensor({c, h / ratio, w / ratio});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h / ratio; ++y)
            for (std::size_t x = 0; x < w / ratio; ++x)
                s.lrms.at3(ch, y, x) = blurred.at3(ch, y * ratio + off, x * ratio + off);
    s.pan = Tensor({1, h, w});
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double acc = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) acc += pw[ch] * gt.at3(ch, y, x);
            s.pan.at3(0, y, x) = acc;
        }
    return s;
}

// --- training loop -------------------------------------------------------------------

namespace {

// platform-stable permutation (avoids implementation-defined std::shuffle)
void shuffle_indices(std::vector<std::size_t>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

std::pair<double, double> val_metrics(Bi2MANet& net, const std::vector<WaldSample>& val) {
    if (val.empty()) return {0.0, 0.0};
    double s = 0.0, e = 0.0;
    for (const WaldSample& sample : val) {
        Tensor pred = net.forward(sample.pan, sample.lrms);
        s += sam(pred, sample.gt);
        e += ergas(pred, sample.gt);
    }
    return {s / static_cast<double>(val.size()), e / static_cast<double>(val.size())};
}

} // namespace

TrainResult train(Bi2MANet& net, const std::vector<WaldSample>& train_set,
                  const std::vector<WaldSample>& val_set, const TrainConfig& cfg) {
    if (train_set.empty()) throw DataError("train: empty training set");
    TrainResult result;
    std::vector<NamedParam> params = net.params();
    AdamState state;
    adam_init(state, params);
    std::vector<std::size_t> order(train_set.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    long iter = 0;
    bool stop = false;
    for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
        const double lr = lr_at_epoch(cfg, epoch);
        std::mt19937_64 erng(cfg.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch));
        shuffle_indices(order, erng);
        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t stop_at = std::min(order.size(), start + cfg.batch);
            const std::size_t bs = stop_at - start;
            net.zero_grad();
            double batch_loss = 0.0;
            for (std::size_t q = start; q < stop_at; ++q) {
                const WaldSample& s = train_set[order[q]];
                NetCache cache;
                Tensor pred = net.forward(s.pan, s.lrms, &cache);
                const double loss = l1_loss(pred, s.gt);
                if (!std::isfinite(loss)) throw NumericError("train: loss became non-finite");
                batch_loss += loss;
                Tensor g = l1_loss_grad(pred, s.gt, 1.0 / static_cast<double>(bs));
                net.backward(g, cache);
            }
            adam_step(params, state, lr, cfg);
            epoch_loss += batch_loss / static_cast<double>(bs);
            ++epoch_batches;
            ++iter;
            if (cfg.max_iters > 0 && iter >= cfg.max_iters) {
                stop = true;
                break;
            }
        }
        auto [vsam, vergas] = val_metrics(net, val_set);
        EpochRow row;
        row.epoch = epoch;
        row.lr = lr;
        row.train_l1 = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
        row.val_sam = vsam;
        row.val_ergas = vergas;
        result.trace.push_back(row);
    }
    result.iterations = iter;
    return result;
}

void write_trace_csv(const std::string& path, const std::vector<EpochRow>& rows) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "epoch,lr,train_l1,val_sam,val_ergas\n";
    char buf[256];
    for (const EpochRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", r.epoch, r.lr,
                      r.train_l1, r.val_sam, r.val_ergas);
        os << buf;
    }
}

// --- dataset files -------------------------------------------------------------------

void save_dataset(const std::string& dir, const std::vector<WaldSample>& train_set,
                  const std::vector<WaldSample>& val_set) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::size_t total = train_set.size() + val_set.size();
    if (total == 0) throw DataError("save_dataset: nothing to write");
    const Tensor& ref = train_set.empty() ? val_set[0].gt : train_set[0].gt;
    std::ofstream man(dir + "/manifest.txt");
    if (!man) throw DataError("cannot write manifest in " + dir);
    man << "count=" << total << "\n"
        << "val_count=" << val_set.size() << "\n"
        << "bands=" << ref.shape[0] << "\n"
        << "h=" << ref.shape[1] << "\n"
        << "w=" << ref.shape[2] << "\n";
    std::size_t i = 0;
    auto dump = [&](const WaldSample& s) {
        write_bmt(dir + "/gt_" + std::to_string(i) + ".bmt", s.gt);
        write_bmt(dir + "/pan_" + std::to_string(i) + ".bmt", s.pan);
        write_bmt(dir + "/lrms_" + std::to_string(i) + ".bmt", s.lrms);
        ++i;
    };
    for (const WaldSample& s : train_set) dump(s);
    for (const WaldSample& s : val_set) dump(s);
}

std::pair<std::vector<WaldSample>, std::vector<WaldSample>> load_dataset(
    const std::string& dir) {
    std::ifstream man(dir + "/manifest.txt");
    if (!man) throw DataError("missing manifest: " + dir + "/manifest.txt");
    std::size_t count = 0, val_count = 0;
    std::string line;
    while (std::getline(man, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "count") count = std::stoul(val);
        if (key == "val_count") val_count = std::stoul(val);
    }
    if (count == 0) throw DataError("manifest declares no samples: " + dir);
    if (val_count > count) throw DataError("manifest val_count exceeds count: " + dir);
    std::vector<WaldSample> tr, va;
    for (std::size_t i = 0; i < count; ++i) {
        WaldSample s;
        s.gt = read_bmt(dir + "/gt_" + std::to_string(i) + ".bmt");
        s.pan = read_bmt(dir + "/pan_" + std::to_string(i) + ".bmt");
        s.lrms = read_bmt(dir + "/lrms_" + std::to_string(i) + ".bmt");
        if (i < count - val_count)
            tr.push_back(std::move(s));
        else
            va.push_back(std::move(s));
    }
    return {std::move(tr), std::move(va)};
}

// --- gradient verification -----------------------------------------------------------

namespace {

std::string group_of(const std::string& name) {
    auto has = [&name](const char* s) { return name.find(s) != std::string::npos; };
    if (has(".camg.")) return "camg_conv";
    if (has(".hci.") || has(".hco.") || has(".hkk.")) return "compact_heads";
    if (has(".fc1.") || has(".fc2.")) return "focused_embed";
    if (has(".gci.") || has(".gco.") || has(".gkk.")) return "focused_heads";
    if (has(".nav")) return "navigators";
    if (has(".coef")) return "coefficients";
    if (has(".w0.bias") || has(".w1.bias")) return "branch_biases";
    if (has(".dense")) return "dense_kernels";
    if (has(".bb1.") || has(".bb2.") || has(".bb3.")) return "bias_block";
    return "unet_convs";
}

} // namespace

std::vector<GradCheckResult> gradient_check(Bi2MANet& net, const WaldSample& sample,
                                            std::size_t probes_per_group, double step,
                                            double tol, std::uint64_t seed) {
    // capture the routing decisions once and freeze them for every evaluation
    std::vector<LayerMaskRecord> records;
    net.forward(sample.pan, sample.lrms, nullptr, &records);
    std::vector<Tensor> frozen;
    frozen.reserve(records.size());
    for (const LayerMaskRecord& r : records) frozen.push_back(r.hm);

    NetCache cache;
    net.zero_grad();
    Tensor pred = net.forward(sample.pan, sample.lrms, &cache, nullptr, &frozen);
    Tensor g = l1_loss_grad(pred, sample.gt);
    net.backward(g, cache);

    auto loss_at = [&]() {
        Tensor p = net.forward(sample.pan, sample.lrms, nullptr, nullptr, &frozen);
        return l1_loss(p, sample.gt);
    };

    std::map<std::string, std::vector<NamedParam>> groups;
    for (NamedParam& np : net.params()) groups[group_of(np.name)].push_back(np);

    std::mt19937_64 rng(seed);
    std::vector<GradCheckResult> out;
    for (auto& [gname, members] : groups) {
        std::size_t total = 0;
        for (NamedParam& np : members) total += np.p->v.numel();
        GradCheckResult res;
        res.group = gname;
        res.probes = std::min<std::size_t>(probes_per_group, total);
        double worst = 0.0;
        for (std::size_t probe = 0; probe < res.probes; ++probe) {
            std::size_t flat = static_cast<std::size_t>(rng() % total);
            Param* target = nullptr;
            for (NamedParam& np : members) {
                if (flat < np.p->v.numel()) {
                    target = np.p;
                    break;
                }
                flat -= np.p->v.numel();
            }
            const double theta = target->v[flat];
            target->v[flat] = theta + step;
            const double lp = loss_at();
            target->v[flat] = theta - step;
            const double lm = loss_at();
            target->v[flat] = theta;
            const double fd = (lp - lm) / (2.0 * step);
            const double an = target->g[flat];
            const double rel = std::fabs(fd - an) / std::max(std::fabs(fd) + std::fabs(an), 1e-6);
            worst = std::max(worst, rel);
        }
        res.max_rel_err = worst;
        res.pass = worst < tol;
        out.push_back(std::move(res));
    }
    return out;
}

} // namespace bimac
