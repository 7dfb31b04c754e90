#include "bimac/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "bimac/config.hpp"
#include "bimac/metrics.hpp"
#include "bimac/region.hpp"
#include "bimac/tensor_io.hpp"

namespace bimac {

namespace {

namespace fs = std::filesystem;

std::uint64_t sample_seed(std::uint64_t master, std::size_t index) {
    return master * 0x100000001b3ULL + 0xcbf29ce484222325ULL + index;
}

void make_dataset(const RunConfig& cfg, std::vector<WaldSample>& tr,
                  std::vector<WaldSample>& va) {
    for (std::size_t i = 0; i < cfg.data_count + cfg.data_val_count; ++i) {
        Tensor scene = synth_scene(sample_seed(cfg.train.seed, i), cfg.net.bands,
                                   cfg.data_h, cfg.data_w);
        WaldSample s = wald_degrade(scene, 4, cfg.data_blur_sigma, cfg.pan_weights);
        if (i < cfg.data_count)
            tr.push_back(std::move(s));
        else
            va.push_back(std::move(s));
    }
}

int cmd_synth(const std::string& config_path) {
    const RunConfig cfg = parse_config_file(config_path);
    std::vector<WaldSample> tr, va;
    make_dataset(cfg, tr, va);
    save_dataset(cfg.data_dir, tr, va);
    std::printf("wrote %zu train + %zu val samples (%zux%zux%zu) to %s\n", tr.size(),
                va.size(), cfg.net.bands, cfg.data_h, cfg.data_w, cfg.data_dir.c_str());
    return 0;
}

int cmd_train(const std::string& config_path) {
    const RunConfig cfg = parse_config_file(config_path);
    auto [tr, va] = load_dataset(cfg.data_dir);
    Bi2MANet net(cfg.net, cfg.train.seed);
    std::printf("net: %zu parameters (%zu in adaptive layers), %zu bimodal layers\n",
                net.param_count(), net.engine_param_count(), net.bimac_layer_count());
    TrainResult res = train(net, tr, va, cfg.train);
    fs::create_directories(cfg.out_dir);
    net.save_checkpoint(cfg.out_dir + "/checkpoint.bmck");
    write_trace_csv(cfg.out_dir + "/loss_trace.csv", res.trace);
    if (!res.trace.empty()) {
        const EpochRow& last = res.trace.back();
        std::printf("trained %ld iterations; final train l1 %.6g, val SAM %.4f, val ERGAS %.4f\n",
                    res.iterations, last.train_l1, last.val_sam, last.val_ergas);
    } else {
        std::printf("trained 0 iterations (epochs=0); checkpoint equals initialization\n");
    }
    std::printf("artifacts: %s/checkpoint.bmck, %s/loss_trace.csv\n", cfg.out_dir.c_str(),
                cfg.out_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& data_dir, const std::string& split, bool baseline,
             const std::string& out_csv) {
    const RunConfig cfg = parse_config_file(config_path);
    auto [tr, va] = load_dataset(data_dir.empty() ? cfg.data_dir : data_dir);
    std::vector<WaldSample> samples;
    if (split == "train") samples = std::move(tr);
    else if (split == "val") samples = std::move(va);
    else if (split == "all") {
        samples = std::move(tr);
        for (WaldSample& s : va) samples.push_back(std::move(s));
    } else
        throw ConfigError("eval: split must be train|val|all");
    if (samples.empty()) throw DataError("eval: selected split is empty");

    Bi2MANet net(cfg.net, cfg.train.seed);
    if (!baseline) {
        if (checkpoint.empty()) throw ConfigError("eval: --checkpoint required (or --baseline)");
        net.load_checkpoint(checkpoint);
    }
    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!out_csv.empty()) {
        file.open(out_csv);
        if (!file) throw DataError("cannot open for writing: " + out_csv);
        os = &file;
    }
    *os << "index,sam,ergas,q2n\n";
    double ssam = 0.0, sergas = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const WaldSample& s = samples[i];
        Tensor pred = baseline ? upsample_bicubic(s.lrms, 4) : net.forward(s.pan, s.lrms);
        const double m1 = sam(pred, s.gt);
        const double m2 = ergas(pred, s.gt);
        const std::size_t block = std::min<std::size_t>(32, std::min(s.gt.shape[1], s.gt.shape[2]));
        const double m3 = q2n(pred, s.gt, block);
        char buf[160];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, m1, m2, m3);
        *os << buf;
        ssam += m1;
        sergas += m2;
        sq += m3;
    }
    const double n = static_cast<double>(samples.size());
    std::printf("%s over %zu samples: SAM %.4f, ERGAS %.4f, Q2n %.4f\n",
                baseline ? "bicubic baseline" : "model", samples.size(), ssam / n,
                sergas / n, sq / n);
    return 0;
}

int cmd_mask_dump(const std::string& config_path, const std::string& checkpoint,
                  const std::string& data_dir, std::size_t index, long layer,
                  const std::string& out_dir) {
    const RunConfig cfg = parse_config_file(config_path);
    auto [tr, va] = load_dataset(data_dir.empty() ? cfg.data_dir : data_dir);
    std::vector<WaldSample> all = std::move(tr);
    for (WaldSample& s : va) all.push_back(std::move(s));
    if (index >= all.size()) throw DataError("mask-dump: sample index out of range");
    Bi2MANet net(cfg.net, cfg.train.seed);
    if (!checkpoint.empty()) net.load_checkpoint(checkpoint);
    std::vector<LayerMaskRecord> records;
    net.forward(all[index].pan, all[index].lrms, nullptr, &records);
    fs::create_directories(out_dir);
    std::size_t written = 0;
    for (const LayerMaskRecord& r : records) {
        if (layer >= 0 && static_cast<std::size_t>(layer) != r.layer) continue;
        const std::string stem =
            out_dir + "/layer" + std::to_string(r.layer) + "_scale" + std::to_string(r.scale);
        if (!r.sm_f.empty()) {
            Tensor smf2({r.sm_f.shape[1], r.sm_f.shape[2]});
            smf2.data = r.sm_f.data;
            write_pgm_autoscale(stem + "_smf.pgm", smf2);
        }
        Tensor hm2({r.hm.shape[1], r.hm.shape[2]});
        hm2.data = r.hm.data;
        write_pgm(stem + "_hm.pgm", hm2, 0.0, 1.0);
        std::printf("layer %zu (scale %zu): focused fraction %.4f -> %s_{smf,hm}.pgm\n",
                    r.layer, r.scale, r.focused_fraction, stem.c_str());
        ++written;
    }
    if (written == 0) throw ConfigError("mask-dump: no layer matched the request");
    return 0;
}

int cmd_flops(const std::string& config_path, double f, std::size_t height,
              std::size_t width, const std::string& csv_path) {
    const RunConfig cfg = parse_config_file(config_path);
    Bi2MANet net(cfg.net, cfg.train.seed);
    FlopsWidths widths;
    widths.embed_r = cfg.net.embed_r ? cfg.net.embed_r
                                     : std::max<std::size_t>(cfg.net.base_channels / 2, 8);
    widths.bias_mid = 8;
    widths.camg_k = cfg.net.camg_k;
    FlopsReport total;
    total.routing_fraction = f;
    for (const LayerGeometry& g : net.layer_geometries(height, width)) {
        FlopsReport layer = flops_analytic(g.c_in, g.c_out, cfg.net.k, height / g.scale,
                                           width / g.scale, f, widths);
        total += layer;
    }
    std::printf("analytic adaptive-engine counts, %zu layers, input %zux%zu, f=%.3f\n",
                net.bimac_layer_count(), height, width, f);
    total.print_text(std::cout);
    std::printf("engine parameters: %zu (whole net: %zu)\n", net.engine_param_count(),
                net.param_count());
    std::printf("context: the original Bi2MAC engine reports 152.91 MFLOPs and 16322\n"
                "parameters at C=32, 64x64, f=0.15; internal widths differ, so the\n"
                "numbers above are not expected to match it exactly.\n");
    if (!csv_path.empty()) {
        std::ofstream os(csv_path);
        if (!os) throw DataError("cannot open for writing: " + csv_path);
        total.print_csv(os);
    }
    return 0;
}

int cmd_gradcheck(const std::string& config_path, std::size_t probes) {
    const RunConfig cfg = parse_config_file(config_path);
    Bi2MANet net(cfg.net, cfg.train.seed);
    Tensor scene = synth_scene(sample_seed(cfg.train.seed, 0), cfg.net.bands, cfg.data_h,
                               cfg.data_w);
    WaldSample s = wald_degrade(scene, 4, cfg.data_blur_sigma, cfg.pan_weights);
    const std::vector<GradCheckResult> results =
        gradient_check(net, s, probes, 1e-5, 1e-4, cfg.train.seed + 17);
    bool ok = true;
    for (const GradCheckResult& r : results) {
        std::printf("%-16s probes %3zu  max rel err %.3e  %s\n", r.group.c_str(), r.probes,
                    r.max_rel_err, r.pass ? "ok" : "FAIL");
        ok = ok && r.pass;
    }
    return ok ? 0 : 5;
}

int cmd_analyze(const std::string& input, std::size_t patch, const std::string& out_csv,
                const std::string& map_path) {
    Tensor plane;
    if (input.size() > 4 && input.substr(input.size() - 4) == ".pgm") {
        plane = read_pgm(input);
    } else {
        Tensor t = read_bmt(input);
        if (t.rank() == 2) {
            plane = t;
        } else if (t.rank() == 3) {
            // analyze the channel mean
            plane = Tensor({t.shape[1], t.shape[2]});
            for (std::size_t c = 0; c < t.shape[0]; ++c)
                for (std::size_t q = 0; q < plane.numel(); ++q)
                    plane[q] += t[c * plane.numel() + q];
            for (double& v : plane.data) v /= static_cast<double>(t.shape[0]);
        } else
            throw DataError("analyze: input tensor must be rank 2 or 3");
    }
    if (patch < 2) throw ConfigError("analyze: patch size must be >= 2");
    if (plane.shape[0] < patch || plane.shape[1] < patch)
        throw DataError("analyze: image smaller than the patch size");

    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!out_csv.empty()) {
        file.open(out_csv);
        if (!file) throw DataError("cannot open for writing: " + out_csv);
        os = &file;
    }
    *os << "patch,row,col,s1,s2,s3,s4,s5,s6,s7,s8,eff_rank,hf_ratio,class\n";
    const std::size_t rows = plane.shape[0] / patch;
    const std::size_t cols = plane.shape[1] / patch;
    Tensor class_map({rows * patch, cols * patch});
    std::size_t id = 0;
    for (std::size_t bi = 0; bi < rows; ++bi)
        for (std::size_t bj = 0; bj < cols; ++bj, ++id) {
            Tensor tile({patch, patch});
            for (std::size_t y = 0; y < patch; ++y)
                for (std::size_t x = 0; x < patch; ++x)
                    tile.at2(y, x) = plane.at2(bi * patch + y, bj * patch + x);
            PatchProfile prof = analyze_patch(tile);
            const PatchClass cls = classify_patch(prof);
            char buf[400];
            int n = std::snprintf(buf, sizeof buf, "%zu,%zu,%zu", id, bi, bj);
            for (std::size_t s = 0; s < 8; ++s)
                n += std::snprintf(buf + n, sizeof buf - n, ",%.6g",
                                   s < prof.singular.size() ? prof.singular[s] : 0.0);
            std::snprintf(buf + n, sizeof buf - n, ",%zu,%.6g,%s\n", prof.effective_rank,
                          prof.hf_ratio,
                          cls == PatchClass::complex_region ? "complex" : "redundant");
            *os << buf;
            if (!map_path.empty()) {
                const double v = cls == PatchClass::complex_region ? 1.0 : 0.0;
                for (std::size_t y = 0; y < patch; ++y)
                    for (std::size_t x = 0; x < patch; ++x)
                        class_map.at2(bi * patch + y, bj * patch + x) = v;
            }
        }
    if (!map_path.empty()) write_pgm(map_path, class_map, 0.0, 1.0);
    std::printf("analyzed %zu patches of %zux%zu\n", id, patch, patch);
    return 0;
}

} // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"mask-routed bimodal adaptive convolution toolkit"};
    app.require_subcommand(1);
    const std::string keys = config_keys_help();

    std::string config_path, checkpoint, data_dir, out_csv, map_path, split = "val";
    std::string input, out_dir = "masks";
    double f = 0.15;
    std::size_t height = 64, width = 64, probes = 20, patch = 16, index = 0;
    long layer = -1;
    bool baseline = false;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic Wald-protocol dataset");
    synth->add_option("--config", config_path, "run config file")->required();
    synth->footer(keys);

    CLI::App* tr = app.add_subcommand("train", "train a network on a dataset directory");
    tr->add_option("--config", config_path, "run config file")->required();
    tr->footer(keys);

    CLI::App* ev = app.add_subcommand("eval", "reduced-resolution metrics per sample");
    ev->add_option("--config", config_path, "run config file")->required();
    ev->add_option("--checkpoint", checkpoint, "checkpoint to evaluate");
    ev->add_option("--data", data_dir, "dataset directory (default: data.dir)");
    ev->add_option("--split", split, "train|val|all (default val)");
    ev->add_flag("--baseline", baseline, "evaluate the bicubic upsampling baseline");
    ev->add_option("--csv", out_csv, "write rows to this file instead of stdout");
    ev->footer(keys);

    CLI::App* md = app.add_subcommand("mask-dump", "write soft/hard mask images per layer");
    md->add_option("--config", config_path, "run config file")->required();
    md->add_option("--checkpoint", checkpoint, "checkpoint (optional: random init otherwise)");
    md->add_option("--data", data_dir, "dataset directory (default: data.dir)");
    md->add_option("--index", index, "sample index");
    md->add_option("--layer", layer, "layer index, -1 = all");
    md->add_option("--out", out_dir, "output directory");
    md->footer(keys);

    CLI::App* fl = app.add_subcommand("flops", "analytic operation accounting");
    fl->add_option("--config", config_path, "run config file")->required();
    fl->add_option("--f", f, "routing fraction (default 0.15)");
    fl->add_option("--height", height, "input height (default 64)");
    fl->add_option("--width", width, "input width (default 64)");
    fl->add_option("--csv", out_csv, "also write the report as CSV");
    fl->footer(keys);

    CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--config", config_path, "run config file")->required();
    gc->add_option("--probes", probes, "probes per parameter group (default 20)");
    gc->footer(keys);

    CLI::App* an = app.add_subcommand("analyze", "per-patch SVD/spectral region analysis");
    an->add_option("--input", input, "tensor (.bmt) or image (.pgm) file")->required();
    an->add_option("--patch", patch, "patch size (default 16)");
    an->add_option("--csv", out_csv, "write rows to this file instead of stdout");
    an->add_option("--map", map_path, "write a PGM class map");
    an->footer(keys);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(config_path);
        if (tr->parsed()) return cmd_train(config_path);
        if (ev->parsed()) return cmd_eval(config_path, checkpoint, data_dir, split, baseline, out_csv);
        if (md->parsed()) return cmd_mask_dump(config_path, checkpoint, data_dir, index, layer, out_dir);
        if (fl->parsed()) return cmd_flops(config_path, f, height, width, out_csv);
        if (gc->parsed()) return cmd_gradcheck(config_path, probes);
        if (an->parsed()) return cmd_analyze(input, patch, out_csv, map_path);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const DimensionError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const IndexError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const StateError& e) {
        std::fprintf(stderr, "internal state error: %s\n", e.what());
        return 3;
    }
    return 0;
}

} // namespace bimac
