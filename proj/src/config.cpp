#include "bimac/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace bimac {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    std::size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

long parse_long(const std::string& v, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        const long r = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return r;
    } catch (const std::exception&) {
        throw ConfigError(ctx + ": expected an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& v, const std::string& ctx) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return r;
    } catch (const std::exception&) {
        throw ConfigError(ctx + ": expected a number, got '" + v + "'");
    }
}

std::string pan_weights_str(const std::vector<double>& w) {
    if (w.empty()) return "uniform";
    std::string s;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (i) s += ',';
        s += fmt_double(w[i]);
    }
    return s;
}

std::vector<double> parse_pan_weights(const std::string& v, const std::string& ctx) {
    if (v == "uniform") return {};
    std::vector<double> w;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) w.push_back(parse_double(trim(item), ctx));
    if (w.empty()) throw ConfigError(ctx + ": empty weight list");
    return w;
}

} // namespace

const std::vector<ConfigKeyDoc>& config_key_docs() {
    static const std::vector<ConfigKeyDoc> docs = {
        {"net.bands", "4", "spectral bands C (4 or 8)"},
        {"net.base_channels", "32", "feature width of every adaptive layer"},
        {"net.depth", "3", "number of U-Net scales (1,2,4,...)"},
        {"net.blocks", "1", "residual blocks per level"},
        {"net.k", "3", "adaptive kernel size (odd)"},
        {"net.alpha", "2", "hard-mask threshold multiplier"},
        {"net.embed_width", "0", "focused-branch hidden width, 0 = max(base/2,8)"},
        {"net.camg_kernel", "3", "mask-generator kernel size (odd)"},
        {"net.ablation", "full",
         "full|no_focused|no_compact|no_camg|no_lrk|shared_weights"},
        {"net.random_hm_fraction", "0.15", "focused fraction of the no_camg random mask"},
        {"train.lr0", "0.00059999999999999997", "initial learning rate"},
        {"train.decay", "0.80000000000000004", "lr decay factor"},
        {"train.period", "200", "epochs between lr decays"},
        {"train.batch", "32", "batch size"},
        {"train.epochs", "400", "training epochs"},
        {"train.max_iters", "0", "iteration cap, 0 = none"},
        {"train.seed", "0", "master seed (init, data order)"},
        {"data.dir", "data", "dataset directory"},
        {"data.count", "64", "training samples"},
        {"data.val_count", "8", "held-out samples"},
        {"data.h", "32", "scene height"},
        {"data.w", "32", "scene width"},
        {"data.blur_sigma", "1.7000000000000002", "degradation blur sigma"},
        {"data.pan_weights", "uniform", "band mix for PAN, 'uniform' or comma list"},
        {"out.dir", "out", "artifact directory"},
    };
    return docs;
}

std::string config_keys_help() {
    std::string s = "Config keys (key = default  # description):\n";
    for (const ConfigKeyDoc& d : config_key_docs())
        s += "  " + d.key + " = " + d.default_value + "  # " + d.doc + "\n";
    return s;
}

RunConfig parse_config_text(const std::string& text, const std::string& source_name) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string ctx = source_name + ":" + std::to_string(lineno);
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(ctx + ": expected key=value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "net.bands") cfg.net.bands = parse_long(val, ctx);
        else if (key == "net.base_channels") cfg.net.base_channels = parse_long(val, ctx);
        else if (key == "net.depth") cfg.net.depth = parse_long(val, ctx);
        else if (key == "net.blocks") cfg.net.blocks = parse_long(val, ctx);
        else if (key == "net.k") cfg.net.k = parse_long(val, ctx);
        else if (key == "net.alpha") cfg.net.alpha = parse_double(val, ctx);
        else if (key == "net.embed_width") cfg.net.embed_r = parse_long(val, ctx);
        else if (key == "net.camg_kernel") cfg.net.camg_k = parse_long(val, ctx);
        else if (key == "net.ablation") {
            try {
                cfg.net.ablation = ablation_from_string(val);
            } catch (const ConfigError& e) {
                throw ConfigError(ctx + ": " + e.what());
            }
        } else if (key == "net.random_hm_fraction")
            cfg.net.random_hm_fraction = parse_double(val, ctx);
        else if (key == "train.lr0") cfg.train.lr0 = parse_double(val, ctx);
        else if (key == "train.decay") cfg.train.decay = parse_double(val, ctx);
        else if (key == "train.period") cfg.train.period = parse_long(val, ctx);
        else if (key == "train.batch") cfg.train.batch = parse_long(val, ctx);
        else if (key == "train.epochs") cfg.train.epochs = parse_long(val, ctx);
        else if (key == "train.max_iters") cfg.train.max_iters = parse_long(val, ctx);
        else if (key == "train.seed")
            cfg.train.seed = static_cast<std::uint64_t>(parse_long(val, ctx));
        else if (key == "data.dir") cfg.data_dir = val;
        else if (key == "data.count") cfg.data_count = parse_long(val, ctx);
        else if (key == "data.val_count") cfg.data_val_count = parse_long(val, ctx);
        else if (key == "data.h") cfg.data_h = parse_long(val, ctx);
        else if (key == "data.w") cfg.data_w = parse_long(val, ctx);
        else if (key == "data.blur_sigma") cfg.data_blur_sigma = parse_double(val, ctx);
        else if (key == "data.pan_weights") cfg.pan_weights = parse_pan_weights(val, ctx);
        else if (key == "out.dir") cfg.out_dir = val;
        else throw ConfigError(ctx + ": unknown key '" + key + "'");
    }
    if (cfg.net.k % 2 == 0) throw ConfigError(source_name + ": net.k must be odd");
    if (cfg.net.camg_k % 2 == 0) throw ConfigError(source_name + ": net.camg_kernel must be odd");
    return cfg;
}

RunConfig parse_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str(), path);
}

std::string dump_config(const RunConfig& cfg) {
    std::string s;
    auto kv = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
    kv("net.bands", std::to_string(cfg.net.bands));
    kv("net.base_channels", std::to_string(cfg.net.base_channels));
    kv("net.depth", std::to_string(cfg.net.depth));
    kv("net.blocks", std::to_string(cfg.net.blocks));
    kv("net.k", std::to_string(cfg.net.k));
    kv("net.alpha", fmt_double(cfg.net.alpha));
    kv("net.embed_width", std::to_string(cfg.net.embed_r));
    kv("net.camg_kernel", std::to_string(cfg.net.camg_k));
    kv("net.ablation", ablation_to_string(cfg.net.ablation));
    kv("net.random_hm_fraction", fmt_double(cfg.net.random_hm_fraction));
    kv("train.lr0", fmt_double(cfg.train.lr0));
    kv("train.decay", fmt_double(cfg.train.decay));
    kv("train.period", std::to_string(cfg.train.period));
    kv("train.batch", std::to_string(cfg.train.batch));
    kv("train.epochs", std::to_string(cfg.train.epochs));
    kv("train.max_iters", std::to_string(cfg.train.max_iters));
    kv("train.seed", std::to_string(cfg.train.seed));
    kv("data.dir", cfg.data_dir);
    kv("data.count", std::to_string(cfg.data_count));
    kv("data.val_count", std::to_string(cfg.data_val_count));
    kv("data.h", std::to_string(cfg.data_h));
    kv("data.w", std::to_string(cfg.data_w));
    kv("data.blur_sigma", fmt_double(cfg.data_blur_sigma));
    kv("data.pan_weights", pan_weights_str(cfg.pan_weights));
    kv("out.dir", cfg.out_dir);
    return s;
}

} // namespace bimac
