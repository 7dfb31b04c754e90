#ifndef BIMAC_CONFIG_HPP
#define BIMAC_CONFIG_HPP

#include <string>
#include <vector>

#include "bimac/bimanet.hpp"
#include "bimac/train.hpp"

namespace bimac {

// Flat key=value run configuration ('#' starts a comment). Unknown keys are
// rejected with the offending line number; every key has a documented default.
struct RunConfig {
    NetConfig net;
    TrainConfig train;
    std::string data_dir = "data";
    std::size_t data_count = 64;
    std::size_t data_val_count = 8;
    std::size_t data_h = 32;
    std::size_t data_w = 32;
    double data_blur_sigma = 1.7;
    std::vector<double> pan_weights; // empty = uniform over bands
    std::string out_dir = "out";
};

RunConfig parse_config_text(const std::string& text, const std::string& source_name);
RunConfig parse_config_file(const std::string& path);

// Canonical dump; parse(dump(cfg)) reproduces cfg exactly.
std::string dump_config(const RunConfig& cfg);

struct ConfigKeyDoc {
    std::string key;
    std::string default_value;
    std::string doc;
};
const std::vector<ConfigKeyDoc>& config_key_docs();
std::string config_keys_help();

} // namespace bimac

#endif
