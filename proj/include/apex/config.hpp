#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "apex/losses.hpp"
#include "apex/net.hpp"
#include "apex/oracle.hpp"

namespace apex {

inline constexpr int kConfigVersion = 1;

struct OptimizerConfig {
    std::string name = "adam";  // adam | sgd
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct RunConfig {
    std::uint64_t seed = 0;
    long steps = 20000;
    long batch_size = 128;
    long log_every = 1;
    double t_min = kDefaultTMin;
    double t_max = kDefaultTMax;
    ShiftSpec shift;
    LossWeights weights;
    bool fake_reuse_noise = false;
    OptimizerConfig optimizer;
    Architecture arch;  // data_dim and conditions follow the distribution
    int dist_dim = 2;
    std::vector<std::vector<GaussianComponent>> dist_components = default_components();
    bool deterministic = true;
    long eval_samples = 10000;
    std::vector<int> eval_nfe{1, 2, 5, 20, 50};

    OracleDist dist() const;
    void validate() const;

    // Two conditional 2D Gaussians, means (+2, 0) and (-2, 0), stdev 0.5.
    static std::vector<std::vector<GaussianComponent>> default_components();
};

// Flat `key = value` text, `#` starts a comment. `version = 1` is required
// and any unknown key is a ConfigError naming it.
//
//   version = 1
//   seed = 1
//   steps = 20000
//   model.hidden = 128,128
//   dist.components = 0:1.0:0.5:2,0; 1:1.0:0.5:-2,0    # cond:weight:stdev:mean
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

// Canonical text listing every key; parse_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& cfg);

// Applies a single `key = value` override.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

}  // namespace apex
