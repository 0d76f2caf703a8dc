#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "amt/nn.hpp"
#include "amt/segmenter.hpp"
#include "amt/train.hpp"

namespace amt {

// Flat key=value run settings. Precedence: defaults, then file, then
// AMT_* environment variables, then explicit overrides (command line).
struct RunConfig {
    std::uint64_t seed = 7;
    int threads = 1;

    int n_f = 256;
    int n_t = 1024;
    int max_hop = 2;
    int batch_segments = 12;

    int d_model = 96;
    int encoder_layers = 2;
    int decoder_layers = 2;
    int attn_heads = 6;
    int ff_dim = 192;
    int memory_heads = 6;
    int l_agg = 64;
    double dropout = 0.1;
    bool share_memory_embedding = false;

    double lr_peak = 2e-4;
    double lr_floor = 2e-5;
    long warmup_steps = 100;
    long total_steps = 300;
    bool augment = true;

    double tolerance_s = 0.05;
    int log_every = 10;
    int eval_every = 100;

    std::string manifest;
    std::string out_dir;
    std::string checkpoint;

    void set(const std::string& key, const std::string& value);
    std::string dump() const;

    SegmentConfig segment_config() const;
    ModelConfig model_config(int vocab_size) const;
    LrSchedule schedule() const;

    static const std::vector<std::string>& keys();
    static RunConfig load(const std::string& file_path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);
};

}  // namespace amt
