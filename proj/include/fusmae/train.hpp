#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusmae/checkpoint.hpp"
#include "fusmae/data.hpp"
#include "fusmae/model.hpp"
#include "fusmae/optim.hpp"

namespace fusmae {

struct TrainConfig {
    int batch = 64;
    std::int64_t steps = 300;
    double base_lr = 1.5625e-4;
    double warmup_frac = 0.1;
    AdamWConfig opt;
    std::uint64_t seed = 1;
    std::int64_t ckpt_every = 0;     // 0: checkpoint only at the end
    std::string ckpt_path;           // "" disables checkpoint writing

    Schedule schedule() const {
        return Schedule::from_steps(base_lr, static_cast<std::int64_t>(warmup_frac * steps), steps);
    }

    void validate(std::size_t dataset_size) const {
        if (batch < 1) throw ConfigError("train: batch must be >= 1");
        if (steps < 1) throw ConfigError("train: steps must be >= 1");
        if (base_lr <= 0) throw ConfigError("train: base_lr must be positive");
        if (warmup_frac < 0 || warmup_frac > 1) throw ConfigError("train: warmup_frac in [0,1]");
        if (dataset_size < static_cast<std::size_t>(batch))
            throw ConfigError("train: dataset smaller than one batch");
    }
};

struct TraceRow {
    std::int64_t step;
    double lr;
    float loss;
};

struct PretrainResult {
    std::vector<TraceRow> trace;  // rows for the steps actually executed
    std::int64_t final_step = 0;
};

// Runs steps [start_step, cfg.steps). All randomness (epoch shuffles, mask
// draws) is derived statelessly from (cfg.seed, step), so resuming from a
// checkpoint reproduces the uninterrupted run bit for bit.
PretrainResult pretrain_loop(FusMaeParams<float>& model, AdamW<float>& opt, const std::vector<SamplePair>& data,
                             const TrainConfig& cfg, std::int64_t start_step = 0);

void write_loss_csv(const std::string& path, const std::vector<TraceRow>& trace);
std::vector<TraceRow> read_loss_csv(const std::string& path);

std::vector<std::pair<std::string, std::string>> encode_train_config(const TrainConfig& cfg);
TrainConfig decode_train_config(const Checkpoint& ck);

}  // namespace fusmae
