#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fusmae/model.hpp"
#include "fusmae/optim.hpp"

namespace fusmae {

// In-memory image of the FMCK checkpoint file:
//   magic "FMCK", version u16
//   config block: u32 length + "key=value\n" text
//   parameter tensor table
//   optimizer first-moment table, second-moment table
//   t u64, beta1/beta2/eps/weight_decay f64
//   schedule position u64
//   rng state: u32 length + bytes
// Tensor table: u32 count, then per tensor u16 name length, name, u8 rank,
// extents u32 each, f32 payload. Everything little-endian.
struct Checkpoint {
    std::uint16_t version = 1;
    std::vector<std::pair<std::string, std::string>> config;
    std::vector<std::pair<std::string, Tensor<float>>> params;
    std::vector<std::pair<std::string, Tensor<float>>> opt_m, opt_v;
    std::int64_t opt_t = 0;
    AdamWConfig opt_cfg;
    std::int64_t step = 0;
    std::vector<std::uint8_t> rng_state;

    std::string config_value(const std::string& key) const;
    bool has_config(const std::string& key) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

std::vector<std::pair<std::string, std::string>> encode_model_config(const ModelConfig& cfg);
ModelConfig decode_model_config(const Checkpoint& ck);

// Snapshot of model + optimizer + schedule position. rng_state carries the
// run's master seed; all stream positions are derived statelessly from
// (seed, step), so the seed plus the step fully determine the future.
Checkpoint make_checkpoint(FusMaeParams<float>& model, AdamW<float>& opt, std::int64_t step,
                           std::uint64_t master_seed,
                           const std::vector<std::pair<std::string, std::string>>& extra_config = {});

// Load checkpoint contents into an existing model/optimizer. The parameter
// name/shape table must match exactly; a checkpoint from a different config
// is refused.
void adopt_checkpoint(FusMaeParams<float>& model, AdamW<float>& opt, const Checkpoint& ck);

std::uint64_t checkpoint_master_seed(const Checkpoint& ck);

}  // namespace fusmae
