#include "fusmae/train.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace fusmae {

namespace {

constexpr std::uint64_t kShuffleSalt = 0xBA7C4ull;
constexpr std::uint64_t kMaskSalt = 0x3A58ull;

std::vector<std::uint32_t> epoch_permutation(std::uint64_t seed, std::int64_t epoch, std::uint32_t n) {
    Rng rng(hash_combine(hash_combine(seed, kShuffleSalt), static_cast<std::uint64_t>(epoch)));
    return rng.permutation(n);
}

Rng mask_rng(std::uint64_t seed, std::int64_t step, int item) {
    return Rng(hash_combine(hash_combine(seed, kMaskSalt),
                            static_cast<std::uint64_t>(step) * 1000003ull + static_cast<std::uint64_t>(item)));
}

}  // namespace

PretrainResult pretrain_loop(FusMaeParams<float>& model, AdamW<float>& opt, const std::vector<SamplePair>& data,
                             const TrainConfig& cfg, std::int64_t start_step) {
    cfg.validate(data.size());
    const Schedule sched = cfg.schedule();
    auto params = named_params(model);
    const std::int64_t steps_per_epoch = static_cast<std::int64_t>(data.size()) / cfg.batch;

    PretrainResult result;
    std::vector<std::vector<float>> grad_accum(params.size());
    std::int64_t cached_epoch = -1;
    std::vector<std::uint32_t> perm;

    for (std::int64_t step = start_step; step < cfg.steps; ++step) {
        const std::int64_t epoch = step / steps_per_epoch;
        const std::int64_t pos = step % steps_per_epoch;
        if (epoch != cached_epoch) {
            perm = epoch_permutation(cfg.seed, epoch, static_cast<std::uint32_t>(data.size()));
            cached_epoch = epoch;
        }
        const double lr = lr_at(step, sched);

        for (auto& g : grad_accum) g.clear();
        double loss_sum = 0.0;
        for (int j = 0; j < cfg.batch; ++j) {
            const SamplePair& sample = data[perm[pos * cfg.batch + j]];
            Rng rng = mask_rng(cfg.seed, step, j);
            Tape<float> tape;
            float loss_value = 0.0f;
            GradMap<float> grads;
            try {
                auto out = forward_pretrain(tape, model, sample.i1, sample.i2, rng);
                loss_value = out.loss.item();
                grads = tape.backward(out.loss);
            } catch (const NumericsError& e) {
                throw NumericsError("pretrain aborted at step " + std::to_string(step) + ", batch item " +
                                    std::to_string(j) + ": " + e.what());
            }
            loss_sum += loss_value;
            for (size_t pi = 0; pi < params.size(); ++pi) {
                const Tensor<float>* g = grads.find(*params[pi].tensor);
                if (!g) continue;
                auto& acc = grad_accum[pi];
                if (acc.empty()) acc.assign(g->vals().begin(), g->vals().end());
                else
                    for (std::int64_t k = 0; k < g->size(); ++k) acc[k] += g->vals()[k];
            }
        }

        GradMap<float> batch_grads;
        const float inv_batch = 1.0f / static_cast<float>(cfg.batch);
        for (size_t pi = 0; pi < params.size(); ++pi) {
            auto& acc = grad_accum[pi];
            if (acc.empty()) acc.assign(static_cast<size_t>(params[pi].tensor->size()), 0.0f);
            else
                for (auto& v : acc) v *= inv_batch;
            Tensor<float> g = Tensor<float>::from_vector(params[pi].tensor->shape, acc);
            batch_grads.by_key.emplace(params[pi].tensor->key(), std::move(g));
        }
        opt.step(params, batch_grads, lr);

        const float batch_loss = static_cast<float>(loss_sum / cfg.batch);
        if (!std::isfinite(batch_loss))
            throw NumericsError("pretrain aborted at step " + std::to_string(step) + ": non-finite batch loss");
        result.trace.push_back({step, lr, batch_loss});
        result.final_step = step + 1;

        if (!cfg.ckpt_path.empty() && cfg.ckpt_every > 0 && (step + 1) % cfg.ckpt_every == 0 &&
            step + 1 < cfg.steps) {
            Checkpoint ck = make_checkpoint(model, opt, step + 1, cfg.seed, encode_train_config(cfg));
            save_checkpoint(cfg.ckpt_path + ".step" + std::to_string(step + 1), ck);
        }
    }

    if (!cfg.ckpt_path.empty()) {
        Checkpoint ck = make_checkpoint(model, opt, cfg.steps, cfg.seed, encode_train_config(cfg));
        save_checkpoint(cfg.ckpt_path, ck);
    }
    return result;
}

void write_loss_csv(const std::string& path, const std::vector<TraceRow>& trace) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("loss csv: cannot open " + path);
    os << "step,lr,loss\n";
    char buf[96];
    for (const auto& row : trace) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.9g\n", static_cast<long long>(row.step), row.lr,
                      static_cast<double>(row.loss));
        os << buf;
    }
    if (!os) throw IoError("loss csv: write failed for " + path);
}

std::vector<TraceRow> read_loss_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("loss csv: cannot open " + path);
    std::string line;
    if (!std::getline(is, line) || line != "step,lr,loss") throw IoError("loss csv: bad header in " + path);
    std::vector<TraceRow> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        TraceRow row;
        long long step = 0;
        double lr = 0, loss = 0;
        if (std::sscanf(line.c_str(), "%lld,%lg,%lg", &step, &lr, &loss) != 3)
            throw IoError("loss csv: malformed row '" + line + "'");
        row.step = step;
        row.lr = lr;
        row.loss = static_cast<float>(loss);
        out.push_back(row);
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> encode_train_config(const TrainConfig& cfg) {
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        return std::string(buf);
    };
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("train.batch", std::to_string(cfg.batch));
    kv.emplace_back("train.steps", std::to_string(cfg.steps));
    kv.emplace_back("train.base_lr", fmt(cfg.base_lr));
    kv.emplace_back("train.warmup_frac", fmt(cfg.warmup_frac));
    kv.emplace_back("train.beta1", fmt(cfg.opt.beta1));
    kv.emplace_back("train.beta2", fmt(cfg.opt.beta2));
    kv.emplace_back("train.eps", fmt(cfg.opt.eps));
    kv.emplace_back("train.weight_decay", fmt(cfg.opt.weight_decay));
    kv.emplace_back("train.seed", std::to_string(cfg.seed));
    return kv;
}

TrainConfig decode_train_config(const Checkpoint& ck) {
    TrainConfig cfg;
    cfg.batch = std::stoi(ck.config_value("train.batch"));
    cfg.steps = std::stoll(ck.config_value("train.steps"));
    cfg.base_lr = std::stod(ck.config_value("train.base_lr"));
    cfg.warmup_frac = std::stod(ck.config_value("train.warmup_frac"));
    cfg.opt.beta1 = std::stod(ck.config_value("train.beta1"));
    cfg.opt.beta2 = std::stod(ck.config_value("train.beta2"));
    cfg.opt.eps = std::stod(ck.config_value("train.eps"));
    cfg.opt.weight_decay = std::stod(ck.config_value("train.weight_decay"));
    cfg.seed = std::stoull(ck.config_value("train.seed"));
    return cfg;
}

}  // namespace fusmae
