#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fusmae/model.hpp"

namespace fusmae {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

// AdamW with decoupled weight decay: the decay shrinks parameters before the
// bias-corrected moment update is applied.
template <class T>
class AdamW {
public:
    AdamW(const std::vector<NamedParam<T>>& params, AdamWConfig cfg) : cfg_(cfg) {
        slots_.reserve(params.size());
        for (const auto& p : params) slots_.push_back({Tensor<T>::zeros(p.tensor->shape), Tensor<T>::zeros(p.tensor->shape)});
    }

    void step(const std::vector<NamedParam<T>>& params, const GradMap<T>& grads, double lr) {
        if (params.size() != slots_.size()) throw ShapeError("adamw: parameter list changed size");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& theta = *params[i].tensor;
            const Tensor<T>* g = grads.find(theta);
            if (!g) throw ShapeError("adamw: missing gradient for " + params[i].name);
            if (g->shape != theta.shape)
                throw ShapeError("adamw: gradient shape " + shape_str(g->shape) + " != parameter shape " +
                                 shape_str(theta.shape) + " for " + params[i].name);
            Tensor<T>& m = slots_[i].m;
            Tensor<T>& v = slots_[i].v;
            for (std::int64_t j = 0; j < theta.size(); ++j) {
                double th = theta.vals()[j];
                const double gj = g->vals()[j];
                th -= lr * cfg_.weight_decay * th;
                const double mj = cfg_.beta1 * m.vals()[j] + (1.0 - cfg_.beta1) * gj;
                const double vj = cfg_.beta2 * v.vals()[j] + (1.0 - cfg_.beta2) * gj * gj;
                m.vals()[j] = static_cast<T>(mj);
                v.vals()[j] = static_cast<T>(vj);
                th -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg_.eps);
                theta.vals()[j] = static_cast<T>(th);
            }
        }
    }

    const AdamWConfig& config() const { return cfg_; }
    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    Tensor<T>& moment1(size_t i) { return slots_[i].m; }
    Tensor<T>& moment2(size_t i) { return slots_[i].v; }
    size_t size() const { return slots_.size(); }

private:
    struct Slot {
        Tensor<T> m, v;
    };
    AdamWConfig cfg_;
    std::vector<Slot> slots_;
    std::int64_t t_ = 0;
};

// Linear warmup to base_lr, then cosine decay to zero at the final step.
struct Schedule {
    double base_lr = 1.5625e-4;
    int warmup_epochs = 0;
    int total_epochs = 0;
    int steps_per_epoch = 1;

    std::int64_t warmup_steps() const { return static_cast<std::int64_t>(warmup_epochs) * steps_per_epoch; }
    std::int64_t total_steps() const { return static_cast<std::int64_t>(total_epochs) * steps_per_epoch; }

    static Schedule from_steps(double base_lr, std::int64_t warmup, std::int64_t total) {
        Schedule s;
        s.base_lr = base_lr;
        s.warmup_epochs = static_cast<int>(warmup);
        s.total_epochs = static_cast<int>(total);
        s.steps_per_epoch = 1;
        s.validate();
        return s;
    }

    void validate() const {
        if (base_lr <= 0.0) throw ConfigError("schedule: base_lr must be positive");
        if (warmup_epochs > total_epochs) throw ConfigError("schedule: warmup exceeds total");
        if (steps_per_epoch < 1) throw ConfigError("schedule: steps_per_epoch must be >= 1");
    }
};

inline double lr_at(std::int64_t step, const Schedule& s) {
    if (step < 0) throw ConfigError("lr_at: negative step");
    const std::int64_t ws = s.warmup_steps(), ts = s.total_steps();
    if (ws > 0 && step < ws) return s.base_lr * static_cast<double>(step) / static_cast<double>(ws);
    const std::int64_t span = ts - ws;
    if (span <= 0) return step <= ws ? s.base_lr : 0.0;
    double progress = static_cast<double>(step - ws) / static_cast<double>(span);
    if (progress > 1.0) progress = 1.0;
    return s.base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

}  // namespace fusmae
