#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusmae/data.hpp"
#include "fusmae/metrics.hpp"
#include "fusmae/model.hpp"
#include "fusmae/optim.hpp"

namespace fusmae {

// Mean binary cross-entropy from logits, numerically stable form.
template <class T>
Tensor<T> bce_with_logits(Tape<T>& tp, const Tensor<T>& logits, const Tensor<T>& targets) {
    if (logits.shape != targets.shape)
        throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape) + " vs targets " +
                         shape_str(targets.shape));
    const std::int64_t n = logits.size();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double z = logits.ptr()[i], y = targets.ptr()[i];
        acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::fabs(z)));
    }
    std::vector<T> out{static_cast<T>(acc / n)};
    const int src = tp.source(logits);
    auto zdata = logits.data;
    auto ydata = targets.data;
    return detail::make_result<T>(tp, "bce_with_logits", {}, std::move(out), {src},
                                  [src, zdata, ydata, n](const std::vector<T>& dout, Tape<T>& t) {
                                      if (src < 0) return;
                                      auto& g = t.grad_buf(src);
                                      for (std::int64_t i = 0; i < n; ++i) {
                                          const double z = (*zdata)[i];
                                          const double sig = 1.0 / (1.0 + std::exp(-z));
                                          g[i] += dout[0] * static_cast<T>((sig - (*ydata)[i]) / n);
                                      }
                                  });
}

// Mean label-smoothed cross-entropy over rows; smoothing=0 is plain CE.
template <class T>
Tensor<T> softmax_cross_entropy(Tape<T>& tp, const Tensor<T>& logits, const std::vector<int>& labels,
                                double smoothing) {
    if (logits.shape.size() != 2) throw ShapeError("softmax_cross_entropy: logits must be [n,K]");
    const int n = logits.shape[0], k = logits.shape[1];
    if (static_cast<int>(labels.size()) != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
    if (smoothing < 0.0 || smoothing >= 1.0) throw ConfigError("softmax_cross_entropy: smoothing in [0,1)");
    for (int c : labels)
        if (c < 0 || c >= k) throw ShapeError("softmax_cross_entropy: class id out of range");
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(n) * k);
    double acc = 0.0;
    const double off = smoothing / k, on = 1.0 - smoothing + off;
    for (int i = 0; i < n; ++i) {
        const T* row = logits.ptr() + static_cast<std::int64_t>(i) * k;
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double denom = 0.0;
        for (int j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
        const double lse = mx + std::log(denom);
        for (int j = 0; j < k; ++j) (*probs)[static_cast<size_t>(i) * k + j] = static_cast<T>(std::exp(row[j] - lse));
        double dot = 0.0;
        for (int j = 0; j < k; ++j) dot += (j == labels[i] ? on : off) * row[j];
        acc += lse - dot;
    }
    std::vector<T> out{static_cast<T>(acc / n)};
    const int src = tp.source(logits);
    auto labels_copy = labels;
    return detail::make_result<T>(
        tp, "softmax_cross_entropy", {}, std::move(out), {src},
        [src, probs, labels_copy, n, k, on, off](const std::vector<T>& dout, Tape<T>& t) {
            if (src < 0) return;
            auto& g = t.grad_buf(src);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) {
                    const double q = j == labels_copy[i] ? on : off;
                    g[static_cast<size_t>(i) * k + j] +=
                        dout[0] * static_cast<T>(((*probs)[static_cast<size_t>(i) * k + j] - q) / n);
                }
        });
}

enum class EvalTask { multilabel, single };
inline EvalTask task_from_string(const std::string& s) {
    if (s == "multilabel") return EvalTask::multilabel;
    if (s == "single") return EvalTask::single;
    throw ConfigError("unknown task '" + s + "' (expected multilabel|single)");
}

struct ProbeHyper {
    int epochs = 20;
    int batch = 128;
    double lr = 1e-2;
    AdamWConfig opt{0.9, 0.999, 1e-8, 0.0};
    double label_smoothing = 0.1;
    double holdout = 0.25;
    std::uint64_t seed = 0;
    bool standardize_features = true;
};

struct FeatureSet {
    Tensor<float> features;                 // [n, d]
    std::vector<std::uint8_t> multilabel;   // n*K
    std::vector<int> single;                // n
    int K = 0;
};

struct ProbeResult {
    Tensor<float> head_w, head_b;  // d x K, K
    MetricsReport report;          // on the held-out split
    PredictionSet test_predictions;
};

// CLS features for every sample under a modality condition; encoder untouched.
FeatureSet extract_feature_matrix(FusMaeParams<float>& model, const std::vector<SamplePair>& samples,
                                  ModalityCondition cond);

// Single linear layer d -> K trained with AdamW on frozen features.
// Multilabel uses per-class sigmoid BCE, single-label uses label-smoothed CE.
ProbeResult linear_probe(const FeatureSet& features, EvalTask task, const ProbeHyper& hyper);

struct FinetuneHyper {
    int epochs = 10;
    int batch = 64;
    double lr = 1e-3;
    AdamWConfig opt{0.9, 0.999, 1e-8, 0.0};
    double label_smoothing = 0.1;
    double holdout = 0.25;
    std::uint64_t seed = 0;
};

// Linear head on the CLS feature with every model weight trainable.
MetricsReport finetune(FusMaeParams<float>& model, const std::vector<SamplePair>& samples, EvalTask task,
                       ModalityCondition cond, const FinetuneHyper& hyper);

}  // namespace fusmae
