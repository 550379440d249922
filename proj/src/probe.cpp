#include "fusmae/probe.hpp"

namespace fusmae {

namespace {

constexpr std::uint64_t kProbeSalt = 0x960BEull;

}  // namespace

FeatureSet extract_feature_matrix(FusMaeParams<float>& model, const std::vector<SamplePair>& samples,
                                  ModalityCondition cond) {
    if (samples.empty()) throw ConfigError("extract_feature_matrix: empty sample list");
    const int d = model.cfg.d;
    FeatureSet set;
    set.K = static_cast<int>(samples[0].multilabel.size());
    set.features = Tensor<float>::zeros({static_cast<int>(samples.size()), d});
    for (size_t i = 0; i < samples.size(); ++i) {
        Tape<float> tape(false);
        Tensor<float> f = extract_features(tape, model, samples[i].i1, samples[i].i2, cond);
        std::copy(f.vals().begin(), f.vals().end(), set.features.ptr() + i * d);
        set.multilabel.insert(set.multilabel.end(), samples[i].multilabel.begin(), samples[i].multilabel.end());
        set.single.push_back(samples[i].single_label);
    }
    return set;
}

namespace {

struct Split {
    int n_train = 0, n_test = 0;
};

Split make_split(int n, double holdout) {
    if (holdout <= 0.0 || holdout >= 1.0) throw ConfigError("holdout fraction must be in (0,1)");
    Split s;
    s.n_test = std::max(1, static_cast<int>(n * holdout));
    s.n_train = n - s.n_test;
    if (s.n_train < 1) throw ConfigError("holdout leaves no training samples");
    return s;
}

// Per-dimension standardization fitted on the training rows only.
void standardize_features(Tensor<float>& x, int n_train) {
    const int n = x.shape[0], d = x.shape[1];
    for (int j = 0; j < d; ++j) {
        double mean = 0.0;
        for (int i = 0; i < n_train; ++i) mean += x.ptr()[static_cast<std::int64_t>(i) * d + j];
        mean /= n_train;
        double var = 0.0;
        for (int i = 0; i < n_train; ++i) {
            const double dd = x.ptr()[static_cast<std::int64_t>(i) * d + j] - mean;
            var += dd * dd;
        }
        var /= n_train;
        const double inv = 1.0 / std::sqrt(std::max(var, 1e-12));
        for (int i = 0; i < n; ++i)
            x.ptr()[static_cast<std::int64_t>(i) * d + j] =
                static_cast<float>((x.ptr()[static_cast<std::int64_t>(i) * d + j] - mean) * inv);
    }
}

PredictionSet score_block(const Tensor<float>& x, int row_begin, int row_end, const Tensor<float>& w,
                          const Tensor<float>& b, const FeatureSet& set) {
    const int d = x.shape[1], k = w.shape[1];
    PredictionSet pred;
    pred.n = row_end - row_begin;
    pred.K = k;
    pred.scores.resize(static_cast<size_t>(pred.n) * k);
    for (int i = row_begin; i < row_end; ++i) {
        for (int c = 0; c < k; ++c) {
            double acc = b.vals()[c];
            for (int j = 0; j < d; ++j)
                acc += static_cast<double>(x.ptr()[static_cast<std::int64_t>(i) * d + j]) * w.vals()[static_cast<std::int64_t>(j) * k + c];
            pred.scores[static_cast<size_t>(i - row_begin) * k + c] = acc;
        }
        if (!set.multilabel.empty())
            pred.multilabel.insert(pred.multilabel.end(), set.multilabel.begin() + static_cast<size_t>(i) * k,
                                   set.multilabel.begin() + static_cast<size_t>(i + 1) * k);
        if (!set.single.empty()) pred.single.push_back(set.single[i]);
    }
    return pred;
}

std::vector<std::string> absent_class_warnings(const FeatureSet& set, EvalTask task, int n_train) {
    std::vector<std::string> warnings;
    const int k = set.K;
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n_train; ++i) {
        if (task == EvalTask::multilabel) {
            for (int c = 0; c < k; ++c) counts[c] += set.multilabel[static_cast<size_t>(i) * k + c];
        } else {
            ++counts[set.single[i]];
        }
    }
    for (int c = 0; c < k; ++c)
        if (counts[c] == 0)
            warnings.push_back("class " + std::to_string(c) + " absent from the training split");
    return warnings;
}

}  // namespace

ProbeResult linear_probe(const FeatureSet& set, EvalTask task, const ProbeHyper& hyper) {
    const int n = set.features.shape[0], d = set.features.shape[1], k = set.K;
    if (k < 1) throw ConfigError("linear_probe: no labels");
    const Split split = make_split(n, hyper.holdout);

    Tensor<float> x = Tensor<float>::from_vector(set.features.shape, set.features.vals());
    if (hyper.standardize_features) standardize_features(x, split.n_train);

    Rng init_rng(hash_combine(hyper.seed, kProbeSalt));
    Tensor<float> w = make_param<float>({d, k}, init_rng, 0.01);
    Tensor<float> b = make_const_param<float>({k}, 0.0f);
    std::vector<NamedParam<float>> params{{"head.w", &w}, {"head.b", &b}};
    AdamW<float> opt(params, hyper.opt);

    const int batch = std::min(hyper.batch, split.n_train);
    const int steps_per_epoch = split.n_train / batch;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng rng(hash_combine(hash_combine(hyper.seed, kProbeSalt), 1000u + epoch));
        auto perm = rng.permutation(static_cast<std::uint32_t>(split.n_train));
        for (int sidx = 0; sidx < steps_per_epoch; ++sidx) {
            std::vector<int> rows(batch);
            for (int j = 0; j < batch; ++j) rows[j] = static_cast<int>(perm[sidx * batch + j]);
            Tape<float> tape;
            Tensor<float> xb = gather(tape, x, 0, rows);
            Tensor<float> logits = add(tape, matmul(tape, xb, w), b);
            Tensor<float> loss;
            if (task == EvalTask::multilabel) {
                Tensor<float> targets = Tensor<float>::zeros({batch, k});
                for (int j = 0; j < batch; ++j)
                    for (int c = 0; c < k; ++c)
                        targets.ptr()[j * k + c] = set.multilabel[static_cast<size_t>(rows[j]) * k + c];
                loss = bce_with_logits(tape, logits, targets);
            } else {
                std::vector<int> labels(batch);
                for (int j = 0; j < batch; ++j) labels[j] = set.single[rows[j]];
                loss = softmax_cross_entropy(tape, logits, labels, hyper.label_smoothing);
            }
            GradMap<float> grads = tape.backward(loss);
            GradMap<float> full;
            full.by_key.emplace(w.key(), grads.at_or_zero(w));
            full.by_key.emplace(b.key(), grads.at_or_zero(b));
            opt.step(params, full, hyper.lr);
        }
    }

    ProbeResult result;
    result.head_w = w;
    result.head_b = b;
    result.test_predictions = score_block(x, split.n_train, n, w, b, set);
    if (task == EvalTask::multilabel) result.test_predictions.single.clear();
    else
        result.test_predictions.multilabel.clear();
    result.report = evaluate_predictions(result.test_predictions);
    auto warn = absent_class_warnings(set, task, split.n_train);
    result.report.warnings.insert(result.report.warnings.end(), warn.begin(), warn.end());
    return result;
}

MetricsReport finetune(FusMaeParams<float>& model, const std::vector<SamplePair>& samples, EvalTask task,
                       ModalityCondition cond, const FinetuneHyper& hyper) {
    const int n = static_cast<int>(samples.size());
    const int d = model.cfg.d;
    const int k = static_cast<int>(samples.empty() ? 0 : samples[0].multilabel.size());
    if (k < 1) throw ConfigError("finetune: no labels");
    const Split split = make_split(n, hyper.holdout);

    Rng init_rng(hash_combine(hyper.seed, 0xF17Eull));
    Tensor<float> w = make_param<float>({d, k}, init_rng, 0.01);
    Tensor<float> b = make_const_param<float>({k}, 0.0f);
    std::vector<NamedParam<float>> params = named_params(model);
    params.push_back({"head.w", &w});
    params.push_back({"head.b", &b});
    AdamW<float> opt(params, hyper.opt);

    const int batch = std::min(hyper.batch, split.n_train);
    const int steps_per_epoch = split.n_train / batch;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng rng(hash_combine(hash_combine(hyper.seed, 0xF17Eull), 1000u + epoch));
        auto perm = rng.permutation(static_cast<std::uint32_t>(split.n_train));
        for (int sidx = 0; sidx < steps_per_epoch; ++sidx) {
            Tape<float> tape;
            std::vector<Tensor<float>> rows;
            rows.reserve(batch);
            std::vector<int> labels(batch);
            Tensor<float> targets = Tensor<float>::zeros({batch, k});
            for (int j = 0; j < batch; ++j) {
                const SamplePair& s = samples[perm[sidx * batch + j]];
                Tensor<float> f = extract_features(tape, model, s.i1, s.i2, cond);
                rows.push_back(reshape(tape, f, {1, d}));
                labels[j] = s.single_label;
                for (int c = 0; c < k; ++c) targets.ptr()[j * k + c] = s.multilabel[c];
            }
            Tensor<float> feats = concat(tape, rows, 0);
            Tensor<float> logits = add(tape, matmul(tape, feats, w), b);
            Tensor<float> loss = task == EvalTask::multilabel
                                     ? bce_with_logits(tape, logits, targets)
                                     : softmax_cross_entropy(tape, logits, labels, hyper.label_smoothing);
            GradMap<float> grads = tape.backward(loss);
            GradMap<float> full;
            for (const auto& p : params)
                full.by_key.emplace(p.tensor->key(), grads.at_or_zero(*p.tensor));
            opt.step(params, full, hyper.lr);
        }
    }

    // evaluate on the held-out rows
    FeatureSet heldout;
    heldout.K = k;
    heldout.features = Tensor<float>::zeros({split.n_test, d});
    for (int i = 0; i < split.n_test; ++i) {
        const SamplePair& s = samples[split.n_train + i];
        Tape<float> tape(false);
        Tensor<float> f = extract_features(tape, model, s.i1, s.i2, cond);
        std::copy(f.vals().begin(), f.vals().end(), heldout.features.ptr() + static_cast<std::int64_t>(i) * d);
        heldout.multilabel.insert(heldout.multilabel.end(), s.multilabel.begin(), s.multilabel.end());
        heldout.single.push_back(s.single_label);
    }
    PredictionSet pred = score_block(heldout.features, 0, split.n_test, w, b, heldout);
    if (task == EvalTask::multilabel) pred.single.clear();
    else
        pred.multilabel.clear();
    return evaluate_predictions(pred);
}

}  // namespace fusmae
