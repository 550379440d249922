#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>

#include "fusmae/probe.hpp"
#include "fusmae/train.hpp"
#include "test_util.hpp"

using namespace fusmae;

namespace {

ModelConfig tiny_config(Variant v = Variant::xaed) {
    ModelConfig cfg;
    cfg.H = cfg.W = 8;
    cfg.P = 4;
    cfg.C1 = 2;
    cfg.C2 = 3;
    cfg.d = 8;
    cfg.h = 2;
    cfg.N = 2;
    cfg.d_dec = 8;
    cfg.h_dec = 2;
    cfg.N_dec = 1;
    cfg.variant = v;
    return cfg;
}

std::vector<SamplePair> tiny_dataset(int n, std::uint64_t seed) {
    DataConfig dc;
    dc.H = dc.W = 8;
    dc.C1 = 2;
    dc.C2 = 3;
    dc.K = 4;
    dc.n_blobs = 2;
    std::vector<SamplePair> out;
    for (int i = 0; i < n; ++i) out.push_back(make_sample(seed + i, dc));
    return out;
}

// features = scaled one-hot of the class plus noise: linearly separable
FeatureSet separable_features(int n, int k, int d, std::uint64_t seed) {
    Rng rng(seed);
    FeatureSet set;
    set.K = k;
    set.features = Tensor<float>::zeros({n, d});
    for (int i = 0; i < n; ++i) {
        const int cls = static_cast<int>(rng.below(k));
        set.single.push_back(cls);
        for (int c = 0; c < k; ++c) set.multilabel.push_back(c == cls ? 1 : 0);
        for (int j = 0; j < d; ++j)
            set.features.ptr()[static_cast<std::int64_t>(i) * d + j] =
                static_cast<float>((j == cls ? 10.0 : 0.0) + rng.normal(0.0, 0.3));
    }
    return set;
}

}  // namespace

TEST_CASE("bce_with_logits value and gradient") {
    using TD = Tensor<double>;
    Rng rng(3);
    TD logits = testutil::random_tensor<double>({4, 3}, rng);
    TD targets = TD::zeros({4, 3});
    for (auto& v : targets.vals()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;

    // direct value: mean of -y log s - (1-y) log(1-s)
    Tape<double> tp(false);
    const double got = bce_with_logits(tp, logits, targets).item();
    double want = 0;
    for (int i = 0; i < 12; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-logits.vals()[i]));
        want += -targets.vals()[i] * std::log(s) - (1 - targets.vals()[i]) * std::log(1 - s);
    }
    CHECK(got == doctest::Approx(want / 12).epsilon(1e-10));

    auto build = [&](Tape<double>& t, const TD& x) { return bce_with_logits(t, x, targets); };
    CHECK(testutil::grad_check_leaf<double>(build, logits, 1e-5) < 1e-7);
}

TEST_CASE("softmax_cross_entropy gradient and smoothing-zero reduction") {
    using TD = Tensor<double>;
    Rng rng(5);
    TD logits = testutil::random_tensor<double>({5, 4}, rng);
    std::vector<int> labels{0, 2, 3, 1, 2};

    auto build = [&](Tape<double>& t, const TD& x) { return softmax_cross_entropy(t, x, labels, 0.1); };
    CHECK(testutil::grad_check_leaf<double>(build, logits, 1e-5) < 1e-7);

    // smoothing = 0 equals plain cross-entropy computed directly
    Tape<double> tp(false);
    const double got = softmax_cross_entropy(tp, logits, labels, 0.0).item();
    double want = 0;
    for (int i = 0; i < 5; ++i) {
        double mx = logits.vals()[i * 4];
        for (int j = 1; j < 4; ++j) mx = std::max(mx, logits.vals()[i * 4 + j]);
        double denom = 0;
        for (int j = 0; j < 4; ++j) denom += std::exp(logits.vals()[i * 4 + j] - mx);
        want += mx + std::log(denom) - logits.vals()[i * 4 + labels[i]];
    }
    CHECK(got == doctest::Approx(want / 5).epsilon(1e-12));
}

TEST_CASE("linear probe fits linearly separable features") {
    FeatureSet set = separable_features(512, 4, 16, 7);
    ProbeHyper hyper;
    hyper.seed = 1;
    hyper.batch = 64;
    ProbeResult res = linear_probe(set, EvalTask::single, hyper);
    CHECK(res.report.top1 >= 0.95);

    ProbeResult multi = linear_probe(set, EvalTask::multilabel, hyper);
    CHECK(multi.report.map >= 0.95);
}

TEST_CASE("probe is deterministic and leaves the encoder untouched") {
    auto model = init_params<float>(tiny_config(), 17);
    auto samples = tiny_dataset(64, 90);
    std::vector<float> before;
    visit_params(model, [&](const std::string&, Tensor<float>& t) {
        before.insert(before.end(), t.vals().begin(), t.vals().end());
    });
    FeatureSet set = extract_feature_matrix(model, samples, ModalityCondition::s1s2);
    ProbeHyper hyper;
    hyper.epochs = 5;
    hyper.seed = 2;
    ProbeResult a = linear_probe(set, EvalTask::multilabel, hyper);
    ProbeResult b = linear_probe(set, EvalTask::multilabel, hyper);
    CHECK(a.report.map == b.report.map);
    CHECK(a.head_w.vals() == b.head_w.vals());

    std::vector<float> after;
    visit_params(model, [&](const std::string&, Tensor<float>& t) {
        after.insert(after.end(), t.vals().begin(), t.vals().end());
    });
    CHECK(before == after);  // frozen-encoder contract, bit for bit
}

TEST_CASE("probe warns about classes absent from the train split") {
    FeatureSet set = separable_features(64, 3, 8, 9);
    for (size_t i = 0; i + 16 < set.single.size(); ++i)
        if (set.single[i] == 2) {
            set.single[i] = 0;  // wipe class 2 from the training region
            for (int c = 0; c < 3; ++c) set.multilabel[i * 3 + c] = c == 0 ? 1 : 0;
        }
    ProbeHyper hyper;
    hyper.epochs = 2;
    ProbeResult res = linear_probe(set, EvalTask::single, hyper);
    bool warned = false;
    for (const auto& w : res.report.warnings)
        if (w.find("absent") != std::string::npos) warned = true;
    CHECK(warned);
}

TEST_CASE("unimodal feature extraction feeds the probe") {
    auto model = init_params<float>(tiny_config(), 19);
    auto samples = tiny_dataset(48, 95);
    for (ModalityCondition cond : {ModalityCondition::s1, ModalityCondition::s2, ModalityCondition::s1s2}) {
        FeatureSet set = extract_feature_matrix(model, samples, cond);
        CHECK(set.features.shape == Shape{48, 8});
        ProbeHyper hyper;
        hyper.epochs = 2;
        ProbeResult res = linear_probe(set, EvalTask::multilabel, hyper);
        CHECK(res.report.map >= 0.0);
        CHECK(res.report.map <= 1.0);
    }
}

TEST_CASE("finetune from a pretrained encoder does not lose to the probe") {
    const auto t0 = std::chrono::steady_clock::now();
    auto samples = tiny_dataset(128, 100);

    // quick pretraining so both evaluations start from the same checkpoint
    auto model = init_params<float>(tiny_config(), 23);
    {
        AdamW<float> opt(named_params(model), AdamWConfig{});
        TrainConfig tc;
        tc.batch = 16;
        tc.steps = 120;
        tc.base_lr = 2e-3;
        tc.seed = 23;
        pretrain_loop(model, opt, samples, tc);
    }

    FeatureSet set = extract_feature_matrix(model, samples, ModalityCondition::s1s2);
    ProbeHyper phyper;
    phyper.seed = 3;
    phyper.batch = 32;
    ProbeResult probe = linear_probe(set, EvalTask::multilabel, phyper);

    FinetuneHyper fhyper;
    fhyper.seed = 3;
    fhyper.batch = 16;
    MetricsReport ft = finetune(model, samples, EvalTask::multilabel, ModalityCondition::s1s2, fhyper);
    CHECK(ft.map >= probe.report.map);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 300.0);  // well inside the 5-minute budget at this scale
}
