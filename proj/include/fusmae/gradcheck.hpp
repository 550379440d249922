#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fusmae/model.hpp"

namespace fusmae {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::vector<GradCheckEntry> entries;
    bool pass(double tol) const { return max_rel_err < tol; }
};

inline double grad_rel_err(double a, double b, double floor_) {
    const double denom = std::max({std::fabs(a), std::fabs(b), floor_});
    return std::fabs(a - b) / denom;
}

// Compare tape gradients of `checked_params` against central differences of
// `oracle_loss`, which must recompute the loss from the oracle (f64) buffers.
// The two parameter lists pair by position and hold identical values; for
// T=double they may alias the same model. max_coords=0 checks every scalar,
// otherwise a deterministic stride subsample per tensor. floor_ is the
// denominator floor of the relative error, so tol*floor_ acts as the
// absolute tolerance for near-zero gradients (kept above the ~1e-9 noise
// floor of central differences on O(1) losses).
template <class T>
GradCheckReport check_gradients(const std::vector<NamedParam<double>>& oracle_params,
                                const std::function<double()>& oracle_loss,
                                const std::vector<NamedParam<T>>& checked_params, const GradMap<T>& ad,
                                double eps, double floor_, int max_coords = 0) {
    if (oracle_params.size() != checked_params.size())
        throw ShapeError("check_gradients: parameter lists differ in length");
    GradCheckReport report;
    for (size_t pi = 0; pi < oracle_params.size(); ++pi) {
        Tensor<double>& probe = *oracle_params[pi].tensor;
        Tensor<T> grad = ad.at_or_zero(*checked_params[pi].tensor);
        if (grad.shape != probe.shape)
            throw ShapeError("check_gradients: gradient shape mismatch for " + oracle_params[pi].name);
        const std::int64_t n = probe.size();
        std::int64_t step = 1;
        if (max_coords > 0 && n > max_coords) step = n / max_coords;
        GradCheckEntry entry;
        entry.name = oracle_params[pi].name;
        for (std::int64_t i = 0; i < n; i += step) {
            const double orig = probe.vals()[i];
            probe.vals()[i] = orig + eps;
            const double fp = oracle_loss();
            probe.vals()[i] = orig - eps;
            const double fm = oracle_loss();
            probe.vals()[i] = orig;
            const double fd = (fp - fm) / (2.0 * eps);
            entry.max_rel_err =
                std::max(entry.max_rel_err, grad_rel_err(static_cast<double>(grad.vals()[i]), fd, floor_));
        }
        if (entry.max_rel_err > report.max_rel_err) {
            report.max_rel_err = entry.max_rel_err;
            report.worst_param = entry.name;
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

namespace detail {

template <class T, class Params>
std::vector<NamedParam<T>> collect(Params& p, const std::string& prefix) {
    std::vector<NamedParam<T>> out;
    visit_params(p, prefix, [&](const std::string& name, Tensor<T>& t) { out.push_back({name, &t}); });
    return out;
}

// Exact value copy into an f64 mirror, paired by visitation order.
template <class T>
void mirror_values(const std::vector<NamedParam<T>>& src, const std::vector<NamedParam<double>>& dst) {
    for (size_t i = 0; i < src.size(); ++i) {
        Tensor<double> c = cast<double>(*src[i].tensor);
        c.requires_grad = true;
        *dst[i].tensor = c;
    }
}

}  // namespace detail

// Per-op gradient check: every differentiable tensor op against f64 central
// differences on random inputs. Returns (op name, max rel err) so a broken
// backward rule is reported by name.
template <class T>
std::vector<std::pair<std::string, double>> op_grad_suite(double eps, double floor_, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> x64 = Tensor<double>::zeros({4, 4});
    Tensor<double> y64 = Tensor<double>::zeros({4, 4});
    Tensor<double> w64 = Tensor<double>::zeros({4, 4});
    Tensor<double> g64 = Tensor<double>::zeros({4});
    Tensor<double> b64 = Tensor<double>::zeros({4});
    for (auto* t : {&x64, &y64, &w64, &g64, &b64})
        for (auto& v : t->vals()) v = rng.normal();

    struct Case {
        const char* name;
        std::function<Tensor<double>(Tape<double>&, const Tensor<double>&)> f64;
        std::function<Tensor<T>(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,
                                const Tensor<T>&, const Tensor<T>&)>
            fT;
    };
    const std::vector<int> idx{2, 0, 3};
    std::vector<Case> cases = {
        {"add",
         [&](Tape<double>& t, const Tensor<double>& in) { return sum(t, mul(t, add(t, in, y64), w64)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>& y, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, add(t, in, y), w)); }},
        {"sub",
         [&](Tape<double>& t, const Tensor<double>& in) { return sum(t, mul(t, sub(t, in, y64), w64)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>& y, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, sub(t, in, y), w)); }},
        {"mul",
         [&](Tape<double>& t, const Tensor<double>& in) { return sum(t, mul(t, mul(t, in, y64), w64)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>& y, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, mul(t, in, y), w)); }},
        {"scale",
         [&](Tape<double>& t, const Tensor<double>& in) { return sum(t, scale(t, in, 1.7)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, scale(t, in, T(1.7))); }},
        {"matmul",
         [&](Tape<double>& t, const Tensor<double>& in) { return sum(t, mul(t, matmul(t, in, y64), w64)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>& y, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, matmul(t, in, y), w)); }},
        {"transpose",
         [&](Tape<double>& t, const Tensor<double>& in) { return sum(t, mul(t, transpose(t, in), w64)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, transpose(t, in), w)); }},
        {"reshape",
         [&](Tape<double>& t, const Tensor<double>& in) {
             return sum(t, mul(t, reshape(t, in, {2, 8}), reshape(t, w64, {2, 8})));
         },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, reshape(t, in, {2, 8}), reshape(t, w, {2, 8}))); }},
        {"gather",
         [&](Tape<double>& t, const Tensor<double>& in) {
             return sum(t, mul(t, gather(t, in, 0, idx), gather(t, w64, 0, idx)));
         },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, gather(t, in, 0, idx), gather(t, w, 0, idx))); }},
        {"concat",
         [&](Tape<double>& t, const Tensor<double>& in) {
             return sum(t, mul(t, concat(t, {in, y64}, 0), concat(t, {w64, w64}, 0)));
         },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>& y, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, concat(t, {in, y}, 0), concat(t, {w, w}, 0))); }},
        {"softmax",
         [&](Tape<double>& t, const Tensor<double>& in) { return sum(t, mul(t, softmax(t, in, 1), w64)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, softmax(t, in, 1), w)); }},
        {"layer_norm",
         [&](Tape<double>& t, const Tensor<double>& in) {
             return sum(t, mul(t, layer_norm(t, in, g64, b64, 1e-5), w64));
         },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& w, const Tensor<T>& g,
             const Tensor<T>& b) { return sum(t, mul(t, layer_norm(t, in, g, b, T(1e-5)), w)); }},
        {"gelu",
         [&](Tape<double>& t, const Tensor<double>& in) { return sum(t, mul(t, gelu(t, in), w64)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, gelu(t, in), w)); }},
        {"sum",
         [&](Tape<double>& t, const Tensor<double>& in) { return sum(t, mul(t, in, w64)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return sum(t, mul(t, in, w)); }},
        {"mean",
         [&](Tape<double>& t, const Tensor<double>& in) { return mean(t, mul(t, in, w64)); },
         [&](Tape<T>& t, const Tensor<T>& in, const Tensor<T>&, const Tensor<T>& w, const Tensor<T>&,
             const Tensor<T>&) { return mean(t, mul(t, in, w)); }},
    };

    std::vector<std::pair<std::string, double>> out;
    Tensor<T> x = cast<T>(x64), y = cast<T>(y64), w = cast<T>(w64), g = cast<T>(g64), b = cast<T>(b64);
    x.requires_grad = true;
    for (auto& cse : cases) {
        Tape<T> tape;
        Tensor<T> loss = cse.fT(tape, x, y, w, g, b);
        GradMap<T> ad = tape.backward(loss);
        Tensor<T> grad = ad.at_or_zero(x);
        auto f = [&](const Tensor<double>& probe) {
            Tape<double> nt(false);
            return cse.f64(nt, probe).item();
        };
        Tensor<double> fd = finite_diff_grad<double>(f, x64, eps);
        double worst = 0;
        for (std::int64_t i = 0; i < fd.size(); ++i)
            worst = std::max(worst, grad_rel_err(static_cast<double>(grad.vals()[i]), fd.vals()[i], floor_));
        out.emplace_back(cse.name, worst);
    }
    return out;
}

// Gradient check of every nn block at toy sizes. The oracle always runs in
// f64 on an exact mirror of the checked parameters.
template <class T>
std::vector<std::pair<std::string, GradCheckReport>> block_grad_suite(double eps, double floor_,
                                                                      std::uint64_t seed, int max_coords = 0) {
    std::vector<std::pair<std::string, GradCheckReport>> out;
    Rng rng(seed);
    const int d = 4, heads = 2, d_ff = 8;
    Tensor<double> x64 = Tensor<double>::zeros({3, d});
    Tensor<double> y64 = Tensor<double>::zeros({2, d});
    for (auto& v : x64.vals()) v = rng.normal();
    for (auto& v : y64.vals()) v = rng.normal();
    Tensor<T> x = cast<T>(x64), y = cast<T>(y64);

    auto run = [&](const std::string& label, auto& params, auto& params64, auto&& fwd, auto&& fwd64) {
        auto checked = detail::collect<T>(params, label);
        auto oracle = detail::collect<double>(params64, label);
        detail::mirror_values(checked, oracle);
        Tape<T> tape;
        Tensor<T> loss = fwd(tape);
        GradMap<T> ad = tape.backward(loss);
        std::function<double()> oracle_loss = [&]() {
            Tape<double> nt(false);
            return fwd64(nt).item();
        };
        out.emplace_back(label, check_gradients<T>(oracle, oracle_loss, checked, ad, eps, floor_, max_coords));
    };

    {
        Rng r1(seed + 1), r2(seed + 1);
        auto p = make_attention<T>(d, heads, r1);
        auto p64 = make_attention<double>(d, heads, r2);
        run(
            "multi_head_attention", p, p64,
            [&](Tape<T>& t) { return sum(t, multi_head_attention(t, x, y, p)); },
            [&](Tape<double>& t) { return sum(t, multi_head_attention(t, x64, y64, p64)); });
    }
    {
        Rng r1(seed + 2), r2(seed + 2);
        auto p = make_mlp<T>(d, d_ff, r1);
        auto p64 = make_mlp<double>(d, d_ff, r2);
        run(
            "mlp", p, p64, [&](Tape<T>& t) { return sum(t, mlp_forward(t, x, p)); },
            [&](Tape<double>& t) { return sum(t, mlp_forward(t, x64, p64)); });
    }
    {
        Rng r1(seed + 3), r2(seed + 3);
        auto p = make_block<T>(d, heads, d_ff, r1);
        auto p64 = make_block<double>(d, heads, d_ff, r2);
        run(
            "transformer_block", p, p64, [&](Tape<T>& t) { return sum(t, transformer_block(t, x, p)); },
            [&](Tape<double>& t) { return sum(t, transformer_block(t, x64, p64)); });
    }
    {
        Rng r1(seed + 4), r2(seed + 4);
        auto p = make_xattn_encoder<T>(d, heads, d_ff, true, r1);
        auto p64 = make_xattn_encoder<double>(d, heads, d_ff, true, r2);
        run(
            "xattn_encoder_block", p, p64,
            [&](Tape<T>& t) { return sum(t, xattn_encoder_block(t, x, y, p)); },
            [&](Tape<double>& t) { return sum(t, xattn_encoder_block(t, x64, y64, p64)); });
    }
    {
        Rng r1(seed + 5), r2(seed + 5);
        auto p = make_xattn_decoder<T>(d, heads, d_ff, r1);
        auto p64 = make_xattn_decoder<double>(d, heads, d_ff, r2);
        run(
            "xattn_decoder_block", p, p64,
            [&](Tape<T>& t) { return sum(t, xattn_decoder_block(t, x, y, p)); },
            [&](Tape<double>& t) { return sum(t, xattn_decoder_block(t, x64, y64, p64)); });
    }
    return out;
}

// Minimal-config check used by the acceptance gate and the CLI:
// H=W=8, P=4, d=8, N=2, N_dec=1.
inline ModelConfig minimal_grad_config(Variant variant = Variant::xaed) {
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
    cfg.r = 0.75;
    cfg.variant = variant;
    return cfg;
}

// End-to-end pretraining-loss gradient check of every model parameter.
template <class T>
GradCheckReport model_grad_check(const ModelConfig& cfg, std::uint64_t seed, double eps, double floor_,
                                 int max_coords = 0) {
    FusMaeParams<T> params = init_params<T>(cfg, seed);
    FusMaeParams<double> mirror = init_params<double>(cfg, seed);
    auto checked = named_params(params);
    auto oracle = named_params(mirror);
    detail::mirror_values(checked, oracle);

    Rng rng(hash_combine(seed, 0xDA7Aull));
    Tensor<double> img1_64 = Tensor<double>::zeros({cfg.H, cfg.W, cfg.C1});
    Tensor<double> img2_64 = Tensor<double>::zeros({cfg.H, cfg.W, cfg.C2});
    for (auto& v : img1_64.vals()) v = rng.normal();
    for (auto& v : img2_64.vals()) v = rng.normal();
    Tensor<T> img1 = cast<T>(img1_64), img2 = cast<T>(img2_64);
    Rng mask_rng(hash_combine(seed, 0x3A5Cull));
    MaskPlan plan = sample_mask(cfg.tokens(), cfg.r, cfg.strategy, mask_rng);
    if (cfg.variant == Variant::early_concat) {
        plan.visible2 = plan.visible1;
        plan.masked2 = plan.masked1;
    }

    Tape<T> tape;
    Tensor<T> loss = forward_pretrain(tape, params, img1, img2, plan).loss;
    GradMap<T> ad = tape.backward(loss);
    std::function<double()> oracle_loss = [&]() {
        Tape<double> nt(false);
        return forward_pretrain(nt, mirror, img1_64, img2_64, plan).loss.item();
    };
    return check_gradients<T>(oracle, oracle_loss, checked, ad, eps, floor_, max_coords);
}

}  // namespace fusmae
