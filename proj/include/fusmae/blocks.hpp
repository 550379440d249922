#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fusmae/rng.hpp"
#include "fusmae/tensor.hpp"

namespace fusmae {

// Forward-pass side channel for attention-weight diagnostics. Off unless a
// capture object is passed down, so training never pays for it.
struct AttnCapture {
    struct Entry {
        std::string label;
        int heads = 0;
        int t_q = 0;
        int t_kv = 0;
        std::vector<double> weights;  // [heads, t_q, t_kv] row-major
    };
    std::vector<Entry> entries;
};

template <class T>
struct AttentionParams {
    Tensor<T> wq, wk, wv, wo;  // all d x d
    int heads = 1;
    int dim() const { return wq.shape[0]; }
};

template <class T>
struct MlpParams {
    Tensor<T> w1, b1, w2, b2;  // d x d_ff, d_ff, d_ff x d, d
};

template <class T>
struct LayerNormParams {
    Tensor<T> gain, bias;
};

// Standard pre-norm ViT encoder block.
template <class T>
struct BlockParams {
    LayerNormParams<T> norm1, norm2;
    AttentionParams<T> attn;
    MlpParams<T> mlp;
};

// Early-fusion block: bidirectional cross-attention over two token streams.
// Both directions share one projection set unless ca_reverse is present.
template <class T>
struct XAttnEncoderParams {
    LayerNormParams<T> norm_x, norm_y, norm_mlp;
    AttentionParams<T> ca;
    std::optional<AttentionParams<T>> ca_reverse;
    MlpParams<T> mlp;
};

// Feature-fusion block: one modality's latents attend to the other's.
template <class T>
struct XAttnDecoderParams {
    LayerNormParams<T> norm_q, norm_kv, norm_mlp;
    AttentionParams<T> ca;
    MlpParams<T> mlp;
};

template <class T>
Tensor<T> apply_layer_norm(Tape<T>& tp, const Tensor<T>& x, const LayerNormParams<T>& p) {
    return layer_norm(tp, x, p.gain, p.bias, T(1e-5));
}

// Scaled dot-product attention with h heads. Queries come from q_src,
// keys/values from kv_src; q_src == kv_src gives self-attention.
template <class T>
Tensor<T> multi_head_attention(Tape<T>& tp, const Tensor<T>& q_src, const Tensor<T>& kv_src,
                               const AttentionParams<T>& p, AttnCapture* capture = nullptr,
                               const std::string& capture_label = "") {
    if (q_src.shape.size() != 2 || kv_src.shape.size() != 2)
        throw ShapeError("multi_head_attention: token inputs must be rank 2");
    const int d = p.dim();
    if (q_src.shape[1] != d || kv_src.shape[1] != d)
        throw ShapeError("multi_head_attention: input width must equal " + std::to_string(d));
    if (d % p.heads != 0)
        throw ShapeError("multi_head_attention: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(p.heads) + " heads");
    const int d_q = d / p.heads;
    const int t_q = q_src.shape[0], t_kv = kv_src.shape[0];

    Tensor<T> q = matmul(tp, q_src, p.wq);
    Tensor<T> k = matmul(tp, kv_src, p.wk);
    Tensor<T> v = matmul(tp, kv_src, p.wv);

    AttnCapture::Entry entry;
    if (capture) {
        entry.label = capture_label;
        entry.heads = p.heads;
        entry.t_q = t_q;
        entry.t_kv = t_kv;
        entry.weights.reserve(static_cast<size_t>(p.heads) * t_q * t_kv);
    }

    std::vector<Tensor<T>> heads;
    heads.reserve(p.heads);
    for (int h = 0; h < p.heads; ++h) {
        std::vector<int> cols(d_q);
        for (int j = 0; j < d_q; ++j) cols[j] = h * d_q + j;
        Tensor<T> qh = gather(tp, q, 1, cols);
        Tensor<T> kh = gather(tp, k, 1, cols);
        Tensor<T> vh = gather(tp, v, 1, cols);
        Tensor<T> scores = scale(tp, matmul(tp, qh, transpose(tp, kh)), T(1) / std::sqrt(static_cast<T>(d_q)));
        Tensor<T> attn = softmax(tp, scores, 1);
        if (capture)
            for (const T w : attn.vals()) entry.weights.push_back(static_cast<double>(w));
        heads.push_back(matmul(tp, attn, vh));
    }
    if (capture) capture->entries.push_back(std::move(entry));
    return matmul(tp, concat(tp, heads, 1), p.wo);
}

template <class T>
Tensor<T> mlp_forward(Tape<T>& tp, const Tensor<T>& x, const MlpParams<T>& p) {
    Tensor<T> h = gelu(tp, add(tp, matmul(tp, x, p.w1), p.b1));
    return add(tp, matmul(tp, h, p.w2), p.b2);
}

// Pre-norm residual block: x + MHA(LN(x)) then x + MLP(LN(x)).
template <class T>
Tensor<T> transformer_block(Tape<T>& tp, const Tensor<T>& x, const BlockParams<T>& p,
                            AttnCapture* capture = nullptr, const std::string& capture_label = "") {
    Tensor<T> n1 = apply_layer_norm(tp, x, p.norm1);
    Tensor<T> h = add(tp, x, multi_head_attention(tp, n1, n1, p.attn, capture, capture_label));
    return add(tp, h, mlp_forward(tp, apply_layer_norm(tp, h, p.norm2), p.mlp));
}

// fus(x,y) = (x (+) y) + (CA(x,y) (+) CA(y,x)), concatenating along the
// token axis, then a residual token-wise MLP over the fused sequence.
template <class T>
Tensor<T> xattn_encoder_block(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& y,
                              const XAttnEncoderParams<T>& p, AttnCapture* capture = nullptr) {
    if (x.shape.size() != 2 || y.shape.size() != 2 || x.shape[1] != y.shape[1])
        throw ShapeError("xattn_encoder_block: token streams must be rank 2 with equal widths");
    Tensor<T> xn = apply_layer_norm(tp, x, p.norm_x);
    Tensor<T> yn = apply_layer_norm(tp, y, p.norm_y);
    Tensor<T> ca_xy = multi_head_attention(tp, xn, yn, p.ca, capture, "xattn_enc.ca_xy");
    const AttentionParams<T>& rev = p.ca_reverse ? *p.ca_reverse : p.ca;
    Tensor<T> ca_yx = multi_head_attention(tp, yn, xn, rev, capture, "xattn_enc.ca_yx");
    Tensor<T> fus = add(tp, concat(tp, {x, y}, 0), concat(tp, {ca_xy, ca_yx}, 0));
    return add(tp, fus, mlp_forward(tp, apply_layer_norm(tp, fus, p.norm_mlp), p.mlp));
}

// z_i + CA(z_i, z_j), then a residual MLP. Output keeps z_i's token count.
template <class T>
Tensor<T> xattn_decoder_block(Tape<T>& tp, const Tensor<T>& z_i, const Tensor<T>& z_j,
                              const XAttnDecoderParams<T>& p, AttnCapture* capture = nullptr,
                              const std::string& capture_label = "xattn_dec.ca") {
    if (z_i.shape.size() != 2 || z_j.shape.size() != 2 || z_i.shape[1] != z_j.shape[1])
        throw ShapeError("xattn_decoder_block: latent widths must agree");
    Tensor<T> zq = apply_layer_norm(tp, z_i, p.norm_q);
    Tensor<T> zkv = apply_layer_norm(tp, z_j, p.norm_kv);
    Tensor<T> zx = add(tp, z_i, multi_head_attention(tp, zq, zkv, p.ca, capture, capture_label));
    return add(tp, zx, mlp_forward(tp, apply_layer_norm(tp, zx, p.norm_mlp), p.mlp));
}

// ---- initialization -------------------------------------------------------

template <class T>
Tensor<T> make_param(Shape shape, Rng& rng, double stddev) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    if (stddev > 0)
        for (auto& v : t.vals()) v = static_cast<T>(rng.normal(0.0, stddev));
    t.requires_grad = true;
    return t;
}

template <class T>
Tensor<T> make_const_param(Shape shape, T fill) {
    Tensor<T> t = Tensor<T>::full(std::move(shape), fill);
    t.requires_grad = true;
    return t;
}

inline constexpr double kInitStd = 0.02;

template <class T>
AttentionParams<T> make_attention(int d, int heads, Rng& rng) {
    AttentionParams<T> p;
    p.wq = make_param<T>({d, d}, rng, kInitStd);
    p.wk = make_param<T>({d, d}, rng, kInitStd);
    p.wv = make_param<T>({d, d}, rng, kInitStd);
    p.wo = make_param<T>({d, d}, rng, kInitStd);
    p.heads = heads;
    return p;
}

template <class T>
MlpParams<T> make_mlp(int d, int d_ff, Rng& rng) {
    MlpParams<T> p;
    p.w1 = make_param<T>({d, d_ff}, rng, kInitStd);
    p.b1 = make_const_param<T>({d_ff}, T(0));
    p.w2 = make_param<T>({d_ff, d}, rng, kInitStd);
    p.b2 = make_const_param<T>({d}, T(0));
    return p;
}

template <class T>
LayerNormParams<T> make_layer_norm(int d) {
    LayerNormParams<T> p;
    p.gain = make_const_param<T>({d}, T(1));
    p.bias = make_const_param<T>({d}, T(0));
    return p;
}

template <class T>
BlockParams<T> make_block(int d, int heads, int d_ff, Rng& rng) {
    BlockParams<T> p;
    p.norm1 = make_layer_norm<T>(d);
    p.norm2 = make_layer_norm<T>(d);
    p.attn = make_attention<T>(d, heads, rng);
    p.mlp = make_mlp<T>(d, d_ff, rng);
    return p;
}

template <class T>
XAttnEncoderParams<T> make_xattn_encoder(int d, int heads, int d_ff, bool shared, Rng& rng) {
    XAttnEncoderParams<T> p;
    p.norm_x = make_layer_norm<T>(d);
    p.norm_y = make_layer_norm<T>(d);
    p.norm_mlp = make_layer_norm<T>(d);
    p.ca = make_attention<T>(d, heads, rng);
    if (!shared) p.ca_reverse = make_attention<T>(d, heads, rng);
    p.mlp = make_mlp<T>(d, d_ff, rng);
    return p;
}

template <class T>
XAttnDecoderParams<T> make_xattn_decoder(int d, int heads, int d_ff, Rng& rng) {
    XAttnDecoderParams<T> p;
    p.norm_q = make_layer_norm<T>(d);
    p.norm_kv = make_layer_norm<T>(d);
    p.norm_mlp = make_layer_norm<T>(d);
    p.ca = make_attention<T>(d, heads, rng);
    p.mlp = make_mlp<T>(d, d_ff, rng);
    return p;
}

// ---- parameter visitation ---------------------------------------------------
// Deterministic (name, tensor) enumeration used by the optimizer, the
// checkpoint format, and gradient checks. Order is declaration order.

template <class T, class F>
void visit_params(AttentionParams<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".wq", p.wq);
    f(prefix + ".wk", p.wk);
    f(prefix + ".wv", p.wv);
    f(prefix + ".wo", p.wo);
}

template <class T, class F>
void visit_params(MlpParams<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".w1", p.w1);
    f(prefix + ".b1", p.b1);
    f(prefix + ".w2", p.w2);
    f(prefix + ".b2", p.b2);
}

template <class T, class F>
void visit_params(LayerNormParams<T>& p, const std::string& prefix, F&& f) {
    f(prefix + ".gain", p.gain);
    f(prefix + ".bias", p.bias);
}

template <class T, class F>
void visit_params(BlockParams<T>& p, const std::string& prefix, F&& f) {
    visit_params(p.norm1, prefix + ".norm1", f);
    visit_params(p.attn, prefix + ".attn", f);
    visit_params(p.norm2, prefix + ".norm2", f);
    visit_params(p.mlp, prefix + ".mlp", f);
}

template <class T, class F>
void visit_params(XAttnEncoderParams<T>& p, const std::string& prefix, F&& f) {
    visit_params(p.norm_x, prefix + ".norm_x", f);
    visit_params(p.norm_y, prefix + ".norm_y", f);
    visit_params(p.ca, prefix + ".ca", f);
    if (p.ca_reverse) visit_params(*p.ca_reverse, prefix + ".ca_rev", f);
    visit_params(p.norm_mlp, prefix + ".norm_mlp", f);
    visit_params(p.mlp, prefix + ".mlp", f);
}

template <class T, class F>
void visit_params(XAttnDecoderParams<T>& p, const std::string& prefix, F&& f) {
    visit_params(p.norm_q, prefix + ".norm_q", f);
    visit_params(p.norm_kv, prefix + ".norm_kv", f);
    visit_params(p.ca, prefix + ".ca", f);
    visit_params(p.norm_mlp, prefix + ".norm_mlp", f);
    visit_params(p.mlp, prefix + ".mlp", f);
}

}  // namespace fusmae
