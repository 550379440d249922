#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fusmae/blocks.hpp"
#include "fusmae/pos_embed.hpp"

namespace fusmae {

enum class Variant { early_concat, xad, xaed };
enum class MaskStrategy { independent, consistent };

inline const char* to_string(Variant v) {
    switch (v) {
        case Variant::early_concat: return "early_concat";
        case Variant::xad: return "xad";
        default: return "xaed";
    }
}
inline const char* to_string(MaskStrategy s) {
    return s == MaskStrategy::independent ? "independent" : "consistent";
}
inline Variant variant_from_string(const std::string& s) {
    if (s == "early_concat") return Variant::early_concat;
    if (s == "xad") return Variant::xad;
    if (s == "xaed") return Variant::xaed;
    throw ConfigError("unknown variant '" + s + "' (expected early_concat|xad|xaed)");
}
inline MaskStrategy strategy_from_string(const std::string& s) {
    if (s == "independent") return MaskStrategy::independent;
    if (s == "consistent") return MaskStrategy::consistent;
    throw ConfigError("unknown masking strategy '" + s + "' (expected independent|consistent)");
}

// Which modalities feed the encoder during downstream evaluation.
enum class ModalityCondition { s1s2, s1, s2 };
inline const char* to_string(ModalityCondition m) {
    switch (m) {
        case ModalityCondition::s1: return "s1";
        case ModalityCondition::s2: return "s2";
        default: return "s1s2";
    }
}
inline ModalityCondition modality_from_string(const std::string& s) {
    if (s == "s1") return ModalityCondition::s1;
    if (s == "s2") return ModalityCondition::s2;
    if (s == "s1s2") return ModalityCondition::s1s2;
    throw ConfigError("unknown modality condition '" + s + "' (expected s1|s2|s1s2)");
}

struct ModelConfig {
    int H = 32, W = 32;
    int C1 = 2, C2 = 4;
    int P = 8;
    int N = 4, d = 64, h = 4;
    int N_dec = 2, d_dec = 32, h_dec = 4;
    double r = 0.75;
    MaskStrategy strategy = MaskStrategy::independent;
    Variant variant = Variant::xaed;
    bool xattn_shared_weights = true;
    bool xattn_decoder_kv_full = true;  // false: key/value from visible latents only
    bool norm_pix_loss = false;
    int mlp_ratio = 4;

    int grid_h() const { return H / P; }
    int grid_w() const { return W / P; }
    int tokens() const { return grid_h() * grid_w(); }
    int masked_count() const { return static_cast<int>(r * tokens()); }

    void validate() const {
        if (H <= 0 || W <= 0 || P <= 0 || H % P != 0 || W % P != 0)
            throw ConfigError("image extents must be positive and divisible by patch size");
        if (C1 < 1 || C2 < 1) throw ConfigError("channel counts must be >= 1");
        if (N < 1 || N_dec < 1) throw ConfigError("encoder/decoder depth must be >= 1");
        if (d % h != 0 || d_dec % h_dec != 0) throw ConfigError("width must be divisible by head count");
        if (d % 4 != 0 || d_dec % 4 != 0)
            throw ConfigError("widths must be divisible by 4 for sine-cosine position embeddings");
        if (r < 0.0 || r >= 1.0) throw ConfigError("mask ratio must lie in [0,1)");
        if (r > 0.0) {
            const int m = masked_count();
            if (m < 1 || m >= tokens()) throw ConfigError("mask ratio leaves no masked or no visible patch");
        }
    }
};

// Per-modality visible/masked patch index sets. Indices are kept sorted so
// token order follows the grid and latents split positionally.
struct MaskPlan {
    std::vector<int> visible1, masked1, visible2, masked2;
    double ratio = 0.0;
    MaskStrategy strategy = MaskStrategy::independent;
};

namespace detail {
inline void split_indices(int t, int n_masked, Rng& rng, std::vector<int>& visible, std::vector<int>& masked) {
    std::vector<std::uint32_t> perm = rng.permutation(static_cast<std::uint32_t>(t));
    masked.assign(perm.begin(), perm.begin() + n_masked);
    visible.assign(perm.begin() + n_masked, perm.end());
    std::sort(masked.begin(), masked.end());
    std::sort(visible.begin(), visible.end());
}
}  // namespace detail

// Uniform sampling without replacement of floor(r*T) masked patches.
// independent draws the modalities separately; consistent draws once.
inline MaskPlan sample_mask(int t, double r, MaskStrategy strategy, Rng& rng) {
    const int n_masked = static_cast<int>(r * t);
    if (n_masked < 1 || n_masked >= t)
        throw ConfigError("sample_mask: degenerate ratio " + std::to_string(r) + " for T=" + std::to_string(t));
    MaskPlan plan;
    plan.ratio = r;
    plan.strategy = strategy;
    detail::split_indices(t, n_masked, rng, plan.visible1, plan.masked1);
    if (strategy == MaskStrategy::consistent) {
        plan.visible2 = plan.visible1;
        plan.masked2 = plan.masked1;
    } else {
        detail::split_indices(t, n_masked, rng, plan.visible2, plan.masked2);
    }
    return plan;
}

inline MaskPlan full_visible_plan(int t) {
    MaskPlan plan;
    plan.ratio = 0.0;
    plan.visible1.resize(t);
    for (int i = 0; i < t; ++i) plan.visible1[i] = i;
    plan.visible2 = plan.visible1;
    return plan;
}

// ---- patch layout -----------------------------------------------------------

// [H,W,C] -> [T, P*P*C]; patches in grid row-major order, pixels row-major
// inside a patch, channel fastest. Pure value op (no tape).
template <class T>
Tensor<T> patchify(const Tensor<T>& image, int p) {
    if (image.shape.size() != 3) throw ShapeError("patchify: image must be [H,W,C]");
    const int hh = image.shape[0], ww = image.shape[1], c = image.shape[2];
    if (hh % p != 0 || ww % p != 0)
        throw ShapeError("patchify: extents " + shape_str(image.shape) + " not divisible by patch size " +
                         std::to_string(p));
    const int gh = hh / p, gw = ww / p;
    Tensor<T> out = Tensor<T>::zeros({gh * gw, p * p * c});
    const T* src = image.ptr();
    T* dst = out.ptr();
    for (int t = 0; t < gh * gw; ++t) {
        const int base_y = (t / gw) * p, base_x = (t % gw) * p;
        for (int py = 0; py < p; ++py)
            for (int px = 0; px < p; ++px)
                for (int ch = 0; ch < c; ++ch)
                    dst[t * p * p * c + (py * p + px) * c + ch] =
                        src[((base_y + py) * ww + (base_x + px)) * c + ch];
    }
    return out;
}

template <class T>
Tensor<T> unpatchify(const Tensor<T>& patches, int hh, int ww, int c, int p) {
    const int gh = hh / p, gw = ww / p;
    if (patches.shape.size() != 2 || patches.shape[0] != gh * gw || patches.shape[1] != p * p * c)
        throw ShapeError("unpatchify: patch tensor " + shape_str(patches.shape) + " inconsistent with image");
    Tensor<T> out = Tensor<T>::zeros({hh, ww, c});
    const T* src = patches.ptr();
    T* dst = out.ptr();
    for (int t = 0; t < gh * gw; ++t) {
        const int base_y = (t / gw) * p, base_x = (t % gw) * p;
        for (int py = 0; py < p; ++py)
            for (int px = 0; px < p; ++px)
                for (int ch = 0; ch < c; ++ch)
                    dst[((base_y + py) * ww + (base_x + px)) * c + ch] =
                        src[t * p * p * c + (py * p + px) * c + ch];
    }
    return out;
}

template <class T>
Tensor<T> stack_channels(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.size() != 3 || b.shape.size() != 3 || a.shape[0] != b.shape[0] || a.shape[1] != b.shape[1])
        throw ShapeError("stack_channels: spatial extents must agree");
    const int hh = a.shape[0], ww = a.shape[1], c1 = a.shape[2], c2 = b.shape[2];
    Tensor<T> out = Tensor<T>::zeros({hh, ww, c1 + c2});
    for (int i = 0; i < hh * ww; ++i) {
        for (int ch = 0; ch < c1; ++ch) out.ptr()[i * (c1 + c2) + ch] = a.ptr()[i * c1 + ch];
        for (int ch = 0; ch < c2; ++ch) out.ptr()[i * (c1 + c2) + c1 + ch] = b.ptr()[i * c2 + ch];
    }
    return out;
}

// ---- parameters -------------------------------------------------------------

template <class T>
struct FusMaeParams {
    ModelConfig cfg;

    // patch projections; joint_* only for the channel-stacking baseline
    Tensor<T> proj1_w, proj1_b, proj2_w, proj2_b;
    Tensor<T> proj_joint_w, proj_joint_b;
    Tensor<T> cls;                   // [d]
    Tensor<T> missing1, missing2;    // [d] learned stand-ins for an absent modality
    std::optional<XAttnEncoderParams<T>> xenc;
    std::vector<BlockParams<T>> enc_blocks;

    struct Decoder {
        Tensor<T> embed_w, embed_b;  // d -> d_dec
        Tensor<T> mask_token;        // [d_dec]
        std::optional<XAttnDecoderParams<T>> xdec;
        std::vector<BlockParams<T>> blocks;
        Tensor<T> head_w, head_b;    // d_dec -> P*P*C
    };
    std::vector<Decoder> decoders;   // one (early_concat) or two

    // fixed sine-cosine tables, not learned
    Tensor<T> pos_enc;  // [T, d]
    Tensor<T> pos_dec;  // [T, d_dec]
};

template <class T>
typename FusMaeParams<T>::Decoder make_decoder(const ModelConfig& cfg, int out_channels, bool with_xattn,
                                               Rng& rng) {
    typename FusMaeParams<T>::Decoder dec;
    dec.embed_w = make_param<T>({cfg.d, cfg.d_dec}, rng, kInitStd);
    dec.embed_b = make_const_param<T>({cfg.d_dec}, T(0));
    dec.mask_token = make_param<T>({cfg.d_dec}, rng, kInitStd);
    if (with_xattn) dec.xdec = make_xattn_decoder<T>(cfg.d_dec, cfg.h_dec, cfg.d_dec * cfg.mlp_ratio, rng);
    const int n_blocks = with_xattn ? cfg.N_dec - 1 : cfg.N_dec;
    for (int i = 0; i < n_blocks; ++i)
        dec.blocks.push_back(make_block<T>(cfg.d_dec, cfg.h_dec, cfg.d_dec * cfg.mlp_ratio, rng));
    dec.head_w = make_param<T>({cfg.d_dec, cfg.P * cfg.P * out_channels}, rng, kInitStd);
    dec.head_b = make_const_param<T>({cfg.P * cfg.P * out_channels}, T(0));
    return dec;
}

template <class T>
FusMaeParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(hash_combine(seed, 0xF05A11ull));
    FusMaeParams<T> p;
    p.cfg = cfg;
    const int patch1 = cfg.P * cfg.P * cfg.C1;
    const int patch2 = cfg.P * cfg.P * cfg.C2;
    if (cfg.variant == Variant::early_concat) {
        p.proj_joint_w = make_param<T>({patch1 + patch2, cfg.d}, rng, kInitStd);
        p.proj_joint_b = make_const_param<T>({cfg.d}, T(0));
    } else {
        p.proj1_w = make_param<T>({patch1, cfg.d}, rng, kInitStd);
        p.proj1_b = make_const_param<T>({cfg.d}, T(0));
        p.proj2_w = make_param<T>({patch2, cfg.d}, rng, kInitStd);
        p.proj2_b = make_const_param<T>({cfg.d}, T(0));
        p.missing1 = make_param<T>({cfg.d}, rng, kInitStd);
        p.missing2 = make_param<T>({cfg.d}, rng, kInitStd);
    }
    p.cls = make_param<T>({cfg.d}, rng, kInitStd);
    if (cfg.variant == Variant::xaed)
        p.xenc = make_xattn_encoder<T>(cfg.d, cfg.h, cfg.d * cfg.mlp_ratio, cfg.xattn_shared_weights, rng);
    const int n_enc = cfg.variant == Variant::xaed ? cfg.N - 1 : cfg.N;
    for (int i = 0; i < n_enc; ++i)
        p.enc_blocks.push_back(make_block<T>(cfg.d, cfg.h, cfg.d * cfg.mlp_ratio, rng));
    if (cfg.variant == Variant::early_concat) {
        p.decoders.push_back(make_decoder<T>(cfg, cfg.C1 + cfg.C2, false, rng));
    } else {
        p.decoders.push_back(make_decoder<T>(cfg, cfg.C1, true, rng));
        p.decoders.push_back(make_decoder<T>(cfg, cfg.C2, true, rng));
    }
    p.pos_enc = build_pos_embed<T>(cfg.grid_h(), cfg.grid_w(), cfg.d);
    p.pos_dec = build_pos_embed<T>(cfg.grid_h(), cfg.grid_w(), cfg.d_dec);
    return p;
}

template <class T, class F>
void visit_params(FusMaeParams<T>& p, F&& f) {
    const Variant v = p.cfg.variant;
    if (v == Variant::early_concat) {
        f(std::string("enc.proj_joint.w"), p.proj_joint_w);
        f(std::string("enc.proj_joint.b"), p.proj_joint_b);
    } else {
        f(std::string("enc.proj1.w"), p.proj1_w);
        f(std::string("enc.proj1.b"), p.proj1_b);
        f(std::string("enc.proj2.w"), p.proj2_w);
        f(std::string("enc.proj2.b"), p.proj2_b);
        f(std::string("enc.missing1"), p.missing1);
        f(std::string("enc.missing2"), p.missing2);
    }
    f(std::string("enc.cls"), p.cls);
    if (p.xenc) visit_params(*p.xenc, "enc.xattn", f);
    for (size_t i = 0; i < p.enc_blocks.size(); ++i)
        visit_params(p.enc_blocks[i], "enc.block" + std::to_string(i), f);
    for (size_t di = 0; di < p.decoders.size(); ++di) {
        auto& dec = p.decoders[di];
        const std::string dp = "dec" + std::to_string(di);
        f(dp + ".embed.w", dec.embed_w);
        f(dp + ".embed.b", dec.embed_b);
        f(dp + ".mask_token", dec.mask_token);
        if (dec.xdec) visit_params(*dec.xdec, dp + ".xattn", f);
        for (size_t i = 0; i < dec.blocks.size(); ++i)
            visit_params(dec.blocks[i], dp + ".block" + std::to_string(i), f);
        f(dp + ".head.w", dec.head_w);
        f(dp + ".head.b", dec.head_b);
    }
}

template <class T>
struct NamedParam {
    std::string name;
    Tensor<T>* tensor;
};

template <class T>
std::vector<NamedParam<T>> named_params(FusMaeParams<T>& p) {
    std::vector<NamedParam<T>> out;
    visit_params(p, [&](const std::string& name, Tensor<T>& t) { out.push_back({name, &t}); });
    return out;
}

// ---- encoder ----------------------------------------------------------------

// Encoder output plus the bookkeeping needed to split it by modality.
template <class T>
struct Latents {
    Tensor<T> all;       // [n_tokens, d]
    int v1 = 0, v2 = 0;  // leading token counts per modality (v2=0 for early_concat)
    int cls_index = 0;
    std::vector<int> modality_of;  // per token: 0 = modality 1, 1 = modality 2, -1 = CLS
};

template <class T>
Tensor<T> row_as_matrix(Tape<T>& tp, const Tensor<T>& v) {
    return reshape(tp, v, {1, v.shape[0]});
}

// z_{0,i} = proj_i(patchify(I_i)) + E_emb
template <class T>
Tensor<T> patch_embed(Tape<T>& tp, const Tensor<T>& image, const Tensor<T>& proj_w, const Tensor<T>& proj_b,
                      const Tensor<T>& pos, int p) {
    Tensor<T> patches = patchify(image, p);
    if (patches.shape[1] != proj_w.shape[0])
        throw ShapeError("patch_embed: projection expects width " + std::to_string(proj_w.shape[0]) +
                         ", image patches have " + std::to_string(patches.shape[1]));
    return add(tp, add(tp, matmul(tp, patches, proj_w), proj_b), pos);
}

// Tokens for one modality under a modality condition: either real patch
// embeddings or the learned missing-modality token broadcast over the grid.
template <class T>
Tensor<T> modality_tokens(Tape<T>& tp, FusMaeParams<T>& p, const Tensor<T>& image, int which, bool present) {
    const ModelConfig& cfg = p.cfg;
    if (present) {
        return which == 0 ? patch_embed(tp, image, p.proj1_w, p.proj1_b, p.pos_enc, cfg.P)
                          : patch_embed(tp, image, p.proj2_w, p.proj2_b, p.pos_enc, cfg.P);
    }
    const Tensor<T>& tok = which == 0 ? p.missing1 : p.missing2;
    std::vector<int> rep(cfg.tokens(), 0);
    Tensor<T> grid = gather(tp, row_as_matrix(tp, tok), 0, rep);
    return add(tp, grid, p.pos_enc);
}

template <class T>
Tensor<T> gather_rows(Tape<T>& tp, const Tensor<T>& x, const std::vector<int>& rows) {
    return gather(tp, x, 0, rows);
}

template <class T>
Tensor<T> zero_if_absent(const Tensor<T>& img, bool present) {
    if (present) return img;
    return Tensor<T>::zeros(img.shape);
}

template <class T>
Latents<T> encode(Tape<T>& tp, FusMaeParams<T>& p, const Tensor<T>& img1, const Tensor<T>& img2,
                  const MaskPlan& plan, ModalityCondition cond = ModalityCondition::s1s2,
                  AttnCapture* capture = nullptr) {
    const ModelConfig& cfg = p.cfg;
    Latents<T> out;
    Tensor<T> cls_row = row_as_matrix(tp, p.cls);
    Tensor<T> x;
    if (cfg.variant == Variant::early_concat) {
        // channel-stacking baseline: one projection over the joint image
        Tensor<T> joint = stack_channels(zero_if_absent(img1, cond != ModalityCondition::s2),
                                         zero_if_absent(img2, cond != ModalityCondition::s1));
        Tensor<T> tokens = patch_embed(tp, joint, p.proj_joint_w, p.proj_joint_b, p.pos_enc, cfg.P);
        Tensor<T> vis = gather_rows(tp, tokens, plan.visible1);
        x = concat(tp, {cls_row, vis}, 0);  // CLS leads the single stream
        out.v1 = static_cast<int>(plan.visible1.size());
        out.cls_index = 0;
        out.modality_of.assign(x.shape[0], 0);
        out.modality_of[0] = -1;
    } else {
        Tensor<T> tok1 = modality_tokens(tp, p, img1, 0, cond != ModalityCondition::s2);
        Tensor<T> tok2 = modality_tokens(tp, p, img2, 1, cond != ModalityCondition::s1);
        Tensor<T> vis1 = gather_rows(tp, tok1, plan.visible1);
        Tensor<T> vis2 = gather_rows(tp, tok2, plan.visible2);
        out.v1 = static_cast<int>(plan.visible1.size());
        out.v2 = static_cast<int>(plan.visible2.size());
        if (cfg.variant == Variant::xaed) {
            Tensor<T> fused = xattn_encoder_block(tp, vis1, vis2, *p.xenc, capture);
            x = concat(tp, {fused, cls_row}, 0);
        } else {
            x = concat(tp, {vis1, vis2, cls_row}, 0);
        }
        out.cls_index = out.v1 + out.v2;
        out.modality_of.assign(x.shape[0], -1);
        for (int i = 0; i < out.v1; ++i) out.modality_of[i] = 0;
        for (int i = 0; i < out.v2; ++i) out.modality_of[out.v1 + i] = 1;
    }
    for (size_t i = 0; i < p.enc_blocks.size(); ++i)
        x = transformer_block(tp, x, p.enc_blocks[i], capture, "enc_block" + std::to_string(i) + ".self");
    out.all = x;
    return out;
}

// ---- decoder ----------------------------------------------------------------

// Project one modality's visible latents into decoder width and restore the
// full patch grid with the learned mask token at masked positions.
template <class T>
Tensor<T> assemble_decoder_sequence(Tape<T>& tp, const Tensor<T>& visible_latents,
                                    const typename FusMaeParams<T>::Decoder& dec,
                                    const std::vector<int>& visible, const Tensor<T>& pos_dec, int t_total) {
    Tensor<T> z = add(tp, matmul(tp, visible_latents, dec.embed_w), dec.embed_b);
    Tensor<T> with_mask = concat(tp, {z, row_as_matrix(tp, dec.mask_token)}, 0);
    const int v = static_cast<int>(visible.size());
    std::vector<int> perm(t_total, v);  // default to the mask-token row
    for (int rank = 0; rank < v; ++rank) perm[visible[rank]] = rank;
    Tensor<T> full = gather(tp, with_mask, 0, perm);
    return add(tp, full, pos_dec);
}

// Per-patch predictions for modality `which` (0 or 1): cross-attend to the
// other modality's decoder sequence, run the remaining self-attention
// blocks, then project to pixel space. CLS never enters the decoders.
template <class T>
Tensor<T> decode_modality(Tape<T>& tp, FusMaeParams<T>& p, const Latents<T>& lat, const MaskPlan& plan,
                          int which, AttnCapture* capture = nullptr) {
    const ModelConfig& cfg = p.cfg;
    const int t_total = cfg.tokens();
    if (cfg.variant == Variant::early_concat) {
        auto& dec = p.decoders[0];
        std::vector<int> token_rows(lat.v1);
        for (int i = 0; i < lat.v1; ++i) token_rows[i] = 1 + i;  // skip leading CLS
        Tensor<T> vis = gather_rows(tp, lat.all, token_rows);
        Tensor<T> x = assemble_decoder_sequence(tp, vis, dec, plan.visible1, p.pos_dec, t_total);
        for (size_t i = 0; i < dec.blocks.size(); ++i)
            x = transformer_block(tp, x, dec.blocks[i], capture, "dec0.block" + std::to_string(i) + ".self");
        return add(tp, matmul(tp, x, dec.head_w), dec.head_b);
    }

    const std::vector<int>& vis_self = which == 0 ? plan.visible1 : plan.visible2;
    const std::vector<int>& vis_other = which == 0 ? plan.visible2 : plan.visible1;
    auto& dec_self = p.decoders[which];
    auto& dec_other = p.decoders[1 - which];

    std::vector<int> rows_self(vis_self.size()), rows_other(vis_other.size());
    for (size_t i = 0; i < rows_self.size(); ++i) rows_self[i] = (which == 0 ? 0 : lat.v1) + static_cast<int>(i);
    for (size_t i = 0; i < rows_other.size(); ++i)
        rows_other[i] = (which == 0 ? lat.v1 : 0) + static_cast<int>(i);

    Tensor<T> z_self = gather_rows(tp, lat.all, rows_self);
    Tensor<T> z_other = gather_rows(tp, lat.all, rows_other);

    Tensor<T> q = assemble_decoder_sequence(tp, z_self, dec_self, vis_self, p.pos_dec, t_total);
    Tensor<T> kv;
    if (cfg.xattn_decoder_kv_full) {
        kv = assemble_decoder_sequence(tp, z_other, dec_other, vis_other, p.pos_dec, t_total);
    } else {
        Tensor<T> z = add(tp, matmul(tp, z_other, dec_other.embed_w), dec_other.embed_b);
        kv = add(tp, z, gather_rows(tp, p.pos_dec, vis_other));
    }
    const std::string label = "dec" + std::to_string(which) + ".xattn";
    Tensor<T> x = xattn_decoder_block(tp, q, kv, *dec_self.xdec, capture, label);
    for (size_t i = 0; i < dec_self.blocks.size(); ++i)
        x = transformer_block(tp, x, dec_self.blocks[i], capture,
                              "dec" + std::to_string(which) + ".block" + std::to_string(i) + ".self");
    return add(tp, matmul(tp, x, dec_self.head_w), dec_self.head_b);
}

// ---- loss ---------------------------------------------------------------------

// Mean squared error over masked patches only. Visible rows never enter the
// graph, so their derivative is exactly zero.
template <class T>
Tensor<T> masked_mse_loss(Tape<T>& tp, const Tensor<T>& pred, const Tensor<T>& target,
                          const std::vector<int>& masked, bool norm_pix = false) {
    if (masked.empty()) throw ShapeError("masked_mse_loss: empty mask set");
    if (pred.shape != target.shape)
        throw ShapeError("masked_mse_loss: prediction " + shape_str(pred.shape) + " vs target " +
                         shape_str(target.shape));
    Tensor<T> pred_m = gather(tp, pred, 0, masked);
    Tensor<T> target_m = gather(tp, target, 0, masked);
    if (norm_pix) {
        // normalize each target patch to zero mean / unit variance
        const int rows = target_m.shape[0], dd = target_m.shape[1];
        Tensor<T> normed = Tensor<T>::zeros(target_m.shape);
        for (int r = 0; r < rows; ++r) {
            const T* src = target_m.ptr() + r * dd;
            double mu = 0, var = 0;
            for (int j = 0; j < dd; ++j) mu += src[j];
            mu /= dd;
            for (int j = 0; j < dd; ++j) var += (src[j] - mu) * (src[j] - mu);
            var /= dd;
            const double inv = 1.0 / std::sqrt(var + 1e-6);
            for (int j = 0; j < dd; ++j) normed.ptr()[r * dd + j] = static_cast<T>((src[j] - mu) * inv);
        }
        target_m = normed;
    }
    Tensor<T> diff = sub(tp, pred_m, target_m);
    return mean(tp, mul(tp, diff, diff));
}

// ---- full pretraining forward --------------------------------------------------

template <class T>
struct Reconstruction {
    Tensor<T> image1, image2;   // inputs at visible positions, predictions at masked ones
    Tensor<T> patches1, patches2;  // raw per-patch predictions
};

template <class T>
struct PretrainOut {
    Tensor<T> loss;        // scalar, on tape
    T loss1 = 0, loss2 = 0;
    MaskPlan plan;
    Reconstruction<T> recon;
};

template <class T>
Tensor<T> blend_reconstruction(const Tensor<T>& pred_patches, const Tensor<T>& target_patches,
                               const std::vector<int>& masked, int hh, int ww, int c, int p) {
    Tensor<T> mixed = Tensor<T>::from_vector(target_patches.shape, *target_patches.data);
    const int dd = mixed.shape[1];
    for (int row : masked)
        std::copy(pred_patches.ptr() + row * dd, pred_patches.ptr() + (row + 1) * dd, mixed.ptr() + row * dd);
    return unpatchify(mixed, hh, ww, c, p);
}

// Gather of every 'which'-modality pixel column from joint-patch predictions.
inline std::vector<int> joint_channel_columns(int p, int c1, int c2, int which) {
    const int c = c1 + c2;
    std::vector<int> cols;
    cols.reserve(p * p * (which == 0 ? c1 : c2));
    for (int px = 0; px < p * p; ++px) {
        const int lo = which == 0 ? 0 : c1;
        const int hi = which == 0 ? c1 : c;
        for (int ch = lo; ch < hi; ++ch) cols.push_back(px * c + ch);
    }
    return cols;
}

template <class T>
PretrainOut<T> forward_pretrain(Tape<T>& tp, FusMaeParams<T>& p, const Tensor<T>& img1, const Tensor<T>& img2,
                                const MaskPlan& plan, AttnCapture* capture = nullptr) {
    const ModelConfig& cfg = p.cfg;
    PretrainOut<T> out;
    out.plan = plan;
    Latents<T> lat = encode(tp, p, img1, img2, plan, ModalityCondition::s1s2, capture);
    Tensor<T> target1 = patchify(img1, cfg.P);
    Tensor<T> target2 = patchify(img2, cfg.P);

    Tensor<T> pred1, pred2;
    if (cfg.variant == Variant::early_concat) {
        Tensor<T> joint_pred = decode_modality(tp, p, lat, plan, 0, capture);
        pred1 = gather(tp, joint_pred, 1, joint_channel_columns(cfg.P, cfg.C1, cfg.C2, 0));
        pred2 = gather(tp, joint_pred, 1, joint_channel_columns(cfg.P, cfg.C1, cfg.C2, 1));
    } else {
        pred1 = decode_modality(tp, p, lat, plan, 0, capture);
        pred2 = decode_modality(tp, p, lat, plan, 1, capture);
    }
    Tensor<T> l1 = masked_mse_loss(tp, pred1, target1, plan.masked1, cfg.norm_pix_loss);
    Tensor<T> l2 = masked_mse_loss(tp, pred2, target2, plan.masked2, cfg.norm_pix_loss);
    out.loss = scale(tp, add(tp, l1, l2), T(0.5));
    out.loss1 = l1.item();
    out.loss2 = l2.item();
    out.recon.patches1 = pred1;
    out.recon.patches2 = pred2;
    out.recon.image1 = blend_reconstruction(pred1, target1, plan.masked1, cfg.H, cfg.W, cfg.C1, cfg.P);
    out.recon.image2 = blend_reconstruction(pred2, target2, plan.masked2, cfg.H, cfg.W, cfg.C2, cfg.P);
    return out;
}

template <class T>
PretrainOut<T> forward_pretrain(Tape<T>& tp, FusMaeParams<T>& p, const Tensor<T>& img1, const Tensor<T>& img2,
                                Rng& rng, AttnCapture* capture = nullptr) {
    MaskPlan plan = sample_mask(p.cfg.tokens(), p.cfg.r, p.cfg.strategy, rng);
    if (p.cfg.variant == Variant::early_concat) {
        // one token stream, so one mask set regardless of strategy
        plan.visible2 = plan.visible1;
        plan.masked2 = plan.masked1;
    }
    return forward_pretrain(tp, p, img1, img2, plan, capture);
}

// ---- downstream features -------------------------------------------------------

// Full (unmasked) encoder pass; the CLS latent is the sample representation.
template <class T>
Tensor<T> extract_features(Tape<T>& tp, FusMaeParams<T>& p, const Tensor<T>& img1, const Tensor<T>& img2,
                           ModalityCondition cond = ModalityCondition::s1s2, AttnCapture* capture = nullptr) {
    MaskPlan plan = full_visible_plan(p.cfg.tokens());
    Latents<T> lat = encode(tp, p, img1, img2, plan, cond, capture);
    Tensor<T> cls = gather_rows(tp, lat.all, {lat.cls_index});
    return reshape(tp, cls, {p.cfg.d});
}

// Per-head fraction of attention mass that stays within the query's own
// modality, measured on the first self-attention block of a full forward.
struct AttnMassReport {
    std::vector<double> within_modality;  // one entry per head
    AttnCapture capture;                  // everything recorded during the pass
    std::string first_self_label;
};

template <class T>
AttnMassReport attention_mass_diagnostic(FusMaeParams<T>& p, const Tensor<T>& img1, const Tensor<T>& img2) {
    Tape<T> tp(false);
    AttnMassReport report;
    MaskPlan plan = full_visible_plan(p.cfg.tokens());
    Latents<T> lat = encode(tp, p, img1, img2, plan, ModalityCondition::s1s2, &report.capture);
    report.first_self_label = "enc_block0.self";
    for (const auto& e : report.capture.entries) {
        if (e.label != report.first_self_label) continue;
        report.within_modality.assign(e.heads, 0.0);
        for (int h = 0; h < e.heads; ++h) {
            double within = 0.0;
            int n_queries = 0;
            for (int qi = 0; qi < e.t_q; ++qi) {
                const int qm = lat.modality_of[qi];
                if (qm < 0) continue;  // skip CLS queries
                ++n_queries;
                for (int ki = 0; ki < e.t_kv; ++ki)
                    if (lat.modality_of[ki] == qm)
                        within += e.weights[(static_cast<size_t>(h) * e.t_q + qi) * e.t_kv + ki];
            }
            report.within_modality[h] = n_queries > 0 ? within / n_queries : 0.0;
        }
        break;
    }
    return report;
}

}  // namespace fusmae
