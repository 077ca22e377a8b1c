// Video and text encoders over the autograd tape.
//
// Video: a single strided-cube linear embedding feeds a stack of stages;
// each stage may pool the token grid at entry (query pooling) and pools
// key/value sequences inside every attention layer. The class token bypasses
// all pooling. Text: a small bidirectional transformer with learned
// positional embeddings and padding masked out of attention. Both encoders
// pool at the class position and project into a shared L2-normalized space.
#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "cinecontrast/autograd.hpp"
#include "cinecontrast/optim.hpp"
#include "cinecontrast/rng.hpp"
#include "cinecontrast/synthdata.hpp"
#include "cinecontrast/tensor.hpp"

namespace cinecontrast {

struct StageConfig {
    int width = 32;
    int layers = 2;
    int heads = 1;
    std::array<int, 3> pool{1, 1, 1};  // grid pooling at stage entry and for K/V
};

struct VideoEncoderConfig {
    int in_channels = 1;
    int frames = 8;
    int height = 32;
    int width = 32;
    std::array<int, 3> cube{2, 4, 4};
    std::array<int, 3> stride{2, 4, 4};
    std::vector<StageConfig> stages;
    int mlp_ratio = 4;

    std::array<int, 3> initial_grid() const {
        return {(frames - cube[0]) / stride[0] + 1, (height - cube[1]) / stride[1] + 1,
                (width - cube[2]) / stride[2] + 1};
    }

    int patch_dim() const { return in_channels * cube[0] * cube[1] * cube[2]; }

    int final_width() const { return stages.back().width; }

    // one map per head per layer, plus the aggregate map
    int attention_map_count() const {
        int n = 0;
        for (const auto& s : stages) n += s.layers * s.heads;
        return n + 1;
    }
};

struct TextEncoderConfig {
    int vocab_size = 64;
    int max_tokens = 48;
    int layers = 2;
    int heads = 2;
    int hidden = 32;
    int mlp_ratio = 4;
};

struct EncoderConfig {
    VideoEncoderConfig video;
    TextEncoderConfig text;
    int joint_dim = 64;

    // CPU-trainable profile preserving the staged-pooling structure: grid
    // (4,8,8) -> (4,4,4) -> (4,2,2), widths 32/48/64, heads 1/2/4.
    static EncoderConfig desk_profile() {
        EncoderConfig cfg;
        cfg.video.stages = {
            StageConfig{32, 2, 1, {1, 1, 1}},
            StageConfig{48, 2, 2, {1, 2, 2}},
            StageConfig{64, 2, 4, {1, 2, 2}},
        };
        return cfg;
    }

    // Tiny profile for fp64 gradient checks.
    static EncoderConfig grad_check_profile() {
        EncoderConfig cfg;
        cfg.video.frames = 4;
        cfg.video.height = 8;
        cfg.video.width = 8;
        cfg.video.cube = {2, 4, 4};
        cfg.video.stride = {2, 4, 4};
        cfg.video.mlp_ratio = 2;
        cfg.video.stages = {
            StageConfig{8, 1, 1, {1, 1, 1}},
            StageConfig{12, 1, 2, {1, 2, 2}},
        };
        cfg.text.vocab_size = 16;
        cfg.text.max_tokens = 8;
        cfg.text.layers = 1;
        cfg.text.heads = 2;
        cfg.text.hidden = 8;
        cfg.text.mlp_ratio = 2;
        cfg.joint_dim = 8;
        return cfg;
    }

    void validate() const {
        if (video.stages.empty()) throw ContractViolation("config: need at least one stage");
        if (video.frames < video.cube[0] || video.height < video.cube[1] ||
            video.width < video.cube[2]) {
            throw ContractViolation("config: input smaller than cube");
        }
        int prev = video.stages.front().width;
        for (const auto& s : video.stages) {
            if (s.width % s.heads != 0) {
                throw ContractViolation("config: stage width not divisible by heads");
            }
            if (s.width < prev) throw ContractViolation("config: stage widths must not shrink");
            prev = s.width;
        }
        if (text.hidden % text.heads != 0) {
            throw ContractViolation("config: text hidden not divisible by heads");
        }
        if (joint_dim <= 0) throw ContractViolation("config: joint_dim must be positive");
    }
};

enum class FreezeMode { kFinetune, kTransfer, kFrozen };

inline const char* freeze_mode_name(FreezeMode m) {
    switch (m) {
        case FreezeMode::kFinetune: return "finetune";
        case FreezeMode::kTransfer: return "transfer";
        case FreezeMode::kFrozen: return "frozen";
    }
    return "?";
}

inline FreezeMode freeze_mode_from_name(const std::string& s) {
    if (s == "finetune") return FreezeMode::kFinetune;
    if (s == "transfer") return FreezeMode::kTransfer;
    if (s == "frozen") return FreezeMode::kFrozen;
    throw ContractViolation("unknown freeze mode: " + s);
}

template <class Real>
struct TokenGrid {
    ag::Var<Real> tokens;  // [1 + T*H*W, width] with the class token in row 0
    std::array<int, 3> grid{1, 1, 1};
    bool has_class = true;

    int token_count() const { return tokens.value().dim(0); }
};

// Per-head class-token attention rows captured during a forward pass.
template <class Real>
struct AttentionCapture {
    struct MapRec {
        int global_layer = 0;
        int head = 0;
        std::array<int, 3> kv_grid{1, 1, 1};
        Tensor<Real> values;  // [kv grid cells], class key dropped
    };
    std::vector<MapRec> maps;
};

// ---------------------------------------------------------------------------
// parameter initialization
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
void add_linear(ParamSet<Real>& p, const std::string& prefix, int in_dim, int out_dim, Rng& rng) {
    const Real sd = static_cast<Real>(std::sqrt(2.0 / static_cast<double>(in_dim + out_dim)));
    p.add(prefix + ".weight", Tensor<Real>::randn(Shape{in_dim, out_dim}, rng, sd));
    p.add(prefix + ".bias", Tensor<Real>::zeros(Shape{out_dim}));
}

template <class Real>
void add_layernorm(ParamSet<Real>& p, const std::string& prefix, int dim) {
    p.add(prefix + ".gamma", Tensor<Real>::full(Shape{dim}, Real(1)));
    p.add(prefix + ".beta", Tensor<Real>::zeros(Shape{dim}));
}

template <class Real>
void add_transformer_layer(ParamSet<Real>& p, const std::string& prefix, int width, int mlp_ratio,
                           Rng& rng) {
    add_layernorm(p, prefix + ".ln1", width);
    add_linear(p, prefix + ".attn.q", width, width, rng);
    add_linear(p, prefix + ".attn.k", width, width, rng);
    add_linear(p, prefix + ".attn.v", width, width, rng);
    add_linear(p, prefix + ".attn.out", width, width, rng);
    add_layernorm(p, prefix + ".ln2", width);
    add_linear(p, prefix + ".mlp.fc1", width, width * mlp_ratio, rng);
    add_linear(p, prefix + ".mlp.fc2", width * mlp_ratio, width, rng);
}

}  // namespace detail

template <class Real>
ParamSet<Real> init_encoder_params(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamSet<Real> p;

    const int w0 = cfg.video.stages.front().width;
    detail::add_linear(p, "video.cube", cfg.video.patch_dim(), w0, rng);
    p.add("video.cls", Tensor<Real>::randn(Shape{1, w0}, rng, Real(0.02)));
    const auto g0 = cfg.video.initial_grid();
    p.add("video.pos",
          Tensor<Real>::randn(Shape{1 + g0[0] * g0[1] * g0[2], w0}, rng, Real(0.02)));

    int prev_width = w0;
    for (std::size_t s = 0; s < cfg.video.stages.size(); ++s) {
        const auto& stage = cfg.video.stages[s];
        const std::string sp = "video.stage" + std::to_string(s);
        if (stage.width != prev_width) {
            detail::add_linear(p, sp + ".in_proj", prev_width, stage.width, rng);
        }
        for (int l = 0; l < stage.layers; ++l) {
            detail::add_transformer_layer(p, sp + ".layer" + std::to_string(l), stage.width,
                                          cfg.video.mlp_ratio, rng);
        }
        prev_width = stage.width;
    }
    detail::add_layernorm(p, "video.norm", prev_width);

    p.add("text.tok",
          Tensor<Real>::randn(Shape{cfg.text.vocab_size, cfg.text.hidden}, rng, Real(0.02)));
    p.add("text.pos",
          Tensor<Real>::randn(Shape{cfg.text.max_tokens, cfg.text.hidden}, rng, Real(0.02)));
    for (int l = 0; l < cfg.text.layers; ++l) {
        detail::add_transformer_layer(p, "text.layer" + std::to_string(l), cfg.text.hidden,
                                      cfg.text.mlp_ratio, rng);
    }
    detail::add_layernorm(p, "text.norm", cfg.text.hidden);

    detail::add_linear(p, "proj.video", cfg.video.final_width(), cfg.joint_dim, rng);
    detail::add_linear(p, "proj.text", cfg.text.hidden, cfg.joint_dim, rng);
    return p;
}

// ---------------------------------------------------------------------------
// forward pieces
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
ag::Var<Real> layernorm_affine(ag::Tape<Real>& tape, const PlacedParams<Real>& pp,
                               const std::string& prefix, ag::Var<Real> x) {
    (void)tape;
    return ag::add_rowwise(ag::mul_rowwise(ag::layernorm(x), pp.at(prefix + ".gamma")),
                           pp.at(prefix + ".beta"));
}

template <class Real>
ag::Var<Real> linear_named(const PlacedParams<Real>& pp, const std::string& prefix,
                           ag::Var<Real> x) {
    return ag::linear(x, pp.at(prefix + ".weight"), pp.at(prefix + ".bias"));
}

// Pre-LN attention block. kv_pool pools the normalized tokens for K/V over
// the current grid; the class token is carried through unpooled. mask, when
// given, is added to every score row (keys axis).
template <class Real>
ag::Var<Real> attention_block(ag::Tape<Real>& tape, const PlacedParams<Real>& pp,
                              const std::string& prefix, ag::Var<Real> x,
                              std::array<int, 3> grid, bool has_class, int heads,
                              std::array<int, 3> kv_pool, ag::Var<Real> mask,
                              AttentionCapture<Real>* capture, int global_layer) {
    const int L = x.value().dim(0);
    const int width = x.value().dim(1);
    const int dh = width / heads;

    auto x_ln = layernorm_affine(tape, pp, prefix + ".ln1", x);
    auto q_src = x_ln;
    auto kv_src = x_ln;
    std::array<int, 3> kv_grid = grid;
    const bool pool_kv = kv_pool[0] != 1 || kv_pool[1] != 1 || kv_pool[2] != 1;
    if (pool_kv) {
        kv_src = ag::grid_pool(x_ln, grid, kv_pool, has_class);
        for (int d = 0; d < 3; ++d) kv_grid[static_cast<std::size_t>(d)] = ag::detail::ceil_div(grid[static_cast<std::size_t>(d)], kv_pool[static_cast<std::size_t>(d)]);
    }
    const int Lk = kv_src.value().dim(0);

    auto q = linear_named(pp, prefix + ".attn.q", q_src);
    auto k = linear_named(pp, prefix + ".attn.k", kv_src);
    auto v = linear_named(pp, prefix + ".attn.v", kv_src);

    auto qh = ag::transpose(ag::reshape(q, Shape{L, heads, dh}), 0, 1);   // [h, L, dh]
    auto kh = ag::transpose(ag::reshape(k, Shape{Lk, heads, dh}), 0, 1);  // [h, Lk, dh]
    auto vh = ag::transpose(ag::reshape(v, Shape{Lk, heads, dh}), 0, 1);

    auto scores = ag::scale(ag::matmul(qh, kh, false, true),
                            static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh))));
    if (mask.valid()) scores = ag::add_rowwise(scores, mask);
    auto attn = ag::softmax(scores);  // [h, L, Lk]

    if (capture != nullptr) {
        const auto& av = attn.value();
        for (int h = 0; h < heads; ++h) {
            typename AttentionCapture<Real>::MapRec rec;
            rec.global_layer = global_layer;
            rec.head = h;
            rec.kv_grid = kv_grid;
            const int cells = Lk - (has_class ? 1 : 0);
            rec.values = Tensor<Real>(Shape{cells});
            const std::size_t row = (static_cast<std::size_t>(h) * L) * Lk;  // class query row 0
            for (int c = 0; c < cells; ++c) {
                rec.values.data[static_cast<std::size_t>(c)] =
                    av.data[row + static_cast<std::size_t>(c + (has_class ? 1 : 0))];
            }
            capture->maps.push_back(std::move(rec));
        }
    }

    auto ctx = ag::matmul(attn, vh);                                   // [h, L, dh]
    auto merged = ag::reshape(ag::transpose(ctx, 0, 1), Shape{L, width});
    auto out = linear_named(pp, prefix + ".attn.out", merged);
    return ag::add(x, out);
}

template <class Real>
ag::Var<Real> mlp_block(ag::Tape<Real>& tape, const PlacedParams<Real>& pp,
                        const std::string& prefix, ag::Var<Real> x) {
    auto h = layernorm_affine(tape, pp, prefix + ".ln2", x);
    h = linear_named(pp, prefix + ".mlp.fc1", h);
    h = ag::gelu(h);
    h = linear_named(pp, prefix + ".mlp.fc2", h);
    return ag::add(x, h);
}

}  // namespace detail

// Strided-cube linear embedding; class token prepended, no positional term.
// A zero video therefore yields patch tokens equal to the cube bias.
template <class Real>
TokenGrid<Real> cube_embed(ag::Tape<Real>& tape, const PlacedParams<Real>& pp,
                           const Tensor<Real>& video, const EncoderConfig& cfg) {
    const auto& vc = cfg.video;
    if (video.rank() != 4 || video.dim(0) != vc.in_channels || video.dim(1) != vc.frames ||
        video.dim(2) != vc.height || video.dim(3) != vc.width) {
        throw ContractViolation("cube_embed: video shape does not match config");
    }
    auto x = tape.constant(video);
    auto patches = ag::unfold3d(x, vc.cube, vc.stride);
    auto tokens = ag::linear(patches, pp.at("video.cube.weight"), pp.at("video.cube.bias"));
    std::vector<ag::Var<Real>> parts{pp.at("video.cls"), tokens};
    TokenGrid<Real> tg;
    tg.tokens = ag::concat(parts, 0);
    tg.grid = vc.initial_grid();
    tg.has_class = true;
    return tg;
}

// One stage: optional entry pooling of the token grid (queries included),
// optional width projection, then the stage's transformer layers with K/V
// pooled by the stage stride.
template <class Real>
TokenGrid<Real> pooled_attention_stage(ag::Tape<Real>& tape, const PlacedParams<Real>& pp,
                                       TokenGrid<Real> tg, int stage_index,
                                       const EncoderConfig& cfg,
                                       AttentionCapture<Real>* capture = nullptr) {
    const auto& stage = cfg.video.stages[static_cast<std::size_t>(stage_index)];
    const std::string sp = "video.stage" + std::to_string(stage_index);

    const bool pools = stage.pool[0] != 1 || stage.pool[1] != 1 || stage.pool[2] != 1;
    if (pools) {
        tg.tokens = ag::grid_pool(tg.tokens, tg.grid, stage.pool, tg.has_class);
        for (int d = 0; d < 3; ++d) {
            tg.grid[static_cast<std::size_t>(d)] =
                ag::detail::ceil_div(tg.grid[static_cast<std::size_t>(d)], stage.pool[static_cast<std::size_t>(d)]);
        }
    }
    if (pp.has(sp + ".in_proj.weight")) {
        tg.tokens = detail::linear_named(pp, sp + ".in_proj", tg.tokens);
    }

    int layers_before = 0;
    for (int s = 0; s < stage_index; ++s) {
        layers_before += cfg.video.stages[static_cast<std::size_t>(s)].layers;
    }
    for (int l = 0; l < stage.layers; ++l) {
        const std::string lp = sp + ".layer" + std::to_string(l);
        tg.tokens = detail::attention_block(tape, pp, lp, tg.tokens, tg.grid, tg.has_class,
                                            stage.heads, stage.pool, ag::Var<Real>{}, capture,
                                            layers_before + l);
        tg.tokens = detail::mlp_block(tape, pp, lp, tg.tokens);
    }
    return tg;
}

// Class-token representation after the final stage and norm: [final_width].
template <class Real>
ag::Var<Real> encode_video(ag::Tape<Real>& tape, const PlacedParams<Real>& pp,
                           const Tensor<Real>& video, const EncoderConfig& cfg,
                           AttentionCapture<Real>* capture = nullptr) {
    auto tg = cube_embed(tape, pp, video, cfg);
    tg.tokens = ag::add(tg.tokens, pp.at("video.pos"));
    for (std::size_t s = 0; s < cfg.video.stages.size(); ++s) {
        tg = pooled_attention_stage(tape, pp, tg, static_cast<int>(s), cfg, capture);
    }
    auto normed = detail::layernorm_affine(tape, pp, "video.norm", tg.tokens);
    auto cls = ag::slice(normed, 0, 0, 1);  // [1, w]
    return ag::reshape(cls, Shape{cfg.video.final_width()});
}

// Class-position representation of a token id sequence: [hidden]. Padding
// ids are masked out of every attention row; ids past max_tokens truncate.
template <class Real>
ag::Var<Real> encode_text(ag::Tape<Real>& tape, const PlacedParams<Real>& pp,
                          const std::vector<int>& token_ids, const EncoderConfig& cfg) {
    const auto& tc = cfg.text;
    std::vector<int> ids = token_ids;
    if (static_cast<int>(ids.size()) > tc.max_tokens) {
        ids.resize(static_cast<std::size_t>(tc.max_tokens));
    }
    if (ids.empty()) ids.push_back(synth::Vocab::kClsId);
    for (int id : ids) {
        if (id < 0 || id >= tc.vocab_size) {
            throw ContractViolation("encode_text: id " + std::to_string(id) +
                                    " outside vocabulary of size " + std::to_string(tc.vocab_size));
        }
    }
    const int L = static_cast<int>(ids.size());

    auto tok = ag::gather_rows(pp.at("text.tok"), ids);
    auto pos = ag::slice(pp.at("text.pos"), 0, 0, L);
    auto x = ag::add(tok, pos);

    // padding mask over keys: 0 for real tokens, a large negative for pads
    Tensor<Real> mask_t(Shape{L});
    bool any_pad = false;
    for (int i = 0; i < L; ++i) {
        const bool is_pad = ids[static_cast<std::size_t>(i)] == synth::Vocab::kPadId;
        mask_t.data[static_cast<std::size_t>(i)] = is_pad ? Real(-1e9) : Real(0);
        any_pad = any_pad || is_pad;
    }
    ag::Var<Real> mask;
    if (any_pad) mask = tape.constant(mask_t);

    for (int l = 0; l < tc.layers; ++l) {
        const std::string lp = "text.layer" + std::to_string(l);
        x = detail::attention_block(tape, pp, lp, x, {1, 1, L}, false, tc.heads, {1, 1, 1}, mask,
                                    nullptr, l);
        x = detail::mlp_block(tape, pp, lp, x);
    }
    auto normed = detail::layernorm_affine(tape, pp, "text.norm", x);
    return ag::reshape(ag::slice(normed, 0, 0, 1), Shape{tc.hidden});
}

// One-layer projection into the shared space followed by L2 normalization.
template <class Real>
ag::Var<Real> project(ag::Tape<Real>& tape, const PlacedParams<Real>& pp,
                      ag::Var<Real> representation, const std::string& head_prefix) {
    (void)tape;
    const int d = representation.value().dim(0);
    auto row = ag::reshape(representation, Shape{1, d});
    auto mapped = detail::linear_named(pp, head_prefix, row);
    auto unit = ag::l2_normalize(mapped);
    return ag::reshape(unit, Shape{mapped.value().dim(1)});
}

// ---------------------------------------------------------------------------
// freeze plans
// ---------------------------------------------------------------------------

inline bool is_downstream_param(const std::string& name) {
    return name.rfind("mil.", 0) == 0 || name.rfind("head.", 0) == 0;
}

// finetune: only the video encoder's final linear layer (the projection
// head) and the downstream head train. transfer: everything trains.
// frozen: nothing trains.
template <class Real>
void freeze_plan(ParamSet<Real>& params, FreezeMode mode) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.entry(i).name;
        bool trainable = false;
        switch (mode) {
            case FreezeMode::kFinetune:
                trainable = name.rfind("proj.video.", 0) == 0 || is_downstream_param(name);
                break;
            case FreezeMode::kTransfer:
                trainable = true;
                break;
            case FreezeMode::kFrozen:
                trainable = false;
                break;
        }
        params.set_trainable(name, trainable);
    }
}

// Pretraining freezes the lower half of the text transformer layers.
template <class Real>
void freeze_lower_text_layers(ParamSet<Real>& params, const EncoderConfig& cfg) {
    const int frozen_layers = cfg.text.layers / 2;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params.entry(i).name;
        for (int l = 0; l < frozen_layers; ++l) {
            const std::string prefix = "text.layer" + std::to_string(l) + ".";
            if (name.rfind(prefix, 0) == 0) params.set_trainable(name, false);
        }
    }
}

}  // namespace cinecontrast
