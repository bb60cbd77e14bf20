#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pis/config.hpp"
#include "pis/params.hpp"
#include "pis/rng.hpp"
#include "pis/tensor.hpp"
#include "pis/text_encoder.hpp"
#include "pis/vision.hpp"

namespace pis {

// Per-branch mask probabilities for one target.
template <class T>
struct BranchPredictionT {
    TensorT<T> p_simple;
    TensorT<T> p_complex;
    TensorT<T> p_concept;  // optional; undefined when not evaluated
};

using BranchPrediction = BranchPredictionT<float>;

inline bool is_adapter_param(const std::string& name) {
    return name.rfind("text.S.", 0) == 0 || name.rfind("text.C.", 0) == 0 || name.rfind("head.S.", 0) == 0 ||
           name.rfind("head.C.", 0) == 0;
}

namespace detail {

template <class T>
void add_linear(ParameterGroupT<T>& pg, Rng& rng, const std::string& prefix, int in, int out, bool zero = false) {
    const T sd = zero ? T(0) : static_cast<T>(std::sqrt(2.0 / (in + out)));
    pg.add(prefix + ".w", zero ? TensorT<T>::zeros({in, out}) : TensorT<T>::randn({in, out}, rng, sd));
    pg.add(prefix + ".b", TensorT<T>::zeros({out}));
}

template <class T>
void add_attention(ParameterGroupT<T>& pg, Rng& rng, const std::string& prefix, int dim) {
    const T sd = static_cast<T>(std::sqrt(2.0 / (dim + dim)));
    for (const char* nm : {"wq", "wk", "wv", "wo"})
        pg.add(prefix + "." + nm, TensorT<T>::randn({dim, dim}, rng, sd));
    for (const char* nm : {"bq", "bk", "bv", "bo"}) pg.add(prefix + "." + nm, TensorT<T>::zeros({dim}));
}

template <class T>
void add_transformer_layer(ParameterGroupT<T>& pg, Rng& rng, const std::string& prefix, int dim, int ffn_mult) {
    add_attention(pg, rng, prefix + ".attn", dim);
    pg.add(prefix + ".ln1.g", TensorT<T>::filled({dim}, T(1)));
    pg.add(prefix + ".ln1.b", TensorT<T>::zeros({dim}));
    pg.add(prefix + ".ln2.g", TensorT<T>::filled({dim}, T(1)));
    pg.add(prefix + ".ln2.b", TensorT<T>::zeros({dim}));
    const int hidden = dim * ffn_mult;
    pg.add(prefix + ".ffn.w1", TensorT<T>::randn({dim, hidden}, rng, static_cast<T>(std::sqrt(2.0 / (dim + hidden)))));
    pg.add(prefix + ".ffn.b1", TensorT<T>::zeros({hidden}));
    pg.add(prefix + ".ffn.w2", TensorT<T>::randn({hidden, dim}, rng, static_cast<T>(std::sqrt(2.0 / (hidden + dim)))));
    pg.add(prefix + ".ffn.b2", TensorT<T>::zeros({dim}));
}

// Bottleneck adapter; the attention is query/key-only (see
// bottleneck_attention) and the up-projection starts at exactly zero so the
// module is a no-op until trained.
template <class T>
void add_adapter(ParameterGroupT<T>& pg, Rng& rng, const std::string& prefix, int dim, int bottleneck) {
    add_linear(pg, rng, prefix + ".down", dim, bottleneck);
    const T sd = static_cast<T>(std::sqrt(2.0 / (bottleneck + bottleneck)));
    for (const char* nm : {"wq", "wk"})
        pg.add(prefix + ".mhsa." + nm, TensorT<T>::randn({bottleneck, bottleneck}, rng, sd));
    for (const char* nm : {"bq", "bk"}) pg.add(prefix + ".mhsa." + nm, TensorT<T>::zeros({bottleneck}));
    add_linear(pg, rng, prefix + ".up", bottleneck, dim, /*zero=*/true);
}

}  // namespace detail

// Builds every named parameter of the toy model. Creation is seed-driven and
// order-stable, so two builds from the same seed are bitwise identical.
template <class T = float>
ParameterGroupT<T> init_params(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ParameterGroupT<T> pg;
    Rng rng(seed);
    const int d = cfg.model_dim;

    pg.add("text.emb", TensorT<T>::randn({cfg.vocab_size, d}, rng, T(0.1)));
    pg.add("text.pos", TensorT<T>::randn({cfg.max_len, d}, rng, T(0.1)));
    for (int l = 0; l < cfg.text_layers; ++l) {
        const std::string layer = "text.layer" + std::to_string(l);
        detail::add_transformer_layer(pg, rng, layer, d, cfg.ffn_mult);
        detail::add_adapter(pg, rng, "text.S." + std::to_string(l), d, cfg.bottleneck);
        detail::add_adapter(pg, rng, "text.C." + std::to_string(l), d, cfg.bottleneck);
    }

    pg.add("vision.patch.w",
           TensorT<T>::randn({cfg.patch * cfg.patch * 3, d}, rng,
                             static_cast<T>(std::sqrt(2.0 / (cfg.patch * cfg.patch * 3 + d)))));
    pg.add("vision.patch.b", TensorT<T>::zeros({d}));
    pg.add("vision.pos", TensorT<T>::randn({cfg.num_patches(), d}, rng, T(0.1)));
    for (int l = 0; l < cfg.vision_layers; ++l)
        detail::add_transformer_layer(pg, rng, "vision.layer" + std::to_string(l), d, cfg.ffn_mult);

    detail::add_attention(pg, rng, "head.fuse", d);
    pg.add("head.fuse.ln.g", TensorT<T>::filled({d}, T(1)));
    pg.add("head.fuse.ln.b", TensorT<T>::zeros({d}));
    pg.add("head.logit.scale", TensorT<T>::filled({1}, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)))));
    pg.add("head.logit.bias", TensorT<T>::zeros({1}));
    detail::add_adapter(pg, rng, "head.S", d, cfg.bottleneck);
    detail::add_adapter(pg, rng, "head.C", d, cfg.bottleneck);
    return pg;
}

// Stage-2 inheritance: C-adapter weights start as a copy of the trained
// S-adapter weights.
template <class T>
void inherit_c_from_s(ParameterGroupT<T>& pg) {
    for (auto& [name, t] : pg.entries) {
        std::string cname;
        if (name.rfind("text.S.", 0) == 0)
            cname = "text.C." + name.substr(7);
        else if (name.rfind("head.S.", 0) == 0)
            cname = "head.C." + name.substr(7);
        else
            continue;
        pg.at(cname).data() = t.data();
    }
}

// Full forward: text encoding under the routing mode, frozen image backbone,
// instruction-conditioned mask head. Returns [H x W] probabilities.
template <class T>
TensorT<T> model_forward(const TensorT<T>& image, const std::vector<int>& tokens, RoutingMode mode,
                         ParameterGroupT<T>& pg, const ModelConfig& cfg) {
    auto enc = text_encode(tokens, mode, pg, cfg);
    TensorT<T> patches = embed_image(image, pg, cfg);
    return predict_mask(patches, enc.sequence, enc.pooled, mode, pg, cfg);
}

// All branches for one target: simple and complex from their instructions,
// concept optionally from the concept NP (sharing one image embedding).
template <class T>
BranchPredictionT<T> predict_branches(const TensorT<T>& image, const std::vector<int>& simple_tokens,
                                      const std::vector<int>& complex_tokens, ParameterGroupT<T>& pg,
                                      const ModelConfig& cfg, const std::vector<int>& concept_tokens = {}) {
    TensorT<T> patches = embed_image(image, pg, cfg);
    BranchPredictionT<T> out;
    auto enc_s = text_encode(simple_tokens, RoutingMode::Simple, pg, cfg);
    out.p_simple = predict_mask(patches, enc_s.sequence, enc_s.pooled, RoutingMode::Simple, pg, cfg);
    auto enc_c = text_encode(complex_tokens, RoutingMode::Complex, pg, cfg);
    out.p_complex = predict_mask(patches, enc_c.sequence, enc_c.pooled, RoutingMode::Complex, pg, cfg);
    if (!concept_tokens.empty()) {
        auto enc_n = text_encode(concept_tokens, RoutingMode::Concept, pg, cfg);
        out.p_concept = predict_mask(patches, enc_n.sequence, enc_n.pooled, RoutingMode::Concept, pg, cfg);
    }
    return out;
}

}  // namespace pis
