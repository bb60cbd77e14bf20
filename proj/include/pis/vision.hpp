#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "pis/adapter.hpp"
#include "pis/attention.hpp"
#include "pis/config.hpp"
#include "pis/params.hpp"
#include "pis/tensor.hpp"

namespace pis {

// Frozen toy backbone: non-overlapping patch embedding + transformer layers.
// Image tensor is [H x W x 3]; output is [P x d] patch features.
template <class T>
TensorT<T> embed_image(const TensorT<T>& image, ParameterGroupT<T>& pg, const ModelConfig& cfg) {
    if (image.ndim() != 3 || image.dim(0) != cfg.image_size || image.dim(1) != cfg.image_size || image.dim(2) != 3)
        throw std::invalid_argument("embed_image: expected [" + std::to_string(cfg.image_size) + "x" +
                                    std::to_string(cfg.image_size) + "x3], got " + shape_str(image.shape()));
    const int g = cfg.patches_per_side();
    const int p = cfg.patch;
    const int pvals = p * p * 3;

    // Patchify outside the graph; images are leaves and take no gradient.
    std::vector<T> flat(static_cast<size_t>(g) * g * pvals);
    const auto& img = image.data();
    const int w = cfg.image_size;
    for (int pr = 0; pr < g; ++pr)
        for (int pc = 0; pc < g; ++pc) {
            T* dst = &flat[(static_cast<size_t>(pr) * g + pc) * pvals];
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int ch = 0; ch < 3; ++ch)
                        *dst++ = img[(static_cast<size_t>(pr * p + dy) * w + (pc * p + dx)) * 3 + ch];
        }
    TensorT<T> patches = TensorT<T>::from({g * g, pvals}, std::move(flat));

    TensorT<T> x = add(add_rowvec(matmul(patches, pg.at("vision.patch.w")), pg.at("vision.patch.b")),
                       pg.at("vision.pos"));
    for (int l = 0; l < cfg.vision_layers; ++l)
        x = transformer_block(x, pg, "vision.layer" + std::to_string(l), cfg.heads);
    return x;
}

// Instruction-conditioned mask head. One cross-attention fusion layer (pixel
// tokens attend to text tokens), the routed head adapters, then a per-patch
// logit from the dot product with the pooled text embedding, upsampled to
// pixel resolution by nearest neighbor. Returns [H x W] probabilities.
template <class T>
TensorT<T> predict_mask(const TensorT<T>& patch_features, const TensorT<T>& text_sequence,
                        const TensorT<T>& pooled_text, RoutingMode mode, ParameterGroupT<T>& pg,
                        const ModelConfig& cfg) {
    if (patch_features.dim(1) != cfg.model_dim || text_sequence.dim(1) != cfg.model_dim)
        throw std::invalid_argument("predict_mask: feature width mismatch with config");
    TensorT<T> attn = multi_head_attention(patch_features, text_sequence, pg, "head.fuse", cfg.heads);
    TensorT<T> fused = layer_norm(add(patch_features, attn), pg.at("head.fuse.ln.g"), pg.at("head.fuse.ln.b"));
    fused = apply_routed_adapters(fused, pg, "head", mode, cfg.heads);

    TensorT<T> logits = matmul(fused, reshape(pooled_text, {cfg.model_dim, 1}));  // [P x 1]
    logits = add_scalar_tensor(mul_scalar_tensor(logits, pg.at("head.logit.scale")), pg.at("head.logit.bias"));
    const int g = cfg.patches_per_side();
    TensorT<T> probs = sigmoid(reshape(logits, {g, g}));
    return upsample_nearest(probs, cfg.patch);
}

}  // namespace pis
