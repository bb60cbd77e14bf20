#pragma once

#include <stdexcept>
#include <string>

namespace pis {

// Instruction levels double as adapter routing modes:
// Concept -> no adapters, Simple -> [S], Complex -> [S, C].
enum class RoutingMode { Concept, Simple, Complex };

inline const char* routing_mode_name(RoutingMode m) {
    switch (m) {
        case RoutingMode::Concept: return "concept";
        case RoutingMode::Simple: return "simple";
        case RoutingMode::Complex: return "complex";
    }
    throw std::invalid_argument("unknown routing mode");
}

inline RoutingMode routing_mode_from(const std::string& s) {
    if (s == "concept") return RoutingMode::Concept;
    if (s == "simple") return RoutingMode::Simple;
    if (s == "complex") return RoutingMode::Complex;
    throw std::invalid_argument("unknown routing mode: " + s);
}

struct ModelConfig {
    int image_size = 32;   // square inputs
    int patch = 4;         // non-overlapping patch edge
    int model_dim = 64;    // d
    int text_layers = 2;
    int vision_layers = 2;
    int heads = 4;
    int bottleneck = 16;   // adapter width r
    int ffn_mult = 2;
    int max_len = 32;
    int vocab_size = 0;    // filled from the vocabulary

    int patches_per_side() const { return image_size / patch; }
    int num_patches() const { return patches_per_side() * patches_per_side(); }

    void validate() const {
        if (model_dim % heads != 0) throw std::invalid_argument("config: model_dim must be divisible by heads");
        if (bottleneck >= model_dim) throw std::invalid_argument("config: bottleneck must be smaller than model_dim");
        if (bottleneck % heads != 0) throw std::invalid_argument("config: bottleneck must be divisible by heads");
        if (image_size % patch != 0) throw std::invalid_argument("config: image_size must be divisible by patch");
        if (vocab_size <= 0) throw std::invalid_argument("config: vocab_size not set");
        if (max_len <= 0 || text_layers <= 0 || vision_layers <= 0)
            throw std::invalid_argument("config: non-positive extent");
    }
};

}  // namespace pis
