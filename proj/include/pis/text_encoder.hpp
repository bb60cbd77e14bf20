#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pis/adapter.hpp"
#include "pis/attention.hpp"
#include "pis/config.hpp"
#include "pis/params.hpp"
#include "pis/tensor.hpp"

namespace pis {

// Word-level vocabulary over the closed template grammar. Ids are dense from
// 0 with UNK pinned at 0; anything outside the grammar maps to UNK.
struct Vocab {
    static constexpr int kUnk = 0;
    static constexpr int kPad = 1;
    static constexpr int kQmark = 2;

    std::map<std::string, int> token_to_id;

    static Vocab build(const std::set<std::string>& words) {
        Vocab v;
        v.token_to_id["<unk>"] = kUnk;
        v.token_to_id["<pad>"] = kPad;
        v.token_to_id["?"] = kQmark;
        int next = 3;
        for (const auto& w : words) {  // std::set iterates sorted: stable ids
            if (!v.token_to_id.count(w)) v.token_to_id[w] = next++;
        }
        return v;
    }

    int size() const { return static_cast<int>(token_to_id.size()); }

    int id_of(const std::string& w) const {
        auto it = token_to_id.find(w);
        return it == token_to_id.end() ? kUnk : it->second;
    }
};

// Lowercase, whitespace split; a trailing '?' becomes its own QMARK token;
// unknown words map to UNK; output truncated at max_len.
inline std::vector<int> tokenize(const std::string& text, const Vocab& vocab, int max_len = 32) {
    if (text.empty()) throw std::invalid_argument("tokenize: empty text");
    std::vector<int> ids;
    std::string word;
    auto flush = [&]() {
        if (word.empty()) return;
        bool qmark = false;
        while (!word.empty() && word.back() == '?') {
            word.pop_back();
            qmark = true;
        }
        if (!word.empty()) ids.push_back(vocab.id_of(word));
        if (qmark) ids.push_back(Vocab::kQmark);
        word.clear();
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else {
            word.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    flush();
    if (ids.empty()) throw std::invalid_argument("tokenize: no tokens in \"" + text + "\"");
    if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<size_t>(max_len));
    return ids;
}

struct TextEncodingT {
    template <class T>
    struct Of {
        TensorT<T> sequence;  // [T x d]
        TensorT<T> pooled;    // [d]
    };
};

// Frozen transformer stack plus the cascaded adapters selected by mode after
// each layer. Pooled output is the mean over sequence positions.
template <class T>
typename TextEncodingT::Of<T> text_encode(const std::vector<int>& tokens, RoutingMode mode, ParameterGroupT<T>& pg,
                                          const ModelConfig& cfg) {
    if (tokens.empty()) throw std::invalid_argument("text_encode: empty token list");
    const int t = static_cast<int>(tokens.size());
    if (t > cfg.max_len) throw std::invalid_argument("text_encode: sequence longer than max_len");

    std::vector<int> positions(static_cast<size_t>(t));
    for (int i = 0; i < t; ++i) positions[static_cast<size_t>(i)] = i;
    TensorT<T> x = add(gather_rows(pg.at("text.emb"), tokens), gather_rows(pg.at("text.pos"), positions));
    for (int l = 0; l < cfg.text_layers; ++l) {
        x = transformer_block(x, pg, "text.layer" + std::to_string(l), cfg.heads);
        x = apply_routed_adapters(x, pg, "text", mode, cfg.heads, "." + std::to_string(l));
    }
    return {x, mean_rows(x)};
}

}  // namespace pis
