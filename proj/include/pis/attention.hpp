#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pis/params.hpp"
#include "pis/tensor.hpp"

namespace pis {

// Multi-head attention over named projection weights. Self-attention when
// q_in and kv_in are the same tensor; cross-attention otherwise. The prefix
// owns wq/wk/wv/wo plus bq/bk/bv/bo at the width of q_in's last axis.
template <class T>
TensorT<T> multi_head_attention(const TensorT<T>& q_in, const TensorT<T>& kv_in, ParameterGroupT<T>& pg,
                                const std::string& prefix, int heads) {
    const int dim = q_in.dim(1);
    const int head_dim = dim / heads;
    TensorT<T> q = add_rowvec(matmul(q_in, pg.at(prefix + ".wq")), pg.at(prefix + ".bq"));
    TensorT<T> k = add_rowvec(matmul(kv_in, pg.at(prefix + ".wk")), pg.at(prefix + ".bk"));
    TensorT<T> v = add_rowvec(matmul(kv_in, pg.at(prefix + ".wv")), pg.at(prefix + ".bv"));

    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
    std::vector<TensorT<T>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        TensorT<T> qh = slice_cols(q, h * head_dim, (h + 1) * head_dim);
        TensorT<T> kh = slice_cols(k, h * head_dim, (h + 1) * head_dim);
        TensorT<T> vh = slice_cols(v, h * head_dim, (h + 1) * head_dim);
        TensorT<T> scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        TensorT<T> attn = softmax(scores, 1);
        head_outs.push_back(matmul(attn, vh));
    }
    TensorT<T> merged = heads == 1 ? head_outs[0] : concat_cols(head_outs);
    return add_rowvec(matmul(merged, pg.at(prefix + ".wo")), pg.at(prefix + ".bo"));
}

// Pre-norm transformer block: x += MHSA(LN1(x)); x += FFN(LN2(x)).
template <class T>
TensorT<T> transformer_block(const TensorT<T>& x, ParameterGroupT<T>& pg, const std::string& prefix, int heads) {
    TensorT<T> h = layer_norm(x, pg.at(prefix + ".ln1.g"), pg.at(prefix + ".ln1.b"));
    TensorT<T> attn_out = multi_head_attention(h, h, pg, prefix + ".attn", heads);
    TensorT<T> y = add(x, attn_out);
    TensorT<T> h2 = layer_norm(y, pg.at(prefix + ".ln2.g"), pg.at(prefix + ".ln2.b"));
    TensorT<T> ffn = add_rowvec(
        matmul(relu(add_rowvec(matmul(h2, pg.at(prefix + ".ffn.w1")), pg.at(prefix + ".ffn.b1"))),
               pg.at(prefix + ".ffn.w2")),
        pg.at(prefix + ".ffn.b2"));
    return add(y, ffn);
}

}  // namespace pis
