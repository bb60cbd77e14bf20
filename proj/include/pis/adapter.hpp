#pragma once

#include <string>
#include <vector>

#include "pis/attention.hpp"
#include "pis/config.hpp"
#include "pis/params.hpp"
#include "pis/tensor.hpp"

namespace pis {

// Lightweight self-attention used inside adapters: learned query/key
// projections produce the mixing weights, the values are the inputs
// themselves (no value/output projection). Over a single token the softmax
// weight is 1 and the op is exactly the identity.
template <class T>
TensorT<T> bottleneck_attention(const TensorT<T>& z, ParameterGroupT<T>& pg, const std::string& prefix, int heads) {
    const int dim = z.dim(1);
    const int head_dim = dim / heads;
    TensorT<T> q = add_rowvec(matmul(z, pg.at(prefix + ".wq")), pg.at(prefix + ".bq"));
    TensorT<T> k = add_rowvec(matmul(z, pg.at(prefix + ".wk")), pg.at(prefix + ".bk"));
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
    std::vector<TensorT<T>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        TensorT<T> qh = slice_cols(q, h * head_dim, (h + 1) * head_dim);
        TensorT<T> kh = slice_cols(k, h * head_dim, (h + 1) * head_dim);
        TensorT<T> zh = slice_cols(z, h * head_dim, (h + 1) * head_dim);
        TensorT<T> attn = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
        head_outs.push_back(matmul(attn, zh));
    }
    return heads == 1 ? head_outs[0] : concat_cols(head_outs);
}

// Bottleneck adapter with self-attention at the bottleneck width:
//   out = h + up( mhsa( relu( down(h) ) ) )
// The up-projection (weight and bias) is zero at creation, so a fresh adapter
// contributes exactly nothing and the frozen path is untouched until trained.
template <class T>
TensorT<T> adapter_forward(const TensorT<T>& h, ParameterGroupT<T>& pg, const std::string& prefix, int heads) {
    TensorT<T> z = relu(add_rowvec(matmul(h, pg.at(prefix + ".down.w")), pg.at(prefix + ".down.b")));
    z = bottleneck_attention(z, pg, prefix + ".mhsa", heads);
    TensorT<T> u = add_rowvec(matmul(z, pg.at(prefix + ".up.w")), pg.at(prefix + ".up.b"));
    return add(h, u);
}

// Adapter prefixes selected by routing mode, cascade order preserved.
inline std::vector<std::string> routed_adapters(const std::string& base, RoutingMode mode) {
    switch (mode) {
        case RoutingMode::Concept: return {};
        case RoutingMode::Simple: return {base + ".S"};
        case RoutingMode::Complex: return {base + ".S", base + ".C"};
    }
    throw std::invalid_argument("unknown routing mode");
}

template <class T>
TensorT<T> apply_routed_adapters(TensorT<T> h, ParameterGroupT<T>& pg, const std::string& base, RoutingMode mode,
                                 int heads, const std::string& suffix = "") {
    for (const auto& prefix : routed_adapters(base, mode)) h = adapter_forward(h, pg, prefix + suffix, heads);
    return h;
}

}  // namespace pis
