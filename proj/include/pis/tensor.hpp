// Reverse-mode autodiff on dense row-major tensors. Scalar type is a template
// parameter: the model and all checkpoints run at float, tests may instantiate
// double to drive finite-difference checks at full precision.
//
// A TensorT is a shared handle to a graph node; copying shares the node.
// backward() walks parents in reverse topological order and accumulates into
// .grad, so repeated calls without zeroing add up (callers zero explicitly
// between steps). Reductions and matmul accumulate in double regardless of T.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "pis/rng.hpp"

namespace pis {

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

template <class T>
struct TensorNodeT {
    std::vector<int> shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated on first use, same extent as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNodeT>> parents;
    std::function<void(TensorNodeT&)> backfn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

template <class T = float>
class TensorT {
public:
    using Node = TensorNodeT<T>;

    TensorT() = default;

    static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static TensorT filled(std::vector<int> shape, T v, bool requires_grad = false) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->data.assign(count(t.node_->shape), v);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static TensorT from(std::vector<int> shape, std::vector<T> data, bool requires_grad = false) {
        if (count(shape) != static_cast<int64_t>(data.size()))
            throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                        std::to_string(data.size()));
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static TensorT scalar(T v, bool requires_grad = false) { return filled({1}, v, requires_grad); }

    static TensorT randn(std::vector<int> shape, Rng& rng, T stddev, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->data) v = static_cast<T>(rng.next_gaussian() * static_cast<double>(stddev));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    std::vector<T>& data() { return node_->data; }
    const std::vector<T>& data() const { return node_->data; }
    std::vector<T>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    T value() const {
        if (numel() != 1) throw std::invalid_argument("value(): tensor " + shape_str(shape()) + " is not scalar");
        return node_->data[0];
    }

    T at(int i) const { return node_->data[static_cast<size_t>(i)]; }
    T at(int r, int c) const { return node_->data[static_cast<size_t>(r) * dim(1) + c]; }
    T& at(int i) { return node_->data[static_cast<size_t>(i)]; }
    T& at(int r, int c) { return node_->data[static_cast<size_t>(r) * dim(1) + c]; }

    // Deep copy of the values only; the clone is a fresh leaf.
    TensorT clone() const {
        TensorT t = from(node_->shape, node_->data, node_->requires_grad);
        return t;
    }

    // Same data, no graph history and no gradient flow.
    TensorT detach() const {
        TensorT t = from(node_->shape, node_->data, false);
        return t;
    }

    std::shared_ptr<Node> node() const { return node_; }

    static TensorT wrap(std::shared_ptr<Node> n) {
        TensorT t;
        t.node_ = std::move(n);
        return t;
    }

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int e : shape) {
            if (e <= 0) throw std::invalid_argument("tensor: non-positive extent in " + shape_str(shape));
            n *= e;
        }
        return n;
    }

private:
    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<float>;

namespace detail {

template <class T>
std::shared_ptr<TensorNodeT<T>> make_node(std::vector<int> shape,
                                          std::vector<std::shared_ptr<TensorNodeT<T>>> parents) {
    auto n = std::make_shared<TensorNodeT<T>>();
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(TensorT<T>::count(n->shape)), T(0));
    for (auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    n->parents = std::move(parents);
    return n;
}

template <class T>
void check_same_shape(const char* op, const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise ----

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("add", a, b);
    auto n = detail::make_node<T>(a.shape(), {a.node(), b.node()});
    const auto &da = a.data(), &db = b.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = da[i] + db[i];
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            for (auto& p : self.parents) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("sub", a, b);
    auto n = detail::make_node<T>(a.shape(), {a.node(), b.node()});
    const auto &da = a.data(), &db = b.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = da[i] - db[i];
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape("mul", a, b);
    auto n = detail::make_node<T>(a.shape(), {a.node(), b.node()});
    const auto &da = a.data(), &db = b.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = da[i] * db[i];
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
            }
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T c) {
    auto n = detail::make_node<T>(a.shape(), {a.node()});
    const auto& da = a.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = da[i] * c;
    if (n->requires_grad)
        n->backfn = [c](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * c;
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> add_const(const TensorT<T>& a, T c) {
    auto n = detail::make_node<T>(a.shape(), {a.node()});
    const auto& da = a.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = da[i] + c;
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        };
    return TensorT<T>::wrap(n);
}

// Generic elementwise op from value/derivative functions. Also the hook the
// tests use to feed gradient_check a deliberately wrong derivative.
template <class T>
TensorT<T> unary(const TensorT<T>& a, std::function<T(T)> f, std::function<T(T)> df) {
    auto n = detail::make_node<T>(a.shape(), {a.node()});
    const auto& da = a.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = f(da[i]);
    if (n->requires_grad)
        n->backfn = [df](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * df(p->data[i]);
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> relu(const TensorT<T>& a) {
    auto n = detail::make_node<T>(a.shape(), {a.node()});
    const auto& da = a.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = da[i] > T(0) ? da[i] : T(0);
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            // relu'(0) = 0 by convention
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (p->data[i] > T(0)) p->grad[i] += self.grad[i];
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& a) {
    auto n = detail::make_node<T>(a.shape(), {a.node()});
    const auto& da = a.data();
    for (size_t i = 0; i < n->data.size(); ++i)
        n->data[i] = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(da[i]))));
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) {
                T y = self.data[i];
                p->grad[i] += self.grad[i] * y * (T(1) - y);
            }
        };
    return TensorT<T>::wrap(n);
}

// Gradient passes through strictly inside (lo, hi) and is zero outside; keep
// checked points away from the boundaries when finite-differencing.
template <class T>
TensorT<T> clamp(const TensorT<T>& a, T lo, T hi) {
    auto n = detail::make_node<T>(a.shape(), {a.node()});
    const auto& da = a.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = std::min(hi, std::max(lo, da[i]));
    if (n->requires_grad)
        n->backfn = [lo, hi](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                if (p->data[i] > lo && p->data[i] < hi) p->grad[i] += self.grad[i];
        };
    return TensorT<T>::wrap(n);
}

// Natural log; inputs are expected pre-clamped to a positive range.
template <class T>
TensorT<T> log_(const TensorT<T>& a) {
    auto n = detail::make_node<T>(a.shape(), {a.node()});
    const auto& da = a.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = static_cast<T>(std::log(static_cast<double>(da[i])));
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] / p->data[i];
        };
    return TensorT<T>::wrap(n);
}

// ---- matrix ops ----

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
    auto n = detail::make_node<T>({m, nn}, {a.node(), b.node()});
    const auto &da = a.data(), &db = b.data();
    std::vector<double> row(static_cast<size_t>(nn));
    for (int i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (int kk = 0; kk < k; ++kk) {
            double av = static_cast<double>(da[static_cast<size_t>(i) * k + kk]);
            const T* brow = &db[static_cast<size_t>(kk) * nn];
            for (int j = 0; j < nn; ++j) row[static_cast<size_t>(j)] += av * static_cast<double>(brow[j]);
        }
        for (int j = 0; j < nn; ++j) n->data[static_cast<size_t>(i) * nn + j] = static_cast<T>(row[static_cast<size_t>(j)]);
    }
    if (n->requires_grad)
        n->backfn = [m, k, nn](TensorNodeT<T>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                // dA = dC * B^T
                for (int i = 0; i < m; ++i)
                    for (int kk = 0; kk < k; ++kk) {
                        double acc = 0;
                        for (int j = 0; j < nn; ++j)
                            acc += static_cast<double>(self.grad[static_cast<size_t>(i) * nn + j]) *
                                   static_cast<double>(pb->data[static_cast<size_t>(kk) * nn + j]);
                        pa->grad[static_cast<size_t>(i) * k + kk] += static_cast<T>(acc);
                    }
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                // dB = A^T * dC
                for (int kk = 0; kk < k; ++kk)
                    for (int j = 0; j < nn; ++j) {
                        double acc = 0;
                        for (int i = 0; i < m; ++i)
                            acc += static_cast<double>(pa->data[static_cast<size_t>(i) * k + kk]) *
                                   static_cast<double>(self.grad[static_cast<size_t>(i) * nn + j]);
                        pb->grad[static_cast<size_t>(kk) * nn + j] += static_cast<T>(acc);
                    }
            }
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> transpose(const TensorT<T>& a) {
    if (a.ndim() != 2) throw std::invalid_argument("transpose: need 2-d tensor, got " + shape_str(a.shape()));
    const int r = a.dim(0), c = a.dim(1);
    auto n = detail::make_node<T>({c, r}, {a.node()});
    const auto& da = a.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) n->data[static_cast<size_t>(j) * r + i] = da[static_cast<size_t>(i) * c + j];
    if (n->requires_grad)
        n->backfn = [r, c](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    p->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j) * r + i];
        };
    return TensorT<T>::wrap(n);
}

// X [R x C] + b [C] broadcast over rows.
template <class T>
TensorT<T> add_rowvec(const TensorT<T>& x, const TensorT<T>& b) {
    if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(1))
        throw std::invalid_argument("add_rowvec: shape " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
    const int r = x.dim(0), c = x.dim(1);
    auto n = detail::make_node<T>(x.shape(), {x.node(), b.node()});
    const auto &dx = x.data(), &db = b.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            n->data[static_cast<size_t>(i) * c + j] = dx[static_cast<size_t>(i) * c + j] + db[static_cast<size_t>(j)];
    if (n->requires_grad)
        n->backfn = [r, c](TensorNodeT<T>& self) {
            auto& px = self.parents[0];
            auto& pb = self.parents[1];
            if (px->requires_grad) {
                px->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) pb->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i) * c + j];
            }
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> slice_cols(const TensorT<T>& x, int c0, int c1) {
    if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                                    shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1), w = c1 - c0;
    auto n = detail::make_node<T>({r, w}, {x.node()});
    const auto& dx = x.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j)
            n->data[static_cast<size_t>(i) * w + j] = dx[static_cast<size_t>(i) * c + c0 + j];
    if (n->requires_grad)
        n->backfn = [r, c, c0, w](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < w; ++j)
                    p->grad[static_cast<size_t>(i) * c + c0 + j] += self.grad[static_cast<size_t>(i) * w + j];
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> concat_cols(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty list");
    const int r = parts[0].dim(0);
    int c = 0;
    std::vector<std::shared_ptr<TensorNodeT<T>>> parents;
    std::vector<int> widths;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != r)
            throw std::invalid_argument("concat_cols: shape " + shape_str(parts[0].shape()) + " vs " +
                                        shape_str(p.shape()));
        c += p.dim(1);
        widths.push_back(p.dim(1));
        parents.push_back(p.node());
    }
    auto n = detail::make_node<T>({r, c}, parents);
    int off = 0;
    for (size_t k = 0; k < parts.size(); ++k) {
        const auto& dp = parts[k].data();
        const int w = widths[k];
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < w; ++j)
                n->data[static_cast<size_t>(i) * c + off + j] = dp[static_cast<size_t>(i) * w + j];
        off += w;
    }
    if (n->requires_grad)
        n->backfn = [r, c, widths](TensorNodeT<T>& self) {
            int off = 0;
            for (size_t k = 0; k < self.parents.size(); ++k) {
                auto& p = self.parents[k];
                const int w = widths[k];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < w; ++j)
                            p->grad[static_cast<size_t>(i) * w + j] += self.grad[static_cast<size_t>(i) * c + off + j];
                }
                off += w;
            }
        };
    return TensorT<T>::wrap(n);
}

// Row gather from an embedding table; gradient scatter-adds into the table.
template <class T>
TensorT<T> gather_rows(const TensorT<T>& table, const std::vector<int>& ids) {
    if (table.ndim() != 2) throw std::invalid_argument("gather_rows: table must be 2-d, got " + shape_str(table.shape()));
    if (ids.empty()) throw std::invalid_argument("gather_rows: empty id list");
    const int v = table.dim(0), d = table.dim(1), t = static_cast<int>(ids.size());
    for (int id : ids)
        if (id < 0 || id >= v) throw std::invalid_argument("gather_rows: id " + std::to_string(id) + " out of range");
    auto n = detail::make_node<T>({t, d}, {table.node()});
    const auto& dt = table.data();
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j)
            n->data[static_cast<size_t>(i) * d + j] = dt[static_cast<size_t>(ids[static_cast<size_t>(i)]) * d + j];
    if (n->requires_grad)
        n->backfn = [ids, d](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j)
                    p->grad[static_cast<size_t>(ids[i]) * d + j] += self.grad[i * static_cast<size_t>(d) + j];
        };
    return TensorT<T>::wrap(n);
}

// ---- normalization / attention pieces ----

// Exponent-shifted softmax along axis (2-d: 0 = down columns, 1 = along rows;
// 1-d tensors use axis 0).
template <class T>
TensorT<T> softmax(const TensorT<T>& x, int axis = -1) {
    const int nd = x.ndim();
    if (nd != 1 && nd != 2) throw std::invalid_argument("softmax: need 1-d or 2-d tensor, got " + shape_str(x.shape()));
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw std::invalid_argument("softmax: invalid axis for " + shape_str(x.shape()));

    // Treat as rows of independent distributions.
    int rows, cols;
    bool along_rows;
    if (nd == 1) {
        rows = 1;
        cols = x.dim(0);
        along_rows = true;
    } else {
        rows = x.dim(0);
        cols = x.dim(1);
        along_rows = (axis == 1);
    }
    auto n = detail::make_node<T>(x.shape(), {x.node()});
    const auto& dx = x.data();
    auto idx = [along_rows, cols](int i, int j) -> size_t {
        return along_rows ? static_cast<size_t>(i) * cols + j : static_cast<size_t>(j) * cols + i;
    };
    const int groups = along_rows ? rows : cols;
    const int extent = along_rows ? cols : rows;
    for (int g = 0; g < groups; ++g) {
        double mx = -1e300;
        for (int e = 0; e < extent; ++e) mx = std::max(mx, static_cast<double>(dx[idx(g, e)]));
        double sum = 0;
        for (int e = 0; e < extent; ++e) sum += std::exp(static_cast<double>(dx[idx(g, e)]) - mx);
        for (int e = 0; e < extent; ++e)
            n->data[idx(g, e)] = static_cast<T>(std::exp(static_cast<double>(dx[idx(g, e)]) - mx) / sum);
    }
    if (n->requires_grad)
        n->backfn = [groups, extent, idx](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int g = 0; g < groups; ++g) {
                double dot = 0;
                for (int e = 0; e < extent; ++e)
                    dot += static_cast<double>(self.grad[idx(g, e)]) * static_cast<double>(self.data[idx(g, e)]);
                for (int e = 0; e < extent; ++e) {
                    size_t k = idx(g, e);
                    p->grad[k] += static_cast<T>(static_cast<double>(self.data[k]) *
                                                 (static_cast<double>(self.grad[k]) - dot));
                }
            }
        };
    return TensorT<T>::wrap(n);
}

// Per-row normalization over the last axis, then affine with gain/bias.
template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& bias, T eps = T(1e-5)) {
    const int nd = x.ndim();
    if (nd != 1 && nd != 2) throw std::invalid_argument("layer_norm: need 1-d or 2-d tensor, got " + shape_str(x.shape()));
    const int cols = x.dim(nd - 1);
    const int rows = nd == 2 ? x.dim(0) : 1;
    if (gain.ndim() != 1 || gain.dim(0) != cols || bias.ndim() != 1 || bias.dim(0) != cols)
        throw std::invalid_argument("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                                    " must match last axis of " + shape_str(x.shape()));
    auto n = detail::make_node<T>(x.shape(), {x.node(), gain.node(), bias.node()});
    const auto &dx = x.data(), &dg = gain.data(), &db = bias.data();
    // Cache the normalized values and inverse stddev for the backward pass.
    auto xhat = std::make_shared<std::vector<double>>(static_cast<size_t>(rows) * cols);
    auto istd = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    for (int i = 0; i < rows; ++i) {
        double mean = 0;
        for (int j = 0; j < cols; ++j) mean += static_cast<double>(dx[static_cast<size_t>(i) * cols + j]);
        mean /= cols;
        double var = 0;
        for (int j = 0; j < cols; ++j) {
            double dvi = static_cast<double>(dx[static_cast<size_t>(i) * cols + j]) - mean;
            var += dvi * dvi;
        }
        var /= cols;
        double inv = 1.0 / std::sqrt(var + static_cast<double>(eps));
        (*istd)[static_cast<size_t>(i)] = inv;
        for (int j = 0; j < cols; ++j) {
            size_t k = static_cast<size_t>(i) * cols + j;
            double h = (static_cast<double>(dx[k]) - mean) * inv;
            (*xhat)[k] = h;
            n->data[k] = static_cast<T>(h * static_cast<double>(dg[static_cast<size_t>(j)]) +
                                        static_cast<double>(db[static_cast<size_t>(j)]));
        }
    }
    if (n->requires_grad)
        n->backfn = [rows, cols, xhat, istd](TensorNodeT<T>& self) {
            auto& px = self.parents[0];
            auto& pg = self.parents[1];
            auto& pb = self.parents[2];
            if (pg->requires_grad) pg->ensure_grad();
            if (pb->requires_grad) pb->ensure_grad();
            if (px->requires_grad) px->ensure_grad();
            for (int i = 0; i < rows; ++i) {
                double mean_dh = 0, mean_dh_xhat = 0;
                for (int j = 0; j < cols; ++j) {
                    size_t k = static_cast<size_t>(i) * cols + j;
                    double dh = static_cast<double>(self.grad[k]) * static_cast<double>(pg->data[static_cast<size_t>(j)]);
                    mean_dh += dh;
                    mean_dh_xhat += dh * (*xhat)[k];
                    if (pg->requires_grad)
                        pg->grad[static_cast<size_t>(j)] += static_cast<T>(static_cast<double>(self.grad[k]) * (*xhat)[k]);
                    if (pb->requires_grad) pb->grad[static_cast<size_t>(j)] += self.grad[k];
                }
                mean_dh /= cols;
                mean_dh_xhat /= cols;
                if (px->requires_grad) {
                    for (int j = 0; j < cols; ++j) {
                        size_t k = static_cast<size_t>(i) * cols + j;
                        double dh = static_cast<double>(self.grad[k]) * static_cast<double>(pg->data[static_cast<size_t>(j)]);
                        px->grad[k] += static_cast<T>((*istd)[static_cast<size_t>(i)] *
                                                      (dh - mean_dh - (*xhat)[k] * mean_dh_xhat));
                    }
                }
            }
        };
    return TensorT<T>::wrap(n);
}

// ---- reductions / shape ----

template <class T>
TensorT<T> sum_all(const TensorT<T>& x) {
    auto n = detail::make_node<T>({1}, {x.node()});
    double acc = 0;
    for (T v : x.data()) acc += static_cast<double>(v);
    n->data[0] = static_cast<T>(acc);
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (auto& g : p->grad) g += self.grad[0];
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> mean_all(const TensorT<T>& x) {
    auto n = detail::make_node<T>({1}, {x.node()});
    double acc = 0;
    for (T v : x.data()) acc += static_cast<double>(v);
    n->data[0] = static_cast<T>(acc / static_cast<double>(x.numel()));
    if (n->requires_grad) {
        const T inv = static_cast<T>(1.0 / static_cast<double>(x.numel()));
        n->backfn = [inv](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (auto& g : p->grad) g += self.grad[0] * inv;
        };
    }
    return TensorT<T>::wrap(n);
}

// Column means of a 2-d tensor: [R x C] -> [C].
template <class T>
TensorT<T> mean_rows(const TensorT<T>& x) {
    if (x.ndim() != 2) throw std::invalid_argument("mean_rows: need 2-d tensor, got " + shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1);
    auto n = detail::make_node<T>({c}, {x.node()});
    const auto& dx = x.data();
    for (int j = 0; j < c; ++j) {
        double acc = 0;
        for (int i = 0; i < r; ++i) acc += static_cast<double>(dx[static_cast<size_t>(i) * c + j]);
        n->data[static_cast<size_t>(j)] = static_cast<T>(acc / r);
    }
    if (n->requires_grad) {
        const T inv = static_cast<T>(1.0 / r);
        n->backfn = [r, c, inv](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    p->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j)] * inv;
        };
    }
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> reshape(const TensorT<T>& x, std::vector<int> shape) {
    if (TensorT<T>::count(shape) != x.numel())
        throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
    auto n = detail::make_node<T>(std::move(shape), {x.node()});
    n->data = x.data();
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        };
    return TensorT<T>::wrap(n);
}

// Nearest-neighbor upsample of a 2-d map by integer factor.
template <class T>
TensorT<T> upsample_nearest(const TensorT<T>& x, int factor) {
    if (x.ndim() != 2 || factor < 1)
        throw std::invalid_argument("upsample_nearest: " + shape_str(x.shape()) + " by " + std::to_string(factor));
    const int h = x.dim(0), w = x.dim(1);
    auto n = detail::make_node<T>({h * factor, w * factor}, {x.node()});
    const auto& dx = x.data();
    const int wo = w * factor;
    for (int i = 0; i < h * factor; ++i)
        for (int j = 0; j < wo; ++j)
            n->data[static_cast<size_t>(i) * wo + j] = dx[static_cast<size_t>(i / factor) * w + j / factor];
    if (n->requires_grad)
        n->backfn = [h, w, factor, wo](TensorNodeT<T>& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (int i = 0; i < h * factor; ++i)
                for (int j = 0; j < wo; ++j)
                    p->grad[static_cast<size_t>(i / factor) * w + j / factor] += self.grad[static_cast<size_t>(i) * wo + j];
        };
    return TensorT<T>::wrap(n);
}

// y = x * s and y = x + s with s a scalar tensor (e.g. a trainable gain).
template <class T>
TensorT<T> mul_scalar_tensor(const TensorT<T>& x, const TensorT<T>& s) {
    if (s.numel() != 1) throw std::invalid_argument("mul_scalar_tensor: scale must be scalar, got " + shape_str(s.shape()));
    auto n = detail::make_node<T>(x.shape(), {x.node(), s.node()});
    const T sv = s.data()[0];
    const auto& dx = x.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = dx[i] * sv;
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& px = self.parents[0];
            auto& ps = self.parents[1];
            const T sv = ps->data[0];
            if (px->requires_grad) {
                px->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i] * sv;
            }
            if (ps->requires_grad) {
                ps->ensure_grad();
                double acc = 0;
                for (size_t i = 0; i < self.grad.size(); ++i)
                    acc += static_cast<double>(self.grad[i]) * static_cast<double>(px->data[i]);
                ps->grad[0] += static_cast<T>(acc);
            }
        };
    return TensorT<T>::wrap(n);
}

template <class T>
TensorT<T> add_scalar_tensor(const TensorT<T>& x, const TensorT<T>& s) {
    if (s.numel() != 1) throw std::invalid_argument("add_scalar_tensor: addend must be scalar, got " + shape_str(s.shape()));
    auto n = detail::make_node<T>(x.shape(), {x.node(), s.node()});
    const T sv = s.data()[0];
    const auto& dx = x.data();
    for (size_t i = 0; i < n->data.size(); ++i) n->data[i] = dx[i] + sv;
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& px = self.parents[0];
            auto& ps = self.parents[1];
            if (px->requires_grad) {
                px->ensure_grad();
                for (size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
            }
            if (ps->requires_grad) {
                ps->ensure_grad();
                double acc = 0;
                for (size_t i = 0; i < self.grad.size(); ++i) acc += static_cast<double>(self.grad[i]);
                ps->grad[0] += static_cast<T>(acc);
            }
        };
    return TensorT<T>::wrap(n);
}

// a / b for scalar tensors.
template <class T>
TensorT<T> div_scalars(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.numel() != 1 || b.numel() != 1)
        throw std::invalid_argument("div_scalars: need scalars, got " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto n = detail::make_node<T>({1}, {a.node(), b.node()});
    n->data[0] = a.data()[0] / b.data()[0];
    if (n->requires_grad)
        n->backfn = [](TensorNodeT<T>& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            const T av = pa->data[0], bv = pb->data[0];
            if (pa->requires_grad) {
                pa->ensure_grad();
                pa->grad[0] += self.grad[0] / bv;
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                pb->grad[0] -= self.grad[0] * av / (bv * bv);
            }
        };
    return TensorT<T>::wrap(n);
}

// ---- backward ----

// Populates grads of all tracked ancestors of a scalar loss. Accumulates on
// repeated calls; callers zero grads between steps.
template <class T>
void backward(const TensorT<T>& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss.shape()));
    auto root = loss.node();
    if (!root->requires_grad) return;

    // Iterative DFS topological order over grad-requiring nodes.
    std::vector<TensorNodeT<T>*> order;
    std::unordered_set<TensorNodeT<T>*> seen;
    std::vector<std::pair<TensorNodeT<T>*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNodeT<T>* parent = node->parents[idx++].get();
            if (parent->requires_grad && !seen.count(parent)) {
                seen.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backfn) {
            (*it)->ensure_grad();
            (*it)->backfn(**it);
        }
    }
}

}  // namespace pis
