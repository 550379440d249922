#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "fusmae/common.hpp"

namespace fusmae {

// Test hook: when set to an op name, that op's backward rule propagates a
// sign-flipped gradient. Used by the grad-check fault-injection fixture.
namespace fault {
inline std::string& negated_backward_op() {
    static std::string op;
    return op;
}
inline void set_negated_backward(std::string op) { negated_backward_op() = std::move(op); }
inline void clear() { negated_backward_op().clear(); }
}  // namespace fault

template <class T>
class Tape;

// Dense row-major tensor. `data` is shared so tensors are cheap to copy;
// `node` ties a value to the tape that produced it (-1 for constants and
// leaves). Parameters are leaves with requires_grad=true; their identity
// for gradient lookup is the data buffer address, which is stable across
// tapes.
template <class T>
struct Tensor {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    bool requires_grad = false;
    int node = -1;

    Tensor() = default;

    static Tensor zeros(Shape s) {
        Tensor t;
        t.shape = std::move(s);
        check_extents(t.shape);
        t.data = std::make_shared<std::vector<T>>(numel(t.shape), T(0));
        return t;
    }

    static Tensor full(Shape s, T v) {
        Tensor t = zeros(std::move(s));
        std::fill(t.data->begin(), t.data->end(), v);
        return t;
    }

    static Tensor from_vector(Shape s, std::vector<T> v) {
        check_extents(s);
        if (static_cast<std::int64_t>(v.size()) != numel(s))
            throw ShapeError("from_vector: buffer length " + std::to_string(v.size()) +
                             " does not match shape " + shape_str(s));
        Tensor t;
        t.shape = std::move(s);
        t.data = std::make_shared<std::vector<T>>(std::move(v));
        return t;
    }

    static Tensor scalar(T v) { return from_vector({}, {v}); }

    std::int64_t size() const { return numel(shape); }
    T* ptr() { return data->data(); }
    const T* ptr() const { return data->data(); }
    std::vector<T>& vals() { return *data; }
    const std::vector<T>& vals() const { return *data; }

    T item() const {
        if (size() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape));
        return (*data)[0];
    }

    // Identity key for gradient lookup.
    const void* key() const { return static_cast<const void*>(data.get()); }

private:
    static void check_extents(const Shape& s) {
        for (int e : s)
            if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    }
};

// Gradients of leaf parameters keyed by buffer identity. Parameters that
// did not participate in the loss are simply absent.
template <class T>
struct GradMap {
    std::unordered_map<const void*, Tensor<T>> by_key;

    const Tensor<T>* find(const Tensor<T>& param) const {
        auto it = by_key.find(param.key());
        return it == by_key.end() ? nullptr : &it->second;
    }
    Tensor<T> at_or_zero(const Tensor<T>& param) const {
        const Tensor<T>* g = find(param);
        return g ? *g : Tensor<T>::zeros(param.shape);
    }
    bool contains(const Tensor<T>& param) const { return by_key.count(param.key()) != 0; }
    size_t size() const { return by_key.size(); }
};

// Append-only record of forward operations. Node ids are topologically
// ordered by construction, so one reverse sweep visits each node once.
// A tape built with recording=false is a pure-inference context: ops run
// their forward path and record nothing.
template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(const std::vector<T>& dout, Tape&)>;

    explicit Tape(bool recording = true) : recording_(recording) {}

    bool recording() const { return recording_; }
    size_t size() const { return nodes_.size(); }

    void reset() {
        nodes_.clear();
        leaf_ids_.clear();
        grads_.clear();
    }

    int leaf(const Tensor<T>& t) {
        auto it = leaf_ids_.find(t.key());
        if (it != leaf_ids_.end()) return it->second;
        Node n;
        n.op = "leaf";
        n.shape = t.shape;
        n.leaf_key = t.key();
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(std::move(n));
        leaf_ids_.emplace(t.key(), id);
        return id;
    }

    int record(const char* op, Shape out_shape, std::vector<int> parents, BackwardFn fn) {
        Node n;
        n.op = op;
        n.shape = std::move(out_shape);
        n.parents = std::move(parents);
        n.backward = std::move(fn);
        if (!fault::negated_backward_op().empty() && fault::negated_backward_op() == op) {
            auto inner = std::move(n.backward);
            n.backward = [inner](const std::vector<T>& dout, Tape& tp) {
                std::vector<T> neg(dout.size());
                for (size_t i = 0; i < dout.size(); ++i) neg[i] = -dout[i];
                inner(neg, tp);
            };
        }
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Resolve the node id an op should treat as this input's source.
    // Auto-registers parameter leaves the first time they are seen.
    int source(const Tensor<T>& t) {
        if (!recording_) return -1;
        if (t.node >= 0) return t.node;
        if (t.requires_grad) return leaf(t);
        return -1;
    }

    // Accumulation buffer for a node's gradient, zero-allocated on demand.
    std::vector<T>& grad_buf(int id) {
        if (grads_[id].empty()) grads_[id].assign(numel(nodes_[id].shape), T(0));
        return grads_[id];
    }

    // Reverse accumulation from a scalar loss. Gradients reach exactly the
    // leaves the loss depends on.
    GradMap<T> backward(const Tensor<T>& loss) {
        if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape));
        if (loss.node < 0) throw ShapeError("backward: loss is not attached to this tape");
        grads_.assign(nodes_.size(), {});
        grad_buf(loss.node).assign(1, T(1));
        for (int id = loss.node; id >= 0; --id) {
            if (grads_[id].empty()) continue;
            if (nodes_[id].backward) nodes_[id].backward(grads_[id], *this);
        }
        GradMap<T> out;
        for (const auto& [key, id] : leaf_ids_) {
            if (grads_[id].empty()) continue;
            Tensor<T> g;
            g.shape = nodes_[id].shape;
            g.data = std::make_shared<std::vector<T>>(std::move(grads_[id]));
            out.by_key.emplace(key, std::move(g));
        }
        grads_.clear();
        return out;
    }

private:
    struct Node {
        const char* op = "";
        Shape shape;
        std::vector<int> parents;
        BackwardFn backward;
        const void* leaf_key = nullptr;
    };

    bool recording_;
    std::vector<Node> nodes_;
    std::unordered_map<const void*, int> leaf_ids_;
    std::vector<std::vector<T>> grads_;
};

namespace detail {

template <class T>
void check_finite(const char* op, const std::vector<T>& v) {
    for (const T x : v) {
        if (!std::isfinite(static_cast<double>(x)))
            throw NumericsError(std::string(op) + " produced a non-finite value");
    }
}

// Wrap an op result: attach a node if any input carries gradient.
template <class T>
Tensor<T> make_result(Tape<T>& tp, const char* op, Shape shape, std::vector<T> out,
                      std::vector<int> parents, typename Tape<T>::BackwardFn fn) {
    detail::check_finite(op, out);
    Tensor<T> r;
    r.shape = std::move(shape);
    r.data = std::make_shared<std::vector<T>>(std::move(out));
    bool any = false;
    for (int p : parents)
        if (p >= 0) any = true;
    if (tp.recording() && any) {
        r.node = tp.record(op, r.shape, parents, std::move(fn));
        r.requires_grad = true;
    }
    return r;
}

inline std::int64_t outer_extent(const Shape& s, int axis) {
    std::int64_t n = 1;
    for (int i = 0; i < axis; ++i) n *= s[i];
    return n;
}
inline std::int64_t inner_extent(const Shape& s, int axis) {
    std::int64_t n = 1;
    for (size_t i = axis + 1; i < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace detail

// ---- elementwise and shape ops ------------------------------------------

// add supports equal shapes and suffix broadcast (b's shape is a trailing
// suffix of a's, e.g. [T,d] + [d] for biases).
template <class T>
Tensor<T> add(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
    const bool same = a.shape == b.shape;
    bool suffix = !same && b.shape.size() < a.shape.size() &&
                  std::equal(b.shape.begin(), b.shape.end(), a.shape.end() - b.shape.size());
    if (!same && !suffix)
        throw ShapeError("add: incompatible shapes " + shape_str(a.shape) + " and " + shape_str(b.shape));
    const std::int64_t n = a.size(), bn = b.size();
    std::vector<T> out(n);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    if (same) {
        for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
    } else {
        for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i % bn];
    }
    const int pa_id = tp.source(a), pb_id = tp.source(b);
    return detail::make_result<T>(
        tp, "add", a.shape, std::move(out), {pa_id, pb_id},
        [pa_id, pb_id, n, bn, same](const std::vector<T>& dout, Tape<T>& t) {
            if (pa_id >= 0) {
                auto& ga = t.grad_buf(pa_id);
                for (std::int64_t i = 0; i < n; ++i) ga[i] += dout[i];
            }
            if (pb_id >= 0) {
                auto& gb = t.grad_buf(pb_id);
                if (same)
                    for (std::int64_t i = 0; i < n; ++i) gb[i] += dout[i];
                else
                    for (std::int64_t i = 0; i < n; ++i) gb[i % bn] += dout[i];
            }
        });
}

template <class T>
Tensor<T> sub(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape)
        throw ShapeError("sub: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const std::int64_t n = a.size();
    std::vector<T> out(n);
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.ptr()[i] - b.ptr()[i];
    const int pa = tp.source(a), pb = tp.source(b);
    return detail::make_result<T>(tp, "sub", a.shape, std::move(out), {pa, pb},
                                  [pa, pb, n](const std::vector<T>& dout, Tape<T>& t) {
                                      if (pa >= 0) {
                                          auto& g = t.grad_buf(pa);
                                          for (std::int64_t i = 0; i < n; ++i) g[i] += dout[i];
                                      }
                                      if (pb >= 0) {
                                          auto& g = t.grad_buf(pb);
                                          for (std::int64_t i = 0; i < n; ++i) g[i] -= dout[i];
                                      }
                                  });
}

template <class T>
Tensor<T> mul(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape != b.shape)
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    const std::int64_t n = a.size();
    std::vector<T> out(n);
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.ptr()[i] * b.ptr()[i];
    const int pa = tp.source(a), pb = tp.source(b);
    auto da = a.data, db = b.data;
    return detail::make_result<T>(tp, "mul", a.shape, std::move(out), {pa, pb},
                                  [pa, pb, n, da, db](const std::vector<T>& dout, Tape<T>& t) {
                                      if (pa >= 0) {
                                          auto& g = t.grad_buf(pa);
                                          for (std::int64_t i = 0; i < n; ++i) g[i] += dout[i] * (*db)[i];
                                      }
                                      if (pb >= 0) {
                                          auto& g = t.grad_buf(pb);
                                          for (std::int64_t i = 0; i < n; ++i) g[i] += dout[i] * (*da)[i];
                                      }
                                  });
}

template <class T>
Tensor<T> scale(Tape<T>& tp, const Tensor<T>& a, T s) {
    const std::int64_t n = a.size();
    std::vector<T> out(n);
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.ptr()[i] * s;
    const int pa = tp.source(a);
    return detail::make_result<T>(tp, "scale", a.shape, std::move(out), {pa},
                                  [pa, n, s](const std::vector<T>& dout, Tape<T>& t) {
                                      if (pa < 0) return;
                                      auto& g = t.grad_buf(pa);
                                      for (std::int64_t i = 0; i < n; ++i) g[i] += dout[i] * s;
                                  });
}

template <class T>
Tensor<T> reshape(Tape<T>& tp, const Tensor<T>& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape) + " as " + shape_str(new_shape));
    std::vector<T> out(*a.data);
    const int pa = tp.source(a);
    const std::int64_t n = a.size();
    return detail::make_result<T>(tp, "reshape", std::move(new_shape), std::move(out), {pa},
                                  [pa, n](const std::vector<T>& dout, Tape<T>& t) {
                                      if (pa < 0) return;
                                      auto& g = t.grad_buf(pa);
                                      for (std::int64_t i = 0; i < n; ++i) g[i] += dout[i];
                                  });
}

// Swap the last two axes (batched over any leading axes).
template <class T>
Tensor<T> transpose(Tape<T>& tp, const Tensor<T>& a) {
    if (a.shape.size() < 2) throw ShapeError("transpose: rank must be >= 2, got " + shape_str(a.shape));
    const int r = static_cast<int>(a.shape.size());
    const std::int64_t m = a.shape[r - 2], n = a.shape[r - 1];
    const std::int64_t batch = a.size() / (m * n);
    Shape out_shape = a.shape;
    std::swap(out_shape[r - 2], out_shape[r - 1]);
    std::vector<T> out(a.size());
    const T* pa = a.ptr();
    for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) out[b * m * n + j * m + i] = pa[b * m * n + i * n + j];
    const int src = tp.source(a);
    return detail::make_result<T>(tp, "transpose", std::move(out_shape), std::move(out), {src},
                                  [src, batch, m, n](const std::vector<T>& dout, Tape<T>& t) {
                                      if (src < 0) return;
                                      auto& g = t.grad_buf(src);
                                      for (std::int64_t b = 0; b < batch; ++b)
                                          for (std::int64_t i = 0; i < m; ++i)
                                              for (std::int64_t j = 0; j < n; ++j)
                                                  g[b * m * n + i * n + j] += dout[b * m * n + j * m + i];
                                  });
}

// Row-major contraction over the last axis of a and second-to-last of b.
// Leading batch axes, when present, must match exactly.
template <class T>
Tensor<T> matmul(Tape<T>& tp, const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape.size() < 2 || b.shape.size() < 2)
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape) + " and " +
                         shape_str(b.shape));
    const int ra = static_cast<int>(a.shape.size()), rb = static_cast<int>(b.shape.size());
    const std::int64_t m = a.shape[ra - 2], k = a.shape[ra - 1];
    const std::int64_t k2 = b.shape[rb - 2], n = b.shape[rb - 1];
    if (k != k2)
        throw ShapeError("matmul: inner extents disagree, " + shape_str(a.shape) + " x " + shape_str(b.shape));
    Shape lead_a(a.shape.begin(), a.shape.end() - 2), lead_b(b.shape.begin(), b.shape.end() - 2);
    if (lead_a != lead_b)
        throw ShapeError("matmul: batch extents disagree, " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const std::int64_t batch = numel(lead_a);
    Shape out_shape = lead_a;
    out_shape.push_back(static_cast<int>(m));
    out_shape.push_back(static_cast<int>(n));
    std::vector<T> out(batch * m * n, T(0));
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    for (std::int64_t bt = 0; bt < batch; ++bt) {
        const T* A = pa + bt * m * k;
        const T* B = pb + bt * k * n;
        T* C = out.data() + bt * m * n;
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t kk = 0; kk < k; ++kk) {
                const T av = A[i * k + kk];
                const T* Br = B + kk * n;
                T* Cr = C + i * n;
                for (std::int64_t j = 0; j < n; ++j) Cr[j] += av * Br[j];
            }
    }
    const int sa = tp.source(a), sb = tp.source(b);
    auto da = a.data, db = b.data;
    return detail::make_result<T>(
        tp, "matmul", std::move(out_shape), std::move(out), {sa, sb},
        [sa, sb, da, db, batch, m, k, n](const std::vector<T>& dout, Tape<T>& t) {
            if (sa >= 0) {  // dA = dC . B^T
                auto& g = t.grad_buf(sa);
                for (std::int64_t bt = 0; bt < batch; ++bt) {
                    const T* dC = dout.data() + bt * m * n;
                    const T* B = db->data() + bt * k * n;
                    T* gA = g.data() + bt * m * k;
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j) {
                            const T dv = dC[i * n + j];
                            const T* Br = B + j;  // column j
                            for (std::int64_t kk = 0; kk < k; ++kk) gA[i * k + kk] += dv * Br[kk * n];
                        }
                }
            }
            if (sb >= 0) {  // dB = A^T . dC
                auto& g = t.grad_buf(sb);
                for (std::int64_t bt = 0; bt < batch; ++bt) {
                    const T* dC = dout.data() + bt * m * n;
                    const T* A = da->data() + bt * m * k;
                    T* gB = g.data() + bt * k * n;
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t kk = 0; kk < k; ++kk) {
                            const T av = A[i * k + kk];
                            const T* dCr = dC + i * n;
                            T* gBr = gB + kk * n;
                            for (std::int64_t j = 0; j < n; ++j) gBr[j] += av * dCr[j];
                        }
                }
            }
        });
}

template <class T>
Tensor<T> concat(Tape<T>& tp, const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no parts given");
    const Shape& s0 = parts[0].shape;
    if (axis < 0 || axis >= static_cast<int>(s0.size()))
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(s0));
    int total_axis = 0;
    for (const auto& p : parts) {
        if (p.shape.size() != s0.size())
            throw ShapeError("concat: rank mismatch between parts");
        for (size_t i = 0; i < s0.size(); ++i)
            if (static_cast<int>(i) != axis && p.shape[i] != s0[i])
                throw ShapeError("concat: extent mismatch at axis " + std::to_string(i) + ": " +
                                 shape_str(p.shape) + " vs " + shape_str(s0));
        total_axis += p.shape[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = total_axis;
    const std::int64_t outer = detail::outer_extent(out_shape, axis);
    const std::int64_t inner = detail::inner_extent(out_shape, axis);
    std::vector<T> out(numel(out_shape));
    std::int64_t offset = 0;
    std::vector<int> sources;
    std::vector<std::int64_t> extents, offsets;
    for (const auto& p : parts) {
        const std::int64_t e = p.shape[axis];
        const T* src = p.ptr();
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(out.data() + (o * total_axis + offset) * inner, src + o * e * inner,
                        sizeof(T) * e * inner);
        sources.push_back(tp.source(p));
        extents.push_back(e);
        offsets.push_back(offset);
        offset += e;
    }
    return detail::make_result<T>(
        tp, "concat", std::move(out_shape), std::move(out), sources,
        [sources, extents, offsets, outer, inner, total_axis](const std::vector<T>& dout, Tape<T>& t) {
            for (size_t pi = 0; pi < sources.size(); ++pi) {
                if (sources[pi] < 0) continue;
                auto& g = t.grad_buf(sources[pi]);
                const std::int64_t e = extents[pi], off = offsets[pi];
                for (std::int64_t o = 0; o < outer; ++o) {
                    const T* src = dout.data() + (o * total_axis + off) * inner;
                    T* dst = g.data() + o * e * inner;
                    for (std::int64_t i = 0; i < e * inner; ++i) dst[i] += src[i];
                }
            }
        });
}

// Select slices along an axis by index list; indices may repeat.
// Backward scatter-adds, so repeated indices accumulate.
template <class T>
Tensor<T> gather(Tape<T>& tp, const Tensor<T>& a, int axis, const std::vector<int>& indices) {
    if (axis < 0 || axis >= static_cast<int>(a.shape.size()))
        throw ShapeError("gather: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape));
    if (indices.empty()) throw ShapeError("gather: empty index list");
    const int extent = a.shape[axis];
    for (int idx : indices)
        if (idx < 0 || idx >= extent)
            throw ShapeError("gather: index " + std::to_string(idx) + " out of range [0," +
                             std::to_string(extent) + ")");
    Shape out_shape = a.shape;
    out_shape[axis] = static_cast<int>(indices.size());
    const std::int64_t outer = detail::outer_extent(a.shape, axis);
    const std::int64_t inner = detail::inner_extent(a.shape, axis);
    const std::int64_t ni = static_cast<std::int64_t>(indices.size());
    std::vector<T> out(outer * ni * inner);
    const T* pa = a.ptr();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < ni; ++i)
            std::memcpy(out.data() + (o * ni + i) * inner, pa + (o * extent + indices[i]) * inner,
                        sizeof(T) * inner);
    const int src = tp.source(a);
    auto idx_copy = indices;
    return detail::make_result<T>(
        tp, "gather", std::move(out_shape), std::move(out), {src},
        [src, idx_copy, outer, inner, ni, extent](const std::vector<T>& dout, Tape<T>& t) {
            if (src < 0) return;
            auto& g = t.grad_buf(src);
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t i = 0; i < ni; ++i) {
                    const T* s = dout.data() + (o * ni + i) * inner;
                    T* d = g.data() + (o * extent + idx_copy[i]) * inner;
                    for (std::int64_t j = 0; j < inner; ++j) d[j] += s[j];
                }
        });
}

// Numerically stable softmax along an axis (max-subtracted).
template <class T>
Tensor<T> softmax(Tape<T>& tp, const Tensor<T>& a, int axis) {
    if (axis < 0) axis += static_cast<int>(a.shape.size());
    if (axis < 0 || axis >= static_cast<int>(a.shape.size()))
        throw ShapeError("softmax: axis out of range for " + shape_str(a.shape));
    const std::int64_t outer = detail::outer_extent(a.shape, axis);
    const std::int64_t inner = detail::inner_extent(a.shape, axis);
    const std::int64_t e = a.shape[axis];
    std::vector<T> out(a.size());
    const T* pa = a.ptr();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = o * e * inner + in;
            T mx = pa[base];
            for (std::int64_t i = 1; i < e; ++i) mx = std::max(mx, pa[base + i * inner]);
            T denom = T(0);
            for (std::int64_t i = 0; i < e; ++i) {
                const T v = std::exp(pa[base + i * inner] - mx);
                out[base + i * inner] = v;
                denom += v;
            }
            for (std::int64_t i = 0; i < e; ++i) out[base + i * inner] /= denom;
        }
    const int src = tp.source(a);
    auto saved = std::make_shared<std::vector<T>>(out);
    return detail::make_result<T>(
        tp, "softmax", a.shape, std::move(out), {src},
        [src, saved, outer, inner, e](const std::vector<T>& dout, Tape<T>& t) {
            if (src < 0) return;
            auto& g = t.grad_buf(src);
            const std::vector<T>& y = *saved;
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t in = 0; in < inner; ++in) {
                    const std::int64_t base = o * e * inner + in;
                    T dot = T(0);
                    for (std::int64_t i = 0; i < e; ++i) dot += dout[base + i * inner] * y[base + i * inner];
                    for (std::int64_t i = 0; i < e; ++i)
                        g[base + i * inner] += y[base + i * inner] * (dout[base + i * inner] - dot);
                }
        });
}

// Normalize over the last axis, then affine with gain/bias of that width.
template <class T>
Tensor<T> layer_norm(Tape<T>& tp, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                     T eps = T(1e-5)) {
    if (x.shape.empty()) throw ShapeError("layer_norm: scalar input");
    const std::int64_t d = x.shape.back();
    if (gain.size() != d || bias.size() != d)
        throw ShapeError("layer_norm: gain/bias width must equal last extent " + std::to_string(d));
    if (eps <= T(0)) throw ShapeError("layer_norm: eps must be positive");
    const std::int64_t rows = x.size() / d;
    std::vector<T> out(x.size());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_std = std::make_shared<std::vector<T>>(rows);
    const T* px = x.ptr();
    const T* pg = gain.ptr();
    const T* pb = bias.ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* row = px + r * d;
        T mean = T(0);
        for (std::int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<T>(d);
        T var = T(0);
        for (std::int64_t j = 0; j < d; ++j) {
            const T c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<T>(d);
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const T xh = (row[j] - mean) * is;
            (*xhat)[r * d + j] = xh;
            out[r * d + j] = xh * pg[j] + pb[j];
        }
    }
    const int sx = tp.source(x), sg = tp.source(gain), sb = tp.source(bias);
    auto gdata = gain.data;
    return detail::make_result<T>(
        tp, "layer_norm", x.shape, std::move(out), {sx, sg, sb},
        [sx, sg, sb, gdata, xhat, inv_std, rows, d](const std::vector<T>& dout, Tape<T>& t) {
            const T* pg = gdata->data();
            if (sg >= 0) {
                auto& gg = t.grad_buf(sg);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < d; ++j) gg[j] += dout[r * d + j] * (*xhat)[r * d + j];
            }
            if (sb >= 0) {
                auto& gb = t.grad_buf(sb);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < d; ++j) gb[j] += dout[r * d + j];
            }
            if (sx >= 0) {
                auto& gx = t.grad_buf(sx);
                for (std::int64_t r = 0; r < rows; ++r) {
                    T mean_dy = T(0), mean_dyxh = T(0);
                    for (std::int64_t j = 0; j < d; ++j) {
                        const T dyg = dout[r * d + j] * pg[j];
                        mean_dy += dyg;
                        mean_dyxh += dyg * (*xhat)[r * d + j];
                    }
                    mean_dy /= static_cast<T>(d);
                    mean_dyxh /= static_cast<T>(d);
                    for (std::int64_t j = 0; j < d; ++j) {
                        const T dyg = dout[r * d + j] * pg[j];
                        gx[r * d + j] +=
                            (dyg - mean_dy - (*xhat)[r * d + j] * mean_dyxh) * (*inv_std)[r];
                    }
                }
            }
        });
}

// Exact Gaussian-CDF GELU: x * Phi(x).
template <class T>
Tensor<T> gelu(Tape<T>& tp, const Tensor<T>& a) {
    const std::int64_t n = a.size();
    std::vector<T> out(n);
    const T* pa = a.ptr();
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    for (std::int64_t i = 0; i < n; ++i) {
        const double x = static_cast<double>(pa[i]);
        out[i] = static_cast<T>(x * 0.5 * (1.0 + std::erf(x * inv_sqrt2)));
    }
    const int src = tp.source(a);
    auto da = a.data;
    return detail::make_result<T>(
        tp, "gelu", a.shape, std::move(out), {src},
        [src, da, n](const std::vector<T>& dout, Tape<T>& t) {
            if (src < 0) return;
            auto& g = t.grad_buf(src);
            constexpr double inv_sqrt2 = 0.7071067811865475244;
            constexpr double inv_sqrt2pi = 0.3989422804014326779;
            for (std::int64_t i = 0; i < n; ++i) {
                const double x = static_cast<double>((*da)[i]);
                const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
                g[i] += dout[i] * static_cast<T>(cdf + x * pdf);
            }
        });
}

template <class T>
Tensor<T> sum(Tape<T>& tp, const Tensor<T>& a) {
    const std::int64_t n = a.size();
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) acc += a.ptr()[i];
    const int src = tp.source(a);
    return detail::make_result<T>(tp, "sum", {}, {acc}, {src},
                                  [src, n](const std::vector<T>& dout, Tape<T>& t) {
                                      if (src < 0) return;
                                      auto& g = t.grad_buf(src);
                                      for (std::int64_t i = 0; i < n; ++i) g[i] += dout[0];
                                  });
}

template <class T>
Tensor<T> mean(Tape<T>& tp, const Tensor<T>& a) {
    const std::int64_t n = a.size();
    T acc = T(0);
    for (std::int64_t i = 0; i < n; ++i) acc += a.ptr()[i];
    acc /= static_cast<T>(n);
    const int src = tp.source(a);
    return detail::make_result<T>(tp, "mean", {}, {acc}, {src},
                                  [src, n](const std::vector<T>& dout, Tape<T>& t) {
                                      if (src < 0) return;
                                      auto& g = t.grad_buf(src);
                                      const T d = dout[0] / static_cast<T>(n);
                                      for (std::int64_t i = 0; i < n; ++i) g[i] += d;
                                  });
}

// ---- finite-difference oracle -------------------------------------------

// Central differences (f(x+eps e) - f(x-eps e)) / 2eps per coordinate.
// Mutates a private copy of x's buffer between evaluations; records nothing.
template <class T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
    if (eps <= T(0)) throw ShapeError("finite_diff_grad: eps must be positive");
    Tensor<T> probe = Tensor<T>::from_vector(x.shape, *x.data);
    Tensor<T> grad = Tensor<T>::zeros(x.shape);
    std::vector<T>& buf = *probe.data;
    for (std::int64_t i = 0; i < probe.size(); ++i) {
        const T orig = buf[i];
        buf[i] = orig + eps;
        const T fp = f(probe);
        buf[i] = orig - eps;
        const T fm = f(probe);
        buf[i] = orig;
        (*grad.data)[i] = (fp - fm) / (T(2) * eps);
    }
    return grad;
}

// Cast between scalar types, preserving leaf/grad status (not the node).
template <class To, class From>
Tensor<To> cast(const Tensor<From>& a) {
    Tensor<To> out = Tensor<To>::zeros(a.shape);
    for (std::int64_t i = 0; i < a.size(); ++i) (*out.data)[i] = static_cast<To>(a.ptr()[i]);
    out.requires_grad = a.requires_grad;
    return out;
}

}  // namespace fusmae
