// Reverse-mode differentiation on a per-step tape.
//
// A Tape owns the graph nodes for one forward/backward pass; node creation
// order is a valid topological order, so the reverse pass is a single
// reverse sweep with no explicit sort. Tensors placed on the tape are
// copied in (no in-place mutation of taped values), and every op scans its
// output for non-finite values so numeric failures name their producer.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "cinecontrast/tensor.hpp"

namespace cinecontrast::ag {

template <class Real>
class Tape;

template <class Real>
struct Var {
    Tape<Real>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    const Tensor<Real>& value() const { return tape->value(id); }
    const Shape& shape() const { return tape->value(id).shape; }
};

template <class Real>
class Tape {
  public:
    struct Node {
        Tensor<Real> value;
        Tensor<Real> grad;  // sized on first accumulation
        bool requires_grad = false;
        const char* op = "leaf";
        std::function<void(Tape&, Node&)> backprop;  // captures parent ids
    };

    // Leaf whose requires_grad comes from the tensor itself.
    Var<Real> leaf(Tensor<Real> value) {
        const bool rg = value.requires_grad;
        return push(std::move(value), rg, "leaf", {});
    }

    Var<Real> leaf(Tensor<Real> value, bool requires_grad) {
        return push(std::move(value), requires_grad, "leaf", {});
    }

    Var<Real> constant(Tensor<Real> value) { return push(std::move(value), false, "const", {}); }

    Var<Real> push(Tensor<Real> value, bool requires_grad, const char* op,
                   std::function<void(Tape&, Node&)> backprop) {
        if (check_finite_ && !all_finite(value)) {
            throw NumericFailure(std::string("non-finite value produced by op '") + op + "'");
        }
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.op = op;
        n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return Var<Real>{this, static_cast<int>(nodes_.size()) - 1};
    }

    const Tensor<Real>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    bool requires_grad(int id) const {
        return nodes_[static_cast<std::size_t>(id)].requires_grad;
    }

    // Accumulation target for a parent during the reverse sweep.
    Tensor<Real>& grad_buffer(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.data.empty()) n.grad = Tensor<Real>::zeros(n.value.shape);
        return n.grad;
    }

    bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.data.empty(); }

    // Gradient of a node after backward(); zeros if the node was unreachable.
    Tensor<Real> grad(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.grad.data.empty()) return Tensor<Real>::zeros(n.value.shape);
        return n.grad;
    }

    void backward(Var<Real> loss) {
        if (!loss.valid() || loss.tape != this) {
            throw ContractViolation("backward: loss var does not belong to this tape");
        }
        if (!value(loss.id).is_scalar()) {
            throw ContractViolation("backward: loss must be a scalar");
        }
        grad_buffer(loss.id).data[0] = Real(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.backprop || n.grad.data.empty() || !n.requires_grad) continue;
            n.backprop(*this, n);
        }
    }

    void set_check_finite(bool on) { check_finite_ = on; }
    bool check_finite() const { return check_finite_; }

  private:
    std::vector<Node> nodes_;
    bool check_finite_ = true;
};

// ---------------------------------------------------------------------------
// matmul kernels (serial, fixed reduction order => deterministic)
// ---------------------------------------------------------------------------

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <class Real>
void mm_nn_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const Real* arow = a + static_cast<std::size_t>(i) * k;
        Real* crow = c + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            const Real av = arow[l];
            const Real* brow = b + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class Real>
void mm_nt_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const Real* arow = a + static_cast<std::size_t>(i) * k;
        Real* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const Real* brow = b + static_cast<std::size_t>(j) * k;
            Real acc = Real(0);
            for (int l = 0; l < k; ++l) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

// C[m,n] += A[k,m]^T * B[k,n]
template <class Real>
void mm_tn_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int l = 0; l < k; ++l) {
        const Real* arow = a + static_cast<std::size_t>(l) * m;
        const Real* brow = b + static_cast<std::size_t>(l) * n;
        for (int i = 0; i < m; ++i) {
            const Real av = arow[i];
            Real* crow = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[k,m]^T * B[n,k]^T
template <class Real>
void mm_tt_acc(const Real* a, const Real* b, Real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        Real* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const Real* brow = b + static_cast<std::size_t>(j) * k;
            Real acc = Real(0);
            for (int l = 0; l < k; ++l) acc += a[static_cast<std::size_t>(l) * m + i] * brow[l];
            crow[j] += acc;
        }
    }
}

template <class Real>
void mm_acc(const Real* a, const Real* b, Real* c, int m, int k, int n, bool ta, bool tb) {
    if (!ta && !tb) {
        mm_nn_acc(a, b, c, m, k, n);
    } else if (!ta && tb) {
        mm_nt_acc(a, b, c, m, k, n);
    } else if (ta && !tb) {
        mm_tn_acc(a, b, c, m, k, n);
    } else {
        mm_tt_acc(a, b, c, m, k, n);
    }
}

inline int ceil_div(int a, int b) { return (a + b - 1) / b; }

}  // namespace detail

// ---------------------------------------------------------------------------
// ops
// ---------------------------------------------------------------------------

template <class Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
    Tape<Real>& t = *a.tape;
    const Tensor<Real>&va = a.value(), &vb = b.value();
    if (!va.same_shape(vb)) {
        throw ContractViolation("add: shape mismatch " + shape_str(va.shape) + " vs " +
                                shape_str(vb.shape));
    }
    Tensor<Real> out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += vb.data[i];
    const int ia = a.id, ib = b.id;
    const bool rg = t.requires_grad(ia) || t.requires_grad(ib);
    return t.push(std::move(out), rg, "add", [ia, ib](Tape<Real>& tp, auto& n) {
        if (tp.requires_grad(ia)) {
            auto& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i];
        }
        if (tp.requires_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] += n.grad.data[i];
        }
    });
}

template <class Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
    Tape<Real>& t = *a.tape;
    const Tensor<Real>&va = a.value(), &vb = b.value();
    if (!va.same_shape(vb)) {
        throw ContractViolation("sub: shape mismatch " + shape_str(va.shape) + " vs " +
                                shape_str(vb.shape));
    }
    Tensor<Real> out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= vb.data[i];
    const int ia = a.id, ib = b.id;
    const bool rg = t.requires_grad(ia) || t.requires_grad(ib);
    return t.push(std::move(out), rg, "sub", [ia, ib](Tape<Real>& tp, auto& n) {
        if (tp.requires_grad(ia)) {
            auto& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i];
        }
        if (tp.requires_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] -= n.grad.data[i];
        }
    });
}

template <class Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
    Tape<Real>& t = *a.tape;
    const Tensor<Real>&va = a.value(), &vb = b.value();
    if (!va.same_shape(vb)) {
        throw ContractViolation("mul: shape mismatch " + shape_str(va.shape) + " vs " +
                                shape_str(vb.shape));
    }
    Tensor<Real> out = va;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= vb.data[i];
    const int ia = a.id, ib = b.id;
    const bool rg = t.requires_grad(ia) || t.requires_grad(ib);
    return t.push(std::move(out), rg, "mul", [ia, ib](Tape<Real>& tp, auto& n) {
        const auto& va2 = tp.value(ia);
        const auto& vb2 = tp.value(ib);
        if (tp.requires_grad(ia)) {
            auto& ga = tp.grad_buffer(ia);
            for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i] * vb2.data[i];
        }
        if (tp.requires_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] += n.grad.data[i] * va2.data[i];
        }
    });
}

template <class Real>
Var<Real> scale(Var<Real> a, Real c) {
    Tape<Real>& t = *a.tape;
    Tensor<Real> out = a.value();
    for (auto& v : out.data) v *= c;
    const int ia = a.id;
    return t.push(std::move(out), t.requires_grad(ia), "scale", [ia, c](Tape<Real>& tp, auto& n) {
        if (!tp.requires_grad(ia)) return;
        auto& ga = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i] * c;
    });
}

template <class Real>
Var<Real> add_scalar(Var<Real> a, Real c) {
    Tape<Real>& t = *a.tape;
    Tensor<Real> out = a.value();
    for (auto& v : out.data) v += c;
    const int ia = a.id;
    return t.push(std::move(out), t.requires_grad(ia), "add_scalar",
                  [ia](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ia)) return;
                      auto& ga = tp.grad_buffer(ia);
                      for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += n.grad.data[i];
                  });
}

// broadcast add of b[c] along the last axis of x[..., c]
template <class Real>
Var<Real> add_rowwise(Var<Real> x, Var<Real> b) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>&vx = x.value(), &vb = b.value();
    if (vb.rank() != 1 || vx.rank() < 1 || vx.shape.back() != vb.dim(0)) {
        throw ContractViolation("add_rowwise: last axis of x must match b length");
    }
    const int c = vb.dim(0);
    Tensor<Real> out = vx;
    const std::size_t rows = out.size() / static_cast<std::size_t>(c);
    for (std::size_t r = 0; r < rows; ++r) {
        Real* row = out.data.data() + r * static_cast<std::size_t>(c);
        for (int j = 0; j < c; ++j) row[j] += vb.data[static_cast<std::size_t>(j)];
    }
    const int ix = x.id, ib = b.id;
    const bool rg = t.requires_grad(ix) || t.requires_grad(ib);
    return t.push(std::move(out), rg, "add_rowwise", [ix, ib, c, rows](Tape<Real>& tp, auto& n) {
        if (tp.requires_grad(ix)) {
            auto& gx = tp.grad_buffer(ix);
            for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += n.grad.data[i];
        }
        if (tp.requires_grad(ib)) {
            auto& gb = tp.grad_buffer(ib);
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* grow = n.grad.data.data() + r * static_cast<std::size_t>(c);
                for (int j = 0; j < c; ++j) gb.data[static_cast<std::size_t>(j)] += grow[j];
            }
        }
    });
}

// broadcast multiply by g[c] along the last axis of x[..., c]
template <class Real>
Var<Real> mul_rowwise(Var<Real> x, Var<Real> g) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>&vx = x.value(), &vg = g.value();
    if (vg.rank() != 1 || vx.rank() < 1 || vx.shape.back() != vg.dim(0)) {
        throw ContractViolation("mul_rowwise: last axis of x must match g length");
    }
    const int c = vg.dim(0);
    Tensor<Real> out = vx;
    const std::size_t rows = out.size() / static_cast<std::size_t>(c);
    for (std::size_t r = 0; r < rows; ++r) {
        Real* row = out.data.data() + r * static_cast<std::size_t>(c);
        for (int j = 0; j < c; ++j) row[j] *= vg.data[static_cast<std::size_t>(j)];
    }
    const int ix = x.id, ig = g.id;
    const bool rg = t.requires_grad(ix) || t.requires_grad(ig);
    return t.push(std::move(out), rg, "mul_rowwise", [ix, ig, c, rows](Tape<Real>& tp, auto& n) {
        const auto& vx2 = tp.value(ix);
        const auto& vg2 = tp.value(ig);
        if (tp.requires_grad(ix)) {
            auto& gx = tp.grad_buffer(ix);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t off = r * static_cast<std::size_t>(c);
                for (int j = 0; j < c; ++j) {
                    gx.data[off + j] += n.grad.data[off + j] * vg2.data[static_cast<std::size_t>(j)];
                }
            }
        }
        if (tp.requires_grad(ig)) {
            auto& gg = tp.grad_buffer(ig);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t off = r * static_cast<std::size_t>(c);
                for (int j = 0; j < c; ++j) {
                    gg.data[static_cast<std::size_t>(j)] += n.grad.data[off + j] * vx2.data[off + j];
                }
            }
        }
    });
}

// 2-D or batched 3-D matmul with optional operand transposes.
template <class Real>
Var<Real> matmul(Var<Real> a, Var<Real> b, bool trans_a = false, bool trans_b = false) {
    Tape<Real>& t = *a.tape;
    const Tensor<Real>&va = a.value(), &vb = b.value();
    if (va.rank() != vb.rank() || (va.rank() != 2 && va.rank() != 3)) {
        throw ContractViolation("matmul: operands must both be rank 2 or rank 3");
    }
    const bool batched = va.rank() == 3;
    const int nb = batched ? va.dim(0) : 1;
    if (batched && vb.dim(0) != nb) throw ContractViolation("matmul: batch dims differ");
    const int a_r = batched ? va.dim(1) : va.dim(0);
    const int a_c = batched ? va.dim(2) : va.dim(1);
    const int b_r = batched ? vb.dim(1) : vb.dim(0);
    const int b_c = batched ? vb.dim(2) : vb.dim(1);
    const int m = trans_a ? a_c : a_r;
    const int k = trans_a ? a_r : a_c;
    const int kb = trans_b ? b_c : b_r;
    const int n = trans_b ? b_r : b_c;
    if (k != kb) {
        throw ContractViolation("matmul: inner dims differ: " + shape_str(va.shape) + " x " +
                                shape_str(vb.shape));
    }
    Shape out_shape = batched ? Shape{nb, m, n} : Shape{m, n};
    Tensor<Real> out(out_shape);
    const std::size_t a_stride = static_cast<std::size_t>(a_r) * a_c;
    const std::size_t b_stride = static_cast<std::size_t>(b_r) * b_c;
    const std::size_t o_stride = static_cast<std::size_t>(m) * n;
    for (int bi = 0; bi < nb; ++bi) {
        detail::mm_acc(va.data.data() + bi * a_stride, vb.data.data() + bi * b_stride,
                       out.data.data() + bi * o_stride, m, k, n, trans_a, trans_b);
    }
    const int ia = a.id, ib = b.id;
    const bool rg = t.requires_grad(ia) || t.requires_grad(ib);
    return t.push(
        std::move(out), rg, "matmul",
        [=](Tape<Real>& tp, auto& nd) {
            const auto& va2 = tp.value(ia);
            const auto& vb2 = tp.value(ib);
            // dA and dB for the four transpose combinations
            if (tp.requires_grad(ia)) {
                auto& ga = tp.grad_buffer(ia);
                for (int bi = 0; bi < nb; ++bi) {
                    const Real* gout = nd.grad.data.data() + bi * o_stride;
                    const Real* bp = vb2.data.data() + bi * b_stride;
                    Real* gap = ga.data.data() + bi * a_stride;
                    if (!trans_a) {
                        // dA[m,k] = dC * op(B)^T
                        detail::mm_acc(gout, bp, gap, m, n, k, false, !trans_b);
                    } else {
                        // A is [k,m]: dA = op(B) * dC^T
                        detail::mm_acc(bp, gout, gap, k, n, m, trans_b, true);
                    }
                }
            }
            if (tp.requires_grad(ib)) {
                auto& gb = tp.grad_buffer(ib);
                for (int bi = 0; bi < nb; ++bi) {
                    const Real* gout = nd.grad.data.data() + bi * o_stride;
                    const Real* ap = va2.data.data() + bi * a_stride;
                    Real* gbp = gb.data.data() + bi * b_stride;
                    if (!trans_b) {
                        // dB[k,n] = op(A)^T * dC
                        detail::mm_acc(ap, gout, gbp, k, m, n, !trans_a, false);
                    } else {
                        // B is [n,k]: dB = dC^T * op(A)
                        detail::mm_acc(gout, ap, gbp, n, m, k, true, trans_a);
                    }
                }
            }
        });
}

template <class Real>
Var<Real> reshape(Var<Real> x, Shape new_shape) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    if (shape_numel(new_shape) != vx.size()) {
        throw ContractViolation("reshape: element count mismatch");
    }
    Tensor<Real> out(new_shape, vx.data);
    const int ix = x.id;
    return t.push(std::move(out), t.requires_grad(ix), "reshape", [ix](Tape<Real>& tp, auto& n) {
        if (!tp.requires_grad(ix)) return;
        auto& gx = tp.grad_buffer(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += n.grad.data[i];
    });
}

namespace detail {

inline std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
        st[static_cast<std::size_t>(i)] =
            st[static_cast<std::size_t>(i) + 1] * static_cast<std::size_t>(s[static_cast<std::size_t>(i) + 1]);
    }
    return st;
}

template <class Real>
void transpose_copy(const Real* src, Real* dst, const Shape& in_shape, int ax0, int ax1,
                    bool accumulate_back) {
    // dst shape = in_shape with ax0/ax1 swapped; iterate source linearly
    Shape out_shape = in_shape;
    std::swap(out_shape[static_cast<std::size_t>(ax0)], out_shape[static_cast<std::size_t>(ax1)]);
    const auto in_strides = strides_of(in_shape);
    const auto out_strides = strides_of(out_shape);
    const std::size_t total = shape_numel(in_shape);
    const int r = static_cast<int>(in_shape.size());
    std::vector<int> idx(static_cast<std::size_t>(r), 0);
    for (std::size_t lin = 0; lin < total; ++lin) {
        std::size_t off = 0;
        for (int d = 0; d < r; ++d) {
            int od = d == ax0 ? ax1 : (d == ax1 ? ax0 : d);
            off += static_cast<std::size_t>(idx[static_cast<std::size_t>(d)]) *
                   out_strides[static_cast<std::size_t>(od)];
        }
        if (accumulate_back) {
            dst[lin] += src[off];
        } else {
            dst[off] = src[lin];
        }
        for (int d = r - 1; d >= 0; --d) {
            if (++idx[static_cast<std::size_t>(d)] < in_shape[static_cast<std::size_t>(d)]) break;
            idx[static_cast<std::size_t>(d)] = 0;
        }
    }
}

}  // namespace detail

template <class Real>
Var<Real> transpose(Var<Real> x, int ax0, int ax1) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    const int r = vx.rank();
    if (ax0 < 0 || ax1 < 0 || ax0 >= r || ax1 >= r) {
        throw ContractViolation("transpose: axis out of range");
    }
    Shape out_shape = vx.shape;
    std::swap(out_shape[static_cast<std::size_t>(ax0)], out_shape[static_cast<std::size_t>(ax1)]);
    Tensor<Real> out(out_shape);
    detail::transpose_copy(vx.data.data(), out.data.data(), vx.shape, ax0, ax1, false);
    const int ix = x.id;
    Shape in_shape = vx.shape;
    return t.push(std::move(out), t.requires_grad(ix), "transpose",
                  [ix, ax0, ax1, in_shape](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      detail::transpose_copy(n.grad.data.data(), gx.data.data(), in_shape, ax0,
                                             ax1, true);
                  });
}

template <class Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, int axis) {
    if (parts.empty()) throw ContractViolation("concat: empty part list");
    Tape<Real>& t = *parts[0].tape;
    const Shape& first = parts[0].value().shape;
    const int r = static_cast<int>(first.size());
    if (axis < 0 || axis >= r) throw ContractViolation("concat: axis out of range");
    Shape out_shape = first;
    int axis_total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.value().shape;
        if (static_cast<int>(s.size()) != r) throw ContractViolation("concat: rank mismatch");
        for (int d = 0; d < r; ++d) {
            if (d != axis && s[static_cast<std::size_t>(d)] != first[static_cast<std::size_t>(d)]) {
                throw ContractViolation("concat: non-axis dims differ");
            }
        }
        axis_total += s[static_cast<std::size_t>(axis)];
    }
    out_shape[static_cast<std::size_t>(axis)] = axis_total;

    // outer = product of dims before axis; inner = product after
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(first[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(first[static_cast<std::size_t>(d)]);

    Tensor<Real> out(out_shape);
    std::vector<int> ids;
    std::vector<int> axis_sizes;
    bool rg = false;
    std::size_t dst_axis_off = 0;
    for (const auto& p : parts) {
        const Tensor<Real>& v = p.value();
        const std::size_t an = static_cast<std::size_t>(v.shape[static_cast<std::size_t>(axis)]);
        for (std::size_t o = 0; o < outer; ++o) {
            const Real* src = v.data.data() + o * an * inner;
            Real* dst = out.data.data() +
                        (o * static_cast<std::size_t>(axis_total) + dst_axis_off) * inner;
            std::copy(src, src + an * inner, dst);
        }
        dst_axis_off += an;
        ids.push_back(p.id);
        axis_sizes.push_back(static_cast<int>(an));
        rg = rg || t.requires_grad(p.id);
    }
    return t.push(std::move(out), rg, "concat",
                  [ids, axis_sizes, outer, inner, axis_total](Tape<Real>& tp, auto& n) {
                      std::size_t axis_off = 0;
                      for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                          const std::size_t an = static_cast<std::size_t>(axis_sizes[pi]);
                          if (tp.requires_grad(ids[pi])) {
                              auto& g = tp.grad_buffer(ids[pi]);
                              for (std::size_t o = 0; o < outer; ++o) {
                                  const Real* src =
                                      n.grad.data.data() +
                                      (o * static_cast<std::size_t>(axis_total) + axis_off) * inner;
                                  Real* dst = g.data.data() + o * an * inner;
                                  for (std::size_t i = 0; i < an * inner; ++i) dst[i] += src[i];
                              }
                          }
                          axis_off += an;
                      }
                  });
}

template <class Real>
Var<Real> slice(Var<Real> x, int axis, int start, int len) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    const int r = vx.rank();
    if (axis < 0 || axis >= r) throw ContractViolation("slice: axis out of range");
    const int asz = vx.shape[static_cast<std::size_t>(axis)];
    if (start < 0 || len <= 0 || start + len > asz) {
        throw ContractViolation("slice: window out of range");
    }
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(vx.shape[static_cast<std::size_t>(d)]);
    for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(vx.shape[static_cast<std::size_t>(d)]);
    Shape out_shape = vx.shape;
    out_shape[static_cast<std::size_t>(axis)] = len;
    Tensor<Real> out(out_shape);
    for (std::size_t o = 0; o < outer; ++o) {
        const Real* src = vx.data.data() + (o * static_cast<std::size_t>(asz) + static_cast<std::size_t>(start)) * inner;
        Real* dst = out.data.data() + o * static_cast<std::size_t>(len) * inner;
        std::copy(src, src + static_cast<std::size_t>(len) * inner, dst);
    }
    const int ix = x.id;
    return t.push(std::move(out), t.requires_grad(ix), "slice",
                  [ix, axis, start, len, asz, outer, inner](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      for (std::size_t o = 0; o < outer; ++o) {
                          const Real* src = n.grad.data.data() + o * static_cast<std::size_t>(len) * inner;
                          Real* dst = gx.data.data() +
                                      (o * static_cast<std::size_t>(asz) + static_cast<std::size_t>(start)) * inner;
                          for (std::size_t i = 0; i < static_cast<std::size_t>(len) * inner; ++i) {
                              dst[i] += src[i];
                          }
                      }
                  });
}

// rows of an embedding table: E[v,d], ids in [0,v) -> [n,d]
template <class Real>
Var<Real> gather_rows(Var<Real> table, const std::vector<int>& ids) {
    Tape<Real>& t = *table.tape;
    const Tensor<Real>& vt = table.value();
    if (vt.rank() != 2) throw ContractViolation("gather_rows: table must be rank 2");
    const int v = vt.dim(0), d = vt.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw ContractViolation("gather_rows: id " + std::to_string(id) +
                                    " out of vocabulary of size " + std::to_string(v));
        }
    }
    Tensor<Real> out(Shape{static_cast<int>(ids.size()), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const Real* src = vt.data.data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, out.data.data() + i * static_cast<std::size_t>(d));
    }
    const int it = table.id;
    return t.push(std::move(out), t.requires_grad(it), "gather_rows",
                  [it, ids, d](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(it)) return;
                      auto& g = tp.grad_buffer(it);
                      for (std::size_t i = 0; i < ids.size(); ++i) {
                          const Real* src = n.grad.data.data() + i * static_cast<std::size_t>(d);
                          Real* dst = g.data.data() + static_cast<std::size_t>(ids[i]) * d;
                          for (int j = 0; j < d; ++j) dst[j] += src[j];
                      }
                  });
}

// Extract overlapping cubes from a video [C,T,H,W] into patch rows
// [L, C*ct*ch*cw]; L iterates (t,y,x) row-major. This is the im2col half of
// the 3-D convolution; conv3d = unfold3d followed by matmul.
template <class Real>
Var<Real> unfold3d(Var<Real> x, std::array<int, 3> cube, std::array<int, 3> stride) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    if (vx.rank() != 4) throw ContractViolation("unfold3d: input must be [C,T,H,W]");
    const int C = vx.dim(0), T = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
    const int ct = cube[0], ch = cube[1], cw = cube[2];
    const int st = stride[0], sh = stride[1], sw = stride[2];
    if (ct <= 0 || ch <= 0 || cw <= 0 || st <= 0 || sh <= 0 || sw <= 0) {
        throw ContractViolation("unfold3d: cube and stride must be positive");
    }
    if (T < ct || H < ch || W < cw) {
        throw ContractViolation("unfold3d: input smaller than cube");
    }
    const int nt = (T - ct) / st + 1;
    const int ny = (H - ch) / sh + 1;
    const int nx = (W - cw) / sw + 1;
    const int L = nt * ny * nx;
    const int row_len = C * ct * ch * cw;
    Tensor<Real> out(Shape{L, row_len});
    auto src_at = [&](int c, int tt, int yy, int xx) {
        return vx.data[((static_cast<std::size_t>(c) * T + tt) * H + yy) * W + xx];
    };
    std::size_t r = 0;
    for (int pt = 0; pt < nt; ++pt) {
        for (int py = 0; py < ny; ++py) {
            for (int px = 0; px < nx; ++px, ++r) {
                Real* row = out.data.data() + r * static_cast<std::size_t>(row_len);
                std::size_t j = 0;
                for (int c = 0; c < C; ++c) {
                    for (int dt = 0; dt < ct; ++dt) {
                        for (int dy = 0; dy < ch; ++dy) {
                            for (int dx = 0; dx < cw; ++dx) {
                                row[j++] = src_at(c, pt * st + dt, py * sh + dy, px * sw + dx);
                            }
                        }
                    }
                }
            }
        }
    }
    const int ix = x.id;
    return t.push(
        std::move(out), t.requires_grad(ix), "unfold3d", [=](Tape<Real>& tp, auto& n) {
            if (!tp.requires_grad(ix)) return;
            auto& g = tp.grad_buffer(ix);
            std::size_t r2 = 0;
            for (int pt = 0; pt < nt; ++pt) {
                for (int py = 0; py < ny; ++py) {
                    for (int px = 0; px < nx; ++px, ++r2) {
                        const Real* row = n.grad.data.data() + r2 * static_cast<std::size_t>(row_len);
                        std::size_t j = 0;
                        for (int c = 0; c < C; ++c) {
                            for (int dt = 0; dt < ct; ++dt) {
                                for (int dy = 0; dy < ch; ++dy) {
                                    for (int dx = 0; dx < cw; ++dx) {
                                        g.data[((static_cast<std::size_t>(c) * T + pt * st + dt) * H +
                                                py * sh + dy) * W +
                                               px * sw + dx] += row[j++];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

// Mean-pool a token matrix [L,d] laid out over a (T,H,W) grid with
// ceil-division windows; an optional class token in row 0 bypasses pooling.
template <class Real>
Var<Real> grid_pool(Var<Real> x, std::array<int, 3> grid, std::array<int, 3> stride,
                    bool has_class) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    if (vx.rank() != 2) throw ContractViolation("grid_pool: tokens must be rank 2");
    const int T = grid[0], H = grid[1], W = grid[2];
    const int st = stride[0], sh = stride[1], sw = stride[2];
    if (st <= 0 || sh <= 0 || sw <= 0) throw ContractViolation("grid_pool: stride must be positive");
    const int cls = has_class ? 1 : 0;
    if (vx.dim(0) != T * H * W + cls) {
        throw ContractViolation("grid_pool: token count does not match grid");
    }
    const int d = vx.dim(1);
    const int oT = detail::ceil_div(T, st), oH = detail::ceil_div(H, sh), oW = detail::ceil_div(W, sw);
    const int oL = oT * oH * oW;

    // cell -> token-row map; one flat list of (out_row, in_row) membership
    std::vector<std::vector<int>> members(static_cast<std::size_t>(oL));
    for (int tt = 0; tt < T; ++tt) {
        for (int yy = 0; yy < H; ++yy) {
            for (int xx = 0; xx < W; ++xx) {
                const int orow = ((tt / st) * oH + yy / sh) * oW + xx / sw;
                members[static_cast<std::size_t>(orow)].push_back(cls + ((tt * H) + yy) * W + xx);
            }
        }
    }

    Tensor<Real> out(Shape{oL + cls, d});
    if (has_class) std::copy(vx.data.begin(), vx.data.begin() + d, out.data.begin());
    for (int o = 0; o < oL; ++o) {
        Real* dst = out.data.data() + static_cast<std::size_t>(o + cls) * d;
        const auto& mem = members[static_cast<std::size_t>(o)];
        for (int src_row : mem) {
            const Real* src = vx.data.data() + static_cast<std::size_t>(src_row) * d;
            for (int j = 0; j < d; ++j) dst[j] += src[j];
        }
        const Real inv = Real(1) / static_cast<Real>(mem.size());
        for (int j = 0; j < d; ++j) dst[j] *= inv;
    }
    const int ix = x.id;
    return t.push(std::move(out), t.requires_grad(ix), "grid_pool",
                  [ix, members, d, cls](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& g = tp.grad_buffer(ix);
                      if (cls) {
                          for (int j = 0; j < d; ++j) g.data[static_cast<std::size_t>(j)] += n.grad.data[static_cast<std::size_t>(j)];
                      }
                      for (std::size_t o = 0; o < members.size(); ++o) {
                          const Real* src = n.grad.data.data() + (o + static_cast<std::size_t>(cls)) * d;
                          const Real inv = Real(1) / static_cast<Real>(members[o].size());
                          for (int in_row : members[o]) {
                              Real* dst = g.data.data() + static_cast<std::size_t>(in_row) * d;
                              for (int j = 0; j < d; ++j) dst[j] += src[j] * inv;
                          }
                      }
                  });
}

// Normalize the last axis to zero mean / unit variance (no affine part;
// scale and shift are separate mul_rowwise/add_rowwise ops).
template <class Real>
Var<Real> layernorm(Var<Real> x, Real eps = Real(1e-5)) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    if (vx.rank() < 1) throw ContractViolation("layernorm: input must have rank >= 1");
    const int d = vx.shape.back();
    const std::size_t rows = vx.size() / static_cast<std::size_t>(d);
    Tensor<Real> out(vx.shape);
    std::vector<Real> rstds(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* src = vx.data.data() + r * static_cast<std::size_t>(d);
        Real mean = 0;
        for (int j = 0; j < d; ++j) mean += src[j];
        mean /= static_cast<Real>(d);
        Real var = 0;
        for (int j = 0; j < d; ++j) {
            const Real diff = src[j] - mean;
            var += diff * diff;
        }
        var /= static_cast<Real>(d);
        const Real rstd = Real(1) / std::sqrt(var + eps);
        rstds[r] = rstd;
        Real* dst = out.data.data() + r * static_cast<std::size_t>(d);
        for (int j = 0; j < d; ++j) dst[j] = (src[j] - mean) * rstd;
    }
    const int ix = x.id;
    const int out_id = static_cast<int>(t.size());
    return t.push(std::move(out), t.requires_grad(ix), "layernorm",
                  [ix, out_id, d, rows, rstds](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      const auto& y = tp.value(out_id);
                      for (std::size_t r = 0; r < rows; ++r) {
                          const std::size_t off = r * static_cast<std::size_t>(d);
                          Real gmean = 0, gymean = 0;
                          for (int j = 0; j < d; ++j) {
                              gmean += n.grad.data[off + j];
                              gymean += n.grad.data[off + j] * y.data[off + j];
                          }
                          gmean /= static_cast<Real>(d);
                          gymean /= static_cast<Real>(d);
                          for (int j = 0; j < d; ++j) {
                              gx.data[off + j] += (n.grad.data[off + j] - gmean -
                                                   y.data[off + j] * gymean) * rstds[r];
                          }
                      }
                  });
}

// Softmax over the last axis, stabilized by row-max subtraction.
template <class Real>
Var<Real> softmax(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    if (vx.rank() < 1) throw ContractViolation("softmax: input must have rank >= 1");
    const int d = vx.shape.back();
    const std::size_t rows = vx.size() / static_cast<std::size_t>(d);
    Tensor<Real> out(vx.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* src = vx.data.data() + r * static_cast<std::size_t>(d);
        Real* dst = out.data.data() + r * static_cast<std::size_t>(d);
        Real mx = src[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, src[j]);
        Real sum = 0;
        for (int j = 0; j < d; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        const Real inv = Real(1) / sum;
        for (int j = 0; j < d; ++j) dst[j] *= inv;
    }
    const int ix = x.id;
    const int out_id = static_cast<int>(t.size());
    return t.push(std::move(out), t.requires_grad(ix), "softmax",
                  [ix, out_id, d, rows](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      const auto& y = tp.value(out_id);
                      for (std::size_t r = 0; r < rows; ++r) {
                          const std::size_t off = r * static_cast<std::size_t>(d);
                          Real dot = 0;
                          for (int j = 0; j < d; ++j) dot += n.grad.data[off + j] * y.data[off + j];
                          for (int j = 0; j < d; ++j) {
                              gx.data[off + j] += y.data[off + j] * (n.grad.data[off + j] - dot);
                          }
                      }
                  });
}

// log(sum(exp(row))) per row of x[r,c], stabilized by row-max subtraction.
template <class Real>
Var<Real> logsumexp_rows(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    if (vx.rank() != 2) throw ContractViolation("logsumexp_rows: input must be rank 2");
    const int rows = vx.dim(0), cols = vx.dim(1);
    Tensor<Real> out(Shape{rows});
    for (int r = 0; r < rows; ++r) {
        const Real* src = vx.data.data() + static_cast<std::size_t>(r) * cols;
        Real mx = src[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, src[j]);
        Real sum = 0;
        for (int j = 0; j < cols; ++j) sum += std::exp(src[j] - mx);
        out.data[static_cast<std::size_t>(r)] = mx + std::log(sum);
    }
    const int ix = x.id;
    const int out_id = static_cast<int>(t.size());
    return t.push(std::move(out), t.requires_grad(ix), "logsumexp",
                  [ix, out_id, rows, cols](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      const auto& vx2 = tp.value(ix);
                      const auto& lse = tp.value(out_id);
                      for (int r = 0; r < rows; ++r) {
                          const std::size_t off = static_cast<std::size_t>(r) * cols;
                          const Real g = n.grad.data[static_cast<std::size_t>(r)];
                          for (int j = 0; j < cols; ++j) {
                              gx.data[off + j] +=
                                  g * std::exp(vx2.data[off + j] - lse.data[static_cast<std::size_t>(r)]);
                          }
                      }
                  });
}

template <class Real>
Var<Real> diagonal(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    if (vx.rank() != 2 || vx.dim(0) != vx.dim(1)) {
        throw ContractViolation("diagonal: input must be square");
    }
    const int n = vx.dim(0);
    Tensor<Real> out(Shape{n});
    for (int i = 0; i < n; ++i) out.data[static_cast<std::size_t>(i)] = vx.data[static_cast<std::size_t>(i) * n + i];
    const int ix = x.id;
    return t.push(std::move(out), t.requires_grad(ix), "diagonal",
                  [ix, n](Tape<Real>& tp, auto& nd) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      for (int i = 0; i < n; ++i) {
                          gx.data[static_cast<std::size_t>(i) * n + i] += nd.grad.data[static_cast<std::size_t>(i)];
                      }
                  });
}

namespace detail {

template <class Real, class Fwd, class Bwd>
Var<Real> unary_elementwise(Var<Real> x, const char* name, Fwd fwd, Bwd dfdx) {
    Tape<Real>& t = *x.tape;
    Tensor<Real> out = x.value();
    for (auto& v : out.data) v = fwd(v);
    const int ix = x.id;
    return t.push(std::move(out), t.requires_grad(ix), name, [ix, dfdx](Tape<Real>& tp, auto& n) {
        if (!tp.requires_grad(ix)) return;
        auto& gx = tp.grad_buffer(ix);
        const auto& vx = tp.value(ix);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            gx.data[i] += n.grad.data[i] * dfdx(vx.data[i]);
        }
    });
}

}  // namespace detail

template <class Real>
Var<Real> tanh_(Var<Real> x) {
    return detail::unary_elementwise(
        x, "tanh", [](Real v) { return std::tanh(v); },
        [](Real v) {
            const Real th = std::tanh(v);
            return Real(1) - th * th;
        });
}

template <class Real>
Var<Real> sigmoid(Var<Real> x) {
    auto sig = [](Real v) {
        return v >= Real(0) ? Real(1) / (Real(1) + std::exp(-v))
                            : std::exp(v) / (Real(1) + std::exp(v));
    };
    return detail::unary_elementwise(x, "sigmoid", sig, [sig](Real v) {
        const Real s = sig(v);
        return s * (Real(1) - s);
    });
}

// tanh-approximation GELU, 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))
template <class Real>
Var<Real> gelu(Var<Real> x) {
    constexpr double kS = 0.797884560802865355;  // sqrt(2/pi)
    constexpr double kC = 0.044715;
    return detail::unary_elementwise(
        x, "gelu",
        [](Real v) {
            const double xv = static_cast<double>(v);
            return static_cast<Real>(0.5 * xv * (1.0 + std::tanh(kS * (xv + kC * xv * xv * xv))));
        },
        [](Real v) {
            const double xv = static_cast<double>(v);
            const double u = kS * (xv + kC * xv * xv * xv);
            const double th = std::tanh(u);
            const double sech2 = 1.0 - th * th;
            return static_cast<Real>(0.5 * (1.0 + th) +
                                     0.5 * xv * sech2 * kS * (1.0 + 3.0 * kC * xv * xv));
        });
}

// Subgradient at 0 fixed to +1, same convention as flood at its level.
template <class Real>
Var<Real> abs_(Var<Real> x) {
    return detail::unary_elementwise(
        x, "abs", [](Real v) { return std::abs(v); },
        [](Real v) { return v >= Real(0) ? Real(1) : Real(-1); });
}

template <class Real>
Var<Real> mean_all(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    Real sum = 0;
    for (Real v : vx.data) sum += v;
    const Real inv = Real(1) / static_cast<Real>(vx.size());
    const int ix = x.id;
    return t.push(Tensor<Real>::scalar_of(sum * inv), t.requires_grad(ix), "mean",
                  [ix, inv](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      const Real g = n.grad.data[0] * inv;
                      for (auto& v : gx.data) v += g;
                  });
}

template <class Real>
Var<Real> sum_all(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    Real sum = 0;
    for (Real v : vx.data) sum += v;
    const int ix = x.id;
    return t.push(Tensor<Real>::scalar_of(sum), t.requires_grad(ix), "sum",
                  [ix](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      const Real g = n.grad.data[0];
                      for (auto& v : gx.data) v += g;
                  });
}

// L2-normalize the last axis to unit norm. A zero (or denormal) row is a
// reportable error rather than a division.
template <class Real>
Var<Real> l2_normalize(Var<Real> x) {
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    const int d = vx.shape.back();
    const std::size_t rows = vx.size() / static_cast<std::size_t>(d);
    Tensor<Real> out(vx.shape);
    std::vector<Real> inv_norms(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const Real* src = vx.data.data() + r * static_cast<std::size_t>(d);
        Real nsq = 0;
        for (int j = 0; j < d; ++j) nsq += src[j] * src[j];
        const Real norm = std::sqrt(nsq);
        if (!(norm > Real(1e-12))) {
            throw NumericFailure("l2_normalize: zero-norm vector cannot be normalized");
        }
        inv_norms[r] = Real(1) / norm;
        Real* dst = out.data.data() + r * static_cast<std::size_t>(d);
        for (int j = 0; j < d; ++j) dst[j] = src[j] * inv_norms[r];
    }
    const int ix = x.id;
    const int out_id = static_cast<int>(t.size());
    return t.push(std::move(out), t.requires_grad(ix), "l2_normalize",
                  [ix, out_id, d, rows, inv_norms](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      const auto& y = tp.value(out_id);
                      for (std::size_t r = 0; r < rows; ++r) {
                          const std::size_t off = r * static_cast<std::size_t>(d);
                          Real dot = 0;
                          for (int j = 0; j < d; ++j) dot += n.grad.data[off + j] * y.data[off + j];
                          for (int j = 0; j < d; ++j) {
                              gx.data[off + j] +=
                                  (n.grad.data[off + j] - y.data[off + j] * dot) * inv_norms[r];
                          }
                      }
                  });
}

// Elementwise Huber on residuals: 0.5*e^2 for |e| <= delta, else delta*(|e| - delta/2).
template <class Real>
Var<Real> huber_elem(Var<Real> e, Real delta) {
    if (!(delta > Real(0))) throw ContractViolation("huber: delta must be positive");
    return detail::unary_elementwise(
        e, "huber",
        [delta](Real v) {
            const Real a = std::abs(v);
            return a <= delta ? Real(0.5) * v * v : delta * (a - Real(0.5) * delta);
        },
        [delta](Real v) {
            return std::abs(v) <= delta ? v : (v > Real(0) ? delta : -delta);
        });
}

// Per-element binary cross entropy on logits with a positive-class weight,
// computed in the numerically stable softplus form.
template <class Real>
Var<Real> weighted_bce_logits(Var<Real> z, const std::vector<Real>& labels, Real pos_weight) {
    Tape<Real>& t = *z.tape;
    const Tensor<Real>& vz = z.value();
    if (vz.size() != labels.size()) {
        throw ContractViolation("weighted_bce_logits: logits/labels length mismatch");
    }
    if (!(pos_weight > Real(0))) {
        throw ContractViolation("weighted_bce_logits: pos_weight must be positive");
    }
    auto softplus = [](Real v) {
        return std::max(v, Real(0)) + std::log1p(std::exp(-std::abs(v)));
    };
    Tensor<Real> out(vz.shape);
    for (std::size_t i = 0; i < vz.size(); ++i) {
        const Real y = labels[i];
        out.data[i] = pos_weight * y * softplus(-vz.data[i]) + (Real(1) - y) * softplus(vz.data[i]);
    }
    const int iz = z.id;
    return t.push(std::move(out), t.requires_grad(iz), "weighted_bce",
                  [iz, labels, pos_weight](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(iz)) return;
                      auto& gz = tp.grad_buffer(iz);
                      const auto& vz2 = tp.value(iz);
                      auto sig = [](Real v) {
                          return v >= Real(0) ? Real(1) / (Real(1) + std::exp(-v))
                                              : std::exp(v) / (Real(1) + std::exp(v));
                      };
                      for (std::size_t i = 0; i < gz.size(); ++i) {
                          const Real y = labels[i];
                          const Real d = -pos_weight * y * sig(-vz2.data[i]) +
                                         (Real(1) - y) * sig(vz2.data[i]);
                          gz.data[i] += n.grad.data[i] * d;
                      }
                  });
}

// Flooded loss |x - b| + b with the subgradient at x == b fixed to +1.
template <class Real>
Var<Real> flood(Var<Real> x, Real b) {
    if (b < Real(0)) throw ContractViolation("flood: flood level must be non-negative");
    Tape<Real>& t = *x.tape;
    const Tensor<Real>& vx = x.value();
    if (!vx.is_scalar()) throw ContractViolation("flood: loss must be scalar");
    Tensor<Real> out = Tensor<Real>::scalar_of(std::abs(vx.data[0] - b) + b);
    const int ix = x.id;
    return t.push(std::move(out), t.requires_grad(ix), "flood",
                  [ix, b](Tape<Real>& tp, auto& n) {
                      if (!tp.requires_grad(ix)) return;
                      auto& gx = tp.grad_buffer(ix);
                      const Real sign = tp.value(ix).data[0] >= b ? Real(1) : Real(-1);
                      gx.data[0] += n.grad.data[0] * sign;
                  });
}

// x @ w + bias convenience: [n,k] x [k,m] + [m]
template <class Real>
Var<Real> linear(Var<Real> x, Var<Real> w, Var<Real> bias) {
    return add_rowwise(matmul(x, w), bias);
}

}  // namespace cinecontrast::ag
