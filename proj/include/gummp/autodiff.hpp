// Reverse-mode automatic differentiation on an eagerly evaluated tape.
//
// Values live in a flat arena owned by the tape; every recorded operation
// appears after the operations producing its inputs, so backward() is a
// single reverse sweep that visits each node exactly once. Nodes are rank-1
// (vectors, scalars as length-1 vectors) or rank-2 (row-major matrices).
// A tape is confined to one thread; independent tapes may run concurrently.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gummp/errors.hpp"
#include "gummp/ndarray.hpp"

namespace gummp {

// Masked entries are excluded from reductions and get exactly zero output /
// gradient. An empty mask means "all live".
using Mask = std::vector<uint8_t>;

constexpr double kCosineNormFloor = 1e-12;

enum class Op : uint8_t {
    Leaf,
    Add, Sub, Mul, Scale, AddConst, SMul, VAddS,
    Tanh, Sigmoid, LogClamped,
    Dot, MatVec, VecMat, MatMul, Transpose, Affine, Affine2,
    Concat, Slice, HCat, Row, StackRows, GatherRows, VStackPad,
    MaskedSoftmax, MaxOverTime, Cosine, MpMatch, RowBSub,
    ScatterSum, PadTo, Pick, Sum,
};

struct Var {
    uint32_t id = 0;
};

class Tape {
public:
    struct Node {
        Op op{};
        uint8_t rank = 1;
        uint8_t requires_grad = 0;  // leaves only
        uint32_t d0 = 0, d1 = 0;    // rank 1: d0 = length; rank 2: d0 x d1
        uint32_t off = 0;           // offset into the value/grad arena
        uint32_t arg_off = 0, arg_n = 0;  // input node ids in args_
        uint32_t aux_off = 0, aux_n = 0;  // op-specific ints in aux_
        double f0 = 0.0;                  // op-specific scalar
    };

    struct Mark {
        size_t nodes, vals, args, aux;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

#ifdef NDEBUG
    bool check_finite = false;
#else
    bool check_finite = true;
#endif

    void clear() {
        nodes_.clear();
        val_.clear();
        grad_.clear();
        args_.clear();
        aux_.clear();
        grad_leaves_.clear();
    }

    Mark mark() const { return {nodes_.size(), val_.size(), args_.size(), aux_.size()}; }

    // Truncate back to a mark. Values written before the mark stay valid.
    void rollback(const Mark& m) {
        nodes_.resize(m.nodes);
        val_.resize(m.vals);
        args_.resize(m.args);
        aux_.resize(m.aux);
        while (!grad_leaves_.empty() && grad_leaves_.back().id >= m.nodes) grad_leaves_.pop_back();
    }

    // Leaves created with requires_grad, in creation order.
    const std::vector<Var>& grad_leaves() const { return grad_leaves_; }

    size_t size() const { return nodes_.size(); }

    // ---- node access -------------------------------------------------

    const Node& node(Var v) const { return nodes_[v.id]; }
    size_t numel(Var v) const { return numel_(nodes_[v.id]); }
    size_t rows(Var v) const { return nodes_[v.id].d0; }
    size_t cols(Var v) const { const Node& n = nodes_[v.id]; return n.rank == 2 ? n.d1 : 1; }
    bool is_matrix(Var v) const { return nodes_[v.id].rank == 2; }

    const double* val(Var v) const { return val_.data() + nodes_[v.id].off; }
    double* val(Var v) { return val_.data() + nodes_[v.id].off; }
    double scalar(Var v) const {
        if (numel(v) != 1) throw ContractError("scalar() on node with numel " + std::to_string(numel(v)));
        return val(v)[0];
    }
    const double* grad(Var v) const { return grad_.data() + nodes_[v.id].off; }

    NdArray value_of(Var v) const {
        const Node& n = nodes_[v.id];
        NdArray out(shape_of_(n));
        std::copy(val(v), val(v) + numel_(n), out.data.begin());
        return out;
    }

    NdArray grad_of(Var v) const {
        const Node& n = nodes_[v.id];
        if (grad_.size() != val_.size())
            throw ContractError("grad_of() before backward()");
        NdArray out(shape_of_(n));
        std::copy(grad(v), grad(v) + numel_(n), out.data.begin());
        return out;
    }

    // ---- leaves -------------------------------------------------------

    Var leaf(const NdArray& a, bool requires_grad = false) {
        if (a.rank() == 1) return make_leaf_(a.data.data(), a.shape[0], 0, 1, requires_grad);
        if (a.rank() == 2) return make_leaf_(a.data.data(), a.shape[0], a.shape[1], 2, requires_grad);
        throw ShapeError("tape leaves must be rank 1 or 2, got " + shape_str(a.shape));
    }

    Var leaf_vec(const std::vector<double>& d, bool requires_grad = false) {
        return make_leaf_(d.data(), d.size(), 0, 1, requires_grad);
    }

    Var leaf_scalar(double x, bool requires_grad = false) {
        return make_leaf_(&x, 1, 0, 1, requires_grad);
    }

    Var zeros(size_t n) {
        Var v = alloc_(Op::Leaf, 1, static_cast<uint32_t>(n), 0);
        return v;  // arena is zero-initialized
    }

    Var zeros2(size_t r, size_t c) {
        return alloc_(Op::Leaf, 2, static_cast<uint32_t>(r), static_cast<uint32_t>(c));
    }

    // ---- elementwise --------------------------------------------------

    Var add(Var a, Var b) { return ew_(Op::Add, a, b); }
    Var sub(Var a, Var b) { return ew_(Op::Sub, a, b); }
    Var mul(Var a, Var b) { return ew_(Op::Mul, a, b); }

    Var scale(Var a, double c) {
        Var o = like_(Op::Scale, a, {a});
        node_mut_(o).f0 = c;
        const double* x = val(a);
        double* y = val(o);
        for (size_t i = 0, n = numel(a); i < n; ++i) y[i] = c * x[i];
        return finish_(o);
    }

    Var add_const(Var a, double c) {
        Var o = like_(Op::AddConst, a, {a});
        node_mut_(o).f0 = c;
        const double* x = val(a);
        double* y = val(o);
        for (size_t i = 0, n = numel(a); i < n; ++i) y[i] = x[i] + c;
        return finish_(o);
    }

    // scalar node * tensor node
    Var smul(Var s, Var a) {
        if (numel(s) != 1) throw ShapeError("smul: scalar operand has numel " + std::to_string(numel(s)));
        Var o = like_(Op::SMul, a, {s, a});
        double sv = val(s)[0];
        const double* x = val(a);
        double* y = val(o);
        for (size_t i = 0, n = numel(a); i < n; ++i) y[i] = sv * x[i];
        return finish_(o);
    }

    // vector + broadcast scalar node
    Var vadds(Var v, Var s) {
        if (numel(s) != 1) throw ShapeError("vadds: scalar operand has numel " + std::to_string(numel(s)));
        Var o = like_(Op::VAddS, v, {v, s});
        double sv = val(s)[0];
        const double* x = val(v);
        double* y = val(o);
        for (size_t i = 0, n = numel(v); i < n; ++i) y[i] = x[i] + sv;
        return finish_(o);
    }

    Var tanh_(Var a) {
        Var o = like_(Op::Tanh, a, {a});
        const double* x = val(a);
        double* y = val(o);
        for (size_t i = 0, n = numel(a); i < n; ++i) y[i] = std::tanh(x[i]);
        return finish_(o);
    }

    Var sigmoid(Var a) {
        Var o = like_(Op::Sigmoid, a, {a});
        const double* x = val(a);
        double* y = val(o);
        for (size_t i = 0, n = numel(a); i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
        return finish_(o);
    }

    // ln(max(x, floor)); gradient is zero where the clamp binds.
    Var log_clamped(Var a, double floor) {
        Var o = like_(Op::LogClamped, a, {a});
        node_mut_(o).f0 = floor;
        const double* x = val(a);
        double* y = val(o);
        for (size_t i = 0, n = numel(a); i < n; ++i) y[i] = std::log(std::max(x[i], floor));
        return finish_(o);
    }

    // ---- linear algebra ------------------------------------------------

    Var dot(Var a, Var b) {
        require_same_len_(a, b, "dot");
        Var o = alloc_(Op::Dot, 1, 1, 0, {a, b});
        const double* x = val(a);
        const double* y = val(b);
        double s = 0.0;
        for (size_t i = 0, n = numel(a); i < n; ++i) s += x[i] * y[i];
        val(o)[0] = s;
        return finish_(o);
    }

    // M [r x c] * x [c] -> [r]
    Var matvec(Var m, Var x) {
        check_mat_(m, "matvec");
        size_t r = rows(m), c = cols(m);
        if (numel(x) != c)
            throw ShapeError("matvec: [" + std::to_string(r) + "x" + std::to_string(c) +
                             "] vs vector [" + std::to_string(numel(x)) + "]");
        Var o = alloc_(Op::MatVec, 1, static_cast<uint32_t>(r), 0, {m, x});
        const double* M = val(m);
        const double* X = val(x);
        double* y = val(o);
        for (size_t i = 0; i < r; ++i) {
            double s = 0.0;
            const double* row = M + i * c;
            for (size_t j = 0; j < c; ++j) s += row[j] * X[j];
            y[i] = s;
        }
        return finish_(o);
    }

    // x [r] * M [r x c] -> [c]
    Var vecmat(Var x, Var m) {
        check_mat_(m, "vecmat");
        size_t r = rows(m), c = cols(m);
        if (numel(x) != r)
            throw ShapeError("vecmat: vector [" + std::to_string(numel(x)) + "] vs [" +
                             std::to_string(r) + "x" + std::to_string(c) + "]");
        Var o = alloc_(Op::VecMat, 1, static_cast<uint32_t>(c), 0, {x, m});
        const double* M = val(m);
        const double* X = val(x);
        double* y = val(o);
        for (size_t j = 0; j < c; ++j) y[j] = 0.0;
        for (size_t i = 0; i < r; ++i) {
            double xi = X[i];
            const double* row = M + i * c;
            for (size_t j = 0; j < c; ++j) y[j] += xi * row[j];
        }
        return finish_(o);
    }

    // A [m x n] * B [n x p] -> [m x p]
    Var matmul(Var a, Var b) {
        check_mat_(a, "matmul");
        check_mat_(b, "matmul");
        size_t m = rows(a), n = cols(a), n2 = rows(b), p = cols(b);
        if (n != n2)
            throw ShapeError("matmul: inner dimensions disagree, [" + std::to_string(m) + "x" +
                             std::to_string(n) + "] vs [" + std::to_string(n2) + "x" +
                             std::to_string(p) + "]");
        Var o = alloc_(Op::MatMul, 2, static_cast<uint32_t>(m), static_cast<uint32_t>(p), {a, b});
        const double* A = val(a);
        const double* B = val(b);
        double* C = val(o);
        for (size_t i = 0; i < m; ++i) {
            for (size_t j = 0; j < p; ++j) C[i * p + j] = 0.0;
            for (size_t k = 0; k < n; ++k) {
                double aik = A[i * n + k];
                const double* brow = B + k * p;
                double* crow = C + i * p;
                for (size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
            }
        }
        return finish_(o);
    }

    Var transpose(Var a) {
        check_mat_(a, "transpose");
        size_t r = rows(a), c = cols(a);
        Var o = alloc_(Op::Transpose, 2, static_cast<uint32_t>(c), static_cast<uint32_t>(r), {a});
        const double* A = val(a);
        double* T = val(o);
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) T[j * r + i] = A[i * c + j];
        return finish_(o);
    }

    // W [r x c] * x [c] + b [r]
    Var affine(Var w, Var x, Var b) {
        check_mat_(w, "affine");
        size_t r = rows(w), c = cols(w);
        if (numel(x) != c || numel(b) != r)
            throw ShapeError("affine: [" + std::to_string(r) + "x" + std::to_string(c) +
                             "] vs x[" + std::to_string(numel(x)) + "], b[" +
                             std::to_string(numel(b)) + "]");
        Var o = alloc_(Op::Affine, 1, static_cast<uint32_t>(r), 0, {w, x, b});
        const double* W = val(w);
        const double* X = val(x);
        const double* B = val(b);
        double* y = val(o);
        for (size_t i = 0; i < r; ++i) {
            double s = B[i];
            const double* row = W + i * c;
            for (size_t j = 0; j < c; ++j) s += row[j] * X[j];
            y[i] = s;
        }
        return finish_(o);
    }

    // W [r x c] * x [c] + U [r x d] * h [d] + b [r]; one node per LSTM gate.
    Var affine2(Var w, Var x, Var u, Var h, Var b) {
        check_mat_(w, "affine2");
        check_mat_(u, "affine2");
        size_t r = rows(w), c = cols(w), d = cols(u);
        if (rows(u) != r || numel(x) != c || numel(h) != d || numel(b) != r)
            throw ShapeError("affine2: inconsistent shapes W[" + std::to_string(r) + "x" +
                             std::to_string(c) + "], U[" + std::to_string(rows(u)) + "x" +
                             std::to_string(d) + "], x[" + std::to_string(numel(x)) + "], h[" +
                             std::to_string(numel(h)) + "], b[" + std::to_string(numel(b)) + "]");
        Var o = alloc_(Op::Affine2, 1, static_cast<uint32_t>(r), 0, {w, x, u, h, b});
        const double* W = val(w);
        const double* X = val(x);
        const double* U = val(u);
        const double* H = val(h);
        const double* B = val(b);
        double* y = val(o);
        for (size_t i = 0; i < r; ++i) {
            double s = B[i];
            const double* wrow = W + i * c;
            for (size_t j = 0; j < c; ++j) s += wrow[j] * X[j];
            const double* urow = U + i * d;
            for (size_t j = 0; j < d; ++j) s += urow[j] * H[j];
            y[i] = s;
        }
        return finish_(o);
    }

    // ---- structure -----------------------------------------------------

    Var concat(const std::vector<Var>& parts) {
        if (parts.empty()) throw DegenerateInputError("concat of zero vectors");
        size_t total = 0;
        for (Var p : parts) total += numel(p);
        Var o = alloc_(Op::Concat, 1, static_cast<uint32_t>(total), 0, parts);
        double* y = val(o);
        for (Var p : parts) {
            const double* x = val(p);
            y = std::copy(x, x + numel(p), y);
        }
        return finish_(o);
    }

    Var slice(Var a, size_t lo, size_t len) {
        if (lo + len > numel(a))
            throw ShapeError("slice [" + std::to_string(lo) + ", " + std::to_string(lo + len) +
                             ") out of range for length " + std::to_string(numel(a)));
        Var o = alloc_(Op::Slice, 1, static_cast<uint32_t>(len), 0, {a});
        push_aux_(o, {static_cast<uint32_t>(lo)});
        std::copy(val(a) + lo, val(a) + lo + len, val(o));
        return finish_(o);
    }

    // [r x c1] ++ [r x c2] -> [r x (c1+c2)]
    Var hcat(Var a, Var b) {
        check_mat_(a, "hcat");
        check_mat_(b, "hcat");
        if (rows(a) != rows(b))
            throw ShapeError("hcat: row counts disagree, " + std::to_string(rows(a)) + " vs " +
                             std::to_string(rows(b)));
        size_t r = rows(a), c1 = cols(a), c2 = cols(b);
        Var o = alloc_(Op::HCat, 2, static_cast<uint32_t>(r), static_cast<uint32_t>(c1 + c2), {a, b});
        const double* A = val(a);
        const double* B = val(b);
        double* y = val(o);
        for (size_t i = 0; i < r; ++i) {
            std::copy(A + i * c1, A + (i + 1) * c1, y + i * (c1 + c2));
            std::copy(B + i * c2, B + (i + 1) * c2, y + i * (c1 + c2) + c1);
        }
        return finish_(o);
    }

    Var row(Var m, size_t i) {
        check_mat_(m, "row");
        if (i >= rows(m)) throw ShapeError("row " + std::to_string(i) + " out of range");
        size_t c = cols(m);
        Var o = alloc_(Op::Row, 1, static_cast<uint32_t>(c), 0, {m});
        push_aux_(o, {static_cast<uint32_t>(i)});
        std::copy(val(m) + i * c, val(m) + (i + 1) * c, val(o));
        return finish_(o);
    }

    Var stack_rows(const std::vector<Var>& rows_in) {
        if (rows_in.empty()) throw DegenerateInputError("stack_rows of zero rows");
        size_t c = numel(rows_in[0]);
        for (Var r : rows_in)
            if (numel(r) != c)
                throw ShapeError("stack_rows: row lengths disagree, " + std::to_string(c) + " vs " +
                                 std::to_string(numel(r)));
        Var o = alloc_(Op::StackRows, 2, static_cast<uint32_t>(rows_in.size()),
                       static_cast<uint32_t>(c), rows_in);
        double* y = val(o);
        for (Var r : rows_in) y = std::copy(val(r), val(r) + c, y);
        return finish_(o);
    }

    // Embedding lookup: rows of M at ids, duplicates allowed.
    Var gather_rows(Var m, const std::vector<int>& ids) {
        check_mat_(m, "gather_rows");
        if (ids.empty()) throw DegenerateInputError("gather_rows with no ids");
        size_t c = cols(m);
        for (int id : ids)
            if (id < 0 || static_cast<size_t>(id) >= rows(m))
                throw ShapeError("gather_rows: id " + std::to_string(id) + " out of range " +
                                 std::to_string(rows(m)));
        Var o = alloc_(Op::GatherRows, 2, static_cast<uint32_t>(ids.size()),
                       static_cast<uint32_t>(c), {m});
        std::vector<uint32_t> aux(ids.begin(), ids.end());
        push_aux_(o, aux);
        double* y = val(o);
        for (int id : ids) y = std::copy(val(m) + id * c, val(m) + (id + 1) * c, y);
        return finish_(o);
    }

    // Place each matrix's rows at a fixed row offset inside a zero block of
    // total_rows rows. Blocks must not overlap.
    Var vstack_pad(const std::vector<Var>& mats, const std::vector<size_t>& offsets,
                   size_t total_rows, size_t width) {
        if (mats.size() != offsets.size())
            throw ShapeError("vstack_pad: " + std::to_string(mats.size()) + " blocks vs " +
                             std::to_string(offsets.size()) + " offsets");
        for (size_t i = 0; i < mats.size(); ++i) {
            check_mat_(mats[i], "vstack_pad");
            if (cols(mats[i]) != width)
                throw ShapeError("vstack_pad: block width " + std::to_string(cols(mats[i])) +
                                 " vs " + std::to_string(width));
            if (offsets[i] + rows(mats[i]) > total_rows)
                throw ShapeError("vstack_pad: block at row " + std::to_string(offsets[i]) +
                                 " overflows " + std::to_string(total_rows) + " rows");
        }
        Var o = alloc_(Op::VStackPad, 2, static_cast<uint32_t>(total_rows),
                       static_cast<uint32_t>(width), mats);
        std::vector<uint32_t> aux(offsets.begin(), offsets.end());
        push_aux_(o, aux);
        double* y = val(o);
        for (size_t i = 0; i < mats.size(); ++i) {
            const double* x = val(mats[i]);
            std::copy(x, x + numel(mats[i]), y + offsets[i] * width);
        }
        return finish_(o);
    }

    // ---- reductions & probability -----------------------------------

    Var sum(Var a) {
        Var o = alloc_(Op::Sum, 1, 1, 0, {a});
        const double* x = val(a);
        double s = 0.0;
        for (size_t i = 0, n = numel(a); i < n; ++i) s += x[i];
        val(o)[0] = s;
        return finish_(o);
    }

    Var pick(Var a, size_t i) {
        if (i >= numel(a)) throw ShapeError("pick index " + std::to_string(i) + " out of range");
        Var o = alloc_(Op::Pick, 1, 1, 0, {a});
        push_aux_(o, {static_cast<uint32_t>(i)});
        val(o)[0] = val(a)[i];
        return finish_(o);
    }

    // Numerically stable softmax over live entries; masked entries exactly 0.
    Var masked_softmax(Var x, const Mask& mask) {
        size_t n = numel(x);
        check_mask_(mask, n, "masked_softmax");
        Var o = alloc_(Op::MaskedSoftmax, 1, static_cast<uint32_t>(n), 0, {x});
        push_mask_aux_(o, mask, n);
        const double* xv = val(x);
        double* y = val(o);
        double mx = -std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < n; ++i)
            if (live_(mask, i)) mx = std::max(mx, xv[i]);
        double z = 0.0;
        for (size_t i = 0; i < n; ++i) {
            y[i] = live_(mask, i) ? std::exp(xv[i] - mx) : 0.0;
            z += y[i];
        }
        for (size_t i = 0; i < n; ++i) y[i] /= z;
        return finish_(o);
    }

    Var softmax(Var x) { return masked_softmax(x, {}); }

    // Elementwise max over live rows of M [T x d]; ties go to the first
    // maximal row, and the gradient follows the same subgradient choice.
    Var max_over_time(Var m, const Mask& mask) {
        check_mat_(m, "max_over_time");
        size_t T = rows(m), d = cols(m);
        check_mask_(mask, T, "max_over_time");
        Var o = alloc_(Op::MaxOverTime, 1, static_cast<uint32_t>(d), 0, {m});
        const double* M = val(m);
        double* y = val(o);
        std::vector<uint32_t> arg(d, 0);
        bool first = true;
        for (size_t t = 0; t < T; ++t) {
            if (!live_(mask, t)) continue;
            const double* mrow = M + t * d;
            if (first) {
                for (size_t j = 0; j < d; ++j) {
                    y[j] = mrow[j];
                    arg[j] = static_cast<uint32_t>(t);
                }
                first = false;
            } else {
                for (size_t j = 0; j < d; ++j) {
                    if (mrow[j] > y[j]) {
                        y[j] = mrow[j];
                        arg[j] = static_cast<uint32_t>(t);
                    }
                }
            }
        }
        push_aux_(o, arg);
        return finish_(o);
    }

    // cos(a, b); returns 0 with zero gradient when either norm < 1e-12.
    Var cosine(Var a, Var b) {
        require_same_len_(a, b, "cosine");
        Var o = alloc_(Op::Cosine, 1, 1, 0, {a, b});
        val(o)[0] = cosine_fwd_(val(a), val(b), numel(a));
        return finish_(o);
    }

    // Multi-perspective cosine match: out[i,z] = cos(H_i o w_z, o o w_z),
    // H [N x d], summary o [d], perspectives W [Z x d]. Fused for tape
    // economy; each entry equals the cosine() primitive bit-for-bit.
    Var mp_match(Var h, Var o_sum, Var w) {
        check_mat_(h, "mp_match");
        check_mat_(w, "mp_match");
        size_t N = rows(h), d = cols(h), Z = rows(w);
        if (numel(o_sum) != d || cols(w) != d)
            throw ShapeError("mp_match: H[" + std::to_string(N) + "x" + std::to_string(d) +
                             "], o[" + std::to_string(numel(o_sum)) + "], W[" + std::to_string(Z) +
                             "x" + std::to_string(cols(w)) + "]");
        Var o = alloc_(Op::MpMatch, 2, static_cast<uint32_t>(N), static_cast<uint32_t>(Z),
                       {h, o_sum, w});
        const double* H = val(h);
        const double* O = val(o_sum);
        const double* W = val(w);
        double* y = val(o);
        std::vector<double> u(d), v(d);
        for (size_t z = 0; z < Z; ++z) {
            const double* wz = W + z * d;
            for (size_t j = 0; j < d; ++j) v[j] = O[j] * wz[j];
            for (size_t i = 0; i < N; ++i) {
                const double* hi = H + i * d;
                for (size_t j = 0; j < d; ++j) u[j] = hi[j] * wz[j];
                y[i * Z + z] = cosine_fwd_(u.data(), v.data(), d);
            }
        }
        return finish_(o);
    }

    // out[j,:] = a - B[j,:]
    Var row_bsub(Var a, Var b) {
        check_mat_(b, "row_bsub");
        size_t J = rows(b), Z = cols(b);
        if (numel(a) != Z)
            throw ShapeError("row_bsub: vector [" + std::to_string(numel(a)) + "] vs [" +
                             std::to_string(J) + "x" + std::to_string(Z) + "]");
        Var o = alloc_(Op::RowBSub, 2, static_cast<uint32_t>(J), static_cast<uint32_t>(Z), {a, b});
        const double* A = val(a);
        const double* B = val(b);
        double* y = val(o);
        for (size_t j = 0; j < J; ++j)
            for (size_t z = 0; z < Z; ++z) y[j * Z + z] = A[z] - B[j * Z + z];
        return finish_(o);
    }

    // out[ids[i]] += x[i]; codomain size E. Mass-preserving.
    Var scatter_sum(Var x, const std::vector<int>& ids, size_t E) {
        if (ids.size() != numel(x))
            throw ShapeError("scatter_sum: " + std::to_string(ids.size()) + " ids vs " +
                             std::to_string(numel(x)) + " values");
        for (int id : ids)
            if (id < 0 || static_cast<size_t>(id) >= E)
                throw ShapeError("scatter_sum: id " + std::to_string(id) + " out of range " +
                                 std::to_string(E));
        Var o = alloc_(Op::ScatterSum, 1, static_cast<uint32_t>(E), 0, {x});
        std::vector<uint32_t> aux(ids.begin(), ids.end());
        push_aux_(o, aux);
        const double* xv = val(x);
        double* y = val(o);
        for (size_t i = 0; i < ids.size(); ++i) y[ids[i]] += xv[i];
        return finish_(o);
    }

    // Zero-extend a vector to length E.
    Var pad_to(Var x, size_t E) {
        size_t n = numel(x);
        if (E < n)
            throw ShapeError("pad_to: target " + std::to_string(E) + " smaller than " +
                             std::to_string(n));
        Var o = alloc_(Op::PadTo, 1, static_cast<uint32_t>(E), 0, {x});
        std::copy(val(x), val(x) + n, val(o));
        return finish_(o);
    }

    // ---- backward ------------------------------------------------------

    // Seeds d(loss)/d(loss) = 1 and sweeps the tape once in reverse.
    void backward(Var loss) {
        if (numel(loss) != 1)
            throw ContractError("backward() requires a scalar loss, got numel " +
                                std::to_string(numel(loss)));
        grad_.assign(val_.size(), 0.0);
        grad_[nodes_[loss.id].off] = 1.0;
        for (size_t ni = loss.id + 1; ni-- > 0;) {
            backward_node_(nodes_[ni]);
        }
    }

private:
    std::vector<Node> nodes_;
    std::vector<double> val_;
    std::vector<double> grad_;
    std::vector<uint32_t> args_;
    std::vector<uint32_t> aux_;
    std::vector<Var> grad_leaves_;

    static size_t numel_(const Node& n) {
        return n.rank == 2 ? static_cast<size_t>(n.d0) * n.d1 : n.d0;
    }

    static std::vector<size_t> shape_of_(const Node& n) {
        if (n.rank == 2) return {n.d0, n.d1};
        return {n.d0};
    }

    Node& node_mut_(Var v) { return nodes_[v.id]; }

    Var ew_(Op op, Var a, Var b) {
        const Node& na = nodes_[a.id];
        const Node& nb = nodes_[b.id];
        if (na.rank != nb.rank || na.d0 != nb.d0 || na.d1 != nb.d1)
            throw ShapeError("elementwise op: shapes disagree, " +
                             shape_str(shape_of_(na)) + " vs " + shape_str(shape_of_(nb)));
        Var o = alloc_(op, na.rank, na.d0, na.d1, {a, b});
        const double* x = val(a);
        const double* y = val(b);
        double* z = val(o);
        size_t n = numel(a);
        switch (op) {
            case Op::Add:
                for (size_t i = 0; i < n; ++i) z[i] = x[i] + y[i];
                break;
            case Op::Sub:
                for (size_t i = 0; i < n; ++i) z[i] = x[i] - y[i];
                break;
            default:
                for (size_t i = 0; i < n; ++i) z[i] = x[i] * y[i];
                break;
        }
        return finish_(o);
    }

    Var alloc_(Op op, uint8_t rank, uint32_t d0, uint32_t d1,
               const std::vector<Var>& inputs = {}) {
        Node n;
        n.op = op;
        n.rank = rank;
        n.d0 = d0;
        n.d1 = d1;
        n.off = static_cast<uint32_t>(val_.size());
        n.arg_off = static_cast<uint32_t>(args_.size());
        n.arg_n = static_cast<uint32_t>(inputs.size());
        for (Var v : inputs) args_.push_back(v.id);
        size_t numel = rank == 2 ? static_cast<size_t>(d0) * d1 : d0;
        val_.resize(val_.size() + numel, 0.0);
        nodes_.push_back(n);
        return Var{static_cast<uint32_t>(nodes_.size() - 1)};
    }

    Var like_(Op op, Var proto, const std::vector<Var>& inputs) {
        const Node& p = nodes_[proto.id];
        return alloc_(op, p.rank, p.d0, p.d1, inputs);
    }

    Var make_leaf_(const double* data, size_t d0, size_t d1, uint8_t rank, bool rg) {
        Var v = alloc_(Op::Leaf, rank, static_cast<uint32_t>(d0), static_cast<uint32_t>(d1));
        node_mut_(v).requires_grad = rg ? 1 : 0;
        if (rg) grad_leaves_.push_back(v);
        std::copy(data, data + numel(v), val(v));
        if (check_finite) check_finite_(v);
        return v;
    }

    Var finish_(Var v) {
        if (check_finite) check_finite_(v);
        return v;
    }

    void check_finite_(Var v) const {
        const double* x = val_.data() + nodes_[v.id].off;
        for (size_t i = 0, n = numel(v); i < n; ++i)
            if (!std::isfinite(x[i]))
                throw NumericError("non-finite value in node " + std::to_string(v.id) +
                                   " (op " + std::to_string(static_cast<int>(nodes_[v.id].op)) + ")");
    }

    void push_aux_(Var v, const std::vector<uint32_t>& aux) {
        Node& n = node_mut_(v);
        n.aux_off = static_cast<uint32_t>(aux_.size());
        n.aux_n = static_cast<uint32_t>(aux.size());
        aux_.insert(aux_.end(), aux.begin(), aux.end());
    }

    // Mask auxiliary layout: one uint32 flag per entry (empty mask stored
    // as aux_n == 0 meaning all-live).
    void push_mask_aux_(Var v, const Mask& mask, size_t n) {
        if (mask.empty()) return;
        std::vector<uint32_t> aux(n);
        for (size_t i = 0; i < n; ++i) aux[i] = mask[i] ? 1u : 0u;
        push_aux_(v, aux);
    }

    static bool live_(const Mask& mask, size_t i) { return mask.empty() || mask[i] != 0; }

    bool node_live_(const Node& n, size_t i) const {
        return n.aux_n == 0 || aux_[n.aux_off + i] != 0;
    }

    void check_mask_(const Mask& mask, size_t n, const char* who) const {
        if (!mask.empty() && mask.size() != n)
            throw ShapeError(std::string(who) + ": mask length " + std::to_string(mask.size()) +
                             " vs " + std::to_string(n));
        if (!mask.empty()) {
            bool any = false;
            for (uint8_t m : mask) any = any || (m != 0);
            if (!any) throw DegenerateInputError(std::string(who) + ": all positions masked");
        }
    }

    void check_mat_(Var v, const char* who) const {
        if (nodes_[v.id].rank != 2)
            throw ShapeError(std::string(who) + ": expected a matrix operand");
    }

    void require_same_len_(Var a, Var b, const char* who) const {
        if (numel(a) != numel(b))
            throw ShapeError(std::string(who) + ": lengths disagree, " + std::to_string(numel(a)) +
                             " vs " + std::to_string(numel(b)));
    }

    static double cosine_fwd_(const double* a, const double* b, size_t n) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (size_t i = 0; i < n; ++i) {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        double na = std::sqrt(aa), nb = std::sqrt(bb);
        if (na < kCosineNormFloor || nb < kCosineNormFloor) return 0.0;
        return ab / (na * nb);
    }

    // d cos / d a and d cos / d b, accumulated with weight g.
    static void cosine_bwd_(const double* a, const double* b, size_t n, double g, double* ga,
                            double* gb) {
        double ab = 0.0, aa = 0.0, bb = 0.0;
        for (size_t i = 0; i < n; ++i) {
            ab += a[i] * b[i];
            aa += a[i] * a[i];
            bb += b[i] * b[i];
        }
        double na = std::sqrt(aa), nb = std::sqrt(bb);
        if (na < kCosineNormFloor || nb < kCosineNormFloor) return;
        double inv = 1.0 / (na * nb);
        double c = ab * inv;
        for (size_t i = 0; i < n; ++i) {
            if (ga) ga[i] += g * (b[i] * inv - c * a[i] / aa);
            if (gb) gb[i] += g * (a[i] * inv - c * b[i] / bb);
        }
    }

    const double* nval_(uint32_t id) const { return val_.data() + nodes_[id].off; }
    double* ngrad_(uint32_t id) { return grad_.data() + nodes_[id].off; }
    size_t nlen_(uint32_t id) const { return numel_(nodes_[id]); }

    void backward_node_(const Node& n) {
        const uint32_t* in = args_.data() + n.arg_off;
        const double* g = grad_.data() + n.off;
        const double* y = val_.data() + n.off;
        size_t len = numel_(n);
        switch (n.op) {
            case Op::Leaf:
                break;
            case Op::Add: {
                double *ga = ngrad_(in[0]), *gb = ngrad_(in[1]);
                for (size_t i = 0; i < len; ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::Sub: {
                double *ga = ngrad_(in[0]), *gb = ngrad_(in[1]);
                for (size_t i = 0; i < len; ++i) {
                    ga[i] += g[i];
                    gb[i] -= g[i];
                }
                break;
            }
            case Op::Mul: {
                const double *a = nval_(in[0]), *b = nval_(in[1]);
                double *ga = ngrad_(in[0]), *gb = ngrad_(in[1]);
                for (size_t i = 0; i < len; ++i) {
                    ga[i] += g[i] * b[i];
                    gb[i] += g[i] * a[i];
                }
                break;
            }
            case Op::Scale: {
                double* ga = ngrad_(in[0]);
                for (size_t i = 0; i < len; ++i) ga[i] += n.f0 * g[i];
                break;
            }
            case Op::AddConst: {
                double* ga = ngrad_(in[0]);
                for (size_t i = 0; i < len; ++i) ga[i] += g[i];
                break;
            }
            case Op::SMul: {
                const double* a = nval_(in[1]);
                double sv = nval_(in[0])[0];
                double* gs = ngrad_(in[0]);
                double* ga = ngrad_(in[1]);
                double acc = 0.0;
                for (size_t i = 0; i < len; ++i) {
                    acc += g[i] * a[i];
                    ga[i] += sv * g[i];
                }
                gs[0] += acc;
                break;
            }
            case Op::VAddS: {
                double* gv = ngrad_(in[0]);
                double* gs = ngrad_(in[1]);
                double acc = 0.0;
                for (size_t i = 0; i < len; ++i) {
                    gv[i] += g[i];
                    acc += g[i];
                }
                gs[0] += acc;
                break;
            }
            case Op::Tanh: {
                double* ga = ngrad_(in[0]);
                for (size_t i = 0; i < len; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
                break;
            }
            case Op::Sigmoid: {
                double* ga = ngrad_(in[0]);
                for (size_t i = 0; i < len; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
                break;
            }
            case Op::LogClamped: {
                const double* a = nval_(in[0]);
                double* ga = ngrad_(in[0]);
                for (size_t i = 0; i < len; ++i)
                    if (a[i] > n.f0) ga[i] += g[i] / a[i];
                break;
            }
            case Op::Dot: {
                const double *a = nval_(in[0]), *b = nval_(in[1]);
                double *ga = ngrad_(in[0]), *gb = ngrad_(in[1]);
                double g0 = g[0];
                for (size_t i = 0, m = nlen_(in[0]); i < m; ++i) {
                    ga[i] += g0 * b[i];
                    gb[i] += g0 * a[i];
                }
                break;
            }
            case Op::MatVec: {
                const Node& mn = nodes_[in[0]];
                size_t r = mn.d0, c = mn.d1;
                const double *M = nval_(in[0]), *X = nval_(in[1]);
                double *gM = ngrad_(in[0]), *gX = ngrad_(in[1]);
                for (size_t i = 0; i < r; ++i) {
                    double gi = g[i];
                    if (gi == 0.0) continue;
                    const double* mrow = M + i * c;
                    double* gmrow = gM + i * c;
                    for (size_t j = 0; j < c; ++j) {
                        gmrow[j] += gi * X[j];
                        gX[j] += mrow[j] * gi;
                    }
                }
                break;
            }
            case Op::VecMat: {
                const Node& mn = nodes_[in[1]];
                size_t r = mn.d0, c = mn.d1;
                const double *X = nval_(in[0]), *M = nval_(in[1]);
                double *gX = ngrad_(in[0]), *gM = ngrad_(in[1]);
                for (size_t i = 0; i < r; ++i) {
                    const double* mrow = M + i * c;
                    double* gmrow = gM + i * c;
                    double xi = X[i];
                    double acc = 0.0;
                    for (size_t j = 0; j < c; ++j) {
                        acc += mrow[j] * g[j];
                        gmrow[j] += xi * g[j];
                    }
                    gX[i] += acc;
                }
                break;
            }
            case Op::MatMul: {
                const Node& an = nodes_[in[0]];
                const Node& bn = nodes_[in[1]];
                size_t m = an.d0, k = an.d1, p = bn.d1;
                const double *A = nval_(in[0]), *B = nval_(in[1]);
                double *gA = ngrad_(in[0]), *gB = ngrad_(in[1]);
                for (size_t i = 0; i < m; ++i) {
                    for (size_t kk = 0; kk < k; ++kk) {
                        double aik = A[i * k + kk];
                        const double* grow = g + i * p;
                        const double* brow = B + kk * p;
                        double acc = 0.0;
                        double* gbrow = gB + kk * p;
                        for (size_t j = 0; j < p; ++j) {
                            acc += grow[j] * brow[j];
                            gbrow[j] += aik * grow[j];
                        }
                        gA[i * k + kk] += acc;
                    }
                }
                break;
            }
            case Op::Transpose: {
                const Node& an = nodes_[in[0]];
                size_t r = an.d0, c = an.d1;
                double* gA = ngrad_(in[0]);
                for (size_t i = 0; i < r; ++i)
                    for (size_t j = 0; j < c; ++j) gA[i * c + j] += g[j * r + i];
                break;
            }
            case Op::Affine: {
                const Node& wn = nodes_[in[0]];
                size_t r = wn.d0, c = wn.d1;
                const double *W = nval_(in[0]), *X = nval_(in[1]);
                double *gW = ngrad_(in[0]), *gX = ngrad_(in[1]), *gB = ngrad_(in[2]);
                for (size_t i = 0; i < r; ++i) {
                    double gi = g[i];
                    gB[i] += gi;
                    if (gi == 0.0) continue;
                    const double* wrow = W + i * c;
                    double* gwrow = gW + i * c;
                    for (size_t j = 0; j < c; ++j) {
                        gwrow[j] += gi * X[j];
                        gX[j] += wrow[j] * gi;
                    }
                }
                break;
            }
            case Op::Affine2: {
                const Node& wn = nodes_[in[0]];
                const Node& un = nodes_[in[2]];
                size_t r = wn.d0, c = wn.d1, d = un.d1;
                const double *W = nval_(in[0]), *X = nval_(in[1]);
                const double *U = nval_(in[2]), *H = nval_(in[3]);
                double *gW = ngrad_(in[0]), *gX = ngrad_(in[1]);
                double *gU = ngrad_(in[2]), *gH = ngrad_(in[3]), *gB = ngrad_(in[4]);
                for (size_t i = 0; i < r; ++i) {
                    double gi = g[i];
                    gB[i] += gi;
                    if (gi == 0.0) continue;
                    const double* wrow = W + i * c;
                    double* gwrow = gW + i * c;
                    for (size_t j = 0; j < c; ++j) {
                        gwrow[j] += gi * X[j];
                        gX[j] += wrow[j] * gi;
                    }
                    const double* urow = U + i * d;
                    double* gurow = gU + i * d;
                    for (size_t j = 0; j < d; ++j) {
                        gurow[j] += gi * H[j];
                        gH[j] += urow[j] * gi;
                    }
                }
                break;
            }
            case Op::Concat: {
                size_t pos = 0;
                for (uint32_t k = 0; k < n.arg_n; ++k) {
                    double* ga = ngrad_(in[k]);
                    size_t m = nlen_(in[k]);
                    for (size_t i = 0; i < m; ++i) ga[i] += g[pos + i];
                    pos += m;
                }
                break;
            }
            case Op::Slice: {
                double* ga = ngrad_(in[0]);
                size_t lo = aux_[n.aux_off];
                for (size_t i = 0; i < len; ++i) ga[lo + i] += g[i];
                break;
            }
            case Op::HCat: {
                const Node& an = nodes_[in[0]];
                const Node& bn = nodes_[in[1]];
                size_t r = an.d0, c1 = an.d1, c2 = bn.d1;
                double *gA = ngrad_(in[0]), *gB = ngrad_(in[1]);
                for (size_t i = 0; i < r; ++i) {
                    const double* grow = g + i * (c1 + c2);
                    for (size_t j = 0; j < c1; ++j) gA[i * c1 + j] += grow[j];
                    for (size_t j = 0; j < c2; ++j) gB[i * c2 + j] += grow[c1 + j];
                }
                break;
            }
            case Op::Row: {
                double* gM = ngrad_(in[0]);
                size_t i = aux_[n.aux_off];
                size_t c = len;
                for (size_t j = 0; j < c; ++j) gM[i * c + j] += g[j];
                break;
            }
            case Op::StackRows: {
                size_t c = n.d1;
                for (uint32_t k = 0; k < n.arg_n; ++k) {
                    double* ga = ngrad_(in[k]);
                    const double* grow = g + static_cast<size_t>(k) * c;
                    for (size_t j = 0; j < c; ++j) ga[j] += grow[j];
                }
                break;
            }
            case Op::GatherRows: {
                double* gM = ngrad_(in[0]);
                size_t c = n.d1;
                for (uint32_t k = 0; k < n.aux_n; ++k) {
                    size_t id = aux_[n.aux_off + k];
                    const double* grow = g + static_cast<size_t>(k) * c;
                    double* gmrow = gM + id * c;
                    for (size_t j = 0; j < c; ++j) gmrow[j] += grow[j];
                }
                break;
            }
            case Op::VStackPad: {
                size_t w = n.d1;
                for (uint32_t k = 0; k < n.arg_n; ++k) {
                    double* ga = ngrad_(in[k]);
                    size_t off = aux_[n.aux_off + k];
                    size_t m = nlen_(in[k]);
                    const double* gblock = g + off * w;
                    for (size_t i = 0; i < m; ++i) ga[i] += gblock[i];
                }
                break;
            }
            case Op::MaskedSoftmax: {
                double* gx = ngrad_(in[0]);
                double s = 0.0;
                for (size_t i = 0; i < len; ++i) s += g[i] * y[i];
                for (size_t i = 0; i < len; ++i)
                    if (node_live_(n, i)) gx[i] += y[i] * (g[i] - s);
                break;
            }
            case Op::MaxOverTime: {
                double* gM = ngrad_(in[0]);
                size_t d = len;
                for (size_t j = 0; j < d; ++j) {
                    size_t t = aux_[n.aux_off + j];
                    gM[t * d + j] += g[j];
                }
                break;
            }
            case Op::Cosine: {
                cosine_bwd_(nval_(in[0]), nval_(in[1]), nlen_(in[0]), g[0], ngrad_(in[0]),
                            ngrad_(in[1]));
                break;
            }
            case Op::MpMatch: {
                const Node& hn = nodes_[in[0]];
                size_t N = hn.d0, d = hn.d1, Z = n.d1;
                const double *H = nval_(in[0]), *O = nval_(in[1]), *W = nval_(in[2]);
                double *gH = ngrad_(in[0]), *gO = ngrad_(in[1]), *gW = ngrad_(in[2]);
                std::vector<double> u(d), v(d), du(d), dv(d);
                for (size_t z = 0; z < Z; ++z) {
                    const double* wz = W + z * d;
                    double* gwz = gW + z * d;
                    for (size_t j = 0; j < d; ++j) v[j] = O[j] * wz[j];
                    for (size_t i = 0; i < N; ++i) {
                        double gi = g[i * Z + z];
                        if (gi == 0.0) continue;
                        const double* hi = H + i * d;
                        for (size_t j = 0; j < d; ++j) u[j] = hi[j] * wz[j];
                        std::fill(du.begin(), du.end(), 0.0);
                        std::fill(dv.begin(), dv.end(), 0.0);
                        cosine_bwd_(u.data(), v.data(), d, gi, du.data(), dv.data());
                        double* ghi = gH + i * d;
                        for (size_t j = 0; j < d; ++j) {
                            ghi[j] += du[j] * wz[j];
                            gO[j] += dv[j] * wz[j];
                            gwz[j] += du[j] * hi[j] + dv[j] * O[j];
                        }
                    }
                }
                break;
            }
            case Op::RowBSub: {
                size_t J = n.d0, Z = n.d1;
                double *gA = ngrad_(in[0]), *gB = ngrad_(in[1]);
                for (size_t j = 0; j < J; ++j) {
                    const double* grow = g + j * Z;
                    double* gbrow = gB + j * Z;
                    for (size_t z = 0; z < Z; ++z) {
                        gA[z] += grow[z];
                        gbrow[z] -= grow[z];
                    }
                }
                break;
            }
            case Op::ScatterSum: {
                double* gx = ngrad_(in[0]);
                for (uint32_t i = 0; i < n.aux_n; ++i) gx[i] += g[aux_[n.aux_off + i]];
                break;
            }
            case Op::PadTo: {
                double* gx = ngrad_(in[0]);
                for (size_t i = 0, m = nlen_(in[0]); i < m; ++i) gx[i] += g[i];
                break;
            }
            case Op::Pick: {
                ngrad_(in[0])[aux_[n.aux_off]] += g[0];
                break;
            }
            case Op::Sum: {
                double* ga = ngrad_(in[0]);
                double g0 = g[0];
                for (size_t i = 0, m = nlen_(in[0]); i < m; ++i) ga[i] += g0;
                break;
            }
        }
    }
};

}  // namespace gummp
