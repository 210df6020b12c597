// LSTM cell and bidirectional sequence encoder on the tape.
#pragma once

#include <vector>

#include "gummp/autodiff.hpp"
#include "gummp/ndarray.hpp"
#include "gummp/rng.hpp"

namespace gummp {

// Per-gate weight matrices [hidden x input], [hidden x hidden] and biases.
struct LstmCellParams {
    NdArray w_in, u_in, b_in;          // input gate
    NdArray w_forget, u_forget, b_forget;
    NdArray w_out, u_out, b_out;       // output gate
    NdArray w_cand, u_cand, b_cand;    // candidate

    static LstmCellParams init(size_t input_dim, size_t hidden, SeededRng& rng) {
        LstmCellParams p;
        auto gate = [&](NdArray& w, NdArray& u, NdArray& b, double bias) {
            w = NdArray::glorot(hidden, input_dim, rng);
            u = NdArray::glorot(hidden, hidden, rng);
            b = NdArray::full({hidden}, bias);
        };
        gate(p.w_in, p.u_in, p.b_in, 0.0);
        gate(p.w_forget, p.u_forget, p.b_forget, 1.0);  // forget bias 1.0
        gate(p.w_out, p.u_out, p.b_out, 0.0);
        gate(p.w_cand, p.u_cand, p.b_cand, 0.0);
        return p;
    }

    size_t hidden() const { return w_in.rows(); }
    size_t input_dim() const { return w_in.cols(); }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        f(prefix + ".w_in", w_in);
        f(prefix + ".u_in", u_in);
        f(prefix + ".b_in", b_in);
        f(prefix + ".w_forget", w_forget);
        f(prefix + ".u_forget", u_forget);
        f(prefix + ".b_forget", b_forget);
        f(prefix + ".w_out", w_out);
        f(prefix + ".u_out", u_out);
        f(prefix + ".b_out", b_out);
        f(prefix + ".w_cand", w_cand);
        f(prefix + ".u_cand", u_cand);
        f(prefix + ".b_cand", b_cand);
    }
};

struct BiLstmParams {
    LstmCellParams fw, bw;

    static BiLstmParams init(size_t input_dim, size_t hidden, SeededRng& rng) {
        BiLstmParams p;
        p.fw = LstmCellParams::init(input_dim, hidden, rng);
        p.bw = LstmCellParams::init(input_dim, hidden, rng);
        return p;
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        fw.visit(prefix + ".fw", f);
        bw.visit(prefix + ".bw", f);
    }
};

// Tape handles for one cell's parameters.
struct LstmCellVars {
    Var w_in, u_in, b_in;
    Var w_forget, u_forget, b_forget;
    Var w_out, u_out, b_out;
    Var w_cand, u_cand, b_cand;
};

inline LstmCellVars leaf_lstm(Tape& t, const LstmCellParams& p, bool rg) {
    LstmCellVars v;
    v.w_in = t.leaf(p.w_in, rg);
    v.u_in = t.leaf(p.u_in, rg);
    v.b_in = t.leaf(p.b_in, rg);
    v.w_forget = t.leaf(p.w_forget, rg);
    v.u_forget = t.leaf(p.u_forget, rg);
    v.b_forget = t.leaf(p.b_forget, rg);
    v.w_out = t.leaf(p.w_out, rg);
    v.u_out = t.leaf(p.u_out, rg);
    v.b_out = t.leaf(p.b_out, rg);
    v.w_cand = t.leaf(p.w_cand, rg);
    v.u_cand = t.leaf(p.u_cand, rg);
    v.b_cand = t.leaf(p.b_cand, rg);
    return v;
}

struct BiLstmVars {
    LstmCellVars fw, bw;
};

inline BiLstmVars leaf_bilstm(Tape& t, const BiLstmParams& p, bool rg) {
    return {leaf_lstm(t, p.fw, rg), leaf_lstm(t, p.bw, rg)};
}

struct LstmState {
    Var h, c;
};

inline LstmState lstm_step(Tape& t, const LstmCellVars& p, Var x, const LstmState& s) {
    Var gi = t.sigmoid(t.affine2(p.w_in, x, p.u_in, s.h, p.b_in));
    Var gf = t.sigmoid(t.affine2(p.w_forget, x, p.u_forget, s.h, p.b_forget));
    Var go = t.sigmoid(t.affine2(p.w_out, x, p.u_out, s.h, p.b_out));
    Var gc = t.tanh_(t.affine2(p.w_cand, x, p.u_cand, s.h, p.b_cand));
    Var c = t.add(t.mul(gf, s.c), t.mul(gi, gc));
    Var h = t.mul(go, t.tanh_(c));
    return {h, c};
}

// Forward and backward hidden matrices, each [N x hidden].
struct BiLstmOut {
    Var fw, bw;
};

// Padded (masked) steps emit zero hiddens and leave the recurrent state
// untouched in both directions.
inline BiLstmOut bilstm_encode(Tape& t, const BiLstmVars& p, Var x, const Mask& mask) {
    size_t n = t.rows(x);
    if (!t.is_matrix(x) || n == 0)
        throw DegenerateInputError("bilstm_encode: empty input sequence");
    if (!mask.empty() && mask.size() != n)
        throw ShapeError("bilstm_encode: mask length " + std::to_string(mask.size()) + " vs " +
                         std::to_string(n));
    size_t hidden = t.rows(p.fw.w_in);
    Var zero = t.zeros(hidden);
    auto live = [&](size_t i) { return mask.empty() || mask[i] != 0; };

    std::vector<Var> fw_rows(n), bw_rows(n);
    LstmState s{zero, zero};
    for (size_t i = 0; i < n; ++i) {
        if (live(i)) {
            s = lstm_step(t, p.fw, t.row(x, i), s);
            fw_rows[i] = s.h;
        } else {
            fw_rows[i] = zero;
        }
    }
    s = {zero, zero};
    for (size_t i = n; i-- > 0;) {
        if (live(i)) {
            s = lstm_step(t, p.bw, t.row(x, i), s);
            bw_rows[i] = s.h;
        } else {
            bw_rows[i] = zero;
        }
    }
    return {t.stack_rows(fw_rows), t.stack_rows(bw_rows)};
}

}  // namespace gummp
