// Multi-perspective matching encoder: BiLSTM token encoding, max-pooled
// summaries, the positive/negative matching tensor with attention over
// negative tokens, and fusion into Multi-Perspective Memories.
#pragma once

#include <vector>

#include "gummp/autodiff.hpp"
#include "gummp/lstm.hpp"
#include "gummp/ndarray.hpp"

namespace gummp {

struct EncoderParams {
    BiLstmParams token_lstm;   // per-direction width D, input D (embeddings)
    BiLstmParams smooth_lstm;  // per-direction width Z, input 2Z (matching vectors)
    NdArray persp_passage;     // [Z x D] perspective weights, passage side
    NdArray persp_question;    // [Z x D] perspective weights, question side
    NdArray score_positive;    // [2D]; empty under the no-neg ablation
    NdArray score_negative;    // [2D]
    NdArray score_match;       // [Z]

    static EncoderParams init(size_t d, size_t z, bool with_negative, SeededRng& rng) {
        EncoderParams p;
        p.token_lstm = BiLstmParams::init(d, d, rng);
        p.smooth_lstm = BiLstmParams::init(2 * z, z, rng);
        p.persp_passage = NdArray::glorot(z, d, rng);
        p.persp_question = NdArray::glorot(z, d, rng);
        if (with_negative) {
            p.score_positive = NdArray::glorot_vec(2 * d, rng);
            p.score_negative = NdArray::glorot_vec(2 * d, rng);
            p.score_match = NdArray::glorot_vec(z, rng);
        }
        return p;
    }

    template <typename F>
    void visit(F&& f) {
        token_lstm.visit("encoder.token_lstm", f);
        smooth_lstm.visit("encoder.smooth_lstm", f);
        f("encoder.persp_passage", persp_passage);
        f("encoder.persp_question", persp_question);
        if (!score_positive.empty()) {
            f("encoder.score_positive", score_positive);
            f("encoder.score_negative", score_negative);
            f("encoder.score_match", score_match);
        }
    }
};

struct EncoderVars {
    BiLstmVars token_lstm;
    BiLstmVars smooth_lstm;
    Var persp_passage, persp_question;
    Var score_positive, score_negative, score_match;  // unset under no-neg
    bool with_negative = false;
};

inline EncoderVars leaf_encoder(Tape& t, const EncoderParams& p, bool rg) {
    EncoderVars v;
    v.token_lstm = leaf_bilstm(t, p.token_lstm, rg);
    v.smooth_lstm = leaf_bilstm(t, p.smooth_lstm, rg);
    v.persp_passage = t.leaf(p.persp_passage, rg);
    v.persp_question = t.leaf(p.persp_question, rg);
    v.with_negative = !p.score_positive.empty();
    if (v.with_negative) {
        v.score_positive = t.leaf(p.score_positive, rg);
        v.score_negative = t.leaf(p.score_negative, rg);
        v.score_match = t.leaf(p.score_match, rg);
    }
    return v;
}

// Per-direction max-pooled sequence summary (each vector length = the
// per-direction hidden width).
struct PooledSummary {
    Var fwd, bwd;
};

inline PooledSummary pool_summary(Tape& t, const BiLstmOut& h, const Mask& mask) {
    return {t.max_over_time(h.fw, mask), t.max_over_time(h.bw, mask)};
}

// Multi-perspective match of a single hidden vector against a summary:
// out[z] = cos(h o w_z, o o w_z).
inline Var multi_perspective_match(Tape& t, Var h, Var o, Var w) {
    return t.row(t.mp_match(t.stack_rows({h}), o, w), 0);
}

// Positive/negative matching tensor, stored factored per direction:
// entry(i, j, z) = pos(i, z) - neg(j, z). The subtraction of two identically
// computed cosine scores is a single floating-point operation, so the
// factored form is bit-identical to materializing every entry.
struct MatchingTensor {
    Var pos_fw, pos_bw;  // [N x Z]
    Var neg_fw, neg_bw;  // [J x Z]
};

inline MatchingTensor matching_tensor(Tape& t, const BiLstmOut& pos, const BiLstmOut& neg,
                                      const PooledSummary& question, Var persp) {
    if (t.rows(neg.fw) == 0) throw DegenerateInputError("matching_tensor: empty negative passage");
    MatchingTensor m;
    m.pos_fw = t.mp_match(pos.fw, question.fwd, persp);
    m.pos_bw = t.mp_match(pos.bw, question.bwd, persp);
    m.neg_fw = t.mp_match(neg.fw, question.fwd, persp);
    m.neg_bw = t.mp_match(neg.bw, question.bwd, persp);
    return m;
}

// Per-direction matching vectors after attention over negative tokens.
struct MatchVectors {
    Var fw, bw;  // [N x Z]
};

// e_{i,j} = tanh(w+ . o_pos + w- . o_neg + wm . m_{i,j}); alpha = softmax_j;
// m_i = sum_j alpha_{i,j} m_{i,j}, computed independently per direction.
inline MatchVectors aggregate_negative(Tape& t, const MatchingTensor& m, Var o_pos_cat,
                                       Var o_neg_cat, Var score_pos, Var score_neg,
                                       Var score_match, const Mask& neg_mask) {
    Var base = t.add(t.dot(score_pos, o_pos_cat), t.dot(score_neg, o_neg_cat));
    auto direction = [&](Var pos, Var neg) {
        size_t n = t.rows(pos);
        std::vector<Var> rows;
        rows.reserve(n);
        for (size_t i = 0; i < n; ++i) {
            Var diff = t.row_bsub(t.row(pos, i), neg);             // [J x Z]
            Var energy = t.tanh_(t.vadds(t.matvec(diff, score_match), base));
            Var att = t.masked_softmax(energy, neg_mask);
            rows.push_back(t.vecmat(att, diff));                   // [Z]
        }
        return t.stack_rows(rows);
    };
    return {direction(m.pos_fw, m.neg_fw), direction(m.pos_bw, m.neg_bw)};
}

// Per-token fused memory rows [N x 2(D+Z)] plus the validity mask.
struct Mpm {
    Var h;
    Mask mask;
};

// Smoothing BiLSTM over the matching vectors, then concatenation with the
// token hiddens: row_i = [h_i (2D), smoothed matching (2Z)].
inline Mpm smooth_and_fuse(Tape& t, const BiLstmVars& smooth, const BiLstmOut& token,
                           Var match_2z, const Mask& mask) {
    BiLstmOut smoothed = bilstm_encode(t, smooth, match_2z, mask);
    Var token_cat = t.hcat(token.fw, token.bw);
    Var smooth_cat = t.hcat(smoothed.fw, smoothed.bw);
    return {t.hcat(token_cat, smooth_cat), mask};
}

// One encoded sequence: hidden states, pooled summary, fused memory.
struct EncodedSequence {
    BiLstmOut hid;
    PooledSummary pooled;
};

inline EncodedSequence encode_tokens(Tape& t, const EncoderVars& enc, Var embedded,
                                     const Mask& mask) {
    EncodedSequence s;
    s.hid = bilstm_encode(t, enc.token_lstm, embedded, mask);
    s.pooled = pool_summary(t, s.hid, mask);
    return s;
}

// MPM of one positive passage. Under the full model the matching vectors come
// from the matching tensor attended over negative tokens; under no-neg they
// are the plain single-argument multi-perspective match.
inline Mpm build_passage_mpm(Tape& t, const EncoderVars& enc, const EncodedSequence& passage,
                             const Mask& passage_mask, const EncodedSequence* negative,
                             const Mask& neg_mask, const PooledSummary& question) {
    MatchVectors mv;
    if (enc.with_negative) {
        if (negative == nullptr)
            throw DegenerateInputError("build_passage_mpm: negative passage required");
        MatchingTensor m =
            matching_tensor(t, passage.hid, negative->hid, question, enc.persp_passage);
        Var o_pos = t.concat({passage.pooled.fwd, passage.pooled.bwd});
        Var o_neg = t.concat({negative->pooled.fwd, negative->pooled.bwd});
        mv = aggregate_negative(t, m, o_pos, o_neg, enc.score_positive, enc.score_negative,
                                enc.score_match, neg_mask);
    } else {
        mv.fw = t.mp_match(passage.hid.fw, question.fwd, enc.persp_passage);
        mv.bw = t.mp_match(passage.hid.bw, question.bwd, enc.persp_passage);
    }
    Var match_2z = t.hcat(mv.fw, mv.bw);
    return smooth_and_fuse(t, enc.smooth_lstm, passage.hid, match_2z, passage_mask);
}

// Question MPM: roles switched, the question tokens are matched against each
// passage's positive and negative summaries (the attention over negative
// tokens collapses because both terms depend only on the question position),
// and the K per-passage memories are averaged into one.
inline Mpm build_question_mpm(Tape& t, const EncoderVars& enc, const EncodedSequence& question,
                              const Mask& question_mask,
                              const std::vector<EncodedSequence>& passages,
                              const std::vector<const EncodedSequence*>& negatives) {
    size_t K = passages.size();
    if (K == 0) throw DegenerateInputError("build_question_mpm: no passages (K = 0)");
    Var acc;
    for (size_t k = 0; k < K; ++k) {
        Var fw = t.mp_match(question.hid.fw, passages[k].pooled.fwd, enc.persp_question);
        Var bw = t.mp_match(question.hid.bw, passages[k].pooled.bwd, enc.persp_question);
        if (enc.with_negative) {
            fw = t.sub(fw, t.mp_match(question.hid.fw, negatives[k]->pooled.fwd,
                                      enc.persp_question));
            bw = t.sub(bw, t.mp_match(question.hid.bw, negatives[k]->pooled.bwd,
                                      enc.persp_question));
        }
        Mpm part = smooth_and_fuse(t, enc.smooth_lstm, question.hid, t.hcat(fw, bw),
                                   question_mask);
        acc = (k == 0) ? part.h : t.add(acc, part.h);
    }
    Var mean = (K == 1) ? acc : t.scale(acc, 1.0 / static_cast<double>(K));
    return {mean, question_mask};
}

}  // namespace gummp
