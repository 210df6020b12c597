// Attention-based LSTM decoder with the multiple-pointer-generator
// mechanism: one decoder state per passage under shared weights, dual
// attention (unified memory and question memory), a three-way gate softmax
// per passage, and a final distribution over the extended vocabulary
// averaged across passages.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "gummp/autodiff.hpp"
#include "gummp/lstm.hpp"
#include "gummp/ndarray.hpp"

namespace gummp {

constexpr double kLogClamp = 1e-12;

// The paper writes per-passage decoder parameters; K varies per example, so
// one shared parameter set serves every passage while the *states* stay
// per-passage.
struct DecoderParams {
    LstmCellParams cell;      // input [a, c_mem, c_q], hidden S
    NdArray attn_mem_w;       // [mem_width]
    NdArray attn_state_w;     // [S]
    NdArray attn_bias;        // [1]
    NdArray attn_q_mem_w;     // [q_width]
    NdArray attn_q_state_w;   // [S]
    NdArray attn_q_bias;      // [1]
    NdArray out_w;            // [dec_vocab x (S + mem_width + q_width)]
    NdArray out_b;            // [dec_vocab]
    NdArray gate_w;           // [3 x (S + mem_width + q_width)]
    NdArray gate_b;           // [3]

    static DecoderParams init(size_t embed_dim, size_t mem_width, size_t q_width, size_t s,
                              size_t dec_vocab, SeededRng& rng) {
        DecoderParams p;
        p.cell = LstmCellParams::init(embed_dim + mem_width + q_width, s, rng);
        p.attn_mem_w = NdArray::glorot_vec(mem_width, rng);
        p.attn_state_w = NdArray::glorot_vec(s, rng);
        p.attn_bias = NdArray::zeros({1});
        p.attn_q_mem_w = NdArray::glorot_vec(q_width, rng);
        p.attn_q_state_w = NdArray::glorot_vec(s, rng);
        p.attn_q_bias = NdArray::zeros({1});
        size_t blend = s + mem_width + q_width;
        p.out_w = NdArray::glorot(dec_vocab, blend, rng);
        p.out_b = NdArray::zeros({dec_vocab});
        p.gate_w = NdArray::glorot(3, blend, rng);
        p.gate_b = NdArray::zeros({3});
        return p;
    }

    template <typename F>
    void visit(F&& f) {
        cell.visit("decoder.cell", f);
        f("decoder.attn_mem_w", attn_mem_w);
        f("decoder.attn_state_w", attn_state_w);
        f("decoder.attn_bias", attn_bias);
        f("decoder.attn_q_mem_w", attn_q_mem_w);
        f("decoder.attn_q_state_w", attn_q_state_w);
        f("decoder.attn_q_bias", attn_q_bias);
        f("decoder.out_w", out_w);
        f("decoder.out_b", out_b);
        f("decoder.gate_w", gate_w);
        f("decoder.gate_b", gate_b);
    }
};

struct DecoderVars {
    LstmCellVars cell;
    Var attn_mem_w, attn_state_w, attn_bias;
    Var attn_q_mem_w, attn_q_state_w, attn_q_bias;
    Var out_w, out_b, gate_w, gate_b;
};

inline DecoderVars leaf_decoder(Tape& t, const DecoderParams& p, bool rg) {
    DecoderVars v;
    v.cell = leaf_lstm(t, p.cell, rg);
    v.attn_mem_w = t.leaf(p.attn_mem_w, rg);
    v.attn_state_w = t.leaf(p.attn_state_w, rg);
    v.attn_bias = t.leaf(p.attn_bias, rg);
    v.attn_q_mem_w = t.leaf(p.attn_q_mem_w, rg);
    v.attn_q_state_w = t.leaf(p.attn_q_state_w, rg);
    v.attn_q_bias = t.leaf(p.attn_q_bias, rg);
    v.out_w = t.leaf(p.out_w, rg);
    v.out_b = t.leaf(p.out_b, rg);
    v.gate_w = t.leaf(p.gate_w, rg);
    v.gate_b = t.leaf(p.gate_b, rg);
    return v;
}

struct Attention {
    Var weights;  // [N], sums to 1 over live positions
    Var context;  // [width]
};

// e_i = tanh(w_mem . mem_i + w_state . s + b); alpha = masked softmax;
// context = sum_i alpha_i mem_i.
inline Attention attend(Tape& t, Var state, Var memory, const Mask& mask, Var w_mem, Var w_state,
                        Var bias) {
    if (t.rows(memory) == 0) throw DegenerateInputError("attend: empty memory");
    Var base = t.add(t.dot(w_state, state), bias);  // bias is a length-1 leaf
    Var energy = t.tanh_(t.vadds(t.matvec(memory, w_mem), t.pick(base, 0)));
    Var att = t.masked_softmax(energy, mask);
    return {att, t.vecmat(att, memory)};
}

// softmax(W_out . [s, c_mem, c_q] + b) over the (possibly restricted)
// generation vocabulary.
inline Var vocab_dist(Tape& t, const DecoderVars& d, Var blend) {
    return t.softmax(t.affine(d.out_w, blend, d.out_b));
}

// Scatter attention mass onto extended-vocabulary token ids.
inline Var copy_dist(Tape& t, Var attention, const std::vector<int>& ext_ids, size_t ext_size) {
    return t.scatter_sum(attention, ext_ids, ext_size);
}

// Everything one decoding step produces, as tape handles.
struct StepVars {
    std::vector<LstmState> states;       // per passage
    std::vector<Var> ctx_mem, ctx_q;     // per passage contexts
    std::vector<Var> att_mem, att_q;     // per passage attention weights
    std::vector<Var> vocab;              // per passage [dec_vocab]
    std::vector<Var> copy_mem, copy_q;   // per passage [ext_size]
    std::vector<Var> gates;              // per passage [3]
    Var final_dist;                      // [ext_size]
};

// One decoder step across all K passages with shared weights; the final
// distribution averages the per-passage three-way mixtures so it stays a
// probability distribution (uniform passage prior).
inline StepVars decoder_step(Tape& t, const DecoderVars& d, const std::vector<Var>& memories,
                             const std::vector<Mask>& mem_masks,
                             const std::vector<std::vector<int>>& mem_ext_ids, Var question_mem,
                             const Mask& q_mask, const std::vector<int>& q_ext_ids,
                             size_t ext_size, const std::vector<LstmState>& prev_states,
                             const std::vector<Var>& prev_ctx_mem,
                             const std::vector<Var>& prev_ctx_q, Var prev_embed) {
    size_t K = memories.size();
    if (K == 0) throw DegenerateInputError("decoder_step: no passages");
    StepVars out;
    Var final_acc;
    for (size_t k = 0; k < K; ++k) {
        Var input = t.concat({prev_embed, prev_ctx_mem[k], prev_ctx_q[k]});
        LstmState s = lstm_step(t, d.cell, input, prev_states[k]);
        Attention am = attend(t, s.h, memories[k], mem_masks[k], d.attn_mem_w, d.attn_state_w,
                              d.attn_bias);
        Attention aq = attend(t, s.h, question_mem, q_mask, d.attn_q_mem_w, d.attn_q_state_w,
                              d.attn_q_bias);
        Var blend = t.concat({s.h, am.context, aq.context});
        Var vdist = vocab_dist(t, d, blend);
        Var pcopy = copy_dist(t, am.weights, mem_ext_ids[k], ext_size);
        Var qcopy = copy_dist(t, aq.weights, q_ext_ids, ext_size);
        Var gates = t.softmax(t.affine(d.gate_w, blend, d.gate_b));
        Var mix = t.add(t.add(t.smul(t.pick(gates, 0), t.pad_to(vdist, ext_size)),
                              t.smul(t.pick(gates, 1), pcopy)),
                        t.smul(t.pick(gates, 2), qcopy));
        final_acc = (k == 0) ? mix : t.add(final_acc, mix);

        out.states.push_back(s);
        out.ctx_mem.push_back(am.context);
        out.ctx_q.push_back(aq.context);
        out.att_mem.push_back(am.weights);
        out.att_q.push_back(aq.weights);
        out.vocab.push_back(vdist);
        out.copy_mem.push_back(pcopy);
        out.copy_q.push_back(qcopy);
        out.gates.push_back(gates);
    }
    out.final_dist = (K == 1) ? final_acc : t.scale(final_acc, 1.0 / static_cast<double>(K));
    return out;
}

// ---------------------------------------------------------------------------
// Search. The step function is abstract so the search can be exercised
// against hand-built distributions: (state, prev_token) -> (dist, new state).
// ---------------------------------------------------------------------------

struct Hypothesis {
    std::vector<int> tokens;  // emitted tokens, specials excluded
    double log_prob = 0.0;
    bool finished = false;
};

inline double clamped_log(double p) { return std::log(std::max(p, kLogClamp)); }

template <typename State, typename StepFn>
std::vector<int> greedy_search(State state, StepFn&& step, size_t max_len, int bos_id,
                               int eos_id) {
    std::vector<int> out;
    int prev = bos_id;
    for (size_t n = 0; n < max_len; ++n) {
        auto [dist, next_state] = step(state, prev);
        size_t best = 0;
        for (size_t i = 1; i < dist.size(); ++i)
            if (dist[i] > dist[best]) best = i;  // ties keep the lowest id
        if (static_cast<int>(best) == eos_id) break;
        out.push_back(static_cast<int>(best));
        prev = static_cast<int>(best);
        state = std::move(next_state);
    }
    return out;
}

// Standard beam search over the step distribution; no length normalization.
// Finished hypotheses retire to a pool; the best-scoring finished hypothesis
// wins, falling back to the best live one at max_len. Ties break toward the
// lower token id, then the earlier parent, for determinism.
template <typename State, typename StepFn>
Hypothesis beam_search(State init, StepFn&& step, size_t beam_size, size_t max_len, int bos_id,
                       int eos_id) {
    if (beam_size == 0) throw ConfigError("beam_size must be at least 1");

    struct Live {
        Hypothesis hyp;
        State state;
        int prev;
    };
    std::vector<Live> live;
    live.push_back({Hypothesis{}, std::move(init), bos_id});
    std::vector<Hypothesis> finished;

    for (size_t round = 0; round < max_len && !live.empty(); ++round) {
        struct Cand {
            double logp;
            size_t parent;
            int token;
        };
        std::vector<Cand> cands;
        std::vector<State> next_states;
        next_states.reserve(live.size());
        for (size_t h = 0; h < live.size(); ++h) {
            auto [dist, next_state] = step(live[h].state, live[h].prev);
            next_states.push_back(std::move(next_state));
            for (size_t tok = 0; tok < dist.size(); ++tok)
                cands.push_back({live[h].hyp.log_prob + clamped_log(dist[tok]), h,
                                 static_cast<int>(tok)});
        }
        size_t keep = std::min(beam_size, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                          [](const Cand& a, const Cand& b) {
                              if (a.logp != b.logp) return a.logp > b.logp;
                              if (a.token != b.token) return a.token < b.token;
                              return a.parent < b.parent;
                          });
        std::vector<Live> next;
        for (size_t i = 0; i < keep; ++i) {
            const Cand& c = cands[i];
            Hypothesis hyp = live[c.parent].hyp;
            hyp.log_prob = c.logp;
            if (c.token == eos_id) {
                hyp.finished = true;
                finished.push_back(std::move(hyp));
            } else {
                hyp.tokens.push_back(c.token);
                next.push_back({std::move(hyp), next_states[c.parent], c.token});
            }
        }
        live = std::move(next);
    }
    if (finished.empty()) {
        for (auto& l : live) finished.push_back(std::move(l.hyp));
    }
    if (finished.empty()) return {};
    size_t best = 0;
    for (size_t i = 1; i < finished.size(); ++i)
        if (finished[i].log_prob > finished[best].log_prob) best = i;
    return finished[best];
}

}  // namespace gummp
