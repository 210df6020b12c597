// Full-model assembly: parameter container, example indexing against the
// vocabulary, end-to-end encoding into unified memories, the teacher-forced
// loss, and value-level decoding (greedy and beam) on top of the tape.
#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "gummp/autodiff.hpp"
#include "gummp/config.hpp"
#include "gummp/data.hpp"
#include "gummp/decoder.hpp"
#include "gummp/encoder.hpp"
#include "gummp/memory.hpp"
#include "gummp/vocab.hpp"

namespace gummp {

// Concrete widths derived from a configuration plus the vocabulary size.
struct ModelDims {
    size_t d, z, l, s, k_max, n_max;
    size_t vocab, dec_vocab;
    bool with_negative = true;
    bool with_um = true;

    static ModelDims from(const ModelConfig& cfg, size_t vocab_size) {
        ModelDims m;
        m.d = cfg.embed_dim;
        m.z = cfg.perspectives;
        m.l = cfg.pam_width;
        m.s = cfg.S();
        m.k_max = cfg.k_max;
        m.n_max = cfg.max_passage_len;
        m.vocab = vocab_size;
        m.dec_vocab = cfg.decoder_vocab_limit == 0
                          ? vocab_size
                          : std::min(cfg.decoder_vocab_limit, vocab_size);
        m.with_negative = cfg.ablation != Ablation::NoNeg;
        m.with_um = cfg.ablation != Ablation::NoUm;
        return m;
    }

    size_t mpm_width() const { return 2 * (d + z); }
    size_t mem_width() const { return mpm_width() + (with_um ? l : 0); }
    size_t q_width() const { return mpm_width(); }
};

struct ModelParams {
    NdArray embedding;  // [V x D]; PAD row pinned to zero
    EncoderParams enc;
    AlignmentWeights align;  // empty under no-um
    DecoderParams dec;

    static ModelParams init(const ModelDims& dims, SeededRng& rng) {
        ModelParams p;
        p.embedding = NdArray::glorot(dims.vocab, dims.d, rng);
        for (size_t j = 0; j < dims.d; ++j) p.embedding.at(Vocabulary::kPad, j) = 0.0;
        p.enc = EncoderParams::init(dims.d, dims.z, dims.with_negative, rng);
        if (dims.with_um && dims.k_max > 1)
            p.align = AlignmentWeights::init(dims.k_max, dims.n_max, dims.l, rng);
        p.dec = DecoderParams::init(dims.d, dims.mem_width(), dims.q_width(), dims.s,
                                    dims.dec_vocab, rng);
        return p;
    }

    template <typename F>
    void visit(F&& f) {
        f("embedding", embedding);
        enc.visit(f);
        if (!align.w.empty()) f("align", align.w);
        dec.visit(f);
    }

    size_t tensor_count() {
        size_t n = 0;
        visit([&](const std::string&, NdArray&) { ++n; });
        return n;
    }
};

struct ModelVars {
    Var embedding;
    EncoderVars enc;
    Var align;
    DecoderVars dec;
    bool with_um = true;
};

inline ModelVars leaf_model(Tape& t, const ModelParams& p, bool rg) {
    ModelVars v;
    v.embedding = t.leaf(p.embedding, rg);
    v.enc = leaf_encoder(t, p.enc, rg);
    v.with_um = !p.align.w.empty();
    if (v.with_um) v.align = t.leaf(p.align.w, rg);
    v.dec = leaf_decoder(t, p.dec, rg);
    return v;
}

// An example resolved against the vocabulary: base ids feed the embedding
// table, extended ids feed the copy scatter, targets are the gold answer on
// the extended vocabulary with EOS appended (source-absent OOVs become UNK).
struct IndexedExample {
    std::string id;
    std::vector<int> question;
    std::vector<std::vector<int>> passages;
    std::vector<std::vector<int>> negatives;
    std::vector<int> answer_inputs;  // BOS + base-id gold tokens (teacher forcing)
    std::vector<int> targets;        // extended-aware gold ids + EOS
    ExtendedIds ext;
};

inline IndexedExample index_example(const QAExample& ex, const Vocabulary& vocab) {
    IndexedExample ix;
    ix.id = ex.id;
    ix.question = vocab.encode(ex.question);
    for (const auto& p : ex.passages) ix.passages.push_back(vocab.encode(p));
    for (const auto& n : ex.negatives) ix.negatives.push_back(vocab.encode(n));
    ix.ext = map_extended(ex.passages, ex.question, vocab);
    ix.answer_inputs.push_back(Vocabulary::kBos);
    for (const auto& tok : ex.answer) {
        ix.answer_inputs.push_back(vocab.id_of(tok));
        if (vocab.contains(tok)) {
            ix.targets.push_back(vocab.id_of(tok));
        } else {
            int ext = ix.ext.map.extended_id(tok);
            ix.targets.push_back(ext >= 0 ? ext : Vocabulary::kUnk);
        }
    }
    ix.targets.push_back(Vocabulary::kEos);
    return ix;
}

// Tape-level encoded memories the decoder attends over.
struct EncodedMemories {
    std::vector<Var> mem;      // K matrices [N_k x mem_width]
    std::vector<Mask> masks;   // per-passage validity
    Var question_mem;          // [N_q x q_width]
    Mask question_mask;
    std::vector<Mpm> mpms;     // per-passage MPMs (exposed for tests)
};

inline EncodedMemories encode_memories(Tape& t, const ModelVars& v, const IndexedExample& ex,
                                       const ModelDims& dims) {
    size_t K = ex.passages.size();
    if (K == 0) throw DegenerateInputError("encode_memories: example has no passages");
    if (ex.question.empty()) throw DegenerateInputError("encode_memories: empty question");

    EncodedMemories out;
    EncodedSequence question =
        encode_tokens(t, v.enc, t.gather_rows(v.embedding, ex.question), {});

    std::vector<EncodedSequence> passages(K);
    std::vector<EncodedSequence> negatives(K);
    std::vector<const EncodedSequence*> neg_ptrs(K, nullptr);
    for (size_t k = 0; k < K; ++k) {
        passages[k] = encode_tokens(t, v.enc, t.gather_rows(v.embedding, ex.passages[k]), {});
        if (dims.with_negative) {
            if (k >= ex.negatives.size() || ex.negatives[k].empty())
                throw DegenerateInputError("encode_memories: passage " + std::to_string(k) +
                                           " lacks a negative passage");
            negatives[k] =
                encode_tokens(t, v.enc, t.gather_rows(v.embedding, ex.negatives[k]), {});
            neg_ptrs[k] = &negatives[k];
        }
    }

    for (size_t k = 0; k < K; ++k)
        out.mpms.push_back(
            build_passage_mpm(t, v.enc, passages[k], {}, neg_ptrs[k], {}, question.pooled));

    Mpm q = build_question_mpm(t, v.enc, question, {}, passages, neg_ptrs);
    out.question_mem = q.h;
    out.question_mask = q.mask;

    for (size_t k = 0; k < K; ++k) {
        if (dims.with_um) {
            Var pam = build_pam(t, k, out.mpms, v.align, dims.n_max, dims.l);
            Um um = build_um(t, out.mpms[k], pam);
            out.mem.push_back(um.u);
            out.masks.push_back(um.mask);
        } else {
            out.mem.push_back(out.mpms[k].h);
            out.masks.push_back(out.mpms[k].mask);
        }
    }
    return out;
}

// Zero initial decoder state: K hidden/cell pairs, K zero contexts, and the
// BOS embedding as the previous-token input.
struct DecoderSeed {
    std::vector<LstmState> states;
    std::vector<Var> ctx_mem, ctx_q;
};

inline DecoderSeed decoder_seed(Tape& t, const ModelDims& dims, size_t K) {
    DecoderSeed seed;
    Var zs = t.zeros(dims.s);
    Var zm = t.zeros(dims.mem_width());
    Var zq = t.zeros(dims.q_width());
    for (size_t k = 0; k < K; ++k) {
        seed.states.push_back({zs, zs});
        seed.ctx_mem.push_back(zm);
        seed.ctx_q.push_back(zq);
    }
    return seed;
}

// Teacher-forced cross entropy: L = -sum_t log V_final[target_t], with the
// gold previous token fed at every step and probabilities clamped at 1e-12.
inline Var model_loss(Tape& t, const ModelVars& v, const IndexedExample& ex,
                      const ModelDims& dims, std::vector<double>* token_logps = nullptr) {
    if (ex.targets.size() < 2)
        throw DegenerateInputError("model_loss: empty answer for example " + ex.id);
    EncodedMemories mems = encode_memories(t, v, ex, dims);
    size_t K = ex.passages.size();
    size_t E = ex.ext.map.extended_size();
    DecoderSeed seed = decoder_seed(t, dims, K);

    Var total;
    for (size_t step = 0; step < ex.targets.size(); ++step) {
        Var prev_embed = t.row(v.embedding, ex.answer_inputs[step]);
        StepVars sv = decoder_step(t, v.dec, mems.mem, mems.masks, ex.ext.passage_ids,
                                   mems.question_mem, mems.question_mask, ex.ext.question_ids, E,
                                   seed.states, seed.ctx_mem, seed.ctx_q, prev_embed);
        Var logp = t.log_clamped(t.pick(sv.final_dist, ex.targets[step]), kLogClamp);
        if (token_logps) token_logps->push_back(t.scalar(logp));
        total = (step == 0) ? logp : t.add(total, logp);
        seed.states = std::move(sv.states);
        seed.ctx_mem = std::move(sv.ctx_mem);
        seed.ctx_q = std::move(sv.ctx_q);
    }
    return t.scale(total, -1.0);
}

// ---------------------------------------------------------------------------
// Value-level decoding. The stepper owns a tape, leafs parameters and
// memories once, and rolls the tape back after every step so decoding runs
// in bounded memory while reusing the exact training-path operations.
// ---------------------------------------------------------------------------

// Everything one step produced, copied out of the tape.
struct StepValues {
    std::vector<std::vector<double>> att_mem, att_q;       // K x positions
    std::vector<std::vector<double>> vocab;                // K x dec_vocab
    std::vector<std::vector<double>> copy_mem, copy_q;     // K x ext_size
    std::vector<std::array<double, 3>> gates;              // K
    std::vector<double> final_dist;                        // ext_size
};

class ModelStepper {
public:
    struct State {
        std::vector<NdArray> h, c, ctx_mem, ctx_q;
    };

    ModelStepper(const ModelParams& params, const IndexedExample& ex, const ModelDims& dims)
        : dims_(dims), ex_(ex) {
        vars_ = leaf_model(tape_, params, false);
        mems_ = encode_memories(tape_, vars_, ex, dims);
        ext_size_ = ex.ext.map.extended_size();
        k_ = ex.passages.size();
        mark_ = tape_.mark();
    }

    size_t ext_size() const { return ext_size_; }

    State initial_state() const {
        State s;
        s.h.assign(k_, NdArray::zeros({dims_.s}));
        s.c.assign(k_, NdArray::zeros({dims_.s}));
        s.ctx_mem.assign(k_, NdArray::zeros({dims_.mem_width()}));
        s.ctx_q.assign(k_, NdArray::zeros({dims_.q_width()}));
        return s;
    }

    // prev_token may be an extended id; copied OOV tokens have no embedding
    // row and fall back to UNK.
    std::pair<std::vector<double>, State> step(const State& state, int prev_token) {
        StepValues ignored;
        return step_full(state, prev_token, ignored);
    }

    std::pair<std::vector<double>, State> step_full(const State& state, int prev_token,
                                                    StepValues& out) {
        tape_.rollback(mark_);
        int base = prev_token < static_cast<int>(dims_.vocab) ? prev_token : Vocabulary::kUnk;
        Var prev_embed = tape_.row(vars_.embedding, base);
        std::vector<LstmState> states(k_);
        std::vector<Var> ctx_mem(k_), ctx_q(k_);
        for (size_t i = 0; i < k_; ++i) {
            states[i] = {tape_.leaf(state.h[i]), tape_.leaf(state.c[i])};
            ctx_mem[i] = tape_.leaf(state.ctx_mem[i]);
            ctx_q[i] = tape_.leaf(state.ctx_q[i]);
        }
        StepVars sv = decoder_step(tape_, vars_.dec, mems_.mem, mems_.masks, ex_.ext.passage_ids,
                                   mems_.question_mem, mems_.question_mask, ex_.ext.question_ids,
                                   ext_size_, states, ctx_mem, ctx_q, prev_embed);
        State next;
        for (size_t i = 0; i < k_; ++i) {
            next.h.push_back(tape_.value_of(sv.states[i].h));
            next.c.push_back(tape_.value_of(sv.states[i].c));
            next.ctx_mem.push_back(tape_.value_of(sv.ctx_mem[i]));
            next.ctx_q.push_back(tape_.value_of(sv.ctx_q[i]));
        }
        out = extract_(sv);
        std::vector<double> dist = out.final_dist;
        return {std::move(dist), std::move(next)};
    }

private:
    ModelDims dims_;
    IndexedExample ex_;
    Tape tape_;
    ModelVars vars_;
    EncodedMemories mems_;
    Tape::Mark mark_;
    size_t ext_size_ = 0;
    size_t k_ = 0;

    StepValues extract_(const StepVars& sv) {
        StepValues out;
        auto grab = [&](Var v) {
            const double* p = tape_.val(v);
            return std::vector<double>(p, p + tape_.numel(v));
        };
        for (size_t i = 0; i < k_; ++i) {
            out.att_mem.push_back(grab(sv.att_mem[i]));
            out.att_q.push_back(grab(sv.att_q[i]));
            out.vocab.push_back(grab(sv.vocab[i]));
            out.copy_mem.push_back(grab(sv.copy_mem[i]));
            out.copy_q.push_back(grab(sv.copy_q[i]));
            auto g = grab(sv.gates[i]);
            out.gates.push_back({g[0], g[1], g[2]});
        }
        out.final_dist = grab(sv.final_dist);
        return out;
    }
};

// Greedy decode: argmax of the final distribution each step (ties to the
// lowest id), stopping at EOS or max_len. Returns extended-vocabulary ids.
inline std::vector<int> greedy_decode(const ModelParams& params, const IndexedExample& ex,
                                      const ModelDims& dims, size_t max_len,
                                      std::vector<StepValues>* trace = nullptr) {
    ModelStepper stepper(params, ex, dims);
    auto step = [&](const ModelStepper::State& s, int prev) {
        StepValues vals;
        auto r = stepper.step_full(s, prev, vals);
        if (trace) trace->push_back(std::move(vals));
        return r;
    };
    auto out = greedy_search(stepper.initial_state(), step, max_len, Vocabulary::kBos,
                             Vocabulary::kEos);
    if (trace) trace->resize(out.size());  // one row per emitted token
    return out;
}

inline Hypothesis beam_decode(const ModelParams& params, const IndexedExample& ex,
                              const ModelDims& dims, size_t beam_size, size_t max_len) {
    ModelStepper stepper(params, ex, dims);
    auto step = [&](const ModelStepper::State& s, int prev) { return stepper.step(s, prev); };
    return beam_search(stepper.initial_state(), step, beam_size, max_len, Vocabulary::kBos,
                       Vocabulary::kEos);
}

// Map decoded extended ids back to surface tokens.
inline std::vector<std::string> tokens_of(const std::vector<int>& ids, const Vocabulary& vocab,
                                          const ExtendedVocabMap& ext) {
    std::vector<std::string> out;
    for (int id : ids) {
        if (id < static_cast<int>(vocab.size()))
            out.push_back(vocab.token_of(id));
        else
            out.push_back(ext.surface_of(id));
    }
    return out;
}

}  // namespace gummp
