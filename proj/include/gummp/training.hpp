// Training harness: negative sampling, batched gradients, global-norm
// clipping, Adam, and the epoch loop with deterministic RNG discipline
// (one stream: parameter init, then per epoch a shuffle followed by
// negative re-sampling).
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gummp/config.hpp"
#include "gummp/data.hpp"
#include "gummp/model.hpp"
#include "gummp/rng.hpp"

namespace gummp {

struct LossValue {
    double loss = 0.0;
    std::vector<double> token_logps;
};

// Teacher-forced loss of one example at the current parameters (no update).
inline LossValue compute_loss(const ModelParams& params, const IndexedExample& ex,
                              const ModelDims& dims) {
    Tape t;
    ModelVars v = leaf_model(t, params, false);
    LossValue out;
    Var loss = model_loss(t, v, ex, dims, &out.token_logps);
    out.loss = t.scalar(loss);
    return out;
}

// For each positive passage pick one passage uniformly from examples with a
// different question. Deterministic given the generator state.
inline void sample_negatives(std::vector<QAExample>& examples, SeededRng& rng) {
    std::vector<std::pair<size_t, size_t>> pool;  // (example, passage)
    for (size_t e = 0; e < examples.size(); ++e)
        for (size_t p = 0; p < examples[e].passages.size(); ++p) pool.emplace_back(e, p);
    for (size_t e = 0; e < examples.size(); ++e) {
        size_t own = examples[e].passages.size();
        if (pool.size() <= own)
            throw ConfigError("negative sampling needs at least two questions in the corpus");
        for (size_t p = 0; p < examples[e].passages.size(); ++p) {
            size_t pick;
            do {
                pick = static_cast<size_t>(rng.uniform_int(pool.size()));
            } while (pool[pick].first == e);
            examples[e].negatives[p] = examples[pool[pick].first].passages[pool[pick].second];
        }
    }
}

struct AdamState {
    std::vector<NdArray> m, v;
    uint64_t step = 0;

    static AdamState init(ModelParams& params) {
        AdamState s;
        params.visit([&](const std::string&, NdArray& a) {
            s.m.push_back(NdArray::zeros(a.shape));
            s.v.push_back(NdArray::zeros(a.shape));
        });
        return s;
    }
};

// Global-norm clipping followed by one Adam update over parallel
// tensor/gradient/moment lists.
inline void clip_and_adam(std::vector<NdArray*>& tensors, std::vector<NdArray>& grads,
                          AdamState& adam, const TrainConfig& tc) {
    if (tensors.size() != grads.size() || adam.m.size() != grads.size())
        throw ContractError("clip_and_adam: tensor/gradient/moment counts disagree");
    double sq_norm = 0.0;
    for (const auto& g : grads)
        for (double x : g.data) sq_norm += x * x;
    double norm = std::sqrt(sq_norm);
    double clip_scale = (tc.grad_clip > 0 && norm > tc.grad_clip) ? tc.grad_clip / norm : 1.0;

    adam.step += 1;
    double bc1 = 1.0 - std::pow(tc.adam_beta1, static_cast<double>(adam.step));
    double bc2 = 1.0 - std::pow(tc.adam_beta2, static_cast<double>(adam.step));
    for (size_t gi = 0; gi < tensors.size(); ++gi) {
        NdArray& a = *tensors[gi];
        NdArray& g = grads[gi];
        NdArray& m = adam.m[gi];
        NdArray& v = adam.v[gi];
        for (size_t i = 0; i < a.numel(); ++i) {
            double gv = g.data[i] * clip_scale;
            m.data[i] = tc.adam_beta1 * m.data[i] + (1.0 - tc.adam_beta1) * gv;
            v.data[i] = tc.adam_beta2 * v.data[i] + (1.0 - tc.adam_beta2) * gv * gv;
            double mhat = m.data[i] / bc1;
            double vhat = v.data[i] / bc2;
            a.data[i] -= tc.learning_rate * mhat / (std::sqrt(vhat) + tc.adam_eps);
        }
    }
}

// Accumulates each grad-requiring leaf's gradient (creation order matches
// ModelParams::visit order) into the matching accumulator.
inline void accumulate_leaf_grads(const Tape& t, std::vector<NdArray>& grads) {
    const auto& leaves = t.grad_leaves();
    if (leaves.size() != grads.size())
        throw ContractError("gradient collection: " + std::to_string(leaves.size()) +
                            " leaves vs " + std::to_string(grads.size()) + " accumulators");
    for (size_t gi = 0; gi < leaves.size(); ++gi) {
        if (t.numel(leaves[gi]) != grads[gi].numel())
            throw ContractError("gradient collection misaligned at tensor " + std::to_string(gi));
        const double* g = t.grad(leaves[gi]);
        for (size_t i = 0; i < grads[gi].numel(); ++i) grads[gi].data[i] += g[i];
    }
}

// Mean-loss gradient over the batch, clipped at global norm, then one Adam
// step. The PAD embedding row is re-zeroed afterwards.
inline double train_step(const std::vector<IndexedExample>& batch, ModelParams& params,
                         AdamState& adam, const TrainConfig& tc, const ModelDims& dims) {
    std::vector<NdArray> grads;
    params.visit([&](const std::string&, NdArray& a) { grads.push_back(NdArray::zeros(a.shape)); });

    double loss_sum = 0.0;
    Tape t;
    for (const auto& ex : batch) {
        t.clear();
        ModelVars v = leaf_model(t, params, true);
        Var loss = model_loss(t, v, ex, dims);
        double lv = t.scalar(loss);
        if (!std::isfinite(lv)) throw NumericError("non-finite loss on example " + ex.id);
        loss_sum += lv;
        t.backward(loss);
        accumulate_leaf_grads(t, grads);
    }

    double inv_batch = 1.0 / static_cast<double>(batch.size());
    for (auto& g : grads)
        for (double& x : g.data) x *= inv_batch;

    std::vector<NdArray*> tensors;
    params.visit([&](const std::string&, NdArray& a) { tensors.push_back(&a); });
    clip_and_adam(tensors, grads, adam, tc);

    // PAD embedding row stays frozen at zero.
    for (size_t j = 0; j < params.embedding.cols(); ++j)
        params.embedding.at(Vocabulary::kPad, j) = 0.0;

    return loss_sum * inv_batch;
}

// ---------------------------------------------------------------------------
// Epoch loop.
// ---------------------------------------------------------------------------

struct EpochStats {
    size_t epoch = 0;
    double mean_loss = 0.0;
};

class Trainer {
public:
    Trainer(const Config& cfg, const Vocabulary& vocab)
        : cfg_(cfg), vocab_(vocab), dims_(ModelDims::from(cfg.model, vocab.size())),
          rng_(cfg.train.seed) {
        params_ = ModelParams::init(dims_, rng_);
        adam_ = AdamState::init(params_);
    }

    // Resume path: adopt previously trained state.
    Trainer(const Config& cfg, const Vocabulary& vocab, ModelParams params, AdamState adam,
            uint64_t rng_state, size_t epochs_done)
        : cfg_(cfg), vocab_(vocab), dims_(ModelDims::from(cfg.model, vocab.size())),
          rng_(0), params_(std::move(params)), adam_(std::move(adam)), epochs_done_(epochs_done) {
        rng_.set_state(rng_state);
    }

    const ModelParams& params() const { return params_; }
    ModelParams& params() { return params_; }
    const AdamState& adam() const { return adam_; }
    const ModelDims& dims() const { return dims_; }
    const Vocabulary& vocab() const { return vocab_; }
    uint64_t rng_state() const { return rng_.state(); }
    size_t epochs_done() const { return epochs_done_; }

    // Runs epochs [epochs_done, total); invokes on_epoch after each.
    void run(std::vector<QAExample>& train_set, size_t total_epochs,
             const std::function<void(const EpochStats&)>& on_epoch = {}) {
        bool negatives_ready = false;
        for (size_t epoch = epochs_done_; epoch < total_epochs; ++epoch) {
            std::vector<size_t> order(train_set.size());
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            rng_.shuffle(order);
            if (dims_.with_negative && (cfg_.train.resample_negatives || !negatives_ready)) {
                sample_negatives(train_set, rng_);
                negatives_ready = true;
            }
            double loss_acc = 0.0;
            size_t batches = 0;
            for (size_t start = 0; start < order.size(); start += cfg_.train.batch_size) {
                size_t end = std::min(order.size(), start + cfg_.train.batch_size);
                std::vector<IndexedExample> batch;
                for (size_t i = start; i < end; ++i)
                    batch.push_back(index_example(train_set[order[i]], vocab_));
                loss_acc += train_step(batch, params_, adam_, cfg_.train, dims_);
                ++batches;
            }
            epochs_done_ = epoch + 1;
            if (on_epoch) on_epoch({epoch + 1, loss_acc / std::max<size_t>(1, batches)});
        }
    }

private:
    Config cfg_;
    Vocabulary vocab_;
    ModelDims dims_;
    SeededRng rng_;
    ModelParams params_;
    AdamState adam_;
    size_t epochs_done_ = 0;
};

}  // namespace gummp
