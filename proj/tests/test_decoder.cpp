#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "gummp/decoder.hpp"
#include "gummp/gradcheck.hpp"
#include "gummp/ndarray.hpp"
#include "gummp/rng.hpp"

using namespace gummp;

TEST_CASE("attend singleton, uniform and loop-oracle cases", "[decoder]") {
    SeededRng rng(1);
    size_t W = 4, S = 3;

    SECTION("single live position takes all the mass") {
        Tape t;
        NdArray mem = NdArray::uniform({3, W}, 1.0, rng);
        Attention a = attend(t, t.leaf(NdArray::uniform({S}, 1.0, rng)), t.leaf(mem),
                             Mask{0, 1, 0}, t.leaf(NdArray::uniform({W}, 1.0, rng)),
                             t.leaf(NdArray::uniform({S}, 1.0, rng)),
                             t.leaf(NdArray::zeros({1})));
        CHECK(t.val(a.weights)[1] == 1.0);
        for (size_t j = 0; j < W; ++j)
            CHECK(t.val(a.context)[j] == Catch::Approx(mem.at(1, j)).margin(1e-15));
    }

    SECTION("zero memory weights give uniform attention and the row mean") {
        Tape t;
        NdArray mem = NdArray::uniform({4, W}, 1.0, rng);
        Attention a = attend(t, t.leaf(NdArray::uniform({S}, 1.0, rng)), t.leaf(mem),
                             Mask{1, 1, 0, 1}, t.leaf(NdArray::zeros({W})),
                             t.leaf(NdArray::uniform({S}, 1.0, rng)),
                             t.leaf(NdArray::zeros({1})));
        for (size_t i : {0u, 1u, 3u})
            CHECK(t.val(a.weights)[i] == Catch::Approx(1.0 / 3).margin(1e-12));
        for (size_t j = 0; j < W; ++j) {
            double mean = (mem.at(0, j) + mem.at(1, j) + mem.at(3, j)) / 3.0;
            CHECK(t.val(a.context)[j] == Catch::Approx(mean).margin(1e-12));
        }
    }

    SECTION("random case equals the explicit loop oracle") {
        for (int rep = 0; rep < 30; ++rep) {
            Tape t;
            size_t N = 1 + rng.uniform_int(5);
            NdArray mem = NdArray::uniform({N, W}, 1.0, rng);
            NdArray state = NdArray::uniform({S}, 1.0, rng);
            NdArray wm = NdArray::uniform({W}, 1.0, rng);
            NdArray ws = NdArray::uniform({S}, 1.0, rng);
            NdArray bias({1}, {rng.uniform(-1, 1)});
            Attention a = attend(t, t.leaf(state), t.leaf(mem), {}, t.leaf(wm), t.leaf(ws),
                                 t.leaf(bias));

            std::vector<double> e(N);
            double ws_dot = 0.0;
            for (size_t j = 0; j < S; ++j) ws_dot += ws.at(j) * state.at(j);
            for (size_t i = 0; i < N; ++i) {
                double wm_dot = 0.0;
                for (size_t j = 0; j < W; ++j) wm_dot += wm.at(j) * mem.at(i, j);
                e[i] = std::tanh(wm_dot + ws_dot + bias.at(0));
            }
            double mx = *std::max_element(e.begin(), e.end());
            double z = 0.0;
            for (double& x : e) {
                x = std::exp(x - mx);
                z += x;
            }
            for (size_t i = 0; i < N; ++i)
                CHECK(t.val(a.weights)[i] == Catch::Approx(e[i] / z).margin(1e-12));
            for (size_t j = 0; j < W; ++j) {
                double want = 0.0;
                for (size_t i = 0; i < N; ++i) want += (e[i] / z) * mem.at(i, j);
                CHECK(t.val(a.context)[j] == Catch::Approx(want).margin(1e-12));
            }
        }
    }
}

namespace {

// A tiny random decoding setup shared by the step tests.
struct StepFixture {
    size_t K, S, memw, qw, embed, vocab, E;
    DecoderParams params;
    NdArray question;
    std::vector<NdArray> memories;
    std::vector<std::vector<int>> mem_ids;
    std::vector<int> q_ids;

    explicit StepFixture(SeededRng& rng, size_t k = 2, bool zero_weights = false)
        : K(k), S(3), memw(5), qw(4), embed(3), vocab(7) {
        params = DecoderParams::init(embed, memw, qw, S, vocab, rng);
        if (zero_weights) {
            params.gate_w = NdArray::zeros(params.gate_w.shape);
            params.gate_b = NdArray::zeros(params.gate_b.shape);
            params.out_w = NdArray::zeros(params.out_w.shape);
            params.out_b = NdArray::zeros(params.out_b.shape);
        }
        question = NdArray::uniform({3, qw}, 1.0, rng);
        for (size_t i = 0; i < K; ++i) {
            memories.push_back(NdArray::uniform({4, memw}, 1.0, rng));
            mem_ids.push_back({int(rng.uniform_int(vocab)), int(rng.uniform_int(vocab)),
                               7, int(rng.uniform_int(vocab))});  // one OOV id = vocab
        }
        q_ids = {0, 5, 6};
        E = vocab + 1;
    }

    StepVars run(Tape& t) const {
        DecoderVars d = leaf_decoder(t, params, false);
        std::vector<Var> mems;
        std::vector<Mask> masks(K);
        for (const auto& m : memories) mems.push_back(t.leaf(m));
        std::vector<LstmState> states;
        std::vector<Var> cm, cq;
        for (size_t i = 0; i < K; ++i) {
            states.push_back({t.zeros(S), t.zeros(S)});
            cm.push_back(t.zeros(memw));
            cq.push_back(t.zeros(qw));
        }
        SeededRng prng(99);  // same previous-token embedding on every run
        Var prev = t.leaf(NdArray::uniform({embed}, 1.0, prng));
        return decoder_step(t, d, mems, masks, mem_ids, t.leaf(question), {}, q_ids, E, states,
                            cm, cq, prev);
    }
};

}  // namespace

TEST_CASE("vocab_dist uniform for zero weights and normalized in general", "[decoder]") {
    SeededRng rng(3);
    StepFixture fix(rng, 1, true);
    Tape t;
    StepVars sv = fix.run(t);
    for (size_t i = 0; i < fix.vocab; ++i)
        CHECK(t.val(sv.vocab[0])[i] == Catch::Approx(1.0 / fix.vocab).margin(1e-12));

    StepFixture fix2(rng, 2, false);
    Tape t2;
    StepVars sv2 = fix2.run(t2);
    for (size_t k = 0; k < 2; ++k) {
        double sum = 0.0;
        for (size_t i = 0; i < fix2.vocab; ++i) {
            CHECK(t2.val(sv2.vocab[k])[i] >= 0.0);
            sum += t2.val(sv2.vocab[k])[i];
        }
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("copy_dist scatter: point mass, merge, and OOV ids", "[decoder]") {
    Tape t;
    // All mass on one token.
    Var one = t.scatter_sum(t.leaf_vec({0, 1, 0}), {4, 2, 4}, 6);
    CHECK(t.val(one)[2] == 1.0);

    // Repeated token at two positions merges its mass: 0.3 + 0.2.
    Var merged = t.scatter_sum(t.leaf_vec({0.3, 0.5, 0.2}), {1, 3, 1}, 6);
    CHECK(t.val(merged)[1] == Catch::Approx(0.5).margin(1e-15));
    CHECK(t.val(merged)[3] == Catch::Approx(0.5).margin(1e-15));

    // An OOV source token carries its extended id >= V.
    SeededRng rng(5);
    StepFixture fix(rng);
    Tape t2;
    StepVars sv = fix.run(t2);
    double oov_mass = t2.val(sv.copy_mem[0])[fix.vocab];
    CHECK(oov_mass > 0.0);  // position with ext id == vocab received mass
}

TEST_CASE("gates blend and V_final normalization", "[decoder]") {
    SeededRng rng(7);
    StepFixture fix(rng, 1, true);  // zero gate weights -> (1/3, 1/3, 1/3)
    Tape t;
    StepVars sv = fix.run(t);
    for (int g = 0; g < 3; ++g)
        CHECK(t.val(sv.gates[0])[g] == Catch::Approx(1.0 / 3).margin(1e-12));
    // Equal blend of the three distributions.
    for (size_t i = 0; i < fix.E; ++i) {
        double vk = i < fix.vocab ? t.val(sv.vocab[0])[i] : 0.0;
        double want = (vk + t.val(sv.copy_mem[0])[i] + t.val(sv.copy_q[0])[i]) / 3.0;
        CHECK(t.val(sv.final_dist)[i] == Catch::Approx(want).margin(1e-12));
    }

    StepFixture fix2(rng, 3, false);
    Tape t2;
    StepVars sv2 = fix2.run(t2);
    double sum = 0.0;
    for (size_t i = 0; i < fix2.E; ++i) {
        CHECK(t2.val(sv2.final_dist)[i] >= 0.0);
        sum += t2.val(sv2.final_dist)[i];
    }
    CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    for (size_t k = 0; k < 3; ++k) {
        double gs = t2.val(sv2.gates[k])[0] + t2.val(sv2.gates[k])[1] + t2.val(sv2.gates[k])[2];
        CHECK(gs == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("aggregation is invariant under passage permutation", "[decoder]") {
    SeededRng rng(9);
    // K = 2: swapping the two tuples is a bitwise no-op (fp addition is
    // commutative).
    StepFixture two(rng, 2, false);
    Tape ta;
    NdArray base2 = ta.value_of(two.run(ta).final_dist);
    StepFixture two_swapped = two;
    std::swap(two_swapped.memories[0], two_swapped.memories[1]);
    std::swap(two_swapped.mem_ids[0], two_swapped.mem_ids[1]);
    Tape tb;
    NdArray swap2 = tb.value_of(two_swapped.run(tb).final_dist);
    for (size_t i = 0; i < base2.numel(); ++i) CHECK(base2.data[i] == swap2.data[i]);

    // K = 3: permutation regroups the sum, so equality holds to the last ulp
    // of the accumulation rather than bitwise.
    StepFixture fix(rng, 3, false);
    Tape t;
    NdArray base = t.value_of(fix.run(t).final_dist);
    StepFixture permuted = fix;
    std::swap(permuted.memories[0], permuted.memories[2]);
    std::swap(permuted.mem_ids[0], permuted.mem_ids[2]);
    Tape t2;
    NdArray swapped = t2.value_of(permuted.run(t2).final_dist);
    for (size_t i = 0; i < base.numel(); ++i)
        CHECK(base.data[i] == Catch::Approx(swapped.data[i]).margin(1e-15));
}

TEST_CASE("decoder states stay zero under zero params and equal under equal inputs",
          "[decoder]") {
    SeededRng rng(11);
    StepFixture fix(rng, 2, false);
    // Zero LSTM: all-zero gates halve everything to zero hiddens.
    auto zero = [&](NdArray& a) { a = NdArray::zeros(a.shape); };
    zero(fix.params.cell.w_in);
    zero(fix.params.cell.u_in);
    zero(fix.params.cell.b_in);
    zero(fix.params.cell.w_forget);
    zero(fix.params.cell.u_forget);
    zero(fix.params.cell.b_forget);
    zero(fix.params.cell.w_out);
    zero(fix.params.cell.u_out);
    zero(fix.params.cell.b_out);
    zero(fix.params.cell.w_cand);
    zero(fix.params.cell.u_cand);
    zero(fix.params.cell.b_cand);
    Tape t;
    StepVars sv = fix.run(t);
    CHECK(t.value_of(sv.states[0].h) == NdArray({fix.S}));
    CHECK(t.value_of(sv.states[1].h) == NdArray({fix.S}));

    // Identical memories and ids across passages give identical states.
    SeededRng rng2(13);
    StepFixture same(rng2, 2, false);
    same.memories[1] = same.memories[0];
    same.mem_ids[1] = same.mem_ids[0];
    Tape t2;
    StepVars sv2 = same.run(t2);
    CHECK(t2.value_of(sv2.states[0].h) == t2.value_of(sv2.states[1].h));
    CHECK(t2.value_of(sv2.gates[0]) == t2.value_of(sv2.gates[1]));
}

TEST_CASE("decoder step gradients pass finite differences", "[decoder]") {
    SeededRng rng(15);
    // theta holds the attention parameters of a one-passage step.
    size_t W = 4, S = 3;
    NdArray mem = NdArray::uniform({3, W}, 1.0, rng);
    NdArray state = NdArray::uniform({S}, 1.0, rng);
    NdArray theta = NdArray::uniform({W + S + 1}, 1.0, rng);
    auto f = [&](Tape& t, Var th) {
        Attention a = attend(t, t.leaf(state), t.leaf(mem), {}, t.slice(th, 0, W),
                             t.slice(th, W, S), t.slice(th, W + S, 1));
        Var copy = t.scatter_sum(a.weights, {0, 2, 0}, 4);
        return t.sum(t.mul(copy, copy));
    };
    CHECK(grad_check(f, theta).max_rel_err <= 1e-6);
}

// ---------------------------------------------------------------------------
// Search over a hand-built two-step distribution table.
// ---------------------------------------------------------------------------

namespace {

// Token 9 is EOS. State identifies the path prefix.
struct ToyStepper {
    // prefix key -> distribution over 10 tokens
    std::map<std::vector<int>, std::vector<double>> table;

    std::pair<std::vector<double>, std::vector<int>> operator()(const std::vector<int>& state,
                                                                int prev) const {
        std::vector<int> key = state;
        if (!state.empty() || prev != 2 /*BOS*/) key.push_back(prev);
        auto it = table.find(key);
        REQUIRE(it != table.end());
        std::vector<int> next = key;
        return {it->second, next};
    }
};

std::vector<double> dist10(std::initializer_list<std::pair<int, double>> entries) {
    std::vector<double> d(10, 0.0);
    for (auto [i, p] : entries) d[i] = p;
    return d;
}

}  // namespace

TEST_CASE("beam width 2 finds the path greedy misses", "[decoder]") {
    // Step 1: p(a=4) = 0.6, p(b=5) = 0.4. After a: best continuation 0.3;
    // after b: continuation 0.9. Greedy takes a (0.6 * 0.3 = 0.18); the best
    // path is b (0.4 * 0.9 = 0.36). Enumerating all two-step paths confirms.
    ToyStepper toy;
    toy.table[{}] = dist10({{4, 0.6}, {5, 0.4}});
    toy.table[{4}] = dist10({{6, 0.3}, {7, 0.25}, {8, 0.25}, {9, 0.2}});
    toy.table[{5}] = dist10({{6, 0.9}, {9, 0.1}});
    toy.table[{4, 6}] = dist10({{9, 1.0}});
    toy.table[{4, 7}] = dist10({{9, 1.0}});
    toy.table[{4, 8}] = dist10({{9, 1.0}});
    toy.table[{5, 6}] = dist10({{9, 1.0}});

    auto greedy = greedy_search(std::vector<int>{}, toy, 4, 2, 9);
    CHECK(greedy == std::vector<int>{4, 6});

    Hypothesis best = beam_search(std::vector<int>{}, toy, 2, 4, 2, 9);
    CHECK(best.tokens == std::vector<int>{5, 6});
    // Exhaustive enumeration of complete paths gives 0.4 * 0.9 * 1.0.
    CHECK(best.log_prob == Catch::Approx(std::log(0.4) + std::log(0.9) + std::log(1.0)).margin(1e-12));

    // Beam of 1 reproduces greedy token-for-token.
    Hypothesis b1 = beam_search(std::vector<int>{}, toy, 1, 4, 2, 9);
    CHECK(b1.tokens == greedy);
}

TEST_CASE("beam log-prob equals the replayed per-step sum", "[decoder]") {
    ToyStepper toy;
    toy.table[{}] = dist10({{4, 0.5}, {5, 0.3}, {6, 0.2}});
    toy.table[{4}] = dist10({{5, 0.7}, {9, 0.3}});
    toy.table[{5}] = dist10({{9, 1.0}});
    toy.table[{6}] = dist10({{9, 1.0}});
    toy.table[{4, 5}] = dist10({{9, 1.0}});

    Hypothesis best = beam_search(std::vector<int>{}, toy, 3, 3, 2, 9);
    // Replay: walk the table over best.tokens and sum the clamped logs.
    double replay = 0.0;
    std::vector<int> state;
    int prev = 2;
    for (int tok : best.tokens) {
        auto [dist, next] = toy(state, prev);
        replay += std::log(std::max(dist[tok], 1e-12));
        state = next;
        prev = tok;
    }
    auto [final_dist, _] = toy(state, prev);
    replay += std::log(std::max(final_dist[9], 1e-12));
    CHECK(best.log_prob == Catch::Approx(replay).margin(1e-10));
}

TEST_CASE("greedy max_len zero gives empty output", "[decoder]") {
    ToyStepper toy;
    toy.table[{}] = dist10({{4, 1.0}});
    CHECK(greedy_search(std::vector<int>{}, toy, 0, 2, 9).empty());
}
