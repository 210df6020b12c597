// Dataset records, JSONL ingestion with validation, tokenized examples,
// and the synthetic correlated-entity task used to exercise the
// cross-passage machinery at desk scale.
#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gummp/config.hpp"
#include "gummp/errors.hpp"
#include "gummp/rng.hpp"
#include "gummp/vocab.hpp"

namespace gummp {

struct DatasetRecord {
    std::string id;
    std::string question;
    std::vector<std::string> passages;
    std::string answer;
};

// A tokenized, truncated example; negatives are attached by the sampler.
struct QAExample {
    std::string id;
    std::vector<std::string> question;
    std::vector<std::vector<std::string>> passages;
    std::vector<std::vector<std::string>> negatives;  // parallel to passages
    std::vector<std::string> answer;
};

namespace detail {

inline void truncate(std::vector<std::string>& toks, size_t limit) {
    if (toks.size() > limit) toks.resize(limit);
}

}  // namespace detail

inline QAExample to_example(const DatasetRecord& rec, const ModelConfig& cfg) {
    QAExample ex;
    ex.id = rec.id;
    ex.question = tokenize(rec.question);
    detail::truncate(ex.question, cfg.max_question_len);
    size_t k = std::min(rec.passages.size(), cfg.k_max);
    for (size_t i = 0; i < k; ++i) {
        auto toks = tokenize(rec.passages[i]);
        detail::truncate(toks, cfg.max_passage_len);
        ex.passages.push_back(std::move(toks));
    }
    ex.answer = tokenize(rec.answer);
    detail::truncate(ex.answer, cfg.max_answer_len);
    ex.negatives.resize(ex.passages.size());
    return ex;
}

// One JSON object per line: {"id", "question", "passages", "answer"}.
inline std::vector<DatasetRecord> load_records(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open dataset file " + path);
    std::vector<DatasetRecord> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto where = [&](const std::string& what) {
            return path + ":" + std::to_string(lineno) + ": " + what;
        };
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw DataError(where("malformed JSON record"));
        DatasetRecord rec;
        if (!j.contains("question") || !j["question"].is_string())
            throw DataError(where("missing or non-string field \"question\""));
        if (!j.contains("passages") || !j["passages"].is_array())
            throw DataError(where("missing or non-array field \"passages\""));
        if (!j.contains("answer") || !j["answer"].is_string())
            throw DataError(where("missing or non-string field \"answer\""));
        rec.id = j.value("id", "line-" + std::to_string(lineno));
        rec.question = j["question"].get<std::string>();
        rec.answer = j["answer"].get<std::string>();
        for (const auto& p : j["passages"]) {
            if (!p.is_string()) throw DataError(where("field \"passages\" must hold strings"));
            rec.passages.push_back(p.get<std::string>());
        }
        if (rec.question.find_first_not_of(" \t") == std::string::npos)
            throw DataError(where("field \"question\" is empty"));
        if (rec.passages.empty()) throw DataError(where("field \"passages\" is empty"));
        if (rec.answer.find_first_not_of(" \t") == std::string::npos)
            throw DataError(where("field \"answer\" is empty"));
        out.push_back(std::move(rec));
    }
    if (out.empty()) throw DataError("dataset file " + path + " holds no records");
    return out;
}

inline std::vector<QAExample> ingest(const std::string& path, const ModelConfig& cfg) {
    std::vector<QAExample> out;
    for (const auto& rec : load_records(path)) out.push_back(to_example(rec, cfg));
    return out;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
    std::string s;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) s += ' ';
        s += toks[i];
    }
    return s;
}

inline void write_records(const std::string& path, const std::vector<DatasetRecord>& records) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write dataset file " + path);
    for (const auto& rec : records) {
        nlohmann::json j{{"id", rec.id},
                         {"question", rec.question},
                         {"passages", rec.passages},
                         {"answer", rec.answer}};
        os << j.dump() << "\n";
    }
}

inline void write_examples(const std::string& path, const std::vector<QAExample>& examples) {
    std::vector<DatasetRecord> recs;
    for (const auto& ex : examples) {
        DatasetRecord r;
        r.id = ex.id;
        r.question = join_tokens(ex.question);
        for (const auto& p : ex.passages) r.passages.push_back(join_tokens(p));
        r.answer = join_tokens(ex.answer);
        recs.push_back(std::move(r));
    }
    write_records(path, recs);
}

// ---------------------------------------------------------------------------
// Synthetic correlated-entity task.
//
// Each example hides one key entity in m of K passages; distractor entities
// appear in exactly one passage each (distractors hosted alongside the key
// are written twice within their single passage, so within-passage counts do
// not reveal the answer). The question names the example's topic token,
// which is sprinkled into the key-bearing passages. The gold answer is a
// fixed template around the key entity, so producing it requires pointing at
// the entity that recurs across passages.
// ---------------------------------------------------------------------------

struct SyntheticTaskSpec {
    size_t vocab_size = 64;
    size_t k = 3;                // passages per question
    size_t passage_len = 12;
    size_t num_examples = 200;
    size_t cooccur = 2;          // m: passages carrying the key entity
    size_t distractors = 4;      // distractor entities per example
    uint64_t seed = 1;
};

namespace detail {

struct SynthInventory {
    std::vector<std::string> topics, entities, fillers;
};

inline SynthInventory synth_inventory(const SyntheticTaskSpec& spec) {
    // 4 specials + 6 template words are reserved out of the vocab budget.
    constexpr size_t kReserved = 10;
    if (spec.vocab_size < kReserved + 8)
        throw ConfigError("synthetic vocab_size too small, need at least " +
                          std::to_string(kReserved + 8));
    size_t budget = spec.vocab_size - kReserved;
    SynthInventory inv;
    size_t n_topics = std::max<size_t>(2, budget / 6);
    size_t n_entities = std::max<size_t>(4, (budget - n_topics) / 2);
    size_t n_fillers = budget - n_topics - n_entities;
    if (n_entities < spec.distractors + 1)
        throw ConfigError("infeasible synthetic spec: " + std::to_string(spec.distractors + 1) +
                          " entities per example but the pool holds only " +
                          std::to_string(n_entities));
    for (size_t i = 0; i < n_topics; ++i) inv.topics.push_back("t" + std::to_string(i));
    for (size_t i = 0; i < n_entities; ++i) inv.entities.push_back("e" + std::to_string(i));
    for (size_t i = 0; i < n_fillers; ++i) inv.fillers.push_back("f" + std::to_string(i));
    return inv;
}

}  // namespace detail

inline std::vector<DatasetRecord> gen_synthetic(const SyntheticTaskSpec& spec) {
    if (spec.cooccur < 1 || spec.cooccur > spec.k)
        throw ConfigError("synthetic co-occurrence count must lie in [1, K]");
    auto inv = detail::synth_inventory(spec);
    // Worst-case insertions per passage: key + topic + doubled distractors.
    size_t per_passage_distractors = (spec.distractors + spec.k - 1) / spec.k;
    if (2 + 2 * per_passage_distractors > spec.passage_len)
        throw ConfigError("synthetic passage_len " + std::to_string(spec.passage_len) +
                          " too small for " + std::to_string(spec.distractors) + " distractors");

    SeededRng rng(spec.seed);
    std::vector<DatasetRecord> out;
    for (size_t n = 0; n < spec.num_examples; ++n) {
        const std::string& topic = inv.topics[rng.uniform_int(inv.topics.size())];
        std::string other_topic;
        do {
            other_topic = inv.topics[rng.uniform_int(inv.topics.size())];
        } while (other_topic == topic);
        // Key + distinct distractors.
        std::vector<size_t> picks(inv.entities.size());
        for (size_t i = 0; i < picks.size(); ++i) picks[i] = i;
        rng.shuffle(picks);
        const std::string& key = inv.entities[picks[0]];
        std::vector<std::string> distractors;
        for (size_t i = 0; i < spec.distractors; ++i) distractors.push_back(inv.entities[picks[i + 1]]);

        // Choose the m passages hosting the key.
        std::vector<size_t> order(spec.k);
        for (size_t i = 0; i < spec.k; ++i) order[i] = i;
        rng.shuffle(order);
        std::vector<bool> hosts(spec.k, false);
        for (size_t i = 0; i < spec.cooccur; ++i) hosts[order[i]] = true;

        // Fill passages with fillers, then overwrite free slots.
        std::vector<std::vector<std::string>> passages(spec.k);
        std::vector<std::vector<size_t>> free_slots(spec.k);
        for (size_t p = 0; p < spec.k; ++p) {
            for (size_t i = 0; i < spec.passage_len; ++i)
                passages[p].push_back(inv.fillers[rng.uniform_int(inv.fillers.size())]);
            free_slots[p].resize(spec.passage_len);
            for (size_t i = 0; i < spec.passage_len; ++i) free_slots[p][i] = i;
            rng.shuffle(free_slots[p]);
        }
        auto place = [&](size_t p, const std::string& tok) {
            passages[p][free_slots[p].back()] = tok;
            free_slots[p].pop_back();
        };
        for (size_t p = 0; p < spec.k; ++p) {
            if (hosts[p]) {
                place(p, key);
                place(p, topic);
            } else {
                place(p, other_topic);
            }
        }
        for (size_t d = 0; d < distractors.size(); ++d) {
            size_t p = d % spec.k;
            place(p, distractors[d]);
            if (hosts[p]) place(p, distractors[d]);  // doubled confound
        }

        DatasetRecord rec;
        rec.id = "synth-" + std::to_string(n);
        rec.question = "which " + topic + " thing ?";
        rec.answer = "the " + topic + " thing is " + key;
        for (auto& p : passages) rec.passages.push_back(join_tokens(p));
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace gummp
