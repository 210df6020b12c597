// Model and training configuration with JSON (de)serialization.
#pragma once

#include <string>

#include <json.hpp>

#include "gummp/errors.hpp"

namespace gummp {

enum class Ablation { Full, NoNeg, NoUm };

inline std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::NoNeg: return "no-neg";
        case Ablation::NoUm: return "no-um";
        default: return "full";
    }
}

inline Ablation ablation_from(const std::string& s) {
    if (s == "full") return Ablation::Full;
    if (s == "no-neg" || s == "no_neg") return Ablation::NoNeg;
    if (s == "no-um" || s == "no_um") return Ablation::NoUm;
    throw ConfigError("unknown ablation mode '" + s + "' (expected full|no-neg|no-um)");
}

struct ModelConfig {
    size_t embed_dim = 300;       // D: embedding size and per-direction BiLSTM width
    size_t perspectives = 5;      // Z
    size_t pam_width = 10;        // L
    size_t decoder_hidden = 0;    // S; 0 means 2*(D+Z)
    size_t k_max = 3;             // maximum passages per question
    size_t max_question_len = 50;
    size_t max_passage_len = 130;
    size_t max_answer_len = 50;
    size_t vocab_max_size = 5000;
    size_t decoder_vocab_limit = 0;  // 0 = unrestricted generation vocabulary
    Ablation ablation = Ablation::Full;

    size_t S() const { return decoder_hidden ? decoder_hidden : 2 * (embed_dim + perspectives); }

    void validate() const {
        if (embed_dim == 0 || perspectives == 0 || pam_width == 0 || k_max == 0)
            throw ConfigError("model dimensions must be positive");
        if (max_question_len == 0 || max_passage_len == 0 || max_answer_len == 0)
            throw ConfigError("truncation lengths must be positive");
        if (vocab_max_size < 5) throw ConfigError("vocab_max_size must be at least 5");
    }
};

struct TrainConfig {
    double learning_rate = 0.0005;
    size_t epochs = 30;
    size_t batch_size = 32;
    uint64_t seed = 1;
    size_t beam_size = 20;
    size_t max_decode_len = 50;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 5.0;
    bool resample_negatives = true;  // re-sample per epoch; false = fixed at epoch 0
    size_t eval_every = 1;           // dev evaluation period in epochs (0 = never)

    void validate() const {
        if (learning_rate <= 0 || epochs == 0 || batch_size == 0 || beam_size == 0)
            throw ConfigError("training parameters must be positive");
    }
};

struct Config {
    ModelConfig model;
    TrainConfig train;

    void validate() const {
        model.validate();
        train.validate();
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& m) {
    j = nlohmann::json{{"embed_dim", m.embed_dim},
                       {"perspectives", m.perspectives},
                       {"pam_width", m.pam_width},
                       {"decoder_hidden", m.decoder_hidden},
                       {"k_max", m.k_max},
                       {"max_question_len", m.max_question_len},
                       {"max_passage_len", m.max_passage_len},
                       {"max_answer_len", m.max_answer_len},
                       {"vocab_max_size", m.vocab_max_size},
                       {"decoder_vocab_limit", m.decoder_vocab_limit},
                       {"ablation", ablation_name(m.ablation)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& m) {
    ModelConfig d;
    m.embed_dim = j.value("embed_dim", d.embed_dim);
    m.perspectives = j.value("perspectives", d.perspectives);
    m.pam_width = j.value("pam_width", d.pam_width);
    m.decoder_hidden = j.value("decoder_hidden", d.decoder_hidden);
    m.k_max = j.value("k_max", d.k_max);
    m.max_question_len = j.value("max_question_len", d.max_question_len);
    m.max_passage_len = j.value("max_passage_len", d.max_passage_len);
    m.max_answer_len = j.value("max_answer_len", d.max_answer_len);
    m.vocab_max_size = j.value("vocab_max_size", d.vocab_max_size);
    m.decoder_vocab_limit = j.value("decoder_vocab_limit", d.decoder_vocab_limit);
    m.ablation = ablation_from(j.value("ablation", std::string("full")));
}

inline void to_json(nlohmann::json& j, const TrainConfig& t) {
    j = nlohmann::json{{"learning_rate", t.learning_rate},
                       {"epochs", t.epochs},
                       {"batch_size", t.batch_size},
                       {"seed", t.seed},
                       {"beam_size", t.beam_size},
                       {"max_decode_len", t.max_decode_len},
                       {"adam_beta1", t.adam_beta1},
                       {"adam_beta2", t.adam_beta2},
                       {"adam_eps", t.adam_eps},
                       {"grad_clip", t.grad_clip},
                       {"resample_negatives", t.resample_negatives},
                       {"eval_every", t.eval_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& t) {
    TrainConfig d;
    t.learning_rate = j.value("learning_rate", d.learning_rate);
    t.epochs = j.value("epochs", d.epochs);
    t.batch_size = j.value("batch_size", d.batch_size);
    t.seed = j.value("seed", d.seed);
    t.beam_size = j.value("beam_size", d.beam_size);
    t.max_decode_len = j.value("max_decode_len", d.max_decode_len);
    t.adam_beta1 = j.value("adam_beta1", d.adam_beta1);
    t.adam_beta2 = j.value("adam_beta2", d.adam_beta2);
    t.adam_eps = j.value("adam_eps", d.adam_eps);
    t.grad_clip = j.value("grad_clip", d.grad_clip);
    t.resample_negatives = j.value("resample_negatives", d.resample_negatives);
    t.eval_every = j.value("eval_every", d.eval_every);
}

inline void to_json(nlohmann::json& j, const Config& c) {
    j = nlohmann::json{{"model", c.model}, {"train", c.train}};
}

inline void from_json(const nlohmann::json& j, Config& c) {
    c.model = j.value("model", ModelConfig{});
    c.train = j.value("train", TrainConfig{});
}

// Canonical form: sorted keys (nlohmann object order), no whitespace.
inline std::string canonical_json(const Config& c) {
    nlohmann::json j = c;
    return j.dump();
}

inline Config config_from_json_text(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw ConfigError("config is not valid JSON");
    Config c = j.get<Config>();
    c.validate();
    return c;
}

}  // namespace gummp
