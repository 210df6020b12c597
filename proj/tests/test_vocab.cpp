#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "gummp/vocab.hpp"

using namespace gummp;

TEST_CASE("tokenize lowercases and splits punctuation", "[vocab]") {
    CHECK(tokenize("Largest lake of USA?") ==
          std::vector<std::string>{"largest", "lake", "of", "usa", "?"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("a  b") == std::vector<std::string>{"a", "b"});
    CHECK(tokenize("world's") == std::vector<std::string>{"world", "'", "s"});
    // Idempotent on its own output.
    auto toks = tokenize("It is, frankly, 30 centimeters!");
    std::string joined;
    for (const auto& t : toks) joined += t + " ";
    CHECK(tokenize(joined) == toks);
}

TEST_CASE("build_vocab keeps most frequent tokens", "[vocab]") {
    auto all_fit = Vocabulary::build({tokenize("a a b")}, 6);
    CHECK(all_fit.size() == 6);
    CHECK(all_fit.contains("a"));
    CHECK(all_fit.contains("b"));
    CHECK(all_fit.id_of("a") == 4);  // freq 2 beats freq 1

    // Frequency-count oracle: b has count 3, a count 2, c count 1.
    auto capped = Vocabulary::build({tokenize("a a b b b c")}, 5);
    CHECK(capped.size() == 5);
    CHECK(capped.contains("b"));
    CHECK_FALSE(capped.contains("a"));
    CHECK_FALSE(capped.contains("c"));

    // Tie at frequency 2 resolved lexicographically.
    auto tie = Vocabulary::build({tokenize("a a b b")}, 5);
    CHECK(tie.contains("a"));
    CHECK_FALSE(tie.contains("b"));

    CHECK_THROWS_AS(Vocabulary::build({tokenize("a")}, 4), ConfigError);
}

TEST_CASE("specials are fixed and decode round-trips", "[vocab]") {
    auto v = Vocabulary::build({tokenize("x y z")}, 10);
    CHECK(Vocabulary::kPad == 0);
    CHECK(Vocabulary::kUnk == 1);
    CHECK(Vocabulary::kBos == 2);
    CHECK(Vocabulary::kEos == 3);
    CHECK(v.token_of(Vocabulary::kBos) == "<s>");
    CHECK(v.token_of(Vocabulary::kEos) == "</s>");
    for (size_t id = 0; id < v.size(); ++id)
        CHECK(v.id_of(v.token_of(static_cast<int>(id))) == static_cast<int>(id));
    CHECK(v.id_of("never-seen") == Vocabulary::kUnk);
}

TEST_CASE("vocabulary file round-trip", "[vocab]") {
    auto v = Vocabulary::build({tokenize("alpha beta beta gamma")}, 8);
    std::string path = "vocab_roundtrip.txt";
    v.save(path);
    auto loaded = Vocabulary::load(path);
    CHECK(loaded.size() == v.size());
    for (size_t id = 0; id < v.size(); ++id)
        CHECK(loaded.token_of(static_cast<int>(id)) == v.token_of(static_cast<int>(id)));
    std::remove(path.c_str());
}

TEST_CASE("map_extended assigns first-occurrence extended ids", "[vocab]") {
    auto v = Vocabulary::build({tokenize("q w")}, 8);
    int V = static_cast<int>(v.size());

    // All tokens in vocab: no OOVs.
    auto none = map_extended({{"q", "w"}}, {"q"}, v);
    CHECK(none.map.oov_tokens.empty());
    CHECK(none.passage_ids[0] == std::vector<int>{v.id_of("q"), v.id_of("w")});

    // x then y in passage order.
    auto two = map_extended({{"x", "q"}, {"y", "x"}}, {"q"}, v);
    CHECK(two.map.extended_id("x") == V);
    CHECK(two.map.extended_id("y") == V + 1);
    CHECK(two.passage_ids[1] == std::vector<int>{V + 1, V});

    // OOV shared between passage 2 and the question gets a single id.
    auto shared = map_extended({{"q"}, {"zz"}}, {"zz", "w"}, v);
    CHECK(shared.map.oov_tokens.size() == 1);
    CHECK(shared.question_ids[0] == V);
    CHECK(shared.passage_ids[1][0] == V);
}

TEST_CASE("extended ids never collide", "[vocab]") {
    auto v = Vocabulary::build({tokenize("a b c")}, 7);
    auto ext = map_extended({{"foo", "bar", "a"}, {"baz", "foo"}}, {"qux", "bar"}, v);
    CHECK(ext.map.oov_tokens.size() == 4);  // foo bar baz qux
    std::vector<int> ids;
    for (const auto& tok : ext.map.oov_tokens) {
        int id = ext.map.extended_id(tok);
        CHECK(std::find(ids.begin(), ids.end(), id) == ids.end());
        ids.push_back(id);
        CHECK(id >= static_cast<int>(v.size()));
        CHECK(ext.map.surface_of(id) == tok);
    }
}
