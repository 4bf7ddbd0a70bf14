#include <doctest.h>

#include "mslm/rng.hpp"
#include "mslm/token_space.hpp"

using namespace mslm;

TEST_CASE("default layout") {
    TokenSpace space = build_token_space({});
    CHECK(space.total_size() == 1000 + 1024 + 4 + 2 + 7); // 2037
    CHECK(space.to_id(Token::semantic(0)) == 0);
    CHECK(space.to_id(Token::acoustic(0)) == 1000);
    CHECK(space.to_id(Token::eos()) == 2024);
    CHECK(space.to_id(Token::trans()) == 2025);
    CHECK(space.to_id(Token::gen()) == 2026);
    CHECK(space.to_id(Token::pad()) == 2027);
    CHECK(space.to_id(Token::lang(0)) == 2028);
    CHECK(space.to_id(Token::lang(1)) == 2029);
    CHECK(space.to_id(Token::stream(2)) == 2030);
    CHECK(space.to_id(Token::stream(8)) == 2036);
}

TEST_CASE("small layout") {
    TokenSpaceConfig cfg;
    cfg.n_semantic = 10;
    cfg.n_acoustic = 10;
    cfg.languages = {"en", "es"};
    cfg.n_streams = 2;
    TokenSpace space = build_token_space(cfg);
    CHECK(space.total_size() == 27); // 10+10+4+2+1
    CHECK(space.to_id(Token::stream(2)) == 26);
}

TEST_CASE("config rejection") {
    TokenSpaceConfig dup;
    dup.languages = {"en", "en"};
    CHECK_THROWS_AS(build_token_space(dup), ConfigError);

    TokenSpaceConfig zero;
    zero.n_semantic = 0;
    CHECK_THROWS_AS(build_token_space(zero), ConfigError);

    TokenSpaceConfig streams;
    streams.n_streams = 1;
    CHECK_THROWS_AS(build_token_space(streams), ConfigError);

    TokenSpaceConfig nolang;
    nolang.languages = {};
    CHECK_THROWS_AS(build_token_space(nolang), ConfigError);
}

TEST_CASE("from_id region boundaries") {
    TokenSpace space = build_token_space({});
    CHECK(space.from_id(999) == Token::semantic(999));
    CHECK(space.from_id(1000) == Token::acoustic(0));
    CHECK(space.from_id(2023) == Token::acoustic(1023));
    CHECK(space.from_id(2036) == Token::stream(8));
    CHECK_THROWS_AS(space.from_id(2037), ValidationError);
    CHECK_THROWS_AS(space.from_id(-1), ValidationError);
}

TEST_CASE("to_id range errors") {
    TokenSpace space = build_token_space({});
    CHECK_THROWS_AS(space.to_id(Token::semantic(1000)), ValidationError);
    CHECK_THROWS_AS(space.to_id(Token::acoustic(1024)), ValidationError);
    CHECK_THROWS_AS(space.to_id(Token::lang(2)), ValidationError);
    CHECK_THROWS_AS(space.to_id(Token::stream(9)), ValidationError);
    CHECK_THROWS_AS(space.to_id(Token::stream(1)), ValidationError);
}

// Round trip + partition over the whole id space: from_id is total on
// [0, total_size) and to_id inverts it exactly.
TEST_CASE("round trip covers the full space") {
    TokenSpace space = build_token_space({});
    int per_kind[8] = {0};
    for (TokenId id = 0; id < space.total_size(); ++id) {
        Token t = space.from_id(id);
        per_kind[static_cast<int>(t.kind)] += 1;
        CHECK(space.to_id(t) == id);
    }
    CHECK(per_kind[static_cast<int>(TokenKind::semantic)] == 1000);
    CHECK(per_kind[static_cast<int>(TokenKind::acoustic)] == 1024);
    CHECK(per_kind[static_cast<int>(TokenKind::lang)] == 2);
    CHECK(per_kind[static_cast<int>(TokenKind::task_trans)] == 1);
    CHECK(per_kind[static_cast<int>(TokenKind::task_gen)] == 1);
    CHECK(per_kind[static_cast<int>(TokenKind::stream)] == 7);
    CHECK(per_kind[static_cast<int>(TokenKind::eos)] == 1);
    CHECK(per_kind[static_cast<int>(TokenKind::pad)] == 1);
}

TEST_CASE("round trip on random configs") {
    SplitMix64 rng(77);
    for (int trial = 0; trial < 20; ++trial) {
        TokenSpaceConfig cfg;
        cfg.n_semantic = rng.range(1, 50);
        cfg.n_acoustic = rng.range(1, 50);
        cfg.n_streams = rng.range(2, 10);
        cfg.languages.clear();
        int n_langs = rng.range(1, 4);
        for (int i = 0; i < n_langs; ++i) cfg.languages.push_back("l" + std::to_string(i));
        TokenSpace space = build_token_space(cfg);
        for (TokenId id = 0; id < space.total_size(); ++id)
            CHECK(space.to_id(space.from_id(id)) == id);
    }
}

TEST_CASE("layout is stable across builds") {
    TokenSpace a = build_token_space({});
    TokenSpace b = build_token_space({});
    CHECK(a.describe() == b.describe());
    CHECK(a.layout_hash() == b.layout_hash());

    TokenSpaceConfig other;
    other.n_semantic = 999;
    CHECK(build_token_space(other).layout_hash() != a.layout_hash());
}

TEST_CASE("token names") {
    TokenSpace space = build_token_space({});
    CHECK(space.token_name(5) == "S5");
    CHECK(space.token_name(1007) == "A7");
    CHECK(space.token_name(2025) == "<trans>");
    CHECK(space.token_name(2028) == "<en>");
    CHECK(space.token_name(2030) == "<2>");
}
