#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mslm/rng.hpp"
#include "mslm/world.hpp"

using namespace mslm;
namespace fs = std::filesystem;

namespace {
const TokenSpace& space() {
    static TokenSpace s = build_token_space({});
    return s;
}
WorldOracle oracle(WorldConfig w = {}) { return WorldOracle(w, space()); }

fs::path temp_dir(const std::string& tag) {
    fs::path p = fs::temp_directory_path() / ("mslm_world_" + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}
} // namespace

TEST_CASE("translate forward examples") {
    WorldOracle o = oracle();
    CHECK(o.translate({0, 1}, {0, 1}) == std::vector<int>{20, 17});
    CHECK(o.translate({5}, {0, 1}) == std::vector<int>{32}); // 3*5+17, no swap partner
}

TEST_CASE("translate is a bijection") {
    WorldOracle o = oracle();
    SplitMix64 rng(99);
    for (int trial = 0; trial < 10000; ++trial) {
        std::vector<int> units(rng.range(1, 24));
        for (auto& u : units) u = rng.range(0, 199);
        Direction fwd{0, 1}, bwd{1, 0};
        CHECK(o.translate(o.translate(units, fwd), bwd) == units);
        CHECK(o.translate(o.translate(units, bwd), fwd) == units);
    }
}

TEST_CASE("translate rejects out-of-vocab units") {
    WorldOracle o = oracle();
    CHECK_THROWS_AS(o.translate({200}, {0, 1}), ValidationError);
}

TEST_CASE("duration") {
    CHECK(WorldOracle::duration(0) == 1);
    CHECK(WorldOracle::duration(7) == 2);
    CHECK(WorldOracle::total_frames({0, 1, 2}) == 6);
}

TEST_CASE("acoustics formula") {
    WorldOracle o = oracle();
    CHECK(o.code(0, 0, 1) == 97);
    CHECK(o.code(1, 2, 1) == 255); // 32 + 126 + 97
    AcousticGrid g = o.acoustics({0, 1, 2}, 0);
    CHECK(g.frames() == 6);
    CHECK(g.n_streams == 8);
    CHECK(g.at(0, 1) == 97);
    // unit 1 occupies frames 1..2, identical frames
    for (int j = 1; j <= 8; ++j) CHECK(g.at(1, j) == g.at(2, j));
}

TEST_CASE("style decode is the exact inverse over all triples") {
    WorldOracle o = oracle();
    // 200 * 16 * 8 = 25,600 triples
    for (int u = 0; u < 200; ++u)
        for (int s = 0; s < 16; ++s)
            for (int j = 1; j <= 8; ++j) CHECK(WorldOracle::decode_style(o.code(u, s, j), u, j) == s);
    CHECK(WorldOracle::decode_style(97, 0, 1) == 0);
}

TEST_CASE("corpus generation is deterministic and valid") {
    WorldConfig w;
    w.train_records = 30;
    w.valid_records = 10;
    w.test_records = 10;
    w.seed = 42;
    fs::path a = temp_dir("a"), b = temp_dir("b");
    auto paths_a = generate_corpus(w, space(), a.string());
    auto paths_b = generate_corpus(w, space(), b.string());
    REQUIRE(paths_a.size() == 3);
    for (size_t i = 0; i < 3; ++i) CHECK(slurp(paths_a[i]) == slurp(paths_b[i]));

    for (const auto& p : paths_a) CHECK(validate_corpus(p.string(), space()) > 0);
    CHECK(load_corpus(paths_a[0].string()).size() == 30);
    CHECK(load_corpus(paths_a[1].string()).size() == 10);

    // alternating direction, disjoint ids across splits
    auto train = load_corpus(paths_a[0].string());
    CHECK(train[0].src_lang == 0);
    CHECK(train[1].src_lang == 1);
    CHECK(train[0].id == "train-000000");
    auto valid = load_corpus(paths_a[1].string());
    CHECK(valid[0].id == "valid-000000");

    // a different seed changes the bytes
    WorldConfig w2 = w;
    w2.seed = 43;
    fs::path c = temp_dir("c");
    auto paths_c = generate_corpus(w2, space(), c.string());
    CHECK(slurp(paths_a[0]) != slurp(paths_c[0]));
}

TEST_CASE("record invariants hold for every generated record") {
    WorldConfig w;
    w.train_records = 50;
    w.valid_records = 0;
    w.test_records = 0;
    WorldOracle o = oracle(w);
    fs::path dir = temp_dir("inv");
    auto paths = generate_corpus(w, space(), dir.string());
    for (const auto& r : load_corpus(paths[0].string())) {
        CHECK(r.tgt_units == o.translate(r.src_units, {r.src_lang, r.tgt_lang}));
        CHECK(r.src_acoustic.codes == o.acoustics(r.src_units, r.style).codes);
        CHECK(r.tgt_acoustic.codes == o.acoustics(r.tgt_units, r.style).codes);
        CHECK(static_cast<int>(r.src_units.size()) >= w.len_min);
        CHECK(static_cast<int>(r.src_units.size()) <= w.len_max);
    }
}

TEST_CASE("save then load round trips") {
    WorldConfig w;
    w.train_records = 5;
    w.valid_records = 0;
    w.test_records = 0;
    fs::path dir = temp_dir("rt");
    auto paths = generate_corpus(w, space(), dir.string());
    CorpusHeader header;
    auto records = load_corpus(paths[0].string(), &header);
    fs::path copy = dir / "copy.jsonl";
    save_corpus(records, header, copy.string());
    auto again = load_corpus(copy.string());
    REQUIRE(again.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(again[i].id == records[i].id);
        CHECK(again[i].src_units == records[i].src_units);
        CHECK(again[i].tgt_acoustic.codes == records[i].tgt_acoustic.codes);
    }
    CHECK(slurp(paths[0]) == slurp(copy));
}

TEST_CASE("malformed and truncated lines are reported with line numbers") {
    WorldConfig w;
    w.train_records = 3;
    w.valid_records = 0;
    w.test_records = 0;
    fs::path dir = temp_dir("bad");
    auto paths = generate_corpus(w, space(), dir.string());
    std::string text = slurp(paths[0]);

    // truncate the final line mid-record
    fs::path trunc = dir / "trunc.jsonl";
    {
        std::ofstream out(trunc, std::ios::binary);
        out << text.substr(0, text.size() - 40);
    }
    CorpusReader reader(trunc.string());
    ParallelRecord r;
    CHECK(reader.next(r));
    CHECK(reader.next(r));
    try {
        reader.next(r);
        FAIL("expected a malformed-line error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find(":4") != std::string::npos);
    }

    // a grid row with 7 entries is a schema violation
    fs::path arity = dir / "arity.jsonl";
    {
        size_t pos = text.find("\n");
        std::string line2 = text.substr(pos + 1, text.find("\n", pos + 1) - pos - 1);
        nlohmann::json j = nlohmann::json::parse(line2);
        j["src_acoustic"][0].erase(7);
        std::ofstream out(arity, std::ios::binary);
        out << text.substr(0, pos + 1) << j.dump() << "\n";
    }
    CorpusReader reader2(arity.string());
    try {
        reader2.next(r);
        FAIL("expected a schema error");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("7") != std::string::npos);
        CHECK(msg.find("expected 8") != std::string::npos);
    }
}

TEST_CASE("world config rejection") {
    TokenSpaceConfig ts;
    WorldConfig w;
    w.len_min = 10;
    w.len_max = 5;
    CHECK_THROWS_AS(w.validate(ts), ConfigError);
    WorldConfig w2;
    w2.active_vocab = 300; // does not divide 1000
    CHECK_THROWS_AS(w2.validate(ts), ConfigError);
    WorldConfig w3;
    w3.n_styles = 1;
    CHECK_THROWS_AS(w3.validate(ts), ConfigError);
    WorldConfig w4;
    w4.active_vocab = 150; // divisible by 3, map not invertible
    CHECK_THROWS_AS(w4.validate(ts), ConfigError);
}
