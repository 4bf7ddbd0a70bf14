#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mslm/errors.hpp"
#include "mslm/rng.hpp"
#include "mslm/sequence.hpp"
#include "mslm/token_space.hpp"

namespace mslm {

// The synthetic codec works modulo 1024 with a fixed style coefficient of
// 63, whose inverse modulo 1024 is 959. Both are compile-time facts.
inline constexpr int kCodecMod = 1024;
inline constexpr int kStyleCoef = 63;
inline constexpr int kStyleCoefInv = 959;
static_assert((kStyleCoef * kStyleCoefInv) % kCodecMod == 1, "style coefficient must invert");

struct WorldConfig {
    int active_vocab = 200;
    int n_styles = 16;
    int len_min = 5;
    int len_max = 24;
    uint64_t seed = 42;
    int train_records = 20000;
    int valid_records = 1000;
    int test_records = 1000;

    void validate(const TokenSpaceConfig& ts) const {
        if (active_vocab < 1 || active_vocab > ts.n_semantic)
            throw ConfigError("world.active_vocab must be in [1, n_semantic]");
        if (ts.n_semantic % active_vocab != 0)
            throw ConfigError("world.active_vocab must divide n_semantic");
        if (active_vocab % 3 == 0)
            throw ConfigError("world.active_vocab must not be divisible by 3 (translation map "
                              "needs an inverse)");
        if (n_styles < 2 || n_styles > kCodecMod)
            throw ConfigError("world.n_styles must be in [2, 1024]");
        if (len_min < 1) throw ConfigError("world.len_min must be >= 1");
        if (len_min > len_max)
            throw ConfigError("world.len_min must be <= world.len_max (len_min=" +
                              std::to_string(len_min) + ", len_max=" + std::to_string(len_max) + ")");
        if (ts.n_acoustic < kCodecMod)
            throw ConfigError("world codec emits codes in [0,1024); token_space.n_acoustic must "
                              "be >= 1024");
        if (ts.languages.size() < 2)
            throw ConfigError("the synthetic world needs at least two languages");
        if (train_records < 0 || valid_records < 0 || test_records < 0)
            throw ConfigError("world split sizes must be non-negative");
    }
};

/// The synthetic world translates between languages 0 and 1 of the token
/// space. Forward (lang 0 -> lang 1) applies u -> (3u+17) mod V per unit
/// and then swaps each adjacent pair; backward is the exact inverse.
struct Direction {
    int from = 0;
    int to = 1;

    bool forward() const { return from == 0; }
    bool operator==(const Direction&) const = default;
};

class WorldOracle {
public:
    WorldOracle(WorldConfig world, const TokenSpace& space)
        : world_(world), n_streams_(space.config().n_streams) {
        world_.validate(space.config());
        inv3_ = mod_inverse(3, world_.active_vocab);
    }

    const WorldConfig& config() const { return world_; }
    int n_streams() const { return n_streams_; }

    std::vector<int> translate(const std::vector<int>& units, Direction dir) const {
        const int v = world_.active_vocab;
        for (int u : units)
            if (u < 0 || u >= v)
                throw ValidationError("oracle_translate: unit out of active vocab: " +
                                      std::to_string(u));
        std::vector<int> out(units.size());
        if (dir.forward()) {
            for (size_t i = 0; i < units.size(); ++i) out[i] = (3 * units[i] + 17) % v;
            swap_pairs(out);
        } else {
            out = units;
            swap_pairs(out);
            for (auto& u : out) u = static_cast<int>((static_cast<int64_t>(inv3_) * ((u - 17) % v + v)) % v);
        }
        return out;
    }

    static int duration(int unit) { return 1 + (unit % 3); }

    static int total_frames(const std::vector<int>& units) {
        int t = 0;
        for (int u : units) t += duration(u);
        return t;
    }

    int code(int unit, int style, int stream_j) const {
        return (unit * (31 + stream_j) + style * kStyleCoef + stream_j * 97) % kCodecMod;
    }

    AcousticGrid acoustics(const std::vector<int>& units, int style) const {
        if (style < 0 || style >= world_.n_styles)
            throw ValidationError("oracle_acoustics: style out of range: " + std::to_string(style));
        AcousticGrid grid;
        grid.n_streams = n_streams_;
        grid.style = style;
        grid.codes.reserve(static_cast<size_t>(total_frames(units)) * n_streams_);
        for (int u : units)
            for (int rep = 0; rep < duration(u); ++rep)
                for (int j = 1; j <= n_streams_; ++j) grid.codes.push_back(code(u, style, j));
        return grid;
    }

    // Exact inverse of `code` in the style slot. Returns the raw mod-1024
    // value; callers treat results >= n_styles (or disagreeing votes) as an
    // inconsistent frame.
    static int decode_style(int code_id, int unit, int stream_j) {
        int64_t d = static_cast<int64_t>(code_id) - static_cast<int64_t>(unit) * (31 + stream_j) -
                    static_cast<int64_t>(stream_j) * 97;
        d %= kCodecMod;
        if (d < 0) d += kCodecMod;
        return static_cast<int>((d * kStyleCoefInv) % kCodecMod);
    }

private:
    static void swap_pairs(std::vector<int>& v) {
        for (size_t i = 0; i + 1 < v.size(); i += 2) std::swap(v[i], v[i + 1]);
    }

    static int mod_inverse(int a, int m) {
        int t = 0, new_t = 1, r = m, new_r = a % m;
        while (new_r != 0) {
            int q = r / new_r;
            t -= q * new_t;
            std::swap(t, new_t);
            r -= q * new_r;
            std::swap(r, new_r);
        }
        if (r != 1) throw ConfigError("no modular inverse of " + std::to_string(a) + " mod " +
                                      std::to_string(m));
        return (t % m + m) % m;
    }

    WorldConfig world_;
    int n_streams_;
    int inv3_;
};

// ---------------------------------------------------------------------------
// Corpus records and files
// ---------------------------------------------------------------------------

struct ParallelRecord {
    std::string id;
    int src_lang = 0;
    int tgt_lang = 1;
    int style = 0;
    std::vector<int> src_units;
    std::vector<int> tgt_units;
    AcousticGrid src_acoustic;
    AcousticGrid tgt_acoustic;

    const std::vector<int>& units_of(int lang) const {
        if (lang == src_lang) return src_units;
        if (lang == tgt_lang) return tgt_units;
        throw ValidationError("record " + id + " has no side for language " + std::to_string(lang));
    }
    const AcousticGrid& grid_of(int lang) const {
        if (lang == src_lang) return src_acoustic;
        if (lang == tgt_lang) return tgt_acoustic;
        throw ValidationError("record " + id + " has no side for language " + std::to_string(lang));
    }
};

struct CorpusHeader {
    int version = 1;
    std::string prng = kPrngId;
    WorldConfig world;
    TokenSpaceConfig space;
};

namespace detail {

inline nlohmann::json grid_to_json(const AcousticGrid& g) {
    nlohmann::json rows = nlohmann::json::array();
    for (int t = 0; t < g.frames(); ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 1; j <= g.n_streams; ++j) row.push_back(g.at(t, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline AcousticGrid grid_from_json(const nlohmann::json& rows, int n_streams,
                                   const std::string& where) {
    AcousticGrid g;
    g.n_streams = n_streams;
    if (!rows.is_array()) throw ValidationError(where + ": grid must be an array of rows");
    for (const auto& row : rows) {
        if (!row.is_array() || static_cast<int>(row.size()) != n_streams)
            throw ValidationError(where + ": grid row with " + std::to_string(row.size()) +
                                  " entries, expected " + std::to_string(n_streams));
        for (const auto& c : row) g.codes.push_back(c.get<int>());
    }
    return g;
}

inline nlohmann::json world_to_json(const WorldConfig& w) {
    return {{"active_vocab", w.active_vocab}, {"n_styles", w.n_styles},
            {"len_min", w.len_min},           {"len_max", w.len_max},
            {"seed", w.seed},                 {"train_records", w.train_records},
            {"valid_records", w.valid_records}, {"test_records", w.test_records}};
}

inline WorldConfig world_from_json(const nlohmann::json& j) {
    WorldConfig w;
    w.active_vocab = j.at("active_vocab").get<int>();
    w.n_styles = j.at("n_styles").get<int>();
    w.len_min = j.at("len_min").get<int>();
    w.len_max = j.at("len_max").get<int>();
    w.seed = j.at("seed").get<uint64_t>();
    w.train_records = j.at("train_records").get<int>();
    w.valid_records = j.at("valid_records").get<int>();
    w.test_records = j.at("test_records").get<int>();
    return w;
}

inline nlohmann::json space_to_json(const TokenSpaceConfig& c) {
    return {{"n_semantic", c.n_semantic},
            {"n_acoustic", c.n_acoustic},
            {"languages", c.languages},
            {"n_streams", c.n_streams}};
}

inline TokenSpaceConfig space_from_json(const nlohmann::json& j) {
    TokenSpaceConfig c;
    c.n_semantic = j.at("n_semantic").get<int>();
    c.n_acoustic = j.at("n_acoustic").get<int>();
    c.languages = j.at("languages").get<std::vector<std::string>>();
    c.n_streams = j.at("n_streams").get<int>();
    return c;
}

} // namespace detail

inline std::string header_line(const CorpusHeader& h) {
    nlohmann::json j = {{"format", "mslm-corpus"},
                        {"version", h.version},
                        {"prng", h.prng},
                        {"world", detail::world_to_json(h.world)},
                        {"token_space", detail::space_to_json(h.space)}};
    return j.dump();
}

inline std::string record_line(const ParallelRecord& r, const TokenSpaceConfig& space) {
    nlohmann::json j = {{"id", r.id},
                        {"src_lang", space.languages.at(r.src_lang)},
                        {"tgt_lang", space.languages.at(r.tgt_lang)},
                        {"style", r.style},
                        {"src_units", r.src_units},
                        {"tgt_units", r.tgt_units},
                        {"src_acoustic", detail::grid_to_json(r.src_acoustic)},
                        {"tgt_acoustic", detail::grid_to_json(r.tgt_acoustic)}};
    return j.dump();
}

/// Streaming corpus reader: header first, then one record per next() call.
/// Malformed lines are reported with their 1-based line number.
class CorpusReader {
public:
    explicit CorpusReader(const std::string& path) : path_(path), in_(path) {
        if (!in_) throw IoError("cannot open corpus file: " + path);
        std::string line;
        if (!std::getline(in_, line) || line.empty())
            throw ValidationError(path + ": missing corpus header line");
        line_no_ = 1;
        nlohmann::json j = parse(line);
        if (j.value("format", "") != "mslm-corpus")
            throw ValidationError(path + ": not an mslm corpus file");
        header_.version = j.at("version").get<int>();
        header_.prng = j.at("prng").get<std::string>();
        header_.world = detail::world_from_json(j.at("world"));
        header_.space = detail::space_from_json(j.at("token_space"));
    }

    const CorpusHeader& header() const { return header_; }

    bool next(ParallelRecord& out) {
        std::string line;
        if (!std::getline(in_, line)) return false;
        ++line_no_;
        if (line.empty()) return next(out);
        nlohmann::json j = parse(line);
        const std::string where = path_ + ":" + std::to_string(line_no_);
        try {
            out.id = j.at("id").get<std::string>();
            out.src_lang = lang_index(j.at("src_lang").get<std::string>(), where);
            out.tgt_lang = lang_index(j.at("tgt_lang").get<std::string>(), where);
            out.style = j.at("style").get<int>();
            out.src_units = j.at("src_units").get<std::vector<int>>();
            out.tgt_units = j.at("tgt_units").get<std::vector<int>>();
            out.src_acoustic =
                detail::grid_from_json(j.at("src_acoustic"), header_.space.n_streams, where);
            out.tgt_acoustic =
                detail::grid_from_json(j.at("tgt_acoustic"), header_.space.n_streams, where);
            out.src_acoustic.style = out.style;
            out.tgt_acoustic.style = out.style;
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(where + ": schema violation: " + e.what());
        }
        return true;
    }

private:
    nlohmann::json parse(const std::string& line) {
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ValidationError(path_ + ":" + std::to_string(line_no_) +
                                  ": malformed record line");
        return j;
    }

    int lang_index(const std::string& name, const std::string& where) const {
        for (size_t i = 0; i < header_.space.languages.size(); ++i)
            if (header_.space.languages[i] == name) return static_cast<int>(i);
        throw ValidationError(where + ": unknown language '" + name + "'");
    }

    std::string path_;
    std::ifstream in_;
    CorpusHeader header_;
    int line_no_ = 0;
};

inline std::vector<ParallelRecord> load_corpus(const std::string& path,
                                               CorpusHeader* header_out = nullptr) {
    CorpusReader reader(path);
    if (header_out) *header_out = reader.header();
    std::vector<ParallelRecord> records;
    ParallelRecord r;
    while (reader.next(r)) records.push_back(std::move(r));
    return records;
}

inline void save_corpus(const std::vector<ParallelRecord>& records, const CorpusHeader& header,
                        const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open corpus file for writing: " + path);
    out << header_line(header) << "\n";
    for (const auto& r : records) out << record_line(r, header.space) << "\n";
    if (!out) throw IoError("failed writing corpus file: " + path);
}

// ---------------------------------------------------------------------------
// Generation and validation
// ---------------------------------------------------------------------------

inline ParallelRecord make_record(const WorldOracle& oracle, const std::string& id,
                                  uint64_t stream_seed, Direction dir) {
    const WorldConfig& w = oracle.config();
    SplitMix64 rng(stream_seed);
    int len = rng.range(w.len_min, w.len_max);
    ParallelRecord r;
    r.id = id;
    r.src_lang = dir.from;
    r.tgt_lang = dir.to;
    r.src_units.resize(len);
    for (auto& u : r.src_units) u = static_cast<int>(rng.below(w.active_vocab));
    r.style = static_cast<int>(rng.below(w.n_styles));
    r.tgt_units = oracle.translate(r.src_units, dir);
    r.src_acoustic = oracle.acoustics(r.src_units, r.style);
    r.tgt_acoustic = oracle.acoustics(r.tgt_units, r.style);
    return r;
}

struct SplitSpec {
    std::string name;
    int salt;
    int count;
};

/// Writes train/valid/test corpus files under out_dir. Every record derives
/// its own PRNG stream from (seed, split, index), so regeneration of any
/// subset is byte-identical to a full run.
inline std::vector<std::filesystem::path> generate_corpus(const WorldConfig& world,
                                                          const TokenSpace& space,
                                                          const std::string& out_dir) {
    WorldOracle oracle(world, space);
    CorpusHeader header{1, kPrngId, world, space.config()};
    std::filesystem::create_directories(out_dir);
    const SplitSpec splits[] = {{"train", 0, world.train_records},
                                {"valid", 1, world.valid_records},
                                {"test", 2, world.test_records}};
    std::vector<std::filesystem::path> paths;
    for (const auto& split : splits) {
        std::filesystem::path path = std::filesystem::path(out_dir) / (split.name + ".jsonl");
        std::ofstream out(path);
        if (!out) throw IoError("cannot open corpus file for writing: " + path.string());
        out << header_line(header) << "\n";
        char idbuf[32];
        for (int i = 0; i < split.count; ++i) {
            std::snprintf(idbuf, sizeof(idbuf), "%s-%06d", split.name.c_str(), i);
            Direction dir = (i % 2 == 0) ? Direction{0, 1} : Direction{1, 0};
            ParallelRecord r = make_record(
                oracle, idbuf, derive_stream(world.seed, static_cast<uint64_t>(split.salt), static_cast<uint64_t>(i)),
                dir);
            out << record_line(r, header.space) << "\n";
        }
        if (!out) throw IoError("failed writing corpus file: " + path.string());
        paths.push_back(path);
    }
    return paths;
}

/// Re-runs both oracles over every record. Returns the number of records
/// checked; throws ValidationError naming the first bad record.
inline int validate_corpus(const std::string& path, const TokenSpace& space) {
    CorpusReader reader(path);
    WorldOracle oracle(reader.header().world, space);
    ParallelRecord r;
    int n = 0;
    while (reader.next(r)) {
        ++n;
        Direction dir{r.src_lang, r.tgt_lang};
        if (r.src_units.empty()) throw ValidationError(r.id + ": empty src_units");
        if (r.style < 0 || r.style >= oracle.config().n_styles)
            throw ValidationError(r.id + ": style out of range");
        if (oracle.translate(r.src_units, dir) != r.tgt_units)
            throw ValidationError(r.id + ": tgt_units disagree with translation oracle");
        AcousticGrid src = oracle.acoustics(r.src_units, r.style);
        AcousticGrid tgt = oracle.acoustics(r.tgt_units, r.style);
        if (src.codes != r.src_acoustic.codes)
            throw ValidationError(r.id + ": src_acoustic disagrees with codec oracle");
        if (tgt.codes != r.tgt_acoustic.codes)
            throw ValidationError(r.id + ": tgt_acoustic disagrees with codec oracle");
    }
    return n;
}

} // namespace mslm
