#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mslm/decode.hpp"
#include "mslm/errors.hpp"
#include "mslm/token_space.hpp"
#include "mslm/trainer.hpp"
#include "mslm/world.hpp"

namespace mslm {

/// Merged view over every module's settings. Sourced from a flat key-value
/// config file (`key = value`, `#` comments) overridden by command-line
/// `--set key=value` flags; precedence is flag > file > default. Unknown
/// keys are rejected.
struct RunConfig {
    TokenSpaceConfig token_space;
    WorldConfig world;
    ModelShape model_ar;
    ModelShape model_nar;
    TrainConfig train;
    DecodeConfig decode;
    std::string directions_raw = "en-es,es-en";
    uint64_t init_seed = 1234;
    int threads = 0; // 0 = library default

    std::string raw_file_text;              // echoed verbatim for provenance
    std::vector<std::string> override_list; // applied --set pairs, in order

    TokenSpace make_space() const { return build_token_space(token_space); }

    // Directions are named with language pairs ("en-es"); resolving them
    // needs the final language list, so it happens after all keys apply.
    TrainConfig resolved_train(const TokenSpace& space) const {
        TrainConfig t = train;
        t.directions.clear();
        std::stringstream ss(directions_raw);
        std::string pair;
        while (std::getline(ss, pair, ',')) {
            if (pair.empty()) continue;
            auto dash = pair.find('-');
            if (dash == std::string::npos)
                throw ConfigError("train.directions entries look like 'en-es', got '" + pair + "'");
            Direction d;
            d.from = space.language_index(pair.substr(0, dash));
            d.to = space.language_index(pair.substr(dash + 1));
            t.directions.push_back(d);
        }
        if (t.directions.empty()) throw ConfigError("train.directions is empty");
        t.validate();
        return t;
    }

    void validate() const {
        token_space.validate();
        world.validate(token_space);
        decode.validate();
    }
};

namespace detail_config {

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an unsigned integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

inline std::vector<std::string> parse_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

} // namespace detail_config

inline void apply_config_key(RunConfig& c, const std::string& key, const std::string& value) {
    using namespace detail_config;
    if (key == "token_space.n_semantic") c.token_space.n_semantic = parse_int(key, value);
    else if (key == "token_space.n_acoustic") c.token_space.n_acoustic = parse_int(key, value);
    else if (key == "token_space.languages") c.token_space.languages = parse_list(value);
    else if (key == "token_space.n_streams") c.token_space.n_streams = parse_int(key, value);
    else if (key == "world.active_vocab") c.world.active_vocab = parse_int(key, value);
    else if (key == "world.n_styles") c.world.n_styles = parse_int(key, value);
    else if (key == "world.len_min") c.world.len_min = parse_int(key, value);
    else if (key == "world.len_max") c.world.len_max = parse_int(key, value);
    else if (key == "world.seed") c.world.seed = parse_u64(key, value);
    else if (key == "world.train_records") c.world.train_records = parse_int(key, value);
    else if (key == "world.valid_records") c.world.valid_records = parse_int(key, value);
    else if (key == "world.test_records") c.world.test_records = parse_int(key, value);
    else if (key == "model.ar.n_layers") c.model_ar.n_layers = parse_int(key, value);
    else if (key == "model.ar.d_model") c.model_ar.d_model = parse_int(key, value);
    else if (key == "model.ar.d_ff") c.model_ar.d_ff = parse_int(key, value);
    else if (key == "model.ar.n_heads") c.model_ar.n_heads = parse_int(key, value);
    else if (key == "model.ar.max_positions") c.model_ar.max_positions = parse_int(key, value);
    else if (key == "model.nar.n_layers") c.model_nar.n_layers = parse_int(key, value);
    else if (key == "model.nar.d_model") c.model_nar.d_model = parse_int(key, value);
    else if (key == "model.nar.d_ff") c.model_nar.d_ff = parse_int(key, value);
    else if (key == "model.nar.n_heads") c.model_nar.n_heads = parse_int(key, value);
    else if (key == "model.nar.max_positions") c.model_nar.max_positions = parse_int(key, value);
    else if (key == "model.tie_output") {
        bool b = parse_bool(key, value);
        c.model_ar.tie_output = b;
        c.model_nar.tie_output = b;
    } else if (key == "model.stream_additive_emb") {
        c.model_nar.stream_additive_emb = parse_bool(key, value);
    } else if (key == "train.upsample_translation")
        c.train.upsample_translation = parse_int(key, value);
    else if (key == "train.token_budget") c.train.token_budget = parse_int(key, value);
    else if (key == "train.lr_ar") c.train.lr_ar = parse_double(key, value);
    else if (key == "train.lr_nar") c.train.lr_nar = parse_double(key, value);
    else if (key == "train.warmup_steps") c.train.warmup_steps = parse_int(key, value);
    else if (key == "train.total_steps") c.train.total_steps = parse_int(key, value);
    else if (key == "train.nar_total_steps") c.train.nar_total_steps = parse_int(key, value);
    else if (key == "train.adam_beta1") c.train.adam_beta1 = parse_double(key, value);
    else if (key == "train.adam_beta2") c.train.adam_beta2 = parse_double(key, value);
    else if (key == "train.adam_eps") c.train.adam_eps = parse_double(key, value);
    else if (key == "train.eval_every") c.train.eval_every = parse_int(key, value);
    else if (key == "train.seed") c.train.seed = parse_u64(key, value);
    else if (key == "train.directions") c.directions_raw = value;
    else if (key == "train.loss_on_prompt") c.train.loss_on_prompt = parse_bool(key, value);
    else if (key == "train.prompt_max_frames") c.train.prompt_max_frames = parse_int(key, value);
    else if (key == "decode.mode") {
        if (value == "greedy") c.decode.mode = DecodeConfig::Mode::greedy;
        else if (value == "top_k" || value == "top-k") c.decode.mode = DecodeConfig::Mode::top_k;
        else throw ConfigError("decode.mode must be greedy or top_k, got '" + value + "'");
    } else if (key == "decode.k") c.decode.k = parse_int(key, value);
    else if (key == "decode.temperature") c.decode.temperature = parse_double(key, value);
    else if (key == "decode.seed") c.decode.seed = parse_u64(key, value);
    else if (key == "decode.max_translate_tokens")
        c.decode.max_translate_tokens = parse_int(key, value);
    else if (key == "decode.max_stream1_frames")
        c.decode.max_stream1_frames = parse_int(key, value);
    else if (key == "decode.constrained") c.decode.constrained = parse_bool(key, value);
    else if (key == "init_seed") c.init_seed = parse_u64(key, value);
    else if (key == "threads") c.threads = parse_int(key, value);
    else
        throw ConfigError("unknown config key: '" + key + "'");
}

inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& where) {
    std::stringstream ss(text);
    std::string line;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        std::string t = detail_config::trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(where + ":" + std::to_string(line_no) +
                              ": expected 'key = value', got '" + t + "'");
        std::string key = detail_config::trim(t.substr(0, eq));
        std::string value = detail_config::trim(t.substr(eq + 1));
        apply_config_key(c, key, value);
    }
}

inline RunConfig load_run_config(const std::string& path_or_empty,
                                 const std::vector<std::string>& overrides) {
    RunConfig c;
    if (!path_or_empty.empty()) {
        std::ifstream in(path_or_empty);
        if (!in) throw IoError("cannot open config file: " + path_or_empty);
        std::stringstream buf;
        buf << in.rdbuf();
        c.raw_file_text = buf.str();
        apply_config_text(c, c.raw_file_text, path_or_empty);
    }
    for (const auto& kv : overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_config_key(c, detail_config::trim(kv.substr(0, eq)),
                         detail_config::trim(kv.substr(eq + 1)));
        c.override_list.push_back(kv);
    }
    c.validate();
    return c;
}

} // namespace mslm
