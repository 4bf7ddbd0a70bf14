#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "mslm/errors.hpp"
#include "mslm/rng.hpp"

namespace mslm {

using TokenId = int32_t;

/// The single flat vocabulary shared by the AR and NAR models. Semantic
/// units and acoustic codes each occupy one contiguous id region; acoustic
/// codes of all streams share one region (stream identity travels
/// structurally, never in the id). After the two unit regions come, in
/// fixed order: <eos>, <trans>, <gen>, <pad>, one id per language, and the
/// stream tags <2>..<n_streams>.
struct TokenSpaceConfig {
    int n_semantic = 1000;
    int n_acoustic = 1024;
    std::vector<std::string> languages = {"en", "es"};
    int n_streams = 8;

    void validate() const {
        if (n_semantic < 1) throw ConfigError("token_space.n_semantic must be >= 1");
        if (n_acoustic < 1) throw ConfigError("token_space.n_acoustic must be >= 1");
        if (n_streams < 2) throw ConfigError("token_space.n_streams must be >= 2");
        if (languages.empty()) throw ConfigError("token_space.languages must be non-empty");
        for (size_t i = 0; i < languages.size(); ++i)
            for (size_t j = i + 1; j < languages.size(); ++j)
                if (languages[i] == languages[j])
                    throw ConfigError("duplicate language name: " + languages[i]);
    }
};

enum class TokenKind { semantic, acoustic, lang, task_trans, task_gen, stream, eos, pad };

struct Token {
    TokenKind kind;
    int value = 0; // unit id, code id, language index, or stream j

    static Token semantic(int unit) { return {TokenKind::semantic, unit}; }
    static Token acoustic(int code) { return {TokenKind::acoustic, code}; }
    static Token lang(int index) { return {TokenKind::lang, index}; }
    static Token trans() { return {TokenKind::task_trans, 0}; }
    static Token gen() { return {TokenKind::task_gen, 0}; }
    static Token stream(int j) { return {TokenKind::stream, j}; }
    static Token eos() { return {TokenKind::eos, 0}; }
    static Token pad() { return {TokenKind::pad, 0}; }

    bool operator==(const Token&) const = default;
};

class TokenSpace {
public:
    explicit TokenSpace(TokenSpaceConfig config) : config_(std::move(config)) {
        config_.validate();
        semantic_base_ = 0;
        acoustic_base_ = config_.n_semantic;
        eos_ = acoustic_base_ + config_.n_acoustic;
        trans_ = eos_ + 1;
        gen_ = trans_ + 1;
        pad_ = gen_ + 1;
        lang_base_ = pad_ + 1;
        stream_base_ = lang_base_ + static_cast<int>(config_.languages.size());
        total_size_ = stream_base_ + (config_.n_streams - 1); // tags <2>..<n_streams>
    }

    const TokenSpaceConfig& config() const { return config_; }
    int total_size() const { return total_size_; }

    TokenId to_id(const Token& t) const {
        switch (t.kind) {
            case TokenKind::semantic:
                if (t.value < 0 || t.value >= config_.n_semantic)
                    throw ValidationError("semantic unit out of range: " + std::to_string(t.value));
                return semantic_base_ + t.value;
            case TokenKind::acoustic:
                if (t.value < 0 || t.value >= config_.n_acoustic)
                    throw ValidationError("acoustic code out of range: " + std::to_string(t.value));
                return acoustic_base_ + t.value;
            case TokenKind::lang:
                if (t.value < 0 || t.value >= static_cast<int>(config_.languages.size()))
                    throw ValidationError("language index out of range: " + std::to_string(t.value));
                return lang_base_ + t.value;
            case TokenKind::task_trans: return trans_;
            case TokenKind::task_gen: return gen_;
            case TokenKind::stream:
                if (t.value < 2 || t.value > config_.n_streams)
                    throw ValidationError("stream tag out of range: " + std::to_string(t.value));
                return stream_base_ + (t.value - 2);
            case TokenKind::eos: return eos_;
            case TokenKind::pad: return pad_;
        }
        throw ValidationError("unreachable token kind");
    }

    Token from_id(TokenId id) const {
        if (id < 0 || id >= total_size_)
            throw ValidationError("token id out of range: " + std::to_string(id));
        if (id < acoustic_base_) return Token::semantic(id - semantic_base_);
        if (id < eos_) return Token::acoustic(id - acoustic_base_);
        if (id == eos_) return Token::eos();
        if (id == trans_) return Token::trans();
        if (id == gen_) return Token::gen();
        if (id == pad_) return Token::pad();
        if (id < stream_base_) return Token::lang(id - lang_base_);
        return Token::stream(id - stream_base_ + 2);
    }

    // Region bases, handy for hot paths that avoid Token round trips.
    TokenId semantic_id(int unit) const { return to_id(Token::semantic(unit)); }
    TokenId acoustic_id(int code) const { return to_id(Token::acoustic(code)); }
    TokenId lang_id(int index) const { return to_id(Token::lang(index)); }
    TokenId stream_id(int j) const { return to_id(Token::stream(j)); }
    TokenId eos_id() const { return eos_; }
    TokenId trans_id() const { return trans_; }
    TokenId gen_id() const { return gen_; }
    TokenId pad_id() const { return pad_; }
    TokenId semantic_base() const { return semantic_base_; }
    TokenId acoustic_base() const { return acoustic_base_; }

    bool is_semantic(TokenId id) const { return id >= semantic_base_ && id < acoustic_base_; }
    bool is_acoustic(TokenId id) const { return id >= acoustic_base_ && id < eos_; }

    int language_index(const std::string& name) const {
        for (size_t i = 0; i < config_.languages.size(); ++i)
            if (config_.languages[i] == name) return static_cast<int>(i);
        throw ValidationError("unknown language: " + name);
    }

    // `name start end` per region, one line each; the format printed by
    // `inspect --token-space`.
    std::string describe() const {
        std::ostringstream os;
        os << "semantic " << semantic_base_ << " " << acoustic_base_ << "\n";
        os << "acoustic " << acoustic_base_ << " " << eos_ << "\n";
        os << "eos " << eos_ << " " << eos_ + 1 << "\n";
        os << "trans " << trans_ << " " << trans_ + 1 << "\n";
        os << "gen " << gen_ << " " << gen_ + 1 << "\n";
        os << "pad " << pad_ << " " << pad_ + 1 << "\n";
        for (size_t i = 0; i < config_.languages.size(); ++i) {
            os << "lang:" << config_.languages[i] << " " << lang_base_ + i << " "
               << lang_base_ + i + 1 << "\n";
        }
        for (int j = 2; j <= config_.n_streams; ++j) {
            os << "stream:" << j << " " << stream_base_ + (j - 2) << " "
               << stream_base_ + (j - 1) << "\n";
        }
        return os.str();
    }

    // Hash of the resolved layout; checkpoints embed it so a model can never
    // be loaded against a differently shaped vocabulary.
    uint64_t layout_hash() const { return fnv1a_str(describe()); }

    std::string token_name(TokenId id) const {
        Token t = from_id(id);
        switch (t.kind) {
            case TokenKind::semantic: return "S" + std::to_string(t.value);
            case TokenKind::acoustic: return "A" + std::to_string(t.value);
            case TokenKind::lang: return "<" + config_.languages[t.value] + ">";
            case TokenKind::task_trans: return "<trans>";
            case TokenKind::task_gen: return "<gen>";
            case TokenKind::stream: return "<" + std::to_string(t.value) + ">";
            case TokenKind::eos: return "<eos>";
            case TokenKind::pad: return "<pad>";
        }
        return "?";
    }

private:
    TokenSpaceConfig config_;
    int semantic_base_, acoustic_base_, eos_, trans_, gen_, pad_, lang_base_, stream_base_;
    int total_size_;
};

inline TokenSpace build_token_space(TokenSpaceConfig config) { return TokenSpace(std::move(config)); }

} // namespace mslm
