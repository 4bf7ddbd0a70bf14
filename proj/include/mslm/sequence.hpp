#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mslm/errors.hpp"
#include "mslm/token_space.hpp"

namespace mslm {

// Style prompts cover at most 5 seconds of audio at the 50 Hz frame rate.
inline constexpr int kPromptMaxFrames = 250;

struct SemanticSeq {
    int lang = 0;
    std::vector<int> units;
};

/// frames x n_streams grid of acoustic codes. `style` is carried only by
/// synthetic corpus records; model outputs leave it unset.
struct AcousticGrid {
    int n_streams = 8;
    std::vector<int> codes; // row-major, frames * n_streams
    std::optional<int> style;

    int frames() const {
        return n_streams == 0 ? 0 : static_cast<int>(codes.size()) / n_streams;
    }
    int at(int frame, int stream_1based) const {
        return codes[static_cast<size_t>(frame) * n_streams + (stream_1based - 1)];
    }
    int& at(int frame, int stream_1based) {
        return codes[static_cast<size_t>(frame) * n_streams + (stream_1based - 1)];
    }
    std::vector<int> column(int stream_1based) const {
        std::vector<int> out(frames());
        for (int t = 0; t < frames(); ++t) out[t] = at(t, stream_1based);
        return out;
    }
};

enum class TaskKind { translation, generation };

/// One flat token sequence plus loss mask. loss_mask[i] means the token at
/// position i is a scored prediction target (the loss pairs it with the
/// model's logits at position i-1). prompt_len is the index of the first
/// position that may ever be scored under the default masking policy.
struct PackedExample {
    std::vector<TokenId> tokens;
    std::vector<uint8_t> loss_mask;
    TaskKind task = TaskKind::translation;
    int prompt_len = 0;

    int length() const { return static_cast<int>(tokens.size()); }
    int scored_count() const {
        int n = 0;
        for (uint8_t m : loss_mask) n += m ? 1 : 0;
        return n;
    }
};

// <src> S_src <trans> <tgt> [S_tgt <eos>]
inline PackedExample build_translation(const TokenSpace& space, const SemanticSeq& src,
                                       int tgt_lang, const std::optional<SemanticSeq>& tgt,
                                       bool loss_on_prompt = false) {
    if (src.units.empty()) throw ValidationError("build_translation: empty source");
    if (tgt && tgt->lang != tgt_lang)
        throw ValidationError("build_translation: target language mismatch");

    PackedExample ex;
    ex.task = TaskKind::translation;
    ex.tokens.push_back(space.lang_id(src.lang));
    for (int u : src.units) ex.tokens.push_back(space.semantic_id(u));
    ex.tokens.push_back(space.trans_id());
    ex.tokens.push_back(space.lang_id(tgt_lang));
    ex.prompt_len = static_cast<int>(ex.tokens.size());
    if (tgt) {
        for (int u : tgt->units) ex.tokens.push_back(space.semantic_id(u));
        ex.tokens.push_back(space.eos_id());
    }
    ex.loss_mask.assign(ex.tokens.size(), 0);
    int first = loss_on_prompt ? 1 : ex.prompt_len;
    for (int i = first; i < ex.length(); ++i) ex.loss_mask[i] = 1;
    return ex;
}

// S_src S_tgt <gen> A_src[:,1] [A_tgt[:,1] <eos>] -- no language tags.
inline PackedExample build_generation(const TokenSpace& space, const std::vector<int>& src_units,
                                      const std::vector<int>& tgt_units,
                                      const std::vector<int>& prompt_stream1,
                                      const std::optional<std::vector<int>>& tgt_stream1,
                                      bool loss_on_prompt = false) {
    if (prompt_stream1.empty()) throw ValidationError("build_generation: empty style prompt");
    if (src_units.empty() || tgt_units.empty())
        throw ValidationError("build_generation: empty semantic sequence");

    PackedExample ex;
    ex.task = TaskKind::generation;
    for (int u : src_units) ex.tokens.push_back(space.semantic_id(u));
    for (int u : tgt_units) ex.tokens.push_back(space.semantic_id(u));
    ex.tokens.push_back(space.gen_id());
    for (int c : prompt_stream1) ex.tokens.push_back(space.acoustic_id(c));
    ex.prompt_len = static_cast<int>(ex.tokens.size());
    if (tgt_stream1) {
        for (int c : *tgt_stream1) ex.tokens.push_back(space.acoustic_id(c));
        ex.tokens.push_back(space.eos_id());
    }
    ex.loss_mask.assign(ex.tokens.size(), 0);
    int first = loss_on_prompt ? 1 : ex.prompt_len;
    for (int i = first; i < ex.length(); ++i) ex.loss_mask[i] = 1;
    return ex;
}

inline AcousticGrid truncate_prompt(const AcousticGrid& grid, int max_frames = kPromptMaxFrames) {
    if (grid.frames() <= max_frames) return grid;
    AcousticGrid out;
    out.n_streams = grid.n_streams;
    out.style = grid.style;
    out.codes.assign(grid.codes.begin(),
                     grid.codes.begin() + static_cast<size_t>(max_frames) * grid.n_streams);
    return out;
}

// ---------------------------------------------------------------------------
// NAR input plan
// ---------------------------------------------------------------------------

struct NarInput {
    SemanticSeq tgt_units;
    AcousticGrid prompt;              // all n_streams columns
    int stream_j = 2;                 // stream to generate, 2..n_streams
    std::vector<std::vector<int>> partial; // T_tgt rows x (j-1) known target codes
};

/// One input position of the NAR plan. Multi-code frames carry one
/// (token id, stream) pair per code; stream 0 marks entries without a
/// per-stream additive embedding (semantic units, the <j> tag).
struct PlanEntry {
    struct Item {
        TokenId id;
        int stream; // 0 = none, otherwise 1..n_streams
    };
    std::vector<Item> items;
    bool scored = false;
};

struct NarPlan {
    std::vector<PlanEntry> entries;
    int stream_j = 2;
    int n_scored = 0;

    int length() const { return static_cast<int>(entries.size()); }
};

// [tgt semantic] ++ [prompt frames, all streams] ++ [<j>] ++ [target frames,
// streams 1..j-1]. Exactly the T_tgt trailing frames are scored.
inline NarPlan build_nar_input(const TokenSpace& space, const NarInput& in) {
    const int n_streams = space.config().n_streams;
    if (in.stream_j < 2 || in.stream_j > n_streams)
        throw ValidationError("build_nar_input: stream j out of range: " +
                              std::to_string(in.stream_j));
    if (in.tgt_units.units.empty()) throw ValidationError("build_nar_input: empty target units");
    if (in.prompt.frames() < 1) throw ValidationError("build_nar_input: empty prompt");
    if (in.prompt.n_streams != n_streams)
        throw ValidationError("build_nar_input: prompt stream count mismatch");

    NarPlan plan;
    plan.stream_j = in.stream_j;
    for (int u : in.tgt_units.units) {
        PlanEntry e;
        e.items.push_back({space.semantic_id(u), 0});
        plan.entries.push_back(std::move(e));
    }
    for (int t = 0; t < in.prompt.frames(); ++t) {
        PlanEntry e;
        for (int j = 1; j <= n_streams; ++j)
            e.items.push_back({space.acoustic_id(in.prompt.at(t, j)), j});
        plan.entries.push_back(std::move(e));
    }
    {
        PlanEntry e;
        e.items.push_back({space.stream_id(in.stream_j), 0});
        plan.entries.push_back(std::move(e));
    }
    for (const auto& row : in.partial) {
        if (static_cast<int>(row.size()) != in.stream_j - 1)
            throw ValidationError("build_nar_input: partial width " + std::to_string(row.size()) +
                                  ", expected " + std::to_string(in.stream_j - 1));
        PlanEntry e;
        e.scored = true;
        for (int j = 1; j < in.stream_j; ++j) e.items.push_back({space.acoustic_id(row[j - 1]), j});
        plan.entries.push_back(std::move(e));
        plan.n_scored += 1;
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Parsing generated suffixes
// ---------------------------------------------------------------------------

struct ParseResult {
    std::vector<int> values; // unit ids (Trans) or stream-1 code ids (Gen)
    bool truncated = false;  // no <eos> before the cap
    bool malformed = false;  // wrong-region token before <eos>
    int malformed_pos = -1;  // first offending position, relative to the suffix
};

/// `tokens` starts at the first generated position. Region-appropriate
/// tokens are collected up to the first <eos>; anything else is flagged,
/// skipped, and scanning continues so evaluation can count the damage.
inline ParseResult parse_generated(const TokenSpace& space, const std::vector<TokenId>& tokens,
                                   TaskKind task) {
    ParseResult r;
    bool saw_eos = false;
    for (size_t i = 0; i < tokens.size(); ++i) {
        TokenId id = tokens[i];
        if (id == space.eos_id()) {
            saw_eos = true;
            break;
        }
        bool ok = task == TaskKind::translation ? space.is_semantic(id) : space.is_acoustic(id);
        if (!ok) {
            if (!r.malformed) {
                r.malformed = true;
                r.malformed_pos = static_cast<int>(i);
            }
            continue;
        }
        r.values.push_back(task == TaskKind::translation ? id - space.semantic_base()
                                                         : id - space.acoustic_base());
    }
    r.truncated = !saw_eos;
    return r;
}

// Inference length caps. The synthetic world never expands a sequence by
// more than 3x, so these bounds leave margin.
inline int translate_length_cap(int src_len) { return 2 * src_len + 8; }
inline int stream1_length_cap(int tgt_units_len) { return 4 * tgt_units_len + 8; }

} // namespace mslm
