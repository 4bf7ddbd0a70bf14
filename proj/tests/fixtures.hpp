#pragma once

// Shared tiny-model fixtures: the golden generator and the tests must agree
// on these exactly.

#include "mslm/model.hpp"
#include "mslm/sequence.hpp"
#include "mslm/token_space.hpp"

namespace fixtures {

inline mslm::TokenSpace tiny_space() {
    mslm::TokenSpaceConfig cfg;
    cfg.n_semantic = 11;
    cfg.n_acoustic = 13;
    cfg.languages = {"en", "es"};
    cfg.n_streams = 4;
    return mslm::build_token_space(cfg); // total 11+13+4+2+3 = 33
}

inline mslm::ModelConfig tiny_config(mslm::ModelKind kind, const mslm::TokenSpace& space) {
    return mslm::make_model_config(kind, space, /*n_layers=*/2, /*d_model=*/16, /*d_ff=*/32,
                                   /*n_heads=*/2, /*max_positions=*/64);
}

inline constexpr uint64_t kTinySeed = 7;

inline std::vector<mslm::TokenId> tiny_ar_input(const mslm::TokenSpace& space) {
    mslm::SemanticSeq src{0, {3, 7, 1}};
    mslm::SemanticSeq tgt{1, {2, 9}};
    return mslm::build_translation(space, src, 1, tgt).tokens;
}

inline mslm::NarPlan tiny_nar_plan(const mslm::TokenSpace& space) {
    mslm::NarInput in;
    in.tgt_units = {1, {4, 8, 2}};
    in.prompt.n_streams = 4;
    in.prompt.codes = {1, 5, 9, 12, 0, 3, 7, 11}; // 2 frames x 4 streams
    in.stream_j = 3;
    in.partial = {{2, 6}, {10, 1}}; // T_tgt=2, width 2
    return mslm::build_nar_input(space, in);
}

} // namespace fixtures
