#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

#include "mslm/errors.hpp"
#include "mslm/model.hpp"
#include "mslm/rng.hpp"
#include "mslm/sequence.hpp"
#include "mslm/token_space.hpp"
#include "mslm/world.hpp"

namespace mslm {

struct DecodeConfig {
    enum class Mode { greedy, top_k };
    Mode mode = Mode::greedy;
    int k = 8;
    double temperature = 1.0;
    uint64_t seed = 7;
    int max_translate_tokens = 0; // 0: 2*|src| + 8
    int max_stream1_frames = 0;   // 0: 4*|tgt_units| + 8
    bool constrained = false;     // mask tokens outside the expected region

    void validate() const {
        if (k < 1) throw ConfigError("decode.k must be >= 1");
        if (!(temperature > 0)) throw ConfigError("decode.temperature must be > 0");
    }
};

/// Next-token scorer for autoregressive decoding. reset() installs the
/// inference prefix; next_logits() scores the next position; push() commits
/// the chosen token.
class ArScorer {
public:
    virtual ~ArScorer() = default;
    virtual void reset(const std::vector<TokenId>& prefix) = 0;
    virtual const std::vector<float>& next_logits() = 0;
    virtual void push(TokenId token) = 0;
    virtual int capacity() const = 0;
    // Structured view of an upcoming generation call. The Eq. 2 prefix has
    // no separator between source and target units, so scorers that need
    // the split (the oracle stub does) take it from here; model scorers
    // ignore it.
    virtual void hint_generation(const std::vector<int>& /*src_units*/,
                                 const std::vector<int>& /*tgt_units*/) {}
};

/// Scorer over one logits row per plan; one row per target frame.
class NarScorer {
public:
    virtual ~NarScorer() = default;
    virtual Mat<float> logits(const NarPlan& plan) = 0;
};

// ---------------------------------------------------------------------------
// Transformer scorers
// ---------------------------------------------------------------------------

/// Incremental AR evaluation with per-layer key/value caches. The
/// arithmetic follows ar_forward's accumulation order exactly, so cached
/// decoding is bit-identical to re-running the full forward pass.
class TransformerArScorer : public ArScorer {
public:
    explicit TransformerArScorer(const ModelParams& params) : p_(params) {
        if (p_.config.kind != ModelKind::ar)
            throw ValidationError("TransformerArScorer needs an AR checkpoint");
        const int cap = p_.config.max_positions;
        const int d = p_.config.d_model;
        k_cache_.resize(p_.config.n_layers);
        v_cache_.resize(p_.config.n_layers);
        for (int l = 0; l < p_.config.n_layers; ++l) {
            k_cache_[l].resize(cap, d);
            v_cache_[l].resize(cap, d);
        }
        logits_.resize(p_.config.out_size);
    }

    void reset(const std::vector<TokenId>& prefix) override {
        len_ = 0;
        if (prefix.empty()) throw ValidationError("empty decode prefix");
        feed(prefix);
    }

    const std::vector<float>& next_logits() override { return logits_; }

    void push(TokenId token) override { feed({token}); }

    int capacity() const override { return p_.config.max_positions; }

    int length() const { return len_; }

private:
    void feed(const std::vector<TokenId>& tokens) {
        const ModelConfig& cfg = p_.config;
        const int d = cfg.d_model;
        const int dh = d / cfg.n_heads;
        const int b = static_cast<int>(tokens.size());
        if (len_ + b > cfg.max_positions)
            throw ValidationError("decode exceeded max_positions " +
                                  std::to_string(cfg.max_positions));
        Mat<float> x(b, d);
        for (int i = 0; i < b; ++i) {
            TokenId t = tokens[i];
            if (t < 0 || t >= cfg.vocab_size)
                throw ValidationError("token id out of vocabulary: " + std::to_string(t));
            const float* e = p_.t(p_.i_tok_emb).row(t);
            const float* pe = p_.t(p_.i_pos_emb).row(len_ + i);
            float* xr = x.row(i);
            for (int c = 0; c < d; ++c) xr[c] = static_cast<float>(static_cast<double>(e[c]) + static_cast<double>(pe[c]));
        }
        Mat<float> h(b, d), q(b, d), k(b, d), v(b, d), ctx(b, d);
        std::vector<float> mean(b), rstd(b);
        for (int l = 0; l < cfg.n_layers; ++l) {
            const LayerIdx& li = p_.layers[l];
            detail::layer_norm_forward(x.v.data(), p_.t(li.ln1_g).data(), p_.t(li.ln1_b).data(),
                                       h.v.data(), mean.data(), rstd.data(), b, d);
            q.zero();
            k.zero();
            v.zero();
            matmul_acc(q.v.data(), h.v.data(), p_.t(li.wq).data(), b, d, d);
            add_bias(q.v.data(), p_.t(li.bq).data(), b, d);
            matmul_acc(k.v.data(), h.v.data(), p_.t(li.wk).data(), b, d, d);
            add_bias(k.v.data(), p_.t(li.bk).data(), b, d);
            matmul_acc(v.v.data(), h.v.data(), p_.t(li.wv).data(), b, d, d);
            add_bias(v.v.data(), p_.t(li.bv).data(), b, d);
            for (int i = 0; i < b; ++i) {
                std::copy_n(q.row(i), d, h.row(i)); // keep q rows; reuse h as q holder
                std::copy_n(k.row(i), d, k_cache_[l].row(len_ + i));
                std::copy_n(v.row(i), d, v_cache_[l].row(len_ + i));
            }
            // attention against the cache, one row at a time, ascending keys
            for (int i = 0; i < b; ++i) {
                const int bound = len_ + i + 1;
                const float* qr = h.row(i);
                float* cr = ctx.row(i);
                for (int head = 0; head < cfg.n_heads; ++head) {
                    const int off = head * dh;
                    const float scale = static_cast<float>(1.0 / std::sqrt(static_cast<double>(dh)));
                    std::vector<float> srow(bound);
                    for (int c = 0; c < dh; ++c) {
                        const float a = qr[off + c];
                        for (int j = 0; j < bound; ++j)
                            srow[j] += a * k_cache_[l].at(j, off + c);
                    }
                    float mx = srow[0] * scale;
                    for (int j = 1; j < bound; ++j) mx = std::max(mx, srow[j] * scale);
                    double denom = 0.0;
                    for (int j = 0; j < bound; ++j)
                        denom += std::exp(static_cast<double>(srow[j] * scale - mx));
                    std::vector<float> prow(bound);
                    for (int j = 0; j < bound; ++j)
                        prow[j] = static_cast<float>(
                            std::exp(static_cast<double>(srow[j] * scale - mx)) / denom);
                    for (int c = 0; c < dh; ++c) cr[off + c] = 0.0f;
                    for (int j = 0; j < bound; ++j) {
                        const float pj = prow[j];
                        const float* vr = v_cache_[l].row(j) + off;
                        for (int c = 0; c < dh; ++c) cr[off + c] += pj * vr[c];
                    }
                }
            }
            Mat<float> attn_out(b, d);
            matmul_acc(attn_out.v.data(), ctx.v.data(), p_.t(li.wo).data(), b, d, d);
            add_bias(attn_out.v.data(), p_.t(li.bo).data(), b, d);
            for (int i = 0; i < b; ++i) {
                float* xr = x.row(i);
                const float* ao = attn_out.row(i);
                for (int c = 0; c < d; ++c) xr[c] += ao[c];
            }
            detail::layer_norm_forward(x.v.data(), p_.t(li.ln2_g).data(), p_.t(li.ln2_b).data(),
                                       h.v.data(), mean.data(), rstd.data(), b, d);
            Mat<float> pre(b, cfg.d_ff);
            matmul_acc(pre.v.data(), h.v.data(), p_.t(li.w1).data(), b, d, cfg.d_ff);
            add_bias(pre.v.data(), p_.t(li.b1).data(), b, cfg.d_ff);
            for (int i = 0; i < b; ++i) {
                float* r = pre.row(i);
                for (int c = 0; c < cfg.d_ff; ++c) r[c] = detail::gelu(r[c]);
            }
            Mat<float> ff_out(b, d);
            matmul_acc(ff_out.v.data(), pre.v.data(), p_.t(li.w2).data(), b, cfg.d_ff, d);
            add_bias(ff_out.v.data(), p_.t(li.b2).data(), b, d);
            for (int i = 0; i < b; ++i) {
                float* xr = x.row(i);
                const float* fo = ff_out.row(i);
                for (int c = 0; c < d; ++c) xr[c] += fo[c];
            }
        }
        len_ += b;
        // final norm + projection for the last row only
        Mat<float> last(1, d);
        std::copy_n(x.row(b - 1), d, last.row(0));
        Mat<float> lnf(1, d);
        std::vector<float> m1(1), r1(1);
        detail::layer_norm_forward(last.v.data(), p_.t(p_.i_lnf_g).data(),
                                   p_.t(p_.i_lnf_b).data(), lnf.v.data(), m1.data(), r1.data(), 1,
                                   d);
        Mat<float> logits;
        detail::project_rows(p_, lnf, logits);
        std::copy_n(logits.row(0), cfg.out_size, logits_.begin());
    }

    const ModelParams& p_;
    std::vector<Mat<float>> k_cache_, v_cache_;
    std::vector<float> logits_;
    int len_ = 0;
};

class TransformerNarScorer : public NarScorer {
public:
    explicit TransformerNarScorer(const ModelParams& params) : p_(params) {
        if (p_.config.kind != ModelKind::nar)
            throw ValidationError("TransformerNarScorer needs a NAR checkpoint");
    }
    Mat<float> logits(const NarPlan& plan) override { return nar_forward(p_, plan); }

private:
    const ModelParams& p_;
};

// ---------------------------------------------------------------------------
// Oracle scorers (test doubles; also the CLI's --oracle-* stages)
// ---------------------------------------------------------------------------

namespace detail_oracle {

// (unit, style) of a full 8-stream frame, recovered from streams 1 and 2:
// c2 - c1 = unit + 97 (mod 1024), then the style inverts from stream 1.
inline std::pair<int, int> frame_identity(int c1, int c2) {
    int unit = ((c2 - c1 - 97) % kCodecMod + kCodecMod) % kCodecMod;
    int style = WorldOracle::decode_style(c1, unit, 1);
    return {unit, style};
}

} // namespace detail_oracle

/// Emits logits that put a large value on the token the world oracles say
/// comes next, so greedy decoding reproduces the oracle exactly through the
/// real decode loop.
class OracleArScorer : public ArScorer {
public:
    OracleArScorer(const TokenSpace& space, const WorldOracle& oracle)
        : space_(space), oracle_(oracle), logits_(space.total_size(), 0.0f) {}

    void reset(const std::vector<TokenId>& prefix) override {
        seq_ = prefix;
        plan_continuation();
    }

    const std::vector<float>& next_logits() override {
        std::fill(logits_.begin(), logits_.end(), 0.0f);
        TokenId want = emitted_ < static_cast<int>(planned_.size()) ? planned_[emitted_]
                                                                    : space_.eos_id();
        logits_[want] = 16.0f;
        return logits_;
    }

    void push(TokenId) override { ++emitted_; }

    int capacity() const override { return 1 << 20; }

    void hint_generation(const std::vector<int>& /*src_units*/,
                         const std::vector<int>& tgt_units) override {
        hinted_tgt_units_ = tgt_units;
    }

private:
    void plan_continuation() {
        planned_.clear();
        emitted_ = 0;
        int trans_pos = -1, gen_pos = -1;
        for (size_t i = 0; i < seq_.size(); ++i) {
            if (seq_[i] == space_.trans_id()) trans_pos = static_cast<int>(i);
            if (seq_[i] == space_.gen_id()) gen_pos = static_cast<int>(i);
        }
        if (trans_pos >= 0) {
            // <src> S_src <trans> <tgt> -- unambiguous
            std::vector<int> src_units;
            for (int i = 1; i < trans_pos; ++i)
                src_units.push_back(seq_[i] - space_.semantic_base());
            Token src_lang = space_.from_id(seq_[0]);
            Token tgt_lang = space_.from_id(seq_[trans_pos + 1]);
            Direction dir{src_lang.value, tgt_lang.value};
            for (int u : oracle_.translate(src_units, dir))
                planned_.push_back(space_.semantic_id(u));
            planned_.push_back(space_.eos_id());
        } else if (gen_pos >= 0) {
            if (hinted_tgt_units_.empty())
                throw ValidationError(
                    "oracle generation scorer needs hint_generation (Eq. 2 prefixes carry no "
                    "src/tgt separator)");
            // stream-1 codes fix the style by residue: c mod 32 = (63s+97) mod
            // 32, and those residues are distinct for s < 32
            int c1 = seq_[gen_pos + 1] - space_.acoustic_base();
            int style = -1;
            for (int s = 0; s < oracle_.config().n_styles; ++s) {
                if ((oracle_.code(0, s, 1) - c1) % 32 == 0) {
                    if (style >= 0)
                        throw ValidationError("oracle scorer: ambiguous prompt style (n_styles > 32)");
                    style = s;
                }
            }
            if (style < 0) throw ValidationError("oracle scorer: prompt matches no style");
            for (int u : hinted_tgt_units_)
                for (int rep = 0; rep < WorldOracle::duration(u); ++rep)
                    planned_.push_back(space_.acoustic_id(oracle_.code(u, style, 1)));
            planned_.push_back(space_.eos_id());
        } else {
            throw ValidationError("oracle scorer: prefix has no task token");
        }
    }

    const TokenSpace& space_;
    const WorldOracle& oracle_;
    std::vector<TokenId> seq_;
    std::vector<TokenId> planned_;
    std::vector<int> hinted_tgt_units_;
    int emitted_ = 0;
    std::vector<float> logits_;
};

/// One-hot logits at the codes the codec oracle assigns; (unit, style) are
/// recovered from the prompt frames inside the plan itself.
class OracleNarScorer : public NarScorer {
public:
    OracleNarScorer(const TokenSpace& space, const WorldOracle& oracle)
        : space_(space), oracle_(oracle) {}

    Mat<float> logits(const NarPlan& plan) override {
        // locate the plan segments: leading semantic entries, then full
        // prompt frames, then <j>, then target frames
        std::vector<int> tgt_units;
        int first_prompt = -1;
        for (int i = 0; i < plan.length(); ++i) {
            const auto& e = plan.entries[i];
            if (e.items.size() == 1 && space_.is_semantic(e.items[0].id) && first_prompt < 0) {
                tgt_units.push_back(e.items[0].id - space_.semantic_base());
            } else if (e.items.size() > 1 && first_prompt < 0) {
                first_prompt = i;
                break;
            }
        }
        if (first_prompt < 0 || plan.entries[first_prompt].items.size() < 2)
            throw ValidationError("oracle nar scorer: malformed plan");
        int c1 = plan.entries[first_prompt].items[0].id - space_.acoustic_base();
        int c2 = plan.entries[first_prompt].items[1].id - space_.acoustic_base();
        auto [unit, style] = detail_oracle::frame_identity(c1, c2);
        (void)unit;

        // expand tgt units into frame-aligned units
        std::vector<int> aligned;
        for (int u : tgt_units)
            for (int rep = 0; rep < WorldOracle::duration(u); ++rep) aligned.push_back(u);

        Mat<float> out(plan.n_scored, space_.config().n_acoustic);
        for (int t = 0; t < plan.n_scored; ++t) {
            int u = t < static_cast<int>(aligned.size()) ? aligned[t]
                                                         : (aligned.empty() ? 0 : aligned.back());
            out.at(t, oracle_.code(u, style, plan.stream_j)) = 16.0f;
        }
        return out;
    }

private:
    const TokenSpace& space_;
    const WorldOracle& oracle_;
};

// ---------------------------------------------------------------------------
// Decoding loops
// ---------------------------------------------------------------------------

namespace detail_decode {

inline TokenId pick_token(const std::vector<float>& logits, const DecodeConfig& cfg,
                          SplitMix64& rng, const std::vector<uint8_t>* allowed) {
    auto value = [&](int i) {
        return (allowed && !(*allowed)[i]) ? -std::numeric_limits<float>::infinity() : logits[i];
    };
    if (cfg.mode == DecodeConfig::Mode::greedy) {
        int best = 0;
        float bv = value(0);
        for (int i = 1; i < static_cast<int>(logits.size()); ++i)
            if (value(i) > bv) {
                bv = value(i);
                best = i;
            }
        return best;
    }
    // top-k sampling with temperature
    std::vector<int> idx(logits.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    const int k = std::min<int>(cfg.k, static_cast<int>(logits.size()));
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        if (value(a) != value(b)) return value(a) > value(b);
        return a < b;
    });
    double mx = value(idx[0]);
    std::vector<double> w(k);
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
        w[i] = std::exp((static_cast<double>(value(idx[i])) - mx) / cfg.temperature);
        total += w[i];
    }
    double r = rng.uniform01() * total;
    double acc = 0.0;
    for (int i = 0; i < k; ++i) {
        acc += w[i];
        if (r <= acc) return idx[i];
    }
    return idx[k - 1];
}

} // namespace detail_decode

struct StageResult {
    std::vector<int> values; // units or codes
    bool truncated = false;
    bool malformed = false;
    int malformed_pos = -1;
};

/// Eq. 1 inference: builds the translation prefix, decodes until <eos> or
/// the length cap, and parses the generated suffix.
inline StageResult translate(ArScorer& scorer, const TokenSpace& space, const SemanticSeq& src,
                             int tgt_lang, const DecodeConfig& decode) {
    decode.validate();
    PackedExample prefix = build_translation(space, src, tgt_lang, std::nullopt);
    const int cap = decode.max_translate_tokens > 0
                        ? decode.max_translate_tokens
                        : translate_length_cap(static_cast<int>(src.units.size()));
    scorer.reset(prefix.tokens);
    SplitMix64 rng(decode.seed);
    std::vector<uint8_t> allowed;
    if (decode.constrained) {
        allowed.assign(space.total_size(), 0);
        for (int u = 0; u < space.config().n_semantic; ++u) allowed[space.semantic_id(u)] = 1;
        allowed[space.eos_id()] = 1;
    }
    std::vector<TokenId> generated;
    for (int i = 0; i < cap; ++i) {
        if (scorer.capacity() - prefix.length() - static_cast<int>(generated.size()) <= 1) break;
        TokenId t = detail_decode::pick_token(scorer.next_logits(), decode, rng,
                                              decode.constrained ? &allowed : nullptr);
        generated.push_back(t);
        if (t == space.eos_id()) break;
        scorer.push(t);
    }
    ParseResult r = parse_generated(space, generated, TaskKind::translation);
    return {r.values, r.truncated, r.malformed, r.malformed_pos};
}

/// Eq. 2 inference: style-prompted first-stream generation. The prompt grid
/// must already be truncated to the 5-second cap.
inline StageResult generate_stream1(ArScorer& scorer, const TokenSpace& space,
                                    const std::vector<int>& src_units,
                                    const std::vector<int>& tgt_units, const AcousticGrid& prompt,
                                    const DecodeConfig& decode) {
    decode.validate();
    if (tgt_units.empty())
        throw ValidationError("generate_stream1: empty target semantic sequence");
    scorer.hint_generation(src_units, tgt_units);
    PackedExample prefix =
        build_generation(space, src_units, tgt_units, prompt.column(1), std::nullopt);
    const int cap = decode.max_stream1_frames > 0
                        ? decode.max_stream1_frames
                        : stream1_length_cap(static_cast<int>(tgt_units.size()));
    scorer.reset(prefix.tokens);
    SplitMix64 rng(decode.seed ^ 0x9e3779b9);
    std::vector<uint8_t> allowed;
    if (decode.constrained) {
        allowed.assign(space.total_size(), 0);
        for (int c = 0; c < space.config().n_acoustic; ++c) allowed[space.acoustic_id(c)] = 1;
        allowed[space.eos_id()] = 1;
    }
    std::vector<TokenId> generated;
    for (int i = 0; i < cap; ++i) {
        if (scorer.capacity() - prefix.length() - static_cast<int>(generated.size()) <= 1) break;
        TokenId t = detail_decode::pick_token(scorer.next_logits(), decode, rng,
                                              decode.constrained ? &allowed : nullptr);
        generated.push_back(t);
        if (t == space.eos_id()) break;
        scorer.push(t);
    }
    ParseResult r = parse_generated(space, generated, TaskKind::generation);
    return {r.values, r.truncated, r.malformed, r.malformed_pos};
}

/// Eq. 3 inference: fills streams 2..n in ascending order, argmax per frame.
/// Column 1 of the result is the given stream-1 sequence, untouched.
inline AcousticGrid complete_streams(NarScorer& scorer, const TokenSpace& space,
                                     const std::vector<int>& tgt_units,
                                     const AcousticGrid& prompt,
                                     const std::vector<int>& stream1) {
    if (stream1.empty()) throw ValidationError("complete_streams: empty stream-1 input");
    const int n_streams = space.config().n_streams;
    AcousticGrid grid;
    grid.n_streams = n_streams;
    grid.codes.assign(static_cast<size_t>(stream1.size()) * n_streams, 0);
    for (size_t t = 0; t < stream1.size(); ++t) grid.at(static_cast<int>(t), 1) = stream1[t];
    for (int j = 2; j <= n_streams; ++j) {
        NarInput in;
        in.tgt_units = {0, tgt_units};
        in.prompt = prompt;
        in.stream_j = j;
        in.partial.resize(stream1.size());
        for (size_t t = 0; t < stream1.size(); ++t)
            for (int q = 1; q < j; ++q) in.partial[t].push_back(grid.at(static_cast<int>(t), q));
        NarPlan plan = build_nar_input(space, in);
        Mat<float> logits = scorer.logits(plan);
        for (int t = 0; t < logits.rows; ++t) {
            int best = 0;
            float bv = logits.at(t, 0);
            for (int c = 1; c < logits.cols; ++c)
                if (logits.at(t, c) > bv) {
                    bv = logits.at(t, c);
                    best = c;
                }
            grid.at(t, j) = best;
        }
    }
    return grid;
}

struct PipelineOutput {
    std::vector<int> tgt_units;
    AcousticGrid grid;
    StageResult translation;
    StageResult stream1;
    int decoded_style = -1;    // filled by the evaluation layer
    double consistency = 0.0;  // likewise
};

/// Fig. 2's three stages end to end: translate, truncate the style prompt,
/// generate stream 1, complete streams 2..n. Stage flags propagate; a
/// failed stage leaves later outputs empty rather than aborting the record.
inline PipelineOutput run_pipeline(ArScorer& translator, ArScorer& generator, NarScorer& completer,
                                   const TokenSpace& space, const SemanticSeq& src,
                                   const AcousticGrid& src_grid, int tgt_lang,
                                   const DecodeConfig& decode, int prompt_max_frames = kPromptMaxFrames) {
    PipelineOutput out;
    out.translation = translate(translator, space, src, tgt_lang, decode);
    out.tgt_units = out.translation.values;
    if (out.tgt_units.empty()) return out;
    AcousticGrid prompt = truncate_prompt(src_grid, prompt_max_frames);
    out.stream1 = generate_stream1(generator, space, src.units, out.tgt_units, prompt, decode);
    if (out.stream1.values.empty()) return out;
    out.grid = complete_streams(completer, space, out.tgt_units, prompt, out.stream1.values);
    return out;
}

} // namespace mslm
