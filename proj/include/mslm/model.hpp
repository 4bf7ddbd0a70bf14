#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mslm/errors.hpp"
#include "mslm/rng.hpp"
#include "mslm/sequence.hpp"
#include "mslm/tensor.hpp"
#include "mslm/token_space.hpp"

namespace mslm {

enum class ModelKind : int32_t { ar = 0, nar = 1 };

inline const char* kind_name(ModelKind k) { return k == ModelKind::ar ? "ar" : "nar"; }

struct ModelConfig {
    ModelKind kind = ModelKind::ar;
    int n_layers = 4;
    int d_model = 128;
    int d_ff = 512;
    int n_heads = 4;
    int max_positions = 1024;
    int vocab_size = 0;  // embedding table rows
    int out_offset = 0;  // first embedding row of the output region (tied projection)
    int out_size = 0;    // logits dimension
    int n_streams = 8;
    bool tie_output = true;
    bool stream_additive_emb = true; // NAR input feature, ignored for AR
    uint64_t space_hash = 0;

    void validate() const {
        if (n_layers < 1) throw ConfigError("model.n_layers must be >= 1");
        if (d_model < 1 || d_ff < 1) throw ConfigError("model dimensions must be >= 1");
        if (n_heads < 1 || d_model % n_heads != 0)
            throw ConfigError("model.d_model (" + std::to_string(d_model) +
                              ") must be divisible by n_heads (" + std::to_string(n_heads) + ")");
        if (max_positions < 2) throw ConfigError("model.max_positions must be >= 2");
        if (vocab_size < 1 || out_size < 1) throw ConfigError("model vocabulary must be non-empty");
        if (out_offset < 0 || out_offset + out_size > vocab_size)
            throw ConfigError("model output region exceeds the vocabulary");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline ModelConfig make_model_config(ModelKind kind, const TokenSpace& space, int n_layers = 4,
                                     int d_model = 128, int d_ff = 512, int n_heads = 4,
                                     int max_positions = 1024) {
    ModelConfig c;
    c.kind = kind;
    c.n_layers = n_layers;
    c.d_model = d_model;
    c.d_ff = d_ff;
    c.n_heads = n_heads;
    c.max_positions = max_positions;
    c.vocab_size = space.total_size();
    c.n_streams = space.config().n_streams;
    if (kind == ModelKind::ar) {
        c.out_offset = 0;
        c.out_size = space.total_size();
    } else {
        c.out_offset = space.acoustic_base();
        c.out_size = space.config().n_acoustic;
    }
    c.space_hash = space.layout_hash();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

enum class InitKind { normal, zeros, ones };

template <typename S>
struct TensorT {
    std::string name;
    int rows = 0;
    int cols = 0;
    InitKind init = InitKind::normal;
    std::vector<S> v;

    S* data() { return v.data(); }
    const S* data() const { return v.data(); }
    const S* row(int r) const { return v.data() + static_cast<size_t>(r) * cols; }
    S* row(int r) { return v.data() + static_cast<size_t>(r) * cols; }
    size_t count() const { return static_cast<size_t>(rows) * cols; }
};

struct LayerIdx {
    int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
};

/// All weights of one transformer, as a flat list of named tensors in a
/// fixed order. The order is the serialization order and the init draw
/// order, so identical (config, seed) pairs are bit-identical.
template <typename S>
struct ParamsT {
    ModelConfig config;
    std::vector<TensorT<S>> tensors;
    int i_tok_emb = -1, i_pos_emb = -1, i_lnf_g = -1, i_lnf_b = -1;
    int i_out_proj = -1, i_stream_emb = -1;
    std::vector<LayerIdx> layers;

    TensorT<S>& t(int i) { return tensors[i]; }
    const TensorT<S>& t(int i) const { return tensors[i]; }

    size_t total_params() const {
        size_t n = 0;
        for (const auto& tn : tensors) n += tn.count();
        return n;
    }

    static ParamsT<S> shaped(const ModelConfig& config) {
        config.validate();
        ParamsT<S> p;
        p.config = config;
        auto add = [&p](const std::string& name, int rows, int cols, InitKind init) {
            TensorT<S> t;
            t.name = name;
            t.rows = rows;
            t.cols = cols;
            t.init = init;
            t.v.assign(static_cast<size_t>(rows) * cols, S(0));
            p.tensors.push_back(std::move(t));
            return static_cast<int>(p.tensors.size()) - 1;
        };
        const int d = config.d_model;
        p.i_tok_emb = add("tok_emb", config.vocab_size, d, InitKind::normal);
        p.i_pos_emb = add("pos_emb", config.max_positions, d, InitKind::normal);
        for (int l = 0; l < config.n_layers; ++l) {
            const std::string pre = "layers." + std::to_string(l) + ".";
            LayerIdx idx;
            idx.ln1_g = add(pre + "ln1.g", 1, d, InitKind::ones);
            idx.ln1_b = add(pre + "ln1.b", 1, d, InitKind::zeros);
            idx.wq = add(pre + "attn.wq", d, d, InitKind::normal);
            idx.bq = add(pre + "attn.bq", 1, d, InitKind::zeros);
            idx.wk = add(pre + "attn.wk", d, d, InitKind::normal);
            idx.bk = add(pre + "attn.bk", 1, d, InitKind::zeros);
            idx.wv = add(pre + "attn.wv", d, d, InitKind::normal);
            idx.bv = add(pre + "attn.bv", 1, d, InitKind::zeros);
            idx.wo = add(pre + "attn.wo", d, d, InitKind::normal);
            idx.bo = add(pre + "attn.bo", 1, d, InitKind::zeros);
            idx.ln2_g = add(pre + "ln2.g", 1, d, InitKind::ones);
            idx.ln2_b = add(pre + "ln2.b", 1, d, InitKind::zeros);
            idx.w1 = add(pre + "ff.w1", d, config.d_ff, InitKind::normal);
            idx.b1 = add(pre + "ff.b1", 1, config.d_ff, InitKind::zeros);
            idx.w2 = add(pre + "ff.w2", config.d_ff, d, InitKind::normal);
            idx.b2 = add(pre + "ff.b2", 1, d, InitKind::zeros);
            p.layers.push_back(idx);
        }
        p.i_lnf_g = add("lnf.g", 1, d, InitKind::ones);
        p.i_lnf_b = add("lnf.b", 1, d, InitKind::zeros);
        if (!config.tie_output) p.i_out_proj = add("out_proj", config.out_size, d, InitKind::normal);
        if (config.kind == ModelKind::nar && config.stream_additive_emb)
            p.i_stream_emb = add("stream_emb", config.n_streams, d, InitKind::normal);
        return p;
    }

    void zero_all() {
        for (auto& tn : tensors) std::fill(tn.v.begin(), tn.v.end(), S(0));
    }
};

using ModelParams = ParamsT<float>;

/// Exact element-wise conversion between scalar types (float -> double is
/// lossless, which is what the finite-difference checks rely on).
template <typename T, typename S>
ParamsT<T> params_cast(const ParamsT<S>& p) {
    ParamsT<T> out = ParamsT<T>::shaped(p.config);
    for (size_t i = 0; i < p.tensors.size(); ++i)
        for (size_t k = 0; k < p.tensors[i].v.size(); ++k)
            out.tensors[i].v[k] = static_cast<T>(p.tensors[i].v[k]);
    return out;
}

template <typename S>
ParamsT<S> init_params(const ModelConfig& config, uint64_t seed) {
    ParamsT<S> p = ParamsT<S>::shaped(config);
    SplitMix64 rng(seed);
    for (auto& t : p.tensors) {
        switch (t.init) {
            case InitKind::normal:
                for (auto& x : t.v) x = static_cast<S>(rng.normal(0.0, 0.02));
                break;
            case InitKind::zeros: break;
            case InitKind::ones:
                std::fill(t.v.begin(), t.v.end(), S(1));
                break;
        }
    }
    return p;
}

// ---------------------------------------------------------------------------
// Batch row specification (ragged: one row per real position, no padding)
// ---------------------------------------------------------------------------

/// Flattened model input. Each row embeds as the sum of its items' token
/// embeddings (plus per-stream additive embeddings where marked) and the
/// position embedding. Attention runs independently within each span, so
/// positions never see other examples; the cross-entropy loss and the
/// attention pattern exclude padding by construction because padding rows
/// are simply not materialized.
struct RowsSpec {
    struct Item {
        TokenId id;
        int stream; // 0 = no additive stream embedding, else 1..n_streams
    };
    std::vector<int> item_offsets = {0}; // rows+1
    std::vector<Item> items;
    std::vector<int> pos;
    std::vector<std::pair<int, int>> spans;
    std::vector<std::pair<int, int>> scored; // (row, target index in [0,out_size))
    bool causal = true;

    int rows() const { return static_cast<int>(pos.size()); }

    void begin_example() { span_begin_ = rows(); }
    void end_example() { spans.push_back({span_begin_, rows()}); }
    void add_row(int position) {
        pos.push_back(position);
        item_offsets.push_back(static_cast<int>(items.size()));
    }
    void add_item(TokenId id, int stream = 0) {
        items.push_back({id, stream});
        item_offsets.back() = static_cast<int>(items.size());
    }

private:
    int span_begin_ = 0;
};

inline void append_packed(RowsSpec& rows, const PackedExample& ex, const ModelConfig& config) {
    if (ex.length() > config.max_positions)
        throw ValidationError("packed example of length " + std::to_string(ex.length()) +
                              " exceeds max_positions " + std::to_string(config.max_positions));
    rows.begin_example();
    const int base = rows.rows();
    for (int i = 0; i < ex.length(); ++i) {
        if (ex.tokens[i] < 0 || ex.tokens[i] >= config.vocab_size)
            throw ValidationError("token id out of vocabulary: " + std::to_string(ex.tokens[i]));
        rows.add_row(i);
        rows.add_item(ex.tokens[i]);
        // loss_mask[i] marks token i as a target; the logits that predict it
        // sit at the previous position.
        if (ex.loss_mask[i]) {
            if (i == 0) throw ValidationError("loss mask set at position 0");
            rows.scored.push_back({base + i - 1, ex.tokens[i]});
        }
    }
    rows.end_example();
}

struct NarExample {
    NarPlan plan;
    std::vector<int> targets; // stream-j codes, one per scored frame
};

inline void append_plan(RowsSpec& rows, const NarExample& ex, const ModelConfig& config) {
    if (ex.plan.length() > config.max_positions)
        throw ValidationError("nar plan of length " + std::to_string(ex.plan.length()) +
                              " exceeds max_positions " + std::to_string(config.max_positions));
    if (static_cast<int>(ex.targets.size()) != ex.plan.n_scored)
        throw ValidationError("nar targets do not match scored frame count");
    rows.causal = false;
    rows.begin_example();
    int scored_seen = 0;
    for (int i = 0; i < ex.plan.length(); ++i) {
        const PlanEntry& e = ex.plan.entries[i];
        rows.add_row(i);
        for (const auto& item : e.items) rows.add_item(item.id, item.stream);
        if (e.scored) {
            int code = ex.targets[scored_seen++];
            if (code < 0 || code >= config.out_size)
                throw ValidationError("nar target code out of range: " + std::to_string(code));
            rows.scored.push_back({rows.rows() - 1, code});
        }
    }
    rows.end_example();
}

// ---------------------------------------------------------------------------
// Forward / backward core
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr double kLnEps = 1e-5;

template <typename S>
struct LayerActs {
    Mat<S> x_in, ln1_out, q, k, v, ctx, x_mid, ln2_out, ff_pre, ff_act;
    std::vector<S> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
    std::vector<std::vector<S>> probs; // per (span, head): L*L row-major
};

template <typename S>
struct CoreActs {
    Mat<S> x0;
    std::vector<LayerActs<S>> layers;
    Mat<S> xf, lnf_out;
    std::vector<S> lnf_mean, lnf_rstd;
};

template <typename S>
void embed_rows(const ParamsT<S>& p, const RowsSpec& rows, Mat<S>& x0) {
    const int d = p.config.d_model;
    const TensorT<S>& tok = p.t(p.i_tok_emb);
    const TensorT<S>& pos = p.t(p.i_pos_emb);
    const TensorT<S>* stream = p.i_stream_emb >= 0 ? &p.t(p.i_stream_emb) : nullptr;
    x0.resize(rows.rows(), d);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < rows.rows(); ++n) {
        std::vector<double> acc(d, 0.0); // double accumulation: summation order of
                                         // multi-code frames must not matter
        for (int it = rows.item_offsets[n]; it < rows.item_offsets[n + 1]; ++it) {
            const auto& item = rows.items[it];
            const S* e = tok.row(item.id);
            for (int c = 0; c < d; ++c) acc[c] += static_cast<double>(e[c]);
            if (item.stream > 0 && stream) {
                const S* se = stream->row(item.stream - 1);
                for (int c = 0; c < d; ++c) acc[c] += static_cast<double>(se[c]);
            }
        }
        const S* pe = pos.row(rows.pos[n]);
        S* out = x0.row(n);
        for (int c = 0; c < d; ++c) out[c] = static_cast<S>(acc[c] + static_cast<double>(pe[c]));
    }
}

template <typename S>
void layer_norm_forward(const S* x, const S* g, const S* b, S* y, S* mean, S* rstd, int n_rows,
                        int d) {
#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_rows; ++n) {
        const S* xr = x + static_cast<size_t>(n) * d;
        S* yr = y + static_cast<size_t>(n) * d;
        double m = 0.0;
        for (int c = 0; c < d; ++c) m += static_cast<double>(xr[c]);
        m /= d;
        double var = 0.0;
        for (int c = 0; c < d; ++c) {
            double dx = static_cast<double>(xr[c]) - m;
            var += dx * dx;
        }
        var /= d;
        double rs = 1.0 / std::sqrt(var + kLnEps);
        mean[n] = static_cast<S>(m);
        rstd[n] = static_cast<S>(rs);
        for (int c = 0; c < d; ++c)
            yr[c] = static_cast<S>((static_cast<double>(xr[c]) - m) * rs) * g[c] + b[c];
    }
}

// dx for all rows in parallel, then dg/db serially in row order.
template <typename S>
void layer_norm_backward(const S* x, const S* g, const S* mean, const S* rstd, const S* dy, S* dx,
                         S* dg, S* db, int n_rows, int d) {
#pragma omp parallel for schedule(static)
    for (int n = 0; n < n_rows; ++n) {
        const S* xr = x + static_cast<size_t>(n) * d;
        const S* dyr = dy + static_cast<size_t>(n) * d;
        S* dxr = dx + static_cast<size_t>(n) * d;
        const double m = static_cast<double>(mean[n]);
        const double rs = static_cast<double>(rstd[n]);
        double m1 = 0.0, m2 = 0.0;
        for (int c = 0; c < d; ++c) {
            double xhat = (static_cast<double>(xr[c]) - m) * rs;
            double dxhat = static_cast<double>(dyr[c]) * static_cast<double>(g[c]);
            m1 += dxhat;
            m2 += dxhat * xhat;
        }
        m1 /= d;
        m2 /= d;
        for (int c = 0; c < d; ++c) {
            double xhat = (static_cast<double>(xr[c]) - m) * rs;
            double dxhat = static_cast<double>(dyr[c]) * static_cast<double>(g[c]);
            dxr[c] = static_cast<S>(rs * (dxhat - m1 - xhat * m2));
        }
    }
    for (int n = 0; n < n_rows; ++n) {
        const S* xr = x + static_cast<size_t>(n) * d;
        const S* dyr = dy + static_cast<size_t>(n) * d;
        const double m = static_cast<double>(mean[n]);
        const double rs = static_cast<double>(rstd[n]);
        for (int c = 0; c < d; ++c) {
            dg[c] += dyr[c] * static_cast<S>((static_cast<double>(xr[c]) - m) * rs);
            db[c] += dyr[c];
        }
    }
}

template <typename S>
S gelu(S x) {
    return S(0.5) * x * (S(1) + std::erf(x * S(0.7071067811865476)));
}

template <typename S>
S gelu_grad(S x) {
    const S cdf = S(0.5) * (S(1) + std::erf(x * S(0.7071067811865476)));
    const S pdf = S(0.3989422804014327) * std::exp(S(-0.5) * x * x);
    return cdf + x * pdf;
}

// Attention over one span for one head, q/k/v laid out [N, d] with this
// head's columns at `off`.. `off+dh`. Probabilities are kept for backward.
template <typename S>
void attention_span_forward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, Mat<S>& ctx,
                            std::vector<S>& probs, int begin, int end, int off, int dh,
                            bool causal) {
    const int len = end - begin;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    probs.assign(static_cast<size_t>(len) * len, S(0));
    std::vector<S> kt(static_cast<size_t>(dh) * len);
    for (int j = 0; j < len; ++j)
        for (int c = 0; c < dh; ++c) kt[static_cast<size_t>(c) * len + j] = k.at(begin + j, off + c);
    std::vector<S> srow(len);
    for (int i = 0; i < len; ++i) {
        const int bound = causal ? i + 1 : len;
        std::fill(srow.begin(), srow.begin() + bound, S(0));
        const S* qr = q.row(begin + i) + off;
        for (int c = 0; c < dh; ++c) {
            const S a = qr[c];
            const S* ktr = kt.data() + static_cast<size_t>(c) * len;
            for (int j = 0; j < bound; ++j) srow[j] += a * ktr[j];
        }
        S mx = srow[0] * scale;
        for (int j = 1; j < bound; ++j) mx = std::max(mx, srow[j] * scale);
        double denom = 0.0;
        for (int j = 0; j < bound; ++j) denom += std::exp(static_cast<double>(srow[j] * scale - mx));
        S* prow = probs.data() + static_cast<size_t>(i) * len;
        for (int j = 0; j < bound; ++j)
            prow[j] = static_cast<S>(std::exp(static_cast<double>(srow[j] * scale - mx)) / denom);
        S* cr = ctx.row(begin + i) + off;
        for (int c = 0; c < dh; ++c) cr[c] = S(0);
        for (int j = 0; j < bound; ++j) {
            const S pj = prow[j];
            const S* vr = v.row(begin + j) + off;
            for (int c = 0; c < dh; ++c) cr[c] += pj * vr[c];
        }
    }
}

template <typename S>
void attention_span_backward(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v,
                             const std::vector<S>& probs, const Mat<S>& dctx, Mat<S>& dq,
                             Mat<S>& dk, Mat<S>& dv, int begin, int end, int off, int dh,
                             bool causal) {
    const int len = end - begin;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    std::vector<S> dprow(len), dsrow(len);
    std::vector<S> vt(static_cast<size_t>(dh) * len);
    for (int j = 0; j < len; ++j)
        for (int c = 0; c < dh; ++c) vt[static_cast<size_t>(c) * len + j] = v.at(begin + j, off + c);
    for (int i = 0; i < len; ++i) {
        const int bound = causal ? i + 1 : len;
        const S* prow = probs.data() + static_cast<size_t>(i) * len;
        const S* dcr = dctx.row(begin + i) + off;
        // dP = dctx . v^T
        std::fill(dprow.begin(), dprow.begin() + bound, S(0));
        for (int c = 0; c < dh; ++c) {
            const S a = dcr[c];
            const S* vtr = vt.data() + static_cast<size_t>(c) * len;
            for (int j = 0; j < bound; ++j) dprow[j] += a * vtr[j];
        }
        // dv += P^T dctx
        for (int j = 0; j < bound; ++j) {
            const S pj = prow[j];
            S* dvr = dv.row(begin + j) + off;
            for (int c = 0; c < dh; ++c) dvr[c] += pj * dcr[c];
        }
        // softmax backward
        double dot = 0.0;
        for (int j = 0; j < bound; ++j) dot += static_cast<double>(prow[j]) * static_cast<double>(dprow[j]);
        for (int j = 0; j < bound; ++j)
            dsrow[j] = prow[j] * (dprow[j] - static_cast<S>(dot));
        // dq += dS k / sqrt(dh), dk += dS^T q / sqrt(dh)
        S* dqr = dq.row(begin + i) + off;
        const S* qr = q.row(begin + i) + off;
        for (int j = 0; j < bound; ++j) {
            const S a = dsrow[j] * scale;
            const S* kr = k.row(begin + j) + off;
            S* dkr = dk.row(begin + j) + off;
            for (int c = 0; c < dh; ++c) {
                dqr[c] += a * kr[c];
                dkr[c] += a * qr[c];
            }
        }
    }
}

template <typename S>
struct Scratch {
    std::vector<S> wt; // transposed weight scratch
    S* transposed(const TensorT<S>& w) {
        wt.assign(w.count(), S(0));
        transpose(w.data(), wt.data(), w.rows, w.cols);
        return wt.data();
    }
};

template <typename S>
void core_forward(const ParamsT<S>& p, const RowsSpec& rows, CoreActs<S>& acts) {
    const ModelConfig& cfg = p.config;
    const int n = rows.rows();
    const int d = cfg.d_model;
    const int dh = d / cfg.n_heads;
    embed_rows(p, rows, acts.x0);
    acts.layers.resize(cfg.n_layers);
    const Mat<S>* x = &acts.x0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerActs<S>& a = acts.layers[l];
        const LayerIdx& li = p.layers[l];
        a.x_in = *x;
        a.ln1_out.resize(n, d);
        a.ln1_mean.resize(n);
        a.ln1_rstd.resize(n);
        layer_norm_forward(a.x_in.v.data(), p.t(li.ln1_g).data(), p.t(li.ln1_b).data(),
                           a.ln1_out.v.data(), a.ln1_mean.data(), a.ln1_rstd.data(), n, d);
        a.q.resize(n, d);
        a.k.resize(n, d);
        a.v.resize(n, d);
        matmul_acc(a.q.v.data(), a.ln1_out.v.data(), p.t(li.wq).data(), n, d, d);
        add_bias(a.q.v.data(), p.t(li.bq).data(), n, d);
        matmul_acc(a.k.v.data(), a.ln1_out.v.data(), p.t(li.wk).data(), n, d, d);
        add_bias(a.k.v.data(), p.t(li.bk).data(), n, d);
        matmul_acc(a.v.v.data(), a.ln1_out.v.data(), p.t(li.wv).data(), n, d, d);
        add_bias(a.v.v.data(), p.t(li.bv).data(), n, d);
        a.ctx.resize(n, d);
        const int n_spans = static_cast<int>(rows.spans.size());
        a.probs.assign(static_cast<size_t>(n_spans) * cfg.n_heads, {});
#pragma omp parallel for schedule(static)
        for (int sh = 0; sh < n_spans * cfg.n_heads; ++sh) {
            const int si = sh / cfg.n_heads;
            const int h = sh % cfg.n_heads;
            attention_span_forward(a.q, a.k, a.v, a.ctx, a.probs[sh], rows.spans[si].first,
                                   rows.spans[si].second, h * dh, dh, rows.causal);
        }
        Mat<S> attn_out(n, d);
        matmul_acc(attn_out.v.data(), a.ctx.v.data(), p.t(li.wo).data(), n, d, d);
        add_bias(attn_out.v.data(), p.t(li.bo).data(), n, d);
        a.x_mid.resize(n, d);
#pragma omp parallel for schedule(static)
        for (int r = 0; r < n; ++r) {
            const S* xi = a.x_in.row(r);
            const S* ao = attn_out.row(r);
            S* xm = a.x_mid.row(r);
            for (int c = 0; c < d; ++c) xm[c] = xi[c] + ao[c];
        }
        a.ln2_out.resize(n, d);
        a.ln2_mean.resize(n);
        a.ln2_rstd.resize(n);
        layer_norm_forward(a.x_mid.v.data(), p.t(li.ln2_g).data(), p.t(li.ln2_b).data(),
                           a.ln2_out.v.data(), a.ln2_mean.data(), a.ln2_rstd.data(), n, d);
        a.ff_pre.resize(n, cfg.d_ff);
        matmul_acc(a.ff_pre.v.data(), a.ln2_out.v.data(), p.t(li.w1).data(), n, d, cfg.d_ff);
        add_bias(a.ff_pre.v.data(), p.t(li.b1).data(), n, cfg.d_ff);
        a.ff_act.resize(n, cfg.d_ff);
#pragma omp parallel for schedule(static)
        for (int r = 0; r < n; ++r) {
            const S* pre = a.ff_pre.row(r);
            S* act = a.ff_act.row(r);
            for (int c = 0; c < cfg.d_ff; ++c) act[c] = gelu(pre[c]);
        }
        Mat<S> ff_out(n, d);
        matmul_acc(ff_out.v.data(), a.ff_act.v.data(), p.t(li.w2).data(), n, cfg.d_ff, d);
        add_bias(ff_out.v.data(), p.t(li.b2).data(), n, d);
        Mat<S>& next = (l + 1 < cfg.n_layers) ? acts.layers[l + 1].x_in : acts.xf;
        next.resize(n, d);
#pragma omp parallel for schedule(static)
        for (int r = 0; r < n; ++r) {
            const S* xm = a.x_mid.row(r);
            const S* fo = ff_out.row(r);
            S* out = next.row(r);
            for (int c = 0; c < d; ++c) out[c] = xm[c] + fo[c];
        }
        x = &next;
    }
    acts.lnf_out.resize(n, d);
    acts.lnf_mean.resize(n);
    acts.lnf_rstd.resize(n);
    layer_norm_forward(acts.xf.v.data(), p.t(p.i_lnf_g).data(), p.t(p.i_lnf_b).data(),
                       acts.lnf_out.v.data(), acts.lnf_mean.data(), acts.lnf_rstd.data(), n, d);
}

// d_lnf_out -> gradients for every parameter; returns nothing, accumulates
// into `g` (zeroed by the caller).
template <typename S>
void core_backward(const ParamsT<S>& p, const RowsSpec& rows, const CoreActs<S>& acts,
                   const Mat<S>& d_lnf_out, ParamsT<S>& g) {
    const ModelConfig& cfg = p.config;
    const int n = rows.rows();
    const int d = cfg.d_model;
    const int dh = d / cfg.n_heads;
    Scratch<S> scratch;

    Mat<S> dx(n, d);
    layer_norm_backward(acts.xf.v.data(), p.t(p.i_lnf_g).data(), acts.lnf_mean.data(),
                        acts.lnf_rstd.data(), d_lnf_out.v.data(), dx.v.data(),
                        g.t(g.i_lnf_g).data(), g.t(g.i_lnf_b).data(), n, d);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerActs<S>& a = acts.layers[l];
        const LayerIdx& li = p.layers[l];
        // dx holds the gradient at the layer output (x_mid + ff_out)
        Mat<S> d_act(n, cfg.d_ff);
        matmul_acc(d_act.v.data(), dx.v.data(), scratch.transposed(p.t(li.w2)), n, d, cfg.d_ff);
        matmul_grad_w(g.t(li.w2).data(), a.ff_act.v.data(), dx.v.data(), n, cfg.d_ff, d);
        bias_grad(g.t(li.b2).data(), dx.v.data(), n, d);
#pragma omp parallel for schedule(static)
        for (int r = 0; r < n; ++r) {
            const S* pre = a.ff_pre.row(r);
            S* da = d_act.row(r);
            for (int c = 0; c < cfg.d_ff; ++c) da[c] *= gelu_grad(pre[c]);
        }
        Mat<S> d_ln2(n, d);
        matmul_acc(d_ln2.v.data(), d_act.v.data(), scratch.transposed(p.t(li.w1)), n, cfg.d_ff, d);
        matmul_grad_w(g.t(li.w1).data(), a.ln2_out.v.data(), d_act.v.data(), n, d, cfg.d_ff);
        bias_grad(g.t(li.b1).data(), d_act.v.data(), n, cfg.d_ff);
        Mat<S> d_mid(n, d);
        layer_norm_backward(a.x_mid.v.data(), p.t(li.ln2_g).data(), a.ln2_mean.data(),
                            a.ln2_rstd.data(), d_ln2.v.data(), d_mid.v.data(),
                            g.t(li.ln2_g).data(), g.t(li.ln2_b).data(), n, d);
        // residual: gradient at x_mid = d_mid + dx (dx flows around the ff block)
#pragma omp parallel for schedule(static)
        for (int r = 0; r < n; ++r) {
            const S* dxr = dx.row(r);
            S* dmr = d_mid.row(r);
            for (int c = 0; c < d; ++c) dmr[c] += dxr[c];
        }
        // attention output path
        Mat<S> d_ctx(n, d);
        matmul_acc(d_ctx.v.data(), d_mid.v.data(), scratch.transposed(p.t(li.wo)), n, d, d);
        matmul_grad_w(g.t(li.wo).data(), a.ctx.v.data(), d_mid.v.data(), n, d, d);
        bias_grad(g.t(li.bo).data(), d_mid.v.data(), n, d);
        Mat<S> dq(n, d), dk(n, d), dv(n, d);
        const int n_spans = static_cast<int>(rows.spans.size());
#pragma omp parallel for schedule(static)
        for (int sh = 0; sh < n_spans * cfg.n_heads; ++sh) {
            const int si = sh / cfg.n_heads;
            const int h = sh % cfg.n_heads;
            attention_span_backward(a.q, a.k, a.v, a.probs[sh], d_ctx, dq, dk, dv,
                                    rows.spans[si].first, rows.spans[si].second, h * dh, dh,
                                    rows.causal);
        }
        Mat<S> d_ln1(n, d);
        matmul_acc(d_ln1.v.data(), dq.v.data(), scratch.transposed(p.t(li.wq)), n, d, d);
        matmul_grad_w(g.t(li.wq).data(), a.ln1_out.v.data(), dq.v.data(), n, d, d);
        bias_grad(g.t(li.bq).data(), dq.v.data(), n, d);
        matmul_acc(d_ln1.v.data(), dk.v.data(), scratch.transposed(p.t(li.wk)), n, d, d);
        matmul_grad_w(g.t(li.wk).data(), a.ln1_out.v.data(), dk.v.data(), n, d, d);
        bias_grad(g.t(li.bk).data(), dk.v.data(), n, d);
        matmul_acc(d_ln1.v.data(), dv.v.data(), scratch.transposed(p.t(li.wv)), n, d, d);
        matmul_grad_w(g.t(li.wv).data(), a.ln1_out.v.data(), dv.v.data(), n, d, d);
        bias_grad(g.t(li.bv).data(), dv.v.data(), n, d);
        Mat<S> d_in(n, d);
        layer_norm_backward(a.x_in.v.data(), p.t(li.ln1_g).data(), a.ln1_mean.data(),
                            a.ln1_rstd.data(), d_ln1.v.data(), d_in.v.data(), g.t(li.ln1_g).data(),
                            g.t(li.ln1_b).data(), n, d);
        // residual: gradient at x_in = d_in + d_mid (d_mid flows around attention)
#pragma omp parallel for schedule(static)
        for (int r = 0; r < n; ++r) {
            const S* dmr = d_mid.row(r);
            S* dir = d_in.row(r);
            for (int c = 0; c < d; ++c) dir[c] += dmr[c];
        }
        dx = std::move(d_in);
    }

    // embedding scatter, serial in row order
    TensorT<S>& d_tok = g.t(g.i_tok_emb);
    TensorT<S>& d_pos = g.t(g.i_pos_emb);
    TensorT<S>* d_stream = g.i_stream_emb >= 0 ? &g.t(g.i_stream_emb) : nullptr;
    for (int r = 0; r < n; ++r) {
        const S* dxr = dx.row(r);
        for (int it = rows.item_offsets[r]; it < rows.item_offsets[r + 1]; ++it) {
            const auto& item = rows.items[it];
            S* e = d_tok.row(item.id);
            for (int c = 0; c < d; ++c) e[c] += dxr[c];
            if (item.stream > 0 && d_stream) {
                S* se = d_stream->row(item.stream - 1);
                for (int c = 0; c < d; ++c) se[c] += dxr[c];
            }
        }
        S* pe = d_pos.row(rows.pos[r]);
        for (int c = 0; c < d; ++c) pe[c] += dxr[c];
    }
}

// logits[r, :] for the given hidden rows, using the tied (or untied)
// projection. Returns the transposed projection for reuse.
template <typename S>
void project_rows(const ParamsT<S>& p, const Mat<S>& h, Mat<S>& logits) {
    const ModelConfig& cfg = p.config;
    const S* w = cfg.tie_output
                     ? p.t(p.i_tok_emb).data() + static_cast<size_t>(cfg.out_offset) * cfg.d_model
                     : p.t(p.i_out_proj).data();
    std::vector<S> wt(static_cast<size_t>(cfg.d_model) * cfg.out_size);
    transpose(w, wt.data(), cfg.out_size, cfg.d_model);
    logits.resize(h.rows, cfg.out_size);
    matmul_acc(logits.v.data(), h.v.data(), wt.data(), h.rows, cfg.d_model, cfg.out_size);
}

// Cross entropy over rows; targets index [0, out_size). Returns the UNSCALED
// sum of per-row losses (double accumulation in row order); writes
// d_logits = scale * (softmax - onehot).
template <typename S>
double ce_rows(const Mat<S>& logits, const std::vector<int>& targets, Mat<S>* d_logits,
               double scale) {
    const int n = logits.rows, v = logits.cols;
    std::vector<double> losses(n);
    if (d_logits) d_logits->resize(n, v);
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) {
        const S* lr = logits.row(r);
        S mx = lr[0];
        for (int c = 1; c < v; ++c) mx = std::max(mx, lr[c]);
        double denom = 0.0;
        for (int c = 0; c < v; ++c) denom += std::exp(static_cast<double>(lr[c] - mx));
        const double log_denom = std::log(denom);
        const int t = targets[r];
        losses[r] = log_denom - static_cast<double>(lr[t] - mx);
        if (d_logits) {
            S* dr = d_logits->row(r);
            for (int c = 0; c < v; ++c)
                dr[c] = static_cast<S>(std::exp(static_cast<double>(lr[c] - mx)) / denom * scale);
            dr[t] -= static_cast<S>(scale);
        }
    }
    double sum = 0.0;
    for (int r = 0; r < n; ++r) sum += losses[r];
    return sum;
}

template <typename S>
RowsSpec rows_from_examples(const ParamsT<S>& p, const std::vector<PackedExample>& batch) {
    RowsSpec rows;
    rows.causal = true;
    for (const auto& ex : batch) append_packed(rows, ex, p.config);
    return rows;
}

template <typename S>
RowsSpec rows_from_plans(const ParamsT<S>& p, const std::vector<NarExample>& batch) {
    RowsSpec rows;
    for (const auto& ex : batch) append_plan(rows, ex, p.config);
    return rows;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Public model operations
// ---------------------------------------------------------------------------

/// Full logits for one token sequence, strictly causal: row i depends only
/// on tokens[0..i].
template <typename S>
Mat<S> ar_forward(const ParamsT<S>& p, const std::vector<TokenId>& tokens) {
    if (p.config.kind != ModelKind::ar) throw ValidationError("ar_forward on a non-AR model");
    if (static_cast<int>(tokens.size()) > p.config.max_positions)
        throw ValidationError("sequence longer than max_positions");
    if (tokens.empty()) throw ValidationError("ar_forward: empty sequence");
    RowsSpec rows;
    rows.causal = true;
    rows.begin_example();
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] < 0 || tokens[i] >= p.config.vocab_size)
            throw ValidationError("token id out of vocabulary: " + std::to_string(tokens[i]));
        rows.add_row(static_cast<int>(i));
        rows.add_item(tokens[i]);
    }
    rows.end_example();
    detail::CoreActs<S> acts;
    detail::core_forward(p, rows, acts);
    Mat<S> logits;
    detail::project_rows(p, acts.lnf_out, logits);
    return logits;
}

/// One distribution over acoustic codes per target frame, all frames in
/// parallel (bidirectional attention over the whole plan).
template <typename S>
Mat<S> nar_forward(const ParamsT<S>& p, const NarPlan& plan) {
    if (p.config.kind != ModelKind::nar) throw ValidationError("nar_forward on a non-NAR model");
    NarExample ex{plan, std::vector<int>(plan.n_scored, 0)};
    RowsSpec rows = detail::rows_from_plans(p, std::vector<NarExample>{ex});
    detail::CoreActs<S> acts;
    detail::core_forward(p, rows, acts);
    Mat<S> scored_h(static_cast<int>(rows.scored.size()), p.config.d_model);
    for (size_t i = 0; i < rows.scored.size(); ++i)
        std::copy_n(acts.lnf_out.row(rows.scored[i].first), p.config.d_model, scored_h.row(static_cast<int>(i)));
    Mat<S> logits;
    detail::project_rows(p, scored_h, logits);
    return logits;
}

struct LossStats {
    double loss = 0.0; // mean over scored positions
    int scored = 0;
};

namespace detail {

template <typename S>
LossStats loss_impl(const ParamsT<S>& p, const RowsSpec& rows, ParamsT<S>* grads) {
    if (rows.scored.empty()) throw ValidationError("batch has no scored positions");
    const ModelConfig& cfg = p.config;
    CoreActs<S> acts;
    core_forward(p, rows, acts);

    const int n_scored = static_cast<int>(rows.scored.size());
    Mat<S> scored_h(n_scored, cfg.d_model);
    std::vector<int> targets(n_scored);
    for (int i = 0; i < n_scored; ++i) {
        std::copy_n(acts.lnf_out.row(rows.scored[i].first), cfg.d_model, scored_h.row(i));
        targets[i] = rows.scored[i].second;
    }
    Mat<S> logits;
    project_rows(p, scored_h, logits);

    LossStats stats;
    stats.scored = n_scored;
    if (!grads) {
        stats.loss = ce_rows(logits, targets, static_cast<Mat<S>*>(nullptr), 0.0) / n_scored;
        return stats;
    }

    grads->zero_all();
    Mat<S> d_logits;
    stats.loss = ce_rows(logits, targets, &d_logits, 1.0 / n_scored) / n_scored;

    // back through the projection
    const S* w = cfg.tie_output
                     ? p.t(p.i_tok_emb).data() + static_cast<size_t>(cfg.out_offset) * cfg.d_model
                     : p.t(p.i_out_proj).data();
    Mat<S> d_scored(n_scored, cfg.d_model);
    matmul_acc(d_scored.v.data(), d_logits.v.data(), w, n_scored, cfg.out_size, cfg.d_model);
    S* dw = cfg.tie_output
                ? grads->t(grads->i_tok_emb).data() + static_cast<size_t>(cfg.out_offset) * cfg.d_model
                : grads->t(grads->i_out_proj).data();
    matmul_grad_w(dw, d_logits.v.data(), scored_h.v.data(), n_scored, cfg.out_size, cfg.d_model);

    Mat<S> d_lnf(rows.rows(), cfg.d_model);
    for (int i = 0; i < n_scored; ++i) {
        S* dst = d_lnf.row(rows.scored[i].first);
        const S* src = d_scored.row(i);
        for (int c = 0; c < cfg.d_model; ++c) dst[c] += src[c];
    }
    core_backward(p, rows, acts, d_lnf, *grads);
    return stats;
}

} // namespace detail

/// Mean cross-entropy over scored positions plus exact gradients for every
/// parameter. Gradients are written into `grads` (shaped like `p`).
template <typename S>
LossStats loss_and_grads(const ParamsT<S>& p, const std::vector<PackedExample>& batch,
                         ParamsT<S>& grads) {
    return detail::loss_impl(p, detail::rows_from_examples(p, batch), &grads);
}

template <typename S>
LossStats loss_and_grads(const ParamsT<S>& p, const std::vector<NarExample>& batch,
                         ParamsT<S>& grads) {
    return detail::loss_impl(p, detail::rows_from_plans(p, batch), &grads);
}

template <typename S>
LossStats batch_loss(const ParamsT<S>& p, const std::vector<PackedExample>& batch) {
    return detail::loss_impl<S>(p, detail::rows_from_examples(p, batch), nullptr);
}

template <typename S>
LossStats batch_loss(const ParamsT<S>& p, const std::vector<NarExample>& batch) {
    return detail::loss_impl<S>(p, detail::rows_from_plans(p, batch), nullptr);
}

} // namespace mslm
