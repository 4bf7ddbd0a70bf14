#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mslm/checkpoint.hpp"
#include "mslm/errors.hpp"
#include "mslm/model.hpp"
#include "mslm/rng.hpp"
#include "mslm/sequence.hpp"
#include "mslm/world.hpp"

namespace mslm {

struct TrainConfig {
    int upsample_translation = 3;
    int token_budget = 4096;
    double lr_ar = 2e-4;
    double lr_nar = 5e-4;
    int warmup_steps = 500;   // paper scale: 20000
    int total_steps = 5000;   // paper scale: 200000
    int nar_total_steps = 0;  // 0 = same as total_steps
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.98;
    double adam_eps = 1e-9;
    int eval_every = 250;
    uint64_t seed = 1;
    std::vector<Direction> directions = {{0, 1}, {1, 0}};
    bool loss_on_prompt = false;
    int prompt_max_frames = kPromptMaxFrames;

    int nar_steps() const { return nar_total_steps > 0 ? nar_total_steps : total_steps; }

    void validate() const {
        if (upsample_translation < 1) throw ConfigError("train.upsample_translation must be >= 1");
        if (token_budget < 1) throw ConfigError("train.token_budget must be >= 1");
        if (lr_ar <= 0 || lr_nar <= 0) throw ConfigError("learning rates must be positive");
        if (warmup_steps < 1) throw ConfigError("train.warmup_steps must be >= 1");
        if (total_steps < 1) throw ConfigError("train.total_steps must be >= 1");
        if (eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
        if (directions.empty()) throw ConfigError("train.directions must name at least one direction");
        for (const auto& d : directions)
            if (d.from == d.to) throw ConfigError("direction cannot map a language to itself");
    }
};

// Linear warmup into inverse-square-root decay; peak value is exactly the
// base rate at step == warmup.
inline double lr_at(int step, double base_lr, int warmup) {
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup);
    return base_lr * std::min(s / w, std::sqrt(w / s));
}

// ---------------------------------------------------------------------------
// Mixture schedule
// ---------------------------------------------------------------------------

struct ScheduleItem {
    TaskKind task;
    int record = 0;
    Direction dir;
};

/// The epoch-level multiset of training items: every translation pair
/// appears exactly `upsample_translation` times per enabled direction, every
/// generation item exactly once. Shuffle order is derived from (seed, epoch).
struct MixtureSchedule {
    std::vector<ScheduleItem> items;
    int n_translation = 0;
    int n_generation = 0;
};

inline MixtureSchedule build_mixture(int n_records, const TrainConfig& cfg, uint64_t epoch,
                                     bool shuffled = true) {
    if (n_records < 1) throw ValidationError("build_mixture: empty corpus");
    cfg.validate();
    MixtureSchedule s;
    for (int r = 0; r < n_records; ++r) {
        for (const auto& dir : cfg.directions) {
            for (int u = 0; u < cfg.upsample_translation; ++u) {
                s.items.push_back({TaskKind::translation, r, dir});
                ++s.n_translation;
            }
            s.items.push_back({TaskKind::generation, r, dir});
            ++s.n_generation;
        }
    }
    if (shuffled) {
        SplitMix64 rng(derive_stream(cfg.seed, 0x5ced01e, epoch));
        rng.shuffle(s.items);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Token-budget batching
// ---------------------------------------------------------------------------

/// Greedy length-bucketed packing in schedule order. A batch is accounted at
/// its padded footprint: n_examples * max_len <= token_budget, counting
/// prompt and scored tokens alike. Pad positions carry no loss and are
/// excluded from attention; the kernels realize the exclusion by never
/// materializing them. Items are routed to geometric length buckets so a
/// short example never pays for a long neighbour's padding; within a bucket,
/// packing is greedy in schedule order and a batch is emitted the moment the
/// next item would overflow the budget.
inline std::vector<std::vector<int>> make_batches(const std::vector<int>& lengths,
                                                  int token_budget) {
    auto bucket_of = [](int len) {
        int bound = 12, b = 0;
        while (len > bound) {
            bound += bound / 2; // 12, 18, 27, 40, 60, 90, ...
            ++b;
        }
        return b;
    };
    std::vector<std::vector<int>> batches;
    std::map<int, std::pair<std::vector<int>, int>> open; // bucket -> (items, max_len)
    for (int i = 0; i < static_cast<int>(lengths.size()); ++i) {
        const int len = lengths[i];
        if (len > token_budget)
            throw ValidationError("example of length " + std::to_string(len) +
                                  " exceeds the token budget " + std::to_string(token_budget));
        auto& [items, max_len] = open[bucket_of(len)];
        const int new_max = std::max(max_len, len);
        if (!items.empty() && (static_cast<int>(items.size()) + 1) * new_max > token_budget) {
            batches.push_back(std::move(items));
            items = {};
            max_len = 0;
        }
        items.push_back(i);
        max_len = std::max(max_len, len);
    }
    for (auto& [bucket, pair] : open)
        if (!pair.first.empty()) batches.push_back(std::move(pair.first));
    return batches;
}

// ---------------------------------------------------------------------------
// Example materialization
// ---------------------------------------------------------------------------

inline PackedExample materialize_translation(const TokenSpace& space, const ParallelRecord& rec,
                                              Direction dir, bool loss_on_prompt) {
    SemanticSeq src{dir.from, rec.units_of(dir.from)};
    SemanticSeq tgt{dir.to, rec.units_of(dir.to)};
    return build_translation(space, src, dir.to, tgt, loss_on_prompt);
}

inline PackedExample materialize_generation(const TokenSpace& space, const ParallelRecord& rec,
                                             Direction dir, int prompt_max_frames,
                                             bool loss_on_prompt) {
    AcousticGrid prompt = truncate_prompt(rec.grid_of(dir.from), prompt_max_frames);
    return build_generation(space, rec.units_of(dir.from), rec.units_of(dir.to),
                            prompt.column(1), rec.grid_of(dir.to).column(1), loss_on_prompt);
}

inline NarExample materialize_nar(const TokenSpace& space, const ParallelRecord& rec,
                                  Direction dir, int stream_j, int prompt_max_frames) {
    NarInput in;
    in.tgt_units = {dir.to, rec.units_of(dir.to)};
    in.prompt = truncate_prompt(rec.grid_of(dir.from), prompt_max_frames);
    in.stream_j = stream_j;
    const AcousticGrid& tgt = rec.grid_of(dir.to);
    in.partial.resize(tgt.frames());
    std::vector<int> targets(tgt.frames());
    for (int t = 0; t < tgt.frames(); ++t) {
        for (int j = 1; j < stream_j; ++j) in.partial[t].push_back(tgt.at(t, j));
        targets[t] = tgt.at(t, stream_j);
    }
    NarExample ex;
    ex.plan = build_nar_input(space, in);
    ex.targets = std::move(targets);
    return ex;
}

inline int translation_length(const ParallelRecord& rec) {
    return 1 + static_cast<int>(rec.src_units.size()) + 1 + 1 +
           static_cast<int>(rec.tgt_units.size()) + 1;
}

inline int generation_length(const ParallelRecord& rec, Direction dir, int prompt_max_frames) {
    const int prompt = std::min(rec.grid_of(dir.from).frames(), prompt_max_frames);
    return static_cast<int>(rec.src_units.size()) + static_cast<int>(rec.tgt_units.size()) + 1 +
           prompt + rec.grid_of(dir.to).frames() + 1;
}

inline int nar_length(const ParallelRecord& rec, Direction dir, int prompt_max_frames) {
    const int prompt = std::min(rec.grid_of(dir.from).frames(), prompt_max_frames);
    return static_cast<int>(rec.units_of(dir.to).size()) + prompt + 1 +
           rec.grid_of(dir.to).frames();
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    ModelParams m, v;
    int64_t t = 0;

    static AdamState shaped(const ModelConfig& cfg) {
        AdamState s;
        s.m = ModelParams::shaped(cfg);
        s.v = ModelParams::shaped(cfg);
        return s;
    }
};

inline void adam_update(ModelParams& params, const ModelParams& grads, AdamState& state,
                        double lr, const TrainConfig& cfg) {
    state.t += 1;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    for (size_t ti = 0; ti < params.tensors.size(); ++ti) {
        float* p = params.tensors[ti].v.data();
        const float* g = grads.tensors[ti].v.data();
        float* m = state.m.tensors[ti].v.data();
        float* v = state.v.tensors[ti].v.data();
        const int n = static_cast<int>(params.tensors[ti].v.size());
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n; ++i) {
            const double gi = g[i];
            const double mi = b1 * m[i] + (1.0 - b1) * gi;
            const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            p[i] -= static_cast<float>(lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.adam_eps));
        }
    }
}

struct StepMetrics {
    double loss = 0.0;
    double lr = 0.0;
    int scored = 0;
    int n_trans = 0;
    int n_gen = 0;
};

template <typename BatchT>
StepMetrics train_step(ModelParams& params, AdamState& opt, ModelParams& grads,
                       const std::vector<BatchT>& batch, int step, double base_lr,
                       const TrainConfig& cfg) {
    LossStats stats = loss_and_grads(params, batch, grads);
    if (!std::isfinite(stats.loss))
        throw NumericalError("non-finite loss at step " + std::to_string(step) + " (batch of " +
                             std::to_string(batch.size()) + " examples)");
    StepMetrics m;
    m.loss = stats.loss;
    m.scored = stats.scored;
    m.lr = lr_at(step, base_lr, cfg.warmup_steps);
    adam_update(params, grads, opt, m.lr, cfg);
    return m;
}

// ---------------------------------------------------------------------------
// Optimizer state serialization (for resume)
// ---------------------------------------------------------------------------

struct TrainerState {
    int step = 0;
    double best_val = 0.0;
    bool has_best = false;
    AdamState adam;
};

inline void save_trainer_state(const TrainerState& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write trainer state: " + path);
    out.write("MSTS", 4);
    detail::put_u32(out, 1);
    detail::put_i32(out, s.step);
    detail::put_u64(out, static_cast<uint64_t>(s.adam.t));
    detail::put_i32(out, s.has_best ? 1 : 0);
    uint64_t bits;
    static_assert(sizeof(double) == 8);
    std::memcpy(&bits, &s.best_val, 8);
    detail::put_u64(out, bits);
    for (const ModelParams* side : {&s.adam.m, &s.adam.v}) {
        for (const auto& t : side->tensors) {
            auto bytes = detail::f32_bytes_le(t.v);
            detail::put_u64(out, fnv1a(bytes.data(), bytes.size()));
            detail::put_u64(out, t.v.size());
            out.write(reinterpret_cast<const char*>(bytes.data()),
                      static_cast<std::streamsize>(bytes.size()));
        }
    }
    if (!out) throw IoError("failed writing trainer state: " + path);
}

inline TrainerState load_trainer_state(const std::string& path, const ModelConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open trainer state: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "MSTS")
        throw ValidationError(path + ": not a trainer state file");
    if (detail::get_u32(in) != 1) throw ValidationError(path + ": unsupported state version");
    TrainerState s;
    s.adam = AdamState::shaped(cfg);
    s.step = detail::get_i32(in);
    s.adam.t = static_cast<int64_t>(detail::get_u64(in));
    s.has_best = detail::get_i32(in) != 0;
    uint64_t bits = detail::get_u64(in);
    std::memcpy(&s.best_val, &bits, 8);
    for (ModelParams* side : {&s.adam.m, &s.adam.v}) {
        for (auto& t : side->tensors) {
            uint64_t checksum = detail::get_u64(in);
            uint64_t count = detail::get_u64(in);
            if (count != t.v.size()) throw ValidationError(path + ": state tensor length mismatch");
            std::vector<unsigned char> bytes(count * 4);
            in.read(reinterpret_cast<char*>(bytes.data()),
                    static_cast<std::streamsize>(bytes.size()));
            if (!in) throw ValidationError(path + ": trainer state truncated");
            if (fnv1a(bytes.data(), bytes.size()) != checksum)
                throw ValidationError(path + ": trainer state checksum mismatch");
            t.v = detail::f32_from_le(bytes);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Training runs
// ---------------------------------------------------------------------------

enum class TrainMode { mslm, cascaded };

struct ModelShape {
    int n_layers = 4;
    int d_model = 128;
    int d_ff = 512;
    int n_heads = 4;
    int max_positions = 1024;
    bool tie_output = true;
    bool stream_additive_emb = true;
};

inline ModelConfig shape_to_config(ModelKind kind, const TokenSpace& space, const ModelShape& s) {
    ModelConfig c = make_model_config(kind, space, s.n_layers, s.d_model, s.d_ff, s.n_heads,
                                      s.max_positions);
    c.tie_output = s.tie_output;
    c.stream_additive_emb = s.stream_additive_emb;
    return c;
}

struct TrainedComponent {
    std::string name; // "ar", "ar_trans", "ar_gen", "nar"
    std::string last_path;
    std::string best_path;
    size_t param_count = 0;
    double best_val_loss = 0.0;
    double final_train_loss = 0.0;
};

struct TrainResult {
    std::vector<TrainedComponent> components;
    size_t ar_param_total = 0;
    size_t nar_param_total = 0;
    std::string metrics_path;
};

namespace detail_train {

enum class TaskFilter { both, translation_only, generation_only };

inline bool task_enabled(TaskFilter f, TaskKind t) {
    if (f == TaskFilter::both) return true;
    if (f == TaskFilter::translation_only) return t == TaskKind::translation;
    return t == TaskKind::generation;
}

struct MetricsLog {
    std::ofstream out;

    MetricsLog(const std::string& path, bool append, const std::string& header) {
        bool existed = std::filesystem::exists(path);
        out.open(path, append ? std::ios::app : std::ios::out);
        if (!out) throw IoError("cannot open metrics log: " + path);
        if (!append || !existed) out << header << "\n";
    }

    void row(const std::string& phase, int step, double loss, double lr, int tokens, int n_trans,
             int n_gen) {
        nlohmann::json j = {{"step", step},     {"phase", phase},     {"loss", loss},
                            {"lr", lr},         {"tokens", tokens},   {"n_trans", n_trans},
                            {"n_gen", n_gen}};
        out << j.dump() << "\n";
        out.flush();
    }
};

// One epoch's worth of AR batches: indices into the shuffled mixture.
struct ArEpoch {
    MixtureSchedule schedule;
    std::vector<std::vector<int>> batches;
};

inline ArEpoch build_ar_epoch(const std::vector<ParallelRecord>& records, const TrainConfig& cfg,
                              TaskFilter filter, uint64_t epoch, bool shuffled) {
    ArEpoch e;
    e.schedule = build_mixture(static_cast<int>(records.size()), cfg, epoch, shuffled);
    if (filter != TaskFilter::both) {
        std::vector<ScheduleItem> kept;
        for (const auto& item : e.schedule.items)
            if (task_enabled(filter, item.task)) kept.push_back(item);
        e.schedule.items = std::move(kept);
    }
    std::vector<int> lengths(e.schedule.items.size());
    for (size_t i = 0; i < e.schedule.items.size(); ++i) {
        const auto& item = e.schedule.items[i];
        const ParallelRecord& rec = records[item.record];
        lengths[i] = item.task == TaskKind::translation
                         ? translation_length(rec)
                         : generation_length(rec, item.dir, cfg.prompt_max_frames);
    }
    e.batches = make_batches(lengths, cfg.token_budget);
    return e;
}

inline std::vector<PackedExample> materialize_ar_batch(const TokenSpace& space,
                                                       const std::vector<ParallelRecord>& records,
                                                       const ArEpoch& epoch,
                                                       const std::vector<int>& batch,
                                                       const TrainConfig& cfg, int* n_trans,
                                                       int* n_gen) {
    std::vector<PackedExample> out;
    out.reserve(batch.size());
    *n_trans = 0;
    *n_gen = 0;
    for (int idx : batch) {
        const auto& item = epoch.schedule.items[idx];
        const ParallelRecord& rec = records[item.record];
        if (item.task == TaskKind::translation) {
            out.push_back(materialize_translation(space, rec, item.dir, cfg.loss_on_prompt));
            ++*n_trans;
        } else {
            out.push_back(materialize_generation(space, rec, item.dir, cfg.prompt_max_frames,
                                                 cfg.loss_on_prompt));
            ++*n_gen;
        }
    }
    return out;
}

struct NarEpoch {
    std::vector<ScheduleItem> items;
    std::vector<int> stream_j;
    std::vector<std::vector<int>> batches;
};

inline NarEpoch build_nar_epoch(const std::vector<ParallelRecord>& records, const TrainConfig& cfg,
                                int n_streams, uint64_t epoch, bool shuffled) {
    NarEpoch e;
    for (int r = 0; r < static_cast<int>(records.size()); ++r)
        for (const auto& dir : cfg.directions) e.items.push_back({TaskKind::generation, r, dir});
    if (shuffled) {
        SplitMix64 rng(derive_stream(cfg.seed, 0x0a90, epoch));
        rng.shuffle(e.items);
    }
    e.stream_j.resize(e.items.size());
    for (size_t i = 0; i < e.items.size(); ++i) {
        if (shuffled) {
            SplitMix64 jr(derive_stream(cfg.seed ^ 0x17, epoch, i));
            e.stream_j[i] = 2 + static_cast<int>(jr.below(static_cast<uint64_t>(n_streams - 1)));
        } else {
            e.stream_j[i] = 2 + static_cast<int>(i % (n_streams - 1));
        }
    }
    std::vector<int> lengths(e.items.size());
    for (size_t i = 0; i < e.items.size(); ++i)
        lengths[i] =
            nar_length(records[e.items[i].record], e.items[i].dir, cfg.prompt_max_frames);
    e.batches = make_batches(lengths, cfg.token_budget);
    return e;
}

inline std::vector<NarExample> materialize_nar_batch(const TokenSpace& space,
                                                     const std::vector<ParallelRecord>& records,
                                                     const NarEpoch& epoch,
                                                     const std::vector<int>& batch,
                                                     const TrainConfig& cfg) {
    std::vector<NarExample> out;
    out.reserve(batch.size());
    for (int idx : batch) {
        const auto& item = epoch.items[idx];
        out.push_back(materialize_nar(space, records[item.record], item.dir, epoch.stream_j[idx],
                                      cfg.prompt_max_frames));
    }
    return out;
}

// Generic phase loop shared by the AR and NAR trainers. Resume works by
// fast-forwarding the deterministic batch sequence to the saved step; all
// shuffles derive from (seed, epoch), so no RNG state needs restoring.
template <typename BuildEpochFn, typename MaterializeFn, typename ValidFn>
TrainedComponent train_phase(const std::string& name, ModelParams& params, double base_lr,
                             int total_steps, const TrainConfig& cfg,
                             const std::string& out_dir, MetricsLog& log, bool resume,
                             BuildEpochFn build_epoch, MaterializeFn materialize,
                             ValidFn valid_loss) {
    namespace fs = std::filesystem;
    TrainedComponent comp;
    comp.name = name;
    comp.param_count = params.total_params();
    comp.last_path = (fs::path(out_dir) / (name + "_last.mslm")).string();
    comp.best_path = (fs::path(out_dir) / (name + "_best.mslm")).string();
    const std::string state_path = (fs::path(out_dir) / ("state_" + name + ".bin")).string();

    TrainerState state;
    if (resume && fs::exists(state_path) && fs::exists(comp.last_path)) {
        state = load_trainer_state(state_path, params.config);
        params = load_params(comp.last_path, params.config.space_hash, params.config.kind);
    } else {
        state.adam = AdamState::shaped(params.config);
    }
    if (state.step >= total_steps && state.has_best) {
        comp.best_val_loss = state.best_val;
        return comp;
    }

    ModelParams grads = ModelParams::shaped(params.config);
    auto checkpoint = [&](double train_loss) {
        const double vl = valid_loss(params, log, state.step);
        log.row("valid_" + name, state.step, vl, 0.0, 0, 0, 0);
        if (!state.has_best || vl < state.best_val) {
            state.has_best = true;
            state.best_val = vl;
            save_params(params, comp.best_path);
        }
        save_params(params, comp.last_path);
        save_trainer_state(state, state_path);
        comp.final_train_loss = train_loss;
    };

    int step = 0;
    double last_loss = 0.0;
    for (uint64_t epoch = 0; step < total_steps; ++epoch) {
        auto epoch_data = build_epoch(epoch);
        for (const auto& batch_idx : epoch_data.batches) {
            if (step >= total_steps) break;
            ++step;
            if (step <= state.step) continue; // fast-forward on resume
            int n_trans = 0, n_gen = 0;
            auto batch = materialize(epoch_data, batch_idx, &n_trans, &n_gen);
            StepMetrics m = train_step(params, state.adam, grads, batch, step, base_lr, cfg);
            last_loss = m.loss;
            state.step = step;
            log.row("train_" + name, step, m.loss, m.lr, m.scored, n_trans, n_gen);
            if (step % cfg.eval_every == 0) checkpoint(m.loss);
        }
        if (epoch_data.batches.empty())
            throw ValidationError("training phase " + name + " produced an empty epoch");
    }
    if (state.step % cfg.eval_every != 0 || !state.has_best) checkpoint(last_loss);
    comp.best_val_loss = state.best_val;
    return comp;
}

} // namespace detail_train

struct TrainSetup {
    TokenSpace space;
    ModelShape ar_shape;
    ModelShape nar_shape;
    TrainConfig config;
    uint64_t init_seed = 1234;
};

/// Trains the requested configuration end to end and writes checkpoints,
/// trainer state and a metrics log under out_dir. Mode `mslm` trains ONE
/// shared AR model on the mixed translation+generation schedule; mode
/// `cascaded` trains two separate AR models, one per task. Both modes train
/// the same NAR model for streams 2..n.
inline TrainResult run_training(const std::vector<ParallelRecord>& train_records,
                                const std::vector<ParallelRecord>& valid_records,
                                const TrainSetup& setup, const std::string& out_dir,
                                TrainMode mode, bool resume = false, bool train_nar = true,
                                std::ostream* progress = nullptr) {
    namespace fs = std::filesystem;
    using namespace detail_train;
    const TokenSpace& space = setup.space;
    const TrainConfig& cfg = setup.config;
    cfg.validate();
    if (train_records.empty()) throw ValidationError("training corpus is empty");
    if (valid_records.empty()) throw ValidationError("validation corpus is empty");

    // leakage audit: split ids must be disjoint
    {
        std::set<std::string> train_ids;
        for (const auto& r : train_records) train_ids.insert(r.id);
        for (const auto& r : valid_records)
            if (train_ids.count(r.id))
                throw ValidationError("record id " + r.id + " appears in both train and valid");
    }

    fs::create_directories(out_dir);
    TrainResult result;
    nlohmann::json header = {
        {"format", "mslm-metrics"},
        {"lr_schedule", "linear warmup to step " + std::to_string(cfg.warmup_steps) +
                            ", then inverse square root decay"},
        {"mode", mode == TrainMode::mslm ? "mslm" : "cascaded"},
        {"token_budget", cfg.token_budget},
        {"upsample_translation", cfg.upsample_translation},
        {"seed", cfg.seed}};
    MetricsLog log((fs::path(out_dir) / "metrics.jsonl").string(), resume, header.dump());
    result.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();

    auto ar_epoch_builder = [&](TaskFilter filter) {
        return [&, filter](uint64_t epoch) {
            return build_ar_epoch(train_records, cfg, filter, epoch, /*shuffled=*/true);
        };
    };
    auto ar_materializer = [&](const ArEpoch& e, const std::vector<int>& batch, int* nt, int* ng) {
        return materialize_ar_batch(space, train_records, e, batch, cfg, nt, ng);
    };
    auto ar_validator = [&](TaskFilter filter) {
        // fixed-order, upsample-free validation pass; per-task losses are
        // logged separately so a stalled task is visible in the artifacts
        TrainConfig vcfg = cfg;
        vcfg.upsample_translation = 1;
        ArEpoch ve = build_ar_epoch(valid_records, vcfg, filter, 0, /*shuffled=*/false);
        return [&, ve = std::move(ve)](const ModelParams& params, MetricsLog& log, int step) {
            double total = 0.0, total_trans = 0.0, total_gen = 0.0;
            int64_t scored = 0, scored_trans = 0, scored_gen = 0;
            for (const auto& batch_idx : ve.batches) {
                int nt = 0, ng = 0;
                auto batch = materialize_ar_batch(space, valid_records, ve, batch_idx, cfg, &nt, &ng);
                LossStats s = batch_loss(params, batch);
                total += s.loss * s.scored;
                scored += s.scored;
                // bucketed batches are nearly task-pure; attribute by majority
                if (ng == 0) {
                    total_trans += s.loss * s.scored;
                    scored_trans += s.scored;
                } else if (nt == 0) {
                    total_gen += s.loss * s.scored;
                    scored_gen += s.scored;
                }
            }
            if (scored_trans > 0)
                log.row("valid_trans", step, total_trans / static_cast<double>(scored_trans), 0.0,
                        static_cast<int>(scored_trans), 0, 0);
            if (scored_gen > 0)
                log.row("valid_gen", step, total_gen / static_cast<double>(scored_gen), 0.0,
                        static_cast<int>(scored_gen), 0, 0);
            return scored > 0 ? total / static_cast<double>(scored) : 0.0;
        };
    };

    auto train_ar = [&](const std::string& name, TaskFilter filter) {
        ModelConfig mc = shape_to_config(ModelKind::ar, space, setup.ar_shape);
        ModelParams params = init_params<float>(mc, derive_stream(setup.init_seed, 1,
                                                                  fnv1a_str(name)));
        if (progress) *progress << "[train] " << name << ": " << params.total_params()
                                << " parameters, " << cfg.total_steps << " steps\n";
        TrainedComponent comp =
            train_phase(name, params, cfg.lr_ar, cfg.total_steps, cfg, out_dir, log, resume,
                        ar_epoch_builder(filter), ar_materializer, ar_validator(filter));
        result.ar_param_total += comp.param_count;
        result.components.push_back(comp);
    };

    if (mode == TrainMode::mslm) {
        train_ar("ar", TaskFilter::both);
    } else {
        train_ar("ar_trans", TaskFilter::translation_only);
        train_ar("ar_gen", TaskFilter::generation_only);
    }

    if (train_nar) {
        ModelConfig nc = shape_to_config(ModelKind::nar, space, setup.nar_shape);
        ModelParams params = init_params<float>(nc, derive_stream(setup.init_seed, 2, 0));
        if (progress) *progress << "[train] nar: " << params.total_params() << " parameters, "
                                << cfg.nar_steps() << " steps\n";
        auto build = [&](uint64_t epoch) {
            return build_nar_epoch(train_records, cfg, space.config().n_streams, epoch, true);
        };
        auto mat = [&](const NarEpoch& e, const std::vector<int>& batch, int* nt, int* ng) {
            *nt = 0;
            *ng = static_cast<int>(batch.size());
            return materialize_nar_batch(space, train_records, e, batch, cfg);
        };
        NarEpoch ve = build_nar_epoch(valid_records, cfg, space.config().n_streams, 0, false);
        auto valid = [&, ve = std::move(ve)](const ModelParams& p, MetricsLog&, int) {
            double total = 0.0;
            int64_t scored = 0;
            for (const auto& batch_idx : ve.batches) {
                auto batch = materialize_nar_batch(space, valid_records, ve, batch_idx, cfg);
                LossStats s = batch_loss(p, batch);
                total += s.loss * s.scored;
                scored += s.scored;
            }
            return scored > 0 ? total / static_cast<double>(scored) : 0.0;
        };
        TrainedComponent comp = detail_train::train_phase("nar", params, cfg.lr_nar,
                                                          cfg.nar_steps(), cfg, out_dir, log,
                                                          resume, build, mat, valid);
        result.nar_param_total = comp.param_count;
        result.components.push_back(comp);
    }
    return result;
}

} // namespace mslm
