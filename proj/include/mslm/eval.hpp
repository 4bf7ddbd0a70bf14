#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "mslm/decode.hpp"
#include "mslm/errors.hpp"
#include "mslm/sequence.hpp"
#include "mslm/world.hpp"

namespace mslm {

// ---------------------------------------------------------------------------
// Corpus BLEU
// ---------------------------------------------------------------------------

struct BleuCounts {
    std::vector<int64_t> matched; // clipped n-gram matches, n = 1..max_n
    std::vector<int64_t> total;   // hypothesis n-gram counts
    int64_t hyp_len = 0;
    int64_t ref_len = 0;
};

namespace detail_bleu {

inline std::string ngram_key(const std::vector<int>& seq, size_t start, int n) {
    std::string key(static_cast<size_t>(n) * 4, '\0');
    for (int i = 0; i < n; ++i) {
        uint32_t u = static_cast<uint32_t>(seq[start + i]);
        std::memcpy(key.data() + static_cast<size_t>(i) * 4, &u, 4);
    }
    return key;
}

} // namespace detail_bleu

inline BleuCounts bleu_pair_counts(const std::vector<int>& hyp, const std::vector<int>& ref,
                                   int max_n = 4) {
    BleuCounts c;
    c.matched.assign(max_n, 0);
    c.total.assign(max_n, 0);
    c.hyp_len = static_cast<int64_t>(hyp.size());
    c.ref_len = static_cast<int64_t>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
        const int hn = static_cast<int>(hyp.size()) - n + 1;
        const int rn = static_cast<int>(ref.size()) - n + 1;
        if (hn <= 0) continue;
        std::unordered_map<std::string, int> ref_counts;
        for (int i = 0; i < rn; ++i) ref_counts[detail_bleu::ngram_key(ref, i, n)] += 1;
        std::unordered_map<std::string, int> hyp_counts;
        for (int i = 0; i < hn; ++i) hyp_counts[detail_bleu::ngram_key(hyp, i, n)] += 1;
        c.total[n - 1] += hn;
        for (const auto& [key, count] : hyp_counts) {
            auto it = ref_counts.find(key);
            if (it != ref_counts.end()) c.matched[n - 1] += std::min(count, it->second);
        }
    }
    return c;
}

inline void bleu_accumulate(BleuCounts& into, const BleuCounts& from) {
    if (into.matched.empty()) {
        into = from;
        return;
    }
    for (size_t i = 0; i < into.matched.size(); ++i) {
        into.matched[i] += from.matched[i];
        into.total[i] += from.total[i];
    }
    into.hyp_len += from.hyp_len;
    into.ref_len += from.ref_len;
}

inline double bleu_from_counts(const BleuCounts& c) {
    if (c.hyp_len == 0) return 0.0;
    double log_precision = 0.0;
    for (size_t n = 0; n < c.matched.size(); ++n) {
        if (c.total[n] == 0 || c.matched[n] == 0) return 0.0; // a zero precision zeroes BLEU
        log_precision += std::log(static_cast<double>(c.matched[n]) /
                                  static_cast<double>(c.total[n]));
    }
    log_precision /= static_cast<double>(c.matched.size());
    double bp = c.hyp_len >= c.ref_len
                    ? 1.0
                    : std::exp(1.0 - static_cast<double>(c.ref_len) /
                                         static_cast<double>(c.hyp_len));
    return 100.0 * bp * std::exp(log_precision);
}

/// Corpus BLEU with pooled modified n-gram precisions, a geometric mean over
/// n = 1..max_n and the brevity penalty. Single reference, no smoothing.
inline double corpus_bleu(const std::vector<std::vector<int>>& hyps,
                          const std::vector<std::vector<int>>& refs, int max_n = 4) {
    if (hyps.size() != refs.size())
        throw ValidationError("corpus_bleu: hypothesis/reference count mismatch");
    BleuCounts pooled;
    for (size_t i = 0; i < hyps.size(); ++i) {
        if (refs[i].empty()) throw ValidationError("corpus_bleu: empty reference at index " +
                                                   std::to_string(i));
        bleu_accumulate(pooled, bleu_pair_counts(hyps[i], refs[i], max_n));
    }
    if (pooled.matched.empty()) return 0.0;
    return bleu_from_counts(pooled);
}

inline double exact_match(const std::vector<std::vector<int>>& hyps,
                          const std::vector<std::vector<int>>& refs) {
    if (hyps.size() != refs.size())
        throw ValidationError("exact_match: hypothesis/reference count mismatch");
    if (hyps.empty()) return 0.0;
    int eq = 0;
    for (size_t i = 0; i < hyps.size(); ++i) eq += hyps[i] == refs[i] ? 1 : 0;
    return static_cast<double>(eq) / static_cast<double>(hyps.size());
}

// ---------------------------------------------------------------------------
// Style matching
// ---------------------------------------------------------------------------

struct StyleMatch {
    bool matched = false;
    double consistency = 0.0; // fraction of votes agreeing with the winner
    int decoded_style = -1;
};

/// Aligns grid frames to the hypothesis units by expanding durations, then
/// lets every (frame, stream) vote for a style through the codec inverse.
/// The plurality wins; ties break to the smallest style id.
inline StyleMatch style_match(const AcousticGrid& grid, const std::vector<int>& hyp_units,
                              int prompt_style) {
    StyleMatch out;
    if (grid.frames() == 0 || hyp_units.empty()) return out;
    std::vector<int> aligned;
    for (int u : hyp_units)
        for (int r = 0; r < WorldOracle::duration(u); ++r) aligned.push_back(u);
    aligned.resize(grid.frames(), aligned.back()); // truncate or pad to the grid

    std::map<int, int> votes;
    int total = 0;
    for (int t = 0; t < grid.frames(); ++t) {
        for (int j = 1; j <= grid.n_streams; ++j) {
            int cand = WorldOracle::decode_style(grid.at(t, j), aligned[t], j);
            votes[cand] += 1;
            ++total;
        }
    }
    int best_style = -1, best_votes = -1;
    for (const auto& [style, n] : votes) {
        if (n > best_votes) {
            best_votes = n;
            best_style = style;
        }
    }
    out.decoded_style = best_style;
    out.matched = best_style == prompt_style;
    out.consistency = total > 0 ? static_cast<double>(best_votes) / total : 0.0;
    return out;
}

// Fraction of frames whose stream-j code decodes to the prompt style under
// the duration alignment.
inline double stream_style_consistency(const AcousticGrid& grid, const std::vector<int>& hyp_units,
                                       int prompt_style, int stream_j) {
    if (grid.frames() == 0 || hyp_units.empty()) return 0.0;
    std::vector<int> aligned;
    for (int u : hyp_units)
        for (int r = 0; r < WorldOracle::duration(u); ++r) aligned.push_back(u);
    aligned.resize(grid.frames(), aligned.back());
    int ok = 0;
    for (int t = 0; t < grid.frames(); ++t)
        if (WorldOracle::decode_style(grid.at(t, stream_j), aligned[t], stream_j) == prompt_style)
            ++ok;
    return static_cast<double>(ok) / grid.frames();
}

// ---------------------------------------------------------------------------
// Full-split evaluation
// ---------------------------------------------------------------------------

struct DirectionReport {
    std::string direction;
    int n_records = 0;
    double bleu = 0.0;
    double exact = 0.0;
    double style_match_rate = 0.0;
    double grid_consistency = 0.0;
    double stream1_consistency = 0.0;
    double frame_mae = 0.0;
    int truncated = 0;
    int malformed = 0;
    double nar_accuracy = -1.0;
    std::vector<double> nar_accuracy_per_stream;
};

struct EvalReport {
    std::string model_desc;
    std::string corpus_desc;
    std::string decode_desc;
    std::vector<DirectionReport> directions;
    double frames_per_second = 0.0; // pipeline throughput over the whole split
};

struct EvalOptions {
    bool oracle_translation = false;
    bool oracle_acoustics = false;
    bool nar_accuracy = false; // score NAR streams against the codec oracle
    DecodeConfig decode;
    std::string diagnostics_path; // empty: no per-record file
    std::string model_desc = "model";
    std::string corpus_desc;
};

namespace detail_eval {

struct PerDirectionAcc {
    std::vector<std::vector<int>> hyps, refs;
    double style_matches = 0, grid_consistency = 0, s1_consistency = 0, frame_err = 0;
    int truncated = 0, malformed = 0, n = 0;
    int64_t nar_correct = 0, nar_total = 0;
    std::vector<int64_t> nar_correct_j, nar_total_j;
};

} // namespace detail_eval

/// Runs the pipeline over every record of a split and aggregates the
/// desk-scale metrics per direction. Stage-oracle substitution isolates
/// errors: oracle_translation scores acoustics under perfect translations,
/// oracle_acoustics scores translation through the full pipeline output.
inline EvalReport evaluate(const TokenSpace& space, const WorldOracle& oracle,
                           const std::vector<ParallelRecord>& records, ArScorer* model_translator,
                           ArScorer* model_generator, NarScorer* model_completer,
                           const EvalOptions& opt) {
    opt.decode.validate();
    OracleArScorer oracle_ar(space, oracle);
    OracleNarScorer oracle_nar(space, oracle);
    ArScorer* translator = opt.oracle_translation ? static_cast<ArScorer*>(&oracle_ar)
                                                  : model_translator;
    ArScorer* generator = opt.oracle_acoustics ? static_cast<ArScorer*>(&oracle_ar)
                                               : model_generator;
    NarScorer* completer = opt.oracle_acoustics ? static_cast<NarScorer*>(&oracle_nar)
                                                : model_completer;
    if (!translator) throw ValidationError("evaluate: no translation model (pass a checkpoint or "
                                           "--oracle-translation)");
    if (!generator || !completer)
        throw ValidationError("evaluate: no acoustic model (pass checkpoints or --oracle-acoustics)");

    std::ofstream diag;
    if (!opt.diagnostics_path.empty()) {
        diag.open(opt.diagnostics_path);
        if (!diag) throw IoError("cannot open diagnostics file: " + opt.diagnostics_path);
    }

    std::map<std::string, detail_eval::PerDirectionAcc> acc;
    const int n_streams = space.config().n_streams;
    const auto wall_start = std::chrono::steady_clock::now();
    int64_t frames_out = 0;

    for (const auto& rec : records) {
        const std::string dir_name = space.config().languages[rec.src_lang] + "-" +
                                     space.config().languages[rec.tgt_lang];
        auto& a = acc[dir_name];
        if (a.nar_correct_j.empty()) {
            a.nar_correct_j.assign(n_streams + 1, 0);
            a.nar_total_j.assign(n_streams + 1, 0);
        }
        a.n += 1;

        SemanticSeq src{rec.src_lang, rec.src_units};
        PipelineOutput out = run_pipeline(*translator, *generator, *completer, space, src,
                                          rec.src_acoustic, rec.tgt_lang, opt.decode);
        a.hyps.push_back(out.tgt_units);
        a.refs.push_back(rec.tgt_units);
        if (out.translation.truncated || out.stream1.truncated) a.truncated += 1;
        if (out.translation.malformed || out.stream1.malformed) a.malformed += 1;

        frames_out += out.grid.frames();
        StyleMatch sm = style_match(out.grid, out.tgt_units, rec.style);
        a.style_matches += sm.matched ? 1 : 0;
        a.grid_consistency += sm.consistency;
        a.s1_consistency +=
            stream_style_consistency(out.grid, out.tgt_units, rec.style, 1);
        a.frame_err += std::abs(out.grid.frames() - rec.tgt_acoustic.frames());

        if (opt.nar_accuracy) {
            // isolate the NAR stage: oracle units and oracle stream 1 in,
            // streams 2..n scored against the codec oracle
            AcousticGrid prompt = truncate_prompt(rec.src_acoustic);
            AcousticGrid full = complete_streams(*completer, space, rec.tgt_units, prompt,
                                                 rec.tgt_acoustic.column(1));
            for (int t = 0; t < full.frames(); ++t) {
                for (int j = 2; j <= n_streams; ++j) {
                    bool ok = full.at(t, j) == rec.tgt_acoustic.at(t, j);
                    a.nar_correct += ok ? 1 : 0;
                    a.nar_total += 1;
                    a.nar_correct_j[j] += ok ? 1 : 0;
                    a.nar_total_j[j] += 1;
                }
            }
        }

        if (diag.is_open()) {
            BleuCounts bc = bleu_pair_counts(out.tgt_units, rec.tgt_units);
            nlohmann::json j = {{"id", rec.id},
                                {"direction", dir_name},
                                {"bleu_matched", bc.matched},
                                {"bleu_total", bc.total},
                                {"hyp_len", bc.hyp_len},
                                {"ref_len", bc.ref_len},
                                {"exact", out.tgt_units == rec.tgt_units},
                                {"style_matched", sm.matched},
                                {"decoded_style", sm.decoded_style},
                                {"consistency", sm.consistency},
                                {"truncated", out.translation.truncated || out.stream1.truncated},
                                {"malformed", out.translation.malformed || out.stream1.malformed}};
            diag << j.dump() << "\n";
        }
    }

    EvalReport report;
    report.model_desc = opt.model_desc;
    report.corpus_desc = opt.corpus_desc;
    report.decode_desc = opt.decode.mode == DecodeConfig::Mode::greedy
                             ? "greedy"
                             : ("top-" + std::to_string(opt.decode.k));
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    report.frames_per_second = wall > 0 ? static_cast<double>(frames_out) / wall : 0.0;
    for (auto& [name, a] : acc) {
        DirectionReport d;
        d.direction = name;
        d.n_records = a.n;
        d.bleu = corpus_bleu(a.hyps, a.refs);
        d.exact = exact_match(a.hyps, a.refs);
        d.style_match_rate = a.style_matches / a.n;
        d.grid_consistency = a.grid_consistency / a.n;
        d.stream1_consistency = a.s1_consistency / a.n;
        d.frame_mae = a.frame_err / a.n;
        d.truncated = a.truncated;
        d.malformed = a.malformed;
        if (opt.nar_accuracy && a.nar_total > 0) {
            d.nar_accuracy = static_cast<double>(a.nar_correct) / a.nar_total;
            d.nar_accuracy_per_stream.assign(n_streams + 1, 0.0);
            for (int j = 2; j <= n_streams; ++j)
                d.nar_accuracy_per_stream[j] =
                    a.nar_total_j[j] > 0
                        ? static_cast<double>(a.nar_correct_j[j]) / a.nar_total_j[j]
                        : 0.0;
        }
        report.directions.push_back(std::move(d));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report formatting
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json dirs = nlohmann::json::array();
    for (const auto& d : r.directions) {
        nlohmann::json j = {{"direction", d.direction},
                            {"n_records", d.n_records},
                            {"bleu", d.bleu},
                            {"exact_match", d.exact},
                            {"style_match", d.style_match_rate},
                            {"grid_consistency", d.grid_consistency},
                            {"stream1_consistency", d.stream1_consistency},
                            {"frame_mae", d.frame_mae},
                            {"truncated", d.truncated},
                            {"malformed", d.malformed}};
        if (d.nar_accuracy >= 0) {
            j["nar_accuracy"] = d.nar_accuracy;
            j["nar_accuracy_per_stream"] = d.nar_accuracy_per_stream;
        }
        dirs.push_back(std::move(j));
    }
    // frames_per_second is deliberately left out: report files must be
    // byte-identical across reruns; throughput goes to the console.
    return {{"model", r.model_desc},
            {"corpus", r.corpus_desc},
            {"decode", r.decode_desc},
            {"directions", dirs}};
}

/// Aligned-column table, one row per labelled report, one (Style, BLEU)
/// column pair per direction.
inline std::string format_report_table(
    const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::vector<std::string> directions;
    for (const auto& [label, rep] : rows)
        for (const auto& d : rep.directions)
            if (std::find(directions.begin(), directions.end(), d.direction) == directions.end())
                directions.push_back(d.direction);

    std::ostringstream os;
    char buf[64];
    os << std::left;
    size_t label_w = 24;
    for (const auto& [label, rep] : rows) label_w = std::max(label_w, label.size() + 2);
    std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(label_w), "Model");
    os << buf;
    for (const auto& d : directions) {
        std::snprintf(buf, sizeof(buf), "  %14s %10s", (d + " Style").c_str(),
                      (d + " BLEU").c_str());
        os << buf;
    }
    os << "\n";
    for (const auto& [label, rep] : rows) {
        std::snprintf(buf, sizeof(buf), "%-*s", static_cast<int>(label_w), label.c_str());
        os << buf;
        for (const auto& dname : directions) {
            const DirectionReport* found = nullptr;
            for (const auto& d : rep.directions)
                if (d.direction == dname) found = &d;
            if (found) {
                std::snprintf(buf, sizeof(buf), "  %14.3f %10.2f", found->style_match_rate,
                              found->bleu);
                os << buf;
            } else {
                std::snprintf(buf, sizeof(buf), "  %14s %10s", "-", "-");
                os << buf;
            }
        }
        os << "\n";
    }
    return os.str();
}

} // namespace mslm
