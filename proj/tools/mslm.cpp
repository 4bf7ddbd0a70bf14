// mslm: desk-scale multitask speech language model workflow.
// Subcommands: gen-data, train, translate, synthesize, pipeline, eval, inspect.

#include <CLI11.hpp>
#include <json.hpp>
#include <omp.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mslm/checkpoint.hpp"
#include "mslm/decode.hpp"
#include "mslm/errors.hpp"
#include "mslm/eval.hpp"
#include "mslm/model.hpp"
#include "mslm/run_config.hpp"
#include "mslm/token_space.hpp"
#include "mslm/trainer.hpp"
#include "mslm/world.hpp"

namespace fs = std::filesystem;
using namespace mslm;

namespace {

uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for checksum: " + path);
    std::string data((std::istreambuf_iterator<char>(in)), {});
    return fnv1a(data.data(), data.size());
}

std::string hex64(uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
    std::ofstream out(fs::path(out_dir) / "config");
    out << cfg.raw_file_text;
    if (!cfg.override_list.empty()) {
        out << "\n# command-line overrides\n";
        for (const auto& kv : cfg.override_list) out << kv << "\n";
    }
}

void write_manifest(const std::string& out_dir, const nlohmann::json& inputs,
                    const std::vector<std::string>& artifacts,
                    const std::vector<std::string>& overrides) {
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& a : artifacts) {
        if (fs::exists(a)) arts.push_back({{"path", a}, {"checksum", hex64(file_checksum(a))}});
    }
    nlohmann::json m = {{"inputs", inputs}, {"artifacts", arts}, {"overrides", overrides}};
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    out << m.dump(2) << "\n";
}

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "run config file (default: $MSLM_CONFIG)")
        ->envname("MSLM_CONFIG");
    cmd->add_option("--set", o.overrides, "override a config key (key=value, repeatable)");
    cmd->add_option("--threads", o.threads, "worker thread count (0 = library default)");
}

RunConfig resolve_config(const CommonOpts& o) {
    RunConfig cfg = load_run_config(o.config_path, o.overrides);
    int threads = o.threads > 0 ? o.threads : cfg.threads;
    if (threads > 0) omp_set_num_threads(threads);
    return cfg;
}

// The corpus header is the source of truth for the world the data was drawn
// from; all downstream commands derive the token space from it.
struct CorpusBundle {
    CorpusHeader header;
    std::vector<ParallelRecord> records;
    TokenSpace space;
    WorldOracle oracle;

    CorpusBundle(CorpusHeader h, std::vector<ParallelRecord> r)
        : header(std::move(h)), records(std::move(r)), space(build_token_space(header.space)),
          oracle(header.world, space) {}
};

CorpusBundle load_bundle(const std::string& path) {
    CorpusHeader header;
    auto records = load_corpus(path, &header);
    return CorpusBundle(std::move(header), std::move(records));
}

struct DecodeFlags {
    std::string mode;
    int k = 0;
    double temperature = 0.0;
    uint64_t seed = 0;
    bool constrained = false;

    void add_to(CLI::App* cmd) {
        cmd->add_option("--decode", mode, "decoding mode: greedy or top_k");
        cmd->add_option("--top-k", k, "top-k cutoff for sampling");
        cmd->add_option("--temperature", temperature, "sampling temperature");
        cmd->add_option("--decode-seed", seed, "sampling seed");
        cmd->add_flag("--constrained", constrained, "mask tokens outside the expected region");
    }

    DecodeConfig resolve(DecodeConfig base) const {
        if (mode == "greedy") base.mode = DecodeConfig::Mode::greedy;
        else if (mode == "top_k" || mode == "top-k") base.mode = DecodeConfig::Mode::top_k;
        else if (!mode.empty()) throw ConfigError("unknown decode mode: " + mode);
        if (k > 0) base.k = k;
        if (temperature > 0) base.temperature = temperature;
        if (seed > 0) base.seed = seed;
        if (constrained) base.constrained = true;
        base.validate();
        return base;
    }
};

nlohmann::json grid_json(const AcousticGrid& g) {
    nlohmann::json rows = nlohmann::json::array();
    for (int t = 0; t < g.frames(); ++t) {
        nlohmann::json row = nlohmann::json::array();
        for (int j = 1; j <= g.n_streams; ++j) row.push_back(g.at(t, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonOpts& common, const std::string& out_dir) {
    RunConfig cfg = resolve_config(common);
    TokenSpace space = cfg.make_space();
    fs::create_directories(out_dir);
    auto paths = generate_corpus(cfg.world, space, out_dir);
    echo_config(cfg, out_dir);
    std::vector<std::string> artifacts;
    for (const auto& p : paths) {
        std::cout << p.filename().string() << ": "
                  << (p.filename() == "train.jsonl"   ? cfg.world.train_records
                      : p.filename() == "valid.jsonl" ? cfg.world.valid_records
                                                      : cfg.world.test_records)
                  << " records, fingerprint " << hex64(file_checksum(p.string())) << "\n";
        artifacts.push_back(p.string());
    }
    artifacts.push_back((fs::path(out_dir) / "config").string());
    write_manifest(out_dir, nlohmann::json::array(), artifacts, cfg.override_list);
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonOpts& common, const std::string& corpus_dir, const std::string& out_dir,
              const std::string& mode_name, const std::vector<std::string>& ablations,
              bool resume, bool skip_nar) {
    RunConfig cfg = resolve_config(common);
    const std::string train_path = (fs::path(corpus_dir) / "train.jsonl").string();
    const std::string valid_path = (fs::path(corpus_dir) / "valid.jsonl").string();
    CorpusBundle train_bundle = load_bundle(train_path);
    CorpusBundle valid_bundle = load_bundle(valid_path);

    TrainSetup setup{train_bundle.space, cfg.model_ar, cfg.model_nar,
                     cfg.resolved_train(train_bundle.space), cfg.init_seed};
    for (const auto& ab : ablations) {
        if (ab == "no-upsample") {
            setup.config.upsample_translation = 1;
        } else if (ab.rfind("unidirectional=", 0) == 0) {
            std::string pair = ab.substr(std::string("unidirectional=").size());
            auto dash = pair.find('-');
            if (dash == std::string::npos)
                throw ConfigError("--ablate unidirectional wants a pair like en-es");
            Direction d;
            d.from = train_bundle.space.language_index(pair.substr(0, dash));
            d.to = train_bundle.space.language_index(pair.substr(dash + 1));
            setup.config.directions = {d};
        } else {
            throw ConfigError("unknown ablation: " + ab +
                              " (expected no-upsample or unidirectional=<src>-<tgt>)");
        }
    }

    TrainMode mode;
    if (mode_name == "mslm") mode = TrainMode::mslm;
    else if (mode_name == "cascaded") mode = TrainMode::cascaded;
    else throw ConfigError("--mode must be mslm or cascaded, got '" + mode_name + "'");

    fs::create_directories(out_dir);
    echo_config(cfg, out_dir);
    TrainResult result = run_training(train_bundle.records, valid_bundle.records, setup, out_dir,
                                      mode, resume, !skip_nar, &std::cout);

    std::vector<std::string> artifacts = {result.metrics_path};
    for (const auto& comp : result.components) {
        std::cout << "component " << comp.name << ": " << comp.param_count
                  << " parameters, best validation loss " << comp.best_val_loss << "\n";
        artifacts.push_back(comp.last_path);
        artifacts.push_back(comp.best_path);
    }
    std::cout << "total AR parameters: " << result.ar_param_total << " ("
              << (mode == TrainMode::cascaded ? "2x" : "1x") << " the configured AR model)\n";
    if (!skip_nar) std::cout << "total NAR parameters: " << result.nar_param_total << "\n";
    nlohmann::json inputs = {
        {{"path", train_path}, {"checksum", hex64(file_checksum(train_path))}},
        {{"path", valid_path}, {"checksum", hex64(file_checksum(valid_path))}}};
    write_manifest(out_dir, inputs, artifacts, cfg.override_list);
    return 0;
}

// ---------------------------------------------------------------------------
// scorer wiring shared by translate / synthesize / pipeline / eval
// ---------------------------------------------------------------------------

struct StageArgs {
    std::string ar_path;
    std::string ar_translate_path;
    std::string ar_generate_path;
    std::string nar_path;
    bool oracle_translation = false;
    bool oracle_acoustics = false;

    void add_to(CLI::App* cmd, bool with_translation, bool with_acoustics) {
        cmd->add_option("--ar", ar_path, "shared AR checkpoint");
        if (with_translation) {
            cmd->add_option("--ar-translate", ar_translate_path,
                            "translation-only AR checkpoint (cascaded)");
            cmd->add_flag("--oracle-translation", oracle_translation,
                          "replace stage 1 with the world oracle");
        }
        if (with_acoustics) {
            cmd->add_option("--ar-generate", ar_generate_path,
                            "generation-only AR checkpoint (cascaded)");
            cmd->add_option("--nar", nar_path, "NAR checkpoint for streams 2..n");
            cmd->add_flag("--oracle-acoustics", oracle_acoustics,
                          "replace stages 2-3 with the world oracle");
        }
    }
};

struct Stages {
    std::optional<ModelParams> ar_shared, ar_trans, ar_gen, nar;
    std::unique_ptr<ArScorer> translator, generator;
    std::unique_ptr<NarScorer> completer;
    std::unique_ptr<OracleArScorer> oracle_ar;
    std::unique_ptr<OracleNarScorer> oracle_nar;

    ArScorer* stage1() { return oracle1 ? static_cast<ArScorer*>(oracle_ar.get()) : translator.get(); }
    ArScorer* stage2() { return oracle23 ? static_cast<ArScorer*>(oracle_ar.get()) : generator.get(); }
    NarScorer* stage3() { return oracle23 ? static_cast<NarScorer*>(oracle_nar.get()) : completer.get(); }

    bool oracle1 = false, oracle23 = false;
};

Stages build_stages(const StageArgs& args, const TokenSpace& space, const WorldOracle& oracle,
                    bool need_translation, bool need_acoustics) {
    Stages s;
    s.oracle1 = args.oracle_translation;
    s.oracle23 = args.oracle_acoustics;
    s.oracle_ar = std::make_unique<OracleArScorer>(space, oracle);
    s.oracle_nar = std::make_unique<OracleNarScorer>(space, oracle);
    const uint64_t hash = space.layout_hash();

    if (!args.ar_path.empty()) s.ar_shared = load_params(args.ar_path, hash, ModelKind::ar);
    if (!args.ar_translate_path.empty())
        s.ar_trans = load_params(args.ar_translate_path, hash, ModelKind::ar);
    if (!args.ar_generate_path.empty())
        s.ar_gen = load_params(args.ar_generate_path, hash, ModelKind::ar);
    if (!args.nar_path.empty()) s.nar = load_params(args.nar_path, hash, ModelKind::nar);

    if (need_translation && !args.oracle_translation) {
        const ModelParams* p = s.ar_trans ? &*s.ar_trans : (s.ar_shared ? &*s.ar_shared : nullptr);
        if (!p)
            throw ConfigError("stage 1 needs --ar or --ar-translate (or --oracle-translation)");
        s.translator = std::make_unique<TransformerArScorer>(*p);
    }
    if (need_acoustics && !args.oracle_acoustics) {
        const ModelParams* p = s.ar_gen ? &*s.ar_gen : (s.ar_shared ? &*s.ar_shared : nullptr);
        if (!p) throw ConfigError("stage 2 needs --ar or --ar-generate (or --oracle-acoustics)");
        s.generator = std::make_unique<TransformerArScorer>(*p);
        if (!s.nar) throw ConfigError("stage 3 needs --nar (or --oracle-acoustics)");
        s.completer = std::make_unique<TransformerNarScorer>(*s.nar);
    }
    return s;
}

std::ostream& open_results(const std::string& out_path, std::ofstream& file) {
    if (out_path.empty() || out_path == "-") return std::cout;
    file.open(out_path);
    if (!file) throw IoError("cannot open output file: " + out_path);
    return file;
}

std::vector<int> parse_units(const std::string& str) {
    std::vector<int> units;
    std::stringstream ss(str);
    int u;
    while (ss >> u) units.push_back(u);
    return units;
}

// ---------------------------------------------------------------------------
// translate / synthesize / pipeline
// ---------------------------------------------------------------------------

int cmd_translate(const CommonOpts& common, const StageArgs& stage_args, const DecodeFlags& dflags,
                  const std::string& input, const std::string& src_units_str,
                  const std::string& src_lang, const std::string& tgt_lang,
                  const std::string& out_path) {
    std::ofstream out_file;
    std::ostream& out = open_results(out_path, out_file);

    if (!input.empty()) {
        CorpusBundle bundle = load_bundle(input);
        DecodeConfig decode = dflags.resolve({});
        Stages stages = build_stages(stage_args, bundle.space, bundle.oracle, true, false);
        for (const auto& rec : bundle.records) {
            StageResult r = translate(*stages.stage1(), bundle.space,
                                      {rec.src_lang, rec.src_units}, rec.tgt_lang, decode);
            nlohmann::json j = {{"id", rec.id},
                                {"hyp_units", r.values},
                                {"truncated", r.truncated},
                                {"malformed", r.malformed}};
            out << j.dump() << "\n";
        }
        return 0;
    }

    // inline record: the config supplies the token space and world
    RunConfig cfg = resolve_config(common);
    TokenSpace space = cfg.make_space();
    WorldOracle oracle(cfg.world, space);
    DecodeConfig decode = dflags.resolve(cfg.decode);
    std::vector<int> units = parse_units(src_units_str);
    if (units.empty()) throw ConfigError("translate needs --input <corpus> or --src-units \"...\"");
    Stages stages = build_stages(stage_args, space, oracle, true, false);
    StageResult r = translate(*stages.stage1(), space, {space.language_index(src_lang), units},
                              space.language_index(tgt_lang), decode);
    nlohmann::json j = {
        {"hyp_units", r.values}, {"truncated", r.truncated}, {"malformed", r.malformed}};
    out << j.dump() << "\n";
    return 0;
}

int cmd_synthesize(const StageArgs& stage_args, const DecodeFlags& dflags,
                   const std::string& input, const std::string& out_path, bool emit_grid) {
    CorpusBundle bundle = load_bundle(input);
    DecodeConfig decode = dflags.resolve({});
    Stages stages = build_stages(stage_args, bundle.space, bundle.oracle, false, true);

    std::ofstream out_file;
    std::ostream& out = open_results(out_path, out_file);
    for (const auto& rec : bundle.records) {
        AcousticGrid prompt = truncate_prompt(rec.src_acoustic);
        StageResult s1 = generate_stream1(*stages.stage2(), bundle.space, rec.src_units,
                                          rec.tgt_units, prompt, decode);
        nlohmann::json j = {
            {"id", rec.id}, {"truncated", s1.truncated}, {"malformed", s1.malformed}};
        if (!s1.values.empty()) {
            AcousticGrid grid = complete_streams(*stages.stage3(), bundle.space, rec.tgt_units,
                                                 prompt, s1.values);
            StyleMatch sm = style_match(grid, rec.tgt_units, rec.style);
            j["frames"] = grid.frames();
            j["decoded_style"] = sm.decoded_style;
            j["style_matched"] = sm.matched;
            j["consistency"] = sm.consistency;
            if (emit_grid) j["grid"] = grid_json(grid);
        } else {
            j["frames"] = 0;
        }
        out << j.dump() << "\n";
    }
    return 0;
}

int cmd_pipeline(const CommonOpts& common, const StageArgs& stage_args, const DecodeFlags& dflags,
                 const std::string& input, const std::string& src_units_str,
                 const std::string& src_lang, const std::string& tgt_lang, int inline_style,
                 const std::string& out_path, bool emit_grid) {
    std::ofstream out_file;
    std::ostream& out = open_results(out_path, out_file);

    auto emit = [&](const std::string& id, const PipelineOutput& po, int ref_style) {
        StyleMatch sm = style_match(po.grid, po.tgt_units, ref_style);
        nlohmann::json j = {{"id", id},
                            {"hyp_units", po.tgt_units},
                            {"frames", po.grid.frames()},
                            {"decoded_style", sm.decoded_style},
                            {"style_matched", sm.matched},
                            {"consistency", sm.consistency},
                            {"truncated", po.translation.truncated || po.stream1.truncated},
                            {"malformed", po.translation.malformed || po.stream1.malformed}};
        if (emit_grid) j["grid"] = grid_json(po.grid);
        out << j.dump() << "\n";
    };

    if (!input.empty()) {
        CorpusBundle bundle = load_bundle(input);
        DecodeConfig decode = dflags.resolve({});
        Stages stages = build_stages(stage_args, bundle.space, bundle.oracle, true, true);
        auto t0 = std::chrono::steady_clock::now();
        long long frames = 0;
        for (const auto& rec : bundle.records) {
            PipelineOutput po = run_pipeline(*stages.stage1(), *stages.stage2(), *stages.stage3(),
                                             bundle.space, {rec.src_lang, rec.src_units},
                                             rec.src_acoustic, rec.tgt_lang, decode);
            frames += po.grid.frames();
            emit(rec.id, po, rec.style);
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::cerr << "pipeline: " << bundle.records.size() << " records, " << frames
                  << " frames in " << static_cast<long long>(secs) << "s ("
                  << static_cast<long long>(secs > 0 ? frames / secs : 0) << " frames/s)\n";
        return 0;
    }

    RunConfig cfg = resolve_config(common);
    TokenSpace space = cfg.make_space();
    WorldOracle oracle(cfg.world, space);
    DecodeConfig decode = dflags.resolve(cfg.decode);
    std::vector<int> units = parse_units(src_units_str);
    if (units.empty()) throw ConfigError("pipeline needs --input <corpus> or --src-units \"...\"");
    if (inline_style < 0 || inline_style >= cfg.world.n_styles)
        throw ConfigError("--style out of range");
    Stages stages = build_stages(stage_args, space, oracle, true, true);
    AcousticGrid src_grid = oracle.acoustics(units, inline_style);
    PipelineOutput po =
        run_pipeline(*stages.stage1(), *stages.stage2(), *stages.stage3(), space,
                     {space.language_index(src_lang), units}, src_grid,
                     space.language_index(tgt_lang), decode);
    emit("inline", po, inline_style);
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const StageArgs& stage_args, const DecodeFlags& dflags, const std::string& split,
             const std::string& out_dir, bool diagnostics, bool nar_accuracy,
             const std::string& label, const std::vector<std::string>& compare,
             const std::string& compare_labels) {
    if (!compare.empty()) {
        std::vector<std::pair<std::string, EvalReport>> rows;
        auto labels = detail_config::parse_list(compare_labels);
        for (size_t i = 0; i < compare.size(); ++i) {
            std::ifstream in(compare[i]);
            if (!in) throw IoError("cannot open report: " + compare[i]);
            nlohmann::json j = nlohmann::json::parse(in);
            EvalReport rep;
            rep.model_desc = j.value("model", compare[i]);
            for (const auto& d : j.at("directions")) {
                DirectionReport dr;
                dr.direction = d.at("direction");
                dr.n_records = d.at("n_records");
                dr.bleu = d.at("bleu");
                dr.exact = d.at("exact_match");
                dr.style_match_rate = d.at("style_match");
                rep.directions.push_back(dr);
            }
            rows.push_back({i < labels.size() ? labels[i] : rep.model_desc, rep});
        }
        std::cout << format_report_table(rows);
        return 0;
    }

    if (split.empty()) throw ConfigError("eval needs --split <corpus file>");
    CorpusBundle bundle = load_bundle(split);
    Stages stages = build_stages(stage_args, bundle.space, bundle.oracle,
                                 !stage_args.oracle_translation, !stage_args.oracle_acoustics);

    EvalOptions opt;
    opt.oracle_translation = stage_args.oracle_translation;
    opt.oracle_acoustics = stage_args.oracle_acoustics;
    opt.nar_accuracy = nar_accuracy;
    opt.decode = dflags.resolve({});
    opt.model_desc = label.empty() ? "model" : label;
    opt.corpus_desc = split;
    fs::create_directories(out_dir);
    if (diagnostics) opt.diagnostics_path = (fs::path(out_dir) / "diagnostics.jsonl").string();

    EvalReport report = evaluate(bundle.space, bundle.oracle, bundle.records,
                                 stages.translator.get(), stages.generator.get(),
                                 stages.completer.get(), opt);

    std::string table = format_report_table({{opt.model_desc, report}});
    std::cout << table;
    std::cerr << "throughput: " << static_cast<long long>(report.frames_per_second)
              << " frames/s\n";
    {
        std::ofstream out(fs::path(out_dir) / "report.json");
        out << report_to_json(report).dump(2) << "\n";
    }
    {
        std::ofstream out(fs::path(out_dir) / "report.txt");
        out << table;
    }
    std::vector<std::string> artifacts = {(fs::path(out_dir) / "report.json").string(),
                                          (fs::path(out_dir) / "report.txt").string()};
    if (diagnostics) artifacts.push_back(opt.diagnostics_path);
    nlohmann::json inputs = {{{"path", split}, {"checksum", hex64(file_checksum(split))}}};
    write_manifest(out_dir, inputs, artifacts, {});
    return 0;
}

// ---------------------------------------------------------------------------
// inspect
// ---------------------------------------------------------------------------

int cmd_inspect(const CommonOpts& common, bool show_token_space, const std::string& pack_file,
                const std::string& pack_record, const std::string& pack_task,
                const std::string& validate_path, const std::string& checkpoint_path) {
    if (show_token_space) {
        RunConfig cfg = resolve_config(common);
        TokenSpace space = cfg.make_space();
        std::cout << space.describe();
        std::cout << "total " << space.total_size() << " layout-hash "
                  << hex64(space.layout_hash()) << "\n";
        return 0;
    }
    if (!pack_file.empty()) {
        CorpusBundle bundle = load_bundle(pack_file);
        const ParallelRecord* rec = nullptr;
        for (const auto& r : bundle.records)
            if (pack_record.empty() || r.id == pack_record) {
                rec = &r;
                break;
            }
        if (!rec) throw ValidationError("record not found: " + pack_record);
        PackedExample ex;
        if (pack_task == "gen") {
            AcousticGrid prompt = truncate_prompt(rec->src_acoustic);
            ex = build_generation(bundle.space, rec->src_units, rec->tgt_units, prompt.column(1),
                                  rec->tgt_acoustic.column(1), false);
        } else {
            ex = materialize_translation(bundle.space, *rec, {rec->src_lang, rec->tgt_lang}, false);
        }
        std::cout << "record " << rec->id << " task " << (pack_task == "gen" ? "gen" : "trans")
                  << " length " << ex.length() << " prompt_len " << ex.prompt_len << "\n";
        for (int i = 0; i < ex.length(); ++i) {
            std::cout << i << "\t" << ex.tokens[i] << "\t" << bundle.space.token_name(ex.tokens[i])
                      << (ex.loss_mask[i] ? "\t[scored]" : "") << "\n";
        }
        return 0;
    }
    if (!validate_path.empty()) {
        CorpusHeader header;
        {
            CorpusReader reader(validate_path);
            header = reader.header();
        }
        TokenSpace space = build_token_space(header.space);
        int n = validate_corpus(validate_path, space);
        std::cout << "validated " << n << " records against both oracles: OK\n";
        return 0;
    }
    if (!checkpoint_path.empty()) {
        ModelParams p = load_params(checkpoint_path);
        const ModelConfig& c = p.config;
        std::cout << "kind " << kind_name(c.kind) << "\n"
                  << "layers " << c.n_layers << " d_model " << c.d_model << " d_ff " << c.d_ff
                  << " heads " << c.n_heads << " max_positions " << c.max_positions << "\n"
                  << "vocab " << c.vocab_size << " out [" << c.out_offset << ", "
                  << c.out_offset + c.out_size << ")\n"
                  << "tie_output " << (c.tie_output ? "true" : "false") << " stream_additive_emb "
                  << (c.stream_additive_emb ? "true" : "false") << "\n"
                  << "token-space hash " << hex64(c.space_hash) << "\n"
                  << "parameters " << p.total_params() << "\n";
        return 0;
    }
    throw ConfigError("inspect needs one of --token-space, --pack, --validate-corpus, --checkpoint");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale multitask speech language model"};
    app.require_subcommand(1);

    CommonOpts gen_common;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
    add_common(gen, gen_common);
    gen->add_option("--out", gen_out, "output directory")->required();

    CommonOpts train_common;
    std::string train_corpus, train_out, train_mode = "mslm";
    std::vector<std::string> train_ablate;
    bool train_resume = false, train_skip_nar = false;
    auto* train = app.add_subcommand("train", "train the models");
    add_common(train, train_common);
    train->add_option("--corpus", train_corpus, "corpus directory (train.jsonl / valid.jsonl)")
        ->required();
    train->add_option("--out", train_out, "run output directory")->required();
    train->add_option("--mode", train_mode, "mslm (shared AR) or cascaded (two ARs)");
    train->add_option("--ablate", train_ablate,
                      "ablations: no-upsample, unidirectional=<src>-<tgt> (repeatable)");
    train->add_flag("--resume", train_resume, "resume from the last checkpoint in --out");
    train->add_flag("--skip-nar", train_skip_nar, "train only the AR component(s)");

    CommonOpts tr_common;
    StageArgs tr_stages;
    DecodeFlags tr_decode;
    std::string tr_input, tr_units, tr_src_lang = "en", tr_tgt_lang = "es", tr_out;
    auto* tr = app.add_subcommand("translate", "semantic-to-semantic translation (stage 1)");
    add_common(tr, tr_common);
    tr_stages.add_to(tr, true, false);
    tr_decode.add_to(tr);
    tr->add_option("--input", tr_input, "corpus file to translate");
    tr->add_option("--src-units", tr_units, "inline source units, e.g. \"3 5 7\"");
    tr->add_option("--src-lang", tr_src_lang, "inline source language");
    tr->add_option("--tgt-lang", tr_tgt_lang, "inline target language");
    tr->add_option("--out", tr_out, "results file (default stdout)");

    StageArgs sy_stages;
    DecodeFlags sy_decode;
    std::string sy_input, sy_out;
    bool sy_grid = false;
    auto* sy =
        app.add_subcommand("synthesize", "acoustic generation from reference units (stages 2-3)");
    sy_stages.add_to(sy, false, true);
    sy_decode.add_to(sy);
    sy->add_option("--input", sy_input, "corpus file")->required();
    sy->add_option("--out", sy_out, "results file (default stdout)");
    sy->add_flag("--emit-grid", sy_grid, "include the full code grid in each result row");

    CommonOpts pl_common;
    StageArgs pl_stages;
    DecodeFlags pl_decode;
    std::string pl_input, pl_units, pl_src_lang = "en", pl_tgt_lang = "es", pl_out;
    int pl_style = 0;
    bool pl_grid = false;
    auto* pl = app.add_subcommand("pipeline", "full three-stage pipeline");
    add_common(pl, pl_common);
    pl_stages.add_to(pl, true, true);
    pl_decode.add_to(pl);
    pl->add_option("--input", pl_input, "corpus file");
    pl->add_option("--src-units", pl_units, "inline source units");
    pl->add_option("--src-lang", pl_src_lang, "inline source language");
    pl->add_option("--tgt-lang", pl_tgt_lang, "inline target language");
    pl->add_option("--style", pl_style, "inline style id (synthesizes the prompt)");
    pl->add_option("--out", pl_out, "results file (default stdout)");
    pl->add_flag("--emit-grid", pl_grid, "include code grids in result rows");

    StageArgs ev_stages;
    DecodeFlags ev_decode;
    std::string ev_split, ev_out = "eval_out", ev_label;
    std::vector<std::string> ev_compare;
    std::string ev_compare_labels;
    bool ev_diag = false, ev_nar_acc = false;
    auto* ev = app.add_subcommand("eval", "evaluate a split and write a report");
    ev_stages.add_to(ev, true, true);
    ev_decode.add_to(ev);
    ev->add_option("--split", ev_split, "corpus file to evaluate");
    ev->add_option("--out", ev_out, "report directory");
    ev->add_option("--label", ev_label, "row label in the report table");
    ev->add_flag("--diagnostics", ev_diag, "write per-record diagnostics.jsonl");
    ev->add_flag("--nar-accuracy", ev_nar_acc,
                 "score NAR streams 2..n against the codec oracle (stage isolation)");
    ev->add_option("--compare", ev_compare, "combine existing report.json files into one table");
    ev->add_option("--labels", ev_compare_labels, "labels for --compare rows (comma separated)");

    CommonOpts in_common;
    bool in_space = false;
    std::string in_pack, in_record, in_task = "trans", in_validate, in_ckpt;
    auto* in = app.add_subcommand("inspect", "inspect configs, corpora and checkpoints");
    add_common(in, in_common);
    in->add_flag("--token-space", in_space, "print the resolved token-space layout");
    in->add_option("--pack", in_pack, "pretty-print a packed sequence from this corpus file");
    in->add_option("--record", in_record, "record id for --pack (default: first record)");
    in->add_option("--task", in_task, "layout for --pack: trans or gen");
    in->add_option("--validate-corpus", in_validate, "re-run both oracles over a corpus file");
    in->add_option("--checkpoint", in_ckpt, "print checkpoint metadata");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ExitCode::config);
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_common, gen_out);
        if (train->parsed())
            return cmd_train(train_common, train_corpus, train_out, train_mode, train_ablate,
                             train_resume, train_skip_nar);
        if (tr->parsed())
            return cmd_translate(tr_common, tr_stages, tr_decode, tr_input, tr_units, tr_src_lang,
                                 tr_tgt_lang, tr_out);
        if (sy->parsed()) return cmd_synthesize(sy_stages, sy_decode, sy_input, sy_out, sy_grid);
        if (pl->parsed())
            return cmd_pipeline(pl_common, pl_stages, pl_decode, pl_input, pl_units, pl_src_lang,
                                pl_tgt_lang, pl_style, pl_out, pl_grid);
        if (ev->parsed())
            return cmd_eval(ev_stages, ev_decode, ev_split, ev_out, ev_diag, ev_nar_acc, ev_label,
                            ev_compare, ev_compare_labels);
        if (in->parsed())
            return cmd_inspect(in_common, in_space, in_pack, in_record, in_task, in_validate,
                               in_ckpt);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::config);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::io);
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::validation);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::numerical);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(ExitCode::io);
    }
    return 0;
}
