// pislab: scene/instruction data generation, the annotate-inspect-correct
// engine, curriculum training, evaluation and ablation comparison, and
// overlay rendering. Every run writes a manifest that can be re-executed
// with `pislab rerun` to reproduce byte-identical outputs.
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pis/checkpoint.hpp"
#include "pis/dataset.hpp"
#include "pis/engine.hpp"
#include "pis/manifest.hpp"
#include "pis/metrics.hpp"
#include "pis/remote_agents.hpp"
#include "pis/trainer.hpp"

namespace fs = std::filesystem;
using namespace pis;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitAgent = 3;

struct CommonState {
    ModelConfig cfg;
    Vocab vocab;

    CommonState() {
        vocab = Vocab::build(grammar_words());
        cfg.vocab_size = vocab.size();
    }
};

std::string hash_label(const std::string& path) { return hex64(file_hash(path)); }

void finish_manifest(RunManifest& m, const std::string& out_dir) {
    for (const auto& [label, path] : m.outputs) m.output_hashes[label] = hash_label(path);
    write_manifest(m, (fs::path(out_dir) / "manifest.json").string());
}

std::string config_hash_of(const json& j) { return hex64(fnv1a(j.dump())); }

int dispatch(const std::vector<std::string>& args);

// ---- datagen ----

int cmd_datagen(const std::vector<std::string>& argv_full, uint64_t seed, int count, const std::string& out,
                int num_objects, bool duplicates) {
    if (count <= 0) {
        std::fprintf(stderr, "datagen: --count must be positive\n");
        return kExitUsage;
    }
    fs::create_directories(fs::path(out) / "images");
    fs::create_directories(fs::path(out) / "masks");

    SceneConfig scfg;
    scfg.num_objects = num_objects;
    scfg.ensure_duplicate_concepts = duplicates;

    Rng rng(seed);
    std::vector<DatasetRecord> records;
    std::map<std::string, int> tally;
    double total_words = 0;
    int total_instr = 0;
    for (int i = 0; i < count; ++i) {
        DatasetRecord rec = generate_record(rng.next_u64(), scfg);
        char stem[64];
        std::snprintf(stem, sizeof(stem), "scene_%05d", i);
        rec.image_path = std::string("images/") + stem + ".ppm";
        rec.mask_path = std::string("masks/") + stem + "_target.pgm";
        rec.concept_mask_path = std::string("masks/") + stem + "_concept.pgm";

        const LoadedExample ex = materialize(rec);
        write_ppm(ex.image, (fs::path(out) / rec.image_path).string());
        write_pgm(ex.target_mask, (fs::path(out) / rec.mask_path).string());
        write_pgm(ex.concept_mask, (fs::path(out) / rec.concept_mask_path).string());

        for (const auto* list : {&rec.positives, &rec.negatives})
            for (const auto& ins : *list) {
                tally[std::string(routing_mode_name(ins.level)) + "/" + form_name(ins.form) + "/" +
                      polarity_name(ins.polarity)]++;
                total_words += 1 + std::count(ins.text.begin(), ins.text.end(), ' ');
                ++total_instr;
            }
        records.push_back(std::move(rec));
    }
    const std::string jsonl = (fs::path(out) / "dataset.jsonl").string();
    save_jsonl(records, jsonl);

    std::printf("datagen: %d records, %d instructions, %d concept NPs\n", count, total_instr, count);
    for (const auto& [k, v] : tally) std::printf("  %-28s %d\n", k.c_str(), v);
    std::printf("  avg instruction length: %.1f words\n", total_words / total_instr);

    RunManifest m;
    m.command = argv_full;
    m.seed = seed;
    m.config_hash = config_hash_of(json{{"seed", seed}, {"count", count}, {"num_objects", num_objects},
                                        {"duplicates", duplicates}});
    m.outputs["dataset"] = jsonl;
    finish_manifest(m, out);
    return 0;
}

// ---- engine ----

int cmd_engine(const std::vector<std::string>& argv_full, const std::string& data, const std::string& out,
               const std::string& agents, const std::string& annotator_spec, const std::string& inspector_spec,
               int max_rounds, uint64_t seed) {
    const auto records = load_jsonl((fs::path(data) / "dataset.jsonl").string());
    const AgentEndpointSpec ann_spec = AgentEndpointSpec::parse(annotator_spec.empty() ? agents : annotator_spec);
    const AgentEndpointSpec ins_spec = AgentEndpointSpec::parse(inspector_spec.empty() ? agents : inspector_spec);
    auto annotator = make_annotator(ann_spec);
    auto inspector = make_inspector(ins_spec);

    std::vector<EngineSample> samples;
    Rng rng(seed);
    for (size_t i = 0; i < records.size(); ++i) {
        EngineSample s;
        s.id = static_cast<int>(i);
        s.record = records[i];
        s.seed = rng.next_u64();
        samples.push_back(std::move(s));
    }

    EngineStats stats;
    samples = run_engine(std::move(samples), *annotator, *inspector, max_rounds, stats);

    fs::create_directories(out);
    std::vector<DatasetRecord> accepted;
    for (const auto& s : samples)
        if (s.status == SampleStatus::Accepted) accepted.push_back(s.record);
    const std::string accepted_path = (fs::path(out) / "accepted.jsonl").string();
    save_jsonl(accepted, accepted_path);
    const std::string queue_path = (fs::path(out) / "human_queue.jsonl").string();
    export_human_queue(samples, queue_path);

    std::printf("engine: %zu samples -> %d accepted, %d queued (max %d rounds)\n", samples.size(), stats.accepted,
                stats.queued, max_rounds);
    std::printf("  round histogram:");
    for (const auto& [round, n] : stats.round_histogram) std::printf(" r%d:%d", round, n);
    std::printf("\n");
    if (stats.agent_failures) std::printf("  agent failures: %d\n", stats.agent_failures);

    RunManifest m;
    m.command = argv_full;
    m.seed = seed;
    m.config_hash = config_hash_of(json{{"agents", agents}, {"annotator", annotator_spec},
                                        {"inspector", inspector_spec}, {"max_rounds", max_rounds}, {"seed", seed}});
    m.outputs["accepted"] = accepted_path;
    m.outputs["human_queue"] = queue_path;
    finish_manifest(m, out);

    // Outputs are written either way; a run where agent failures queued
    // everything still signals the outage.
    if (!samples.empty() && stats.accepted == 0 && stats.agent_failures > 0) {
        std::fprintf(stderr, "engine: no sample accepted and %d agent failures; check the remote endpoint\n",
                     stats.agent_failures);
        return kExitAgent;
    }
    return 0;
}

int cmd_import(const std::vector<std::string>& argv_full, const std::string& queue_file,
               const std::string& corrections, const std::string& out) {
    std::vector<EngineSample> samples;
    {
        std::ifstream f(queue_file);
        if (!f) throw std::runtime_error("import: cannot open " + queue_file);
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            const json j = json::parse(line);
            EngineSample s;
            s.id = j.at("id").get<int>();
            s.round = j.value("round", 0);
            s.seed = j.value("seed", static_cast<uint64_t>(0));
            s.status = SampleStatus::HumanQueue;
            s.record = record_from_json(j.at("record"));
            samples.push_back(std::move(s));
        }
    }
    const ImportOutcome outcome = import_corrections(samples, corrections);

    fs::create_directories(out);
    std::vector<DatasetRecord> corrected;
    for (const auto& s : samples)
        if (s.status == SampleStatus::Accepted) corrected.push_back(s.record);
    const std::string corrected_path = (fs::path(out) / "corrected.jsonl").string();
    save_jsonl(corrected, corrected_path);
    const std::string queue_path = (fs::path(out) / "human_queue.jsonl").string();
    export_human_queue(samples, queue_path);

    std::printf("import: %d corrected, %d discarded, %zu rejected\n", outcome.accepted, outcome.discarded,
                outcome.rejected.size());
    for (const auto& r : outcome.rejected) std::printf("  rejected %s\n", r.c_str());

    RunManifest m;
    m.command = argv_full;
    m.config_hash = config_hash_of(json{{"queue", queue_file}, {"corrections", corrections}});
    m.outputs["corrected"] = corrected_path;
    m.outputs["human_queue"] = queue_path;
    finish_manifest(m, out);
    return 0;
}

// ---- train ----

struct TrainFlags {
    bool skip1 = false, skip2 = false, no_align = false, no_hard = false, stage2_train_s = false;
    bool align_bidirectional = false;
};

int cmd_train(const std::vector<std::string>& argv_full, const std::string& stage_arg, const std::string& data,
              const std::string& out, const std::string& ckpt_in, const std::string& steps_arg, int batch_size,
              float lr, uint64_t seed, const TrainFlags& flags) {
    CommonState st;
    const auto dataset = load_examples(data);
    fs::create_directories(out);

    std::map<int, int> steps;
    for (int s = 0; s <= 3; ++s) steps[s] = default_stage_steps(s);
    if (!steps_arg.empty()) {
        std::vector<int> vals;
        std::string cur;
        for (char c : steps_arg + ",") {
            if (c == ',') {
                if (!cur.empty()) vals.push_back(std::stoi(cur));
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (vals.size() == 1) {
            for (auto& [k, v] : steps) v = vals[0];
        } else if (vals.size() == 4) {
            for (int i = 0; i < 4; ++i) steps[i] = vals[static_cast<size_t>(i)];
        } else {
            std::fprintf(stderr, "train: --steps takes one value or four comma-separated values\n");
            return kExitUsage;
        }
    }

    auto stage_cfg = [&](int stage) {
        StageConfig c = StageConfig::defaults_for(stage, seed + static_cast<uint64_t>(stage) * 1000003ULL);
        c.steps = steps.at(stage);
        if (lr > 0.0f) c.lr = lr;
        c.batch_size = batch_size;
        c.loss_flags = {!flags.no_align, !flags.no_hard};
        c.stage2_train_s = flags.stage2_train_s;
        c.align_opt.detach_simple = !flags.align_bidirectional;
        return c;
    };

    TrainLog log((fs::path(out) / "train_log.csv").string());
    RunManifest m;
    m.command = argv_full;
    m.seed = seed;
    m.config_hash = config_hash_of(json{{"stage", stage_arg}, {"steps", steps_arg}, {"batch", batch_size},
                                        {"lr", lr}, {"seed", seed}, {"skip1", flags.skip1}, {"skip2", flags.skip2},
                                        {"no_align", flags.no_align}, {"no_hard", flags.no_hard},
                                        {"stage2_train_s", flags.stage2_train_s}});

    if (stage_arg == "all") {
        ParameterGroup pg = init_params<float>(st.cfg, seed);
        std::map<int, StageConfig> cfgs;
        for (int s = 0; s <= 3; ++s) cfgs[s] = stage_cfg(s);
        CurriculumOptions opts;
        opts.skip_stage1 = flags.skip1;
        opts.skip_stage2 = flags.skip2;
        opts.loss_flags = {!flags.no_align, !flags.no_hard};
        opts.stage2_train_s = flags.stage2_train_s;
        auto snaps = run_curriculum(cfgs, dataset, pg, st.cfg, st.vocab, log, opts);
        for (const auto& [stage, snap] : snaps) {
            const std::string path = (fs::path(out) / ("stage" + std::to_string(stage) + ".ckpt")).string();
            save_checkpoint(snap, path);
            m.outputs["stage" + std::to_string(stage)] = path;
            std::printf("train: stage %d done -> %s (hash %s)\n", stage, path.c_str(),
                        hex64(checkpoint_hash(snap)).c_str());
        }
    } else {
        const int stage = std::stoi(stage_arg);
        if (stage < 0 || stage > 3) {
            std::fprintf(stderr, "train: --stage must be 0..3 or all\n");
            return kExitUsage;
        }
        ParameterGroup pg;
        if (stage == 0) {
            pg = init_params<float>(st.cfg, seed);
        } else {
            if (ckpt_in.empty()) {
                std::fprintf(stderr,
                             "train: stage %d requires --ckpt-in from the previous stage "
                             "(or an explicit skip flag covering it)\n",
                             stage);
                return kExitData;
            }
            pg = load_checkpoint(ckpt_in);
        }
        // Prerequisite chain: stage N wants stage N-1 unless skipped by flag.
        if (stage == 2 && flags.skip1 && ckpt_in.empty()) {
            std::fprintf(stderr, "train: stage 2 with --skip-stage1 still needs the stage-0 checkpoint\n");
            return kExitData;
        }
        const bool inherit = stage == 3 && flags.skip2;
        run_stage(stage_cfg(stage), dataset, pg, st.cfg, st.vocab, log, inherit);
        const std::string path = (fs::path(out) / ("stage" + std::to_string(stage) + ".ckpt")).string();
        save_checkpoint(pg, path);
        m.outputs["stage" + std::to_string(stage)] = path;
        std::printf("train: stage %d done -> %s (hash %s)\n", stage, path.c_str(), hex64(checkpoint_hash(pg)).c_str());
    }

    m.outputs["train_log"] = (fs::path(out) / "train_log.csv").string();
    finish_manifest(m, out);
    return 0;
}

// ---- eval / compare ----

std::vector<Level> parse_levels(const std::string& levels_arg) {
    std::vector<Level> levels;
    std::string cur;
    for (char c : levels_arg + ",") {
        if (c == ',') {
            if (!cur.empty()) levels.push_back(routing_mode_from(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (levels.empty()) throw std::invalid_argument("no evaluation levels given");
    return levels;
}

int cmd_eval(const std::vector<std::string>& argv_full, const std::string& ckpt, const std::string& data,
             const std::string& out, const std::string& levels_arg, bool baseline) {
    CommonState st;
    auto pg = load_checkpoint(ckpt);
    const auto dataset = load_examples(data);
    fs::create_directories(out);

    std::vector<EvalRow> rows;
    for (Level level : parse_levels(levels_arg)) {
        rows.push_back({"model", evaluate_model(pg, st.cfg, st.vocab, dataset, level)});
        if (baseline) rows.push_back({"np-collapse", evaluate_np_baseline(pg, st.cfg, st.vocab, dataset, level)});
    }
    for (const auto& r : rows) std::printf("%s\n", format_eval_line(r).c_str());

    const std::string report = (fs::path(out) / "report.csv").string();
    write_eval_csv(rows, report);

    RunManifest m;
    m.command = argv_full;
    m.config_hash = config_hash_of(json{{"ckpt", ckpt}, {"levels", levels_arg}, {"baseline", baseline}});
    m.outputs["report"] = report;
    finish_manifest(m, out);
    return 0;
}

int cmd_compare(const std::vector<std::string>& argv_full, const std::vector<std::string>& ckpts,
                const std::vector<std::string>& labels, const std::string& data, const std::string& out,
                const std::string& levels_arg, bool baseline) {
    if (ckpts.empty()) {
        std::fprintf(stderr, "compare: need at least one --ckpts entry\n");
        return kExitUsage;
    }
    if (!labels.empty() && labels.size() != ckpts.size()) {
        std::fprintf(stderr, "compare: --labels must match --ckpts\n");
        return kExitUsage;
    }
    CommonState st;
    const auto dataset = load_examples(data);
    fs::create_directories(out);
    const auto levels = parse_levels(levels_arg);

    std::vector<EvalRow> rows;
    for (size_t i = 0; i < ckpts.size(); ++i) {
        auto pg = load_checkpoint(ckpts[i]);
        const std::string tag = labels.empty() ? fs::path(ckpts[i]).stem().string() : labels[i];
        for (Level level : levels) rows.push_back({tag, evaluate_model(pg, st.cfg, st.vocab, dataset, level)});
    }
    if (baseline) {
        auto pg = load_checkpoint(ckpts[0]);
        for (Level level : levels)
            rows.push_back({"np-collapse", evaluate_np_baseline(pg, st.cfg, st.vocab, dataset, level)});
    }
    for (const auto& r : rows) std::printf("%s\n", format_eval_line(r).c_str());

    const std::string report = (fs::path(out) / "compare.csv").string();
    write_eval_csv(rows, report);

    RunManifest m;
    m.command = argv_full;
    m.config_hash = config_hash_of(json{{"ckpts", ckpts}, {"levels", levels_arg}, {"baseline", baseline}});
    m.outputs["compare"] = report;
    finish_manifest(m, out);
    return 0;
}

int cmd_overlay(const std::vector<std::string>& argv_full, const std::string& image_path,
                const std::string& mask_path, const std::string& out) {
    const Image img = read_ppm(image_path);
    const Mask mask = read_pgm(mask_path);
    fs::create_directories(out);
    const std::string out_path = (fs::path(out) / "overlay.ppm").string();
    write_ppm(render_overlay(img, mask), out_path);
    std::printf("overlay: %s\n", out_path.c_str());

    RunManifest m;
    m.command = argv_full;
    m.config_hash = config_hash_of(json{{"image", image_path}, {"mask", mask_path}});
    m.outputs["overlay"] = out_path;
    finish_manifest(m, out);
    return 0;
}

int cmd_rerun(const std::string& manifest_path) {
    const RunManifest m = read_manifest(manifest_path);
    if (m.command.empty()) throw std::runtime_error("rerun: manifest has no command");
    std::vector<std::string> args(m.command.begin() + 1, m.command.end());
    return dispatch(args);
}

// ---- dispatcher ----

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"desk-scale instruction segmentation lab"};
    app.require_subcommand(1);

    std::vector<std::string> argv_full = {"pislab"};
    argv_full.insert(argv_full.end(), args.begin(), args.end());

    // datagen
    auto* dg = app.add_subcommand("datagen", "generate scenes, masks, and instruction records");
    uint64_t dg_seed = 0;
    int dg_count = 0, dg_objects = 4;
    std::string dg_out;
    bool dg_dup = false;
    dg->add_option("--seed", dg_seed, "generation seed");
    dg->add_option("--count", dg_count, "number of records")->required();
    dg->add_option("--out", dg_out, "output directory")->required();
    dg->add_option("--num-objects", dg_objects, "objects per scene (2..8)");
    dg->add_flag("--duplicate-concepts", dg_dup, "force two objects to share shape+color");

    // engine
    auto* en = app.add_subcommand("engine", "run the annotate-inspect loop over a dataset");
    std::string en_data, en_out, en_agents = "oracle", en_annotator, en_inspector;
    int en_rounds = 10;
    uint64_t en_seed = 0;
    en->add_option("--data", en_data, "datagen output directory")->required();
    en->add_option("--out", en_out, "output directory")->required();
    en->add_option("--agents", en_agents, "oracle | noisy:EPS | remote:URL (both roles)");
    en->add_option("--annotator", en_annotator, "override annotator agent");
    en->add_option("--inspector", en_inspector, "override inspector agent");
    en->add_option("--max-rounds", en_rounds, "annotation-inspection rounds per sample");
    en->add_option("--seed", en_seed, "engine seed");

    // import
    auto* im = app.add_subcommand("import", "apply human corrections to a queue file");
    std::string im_queue, im_corr, im_out;
    im->add_option("--queue", im_queue, "human_queue.jsonl from an engine run")->required();
    im->add_option("--corrections", im_corr, "corrections JSONL")->required();
    im->add_option("--out", im_out, "output directory")->required();

    // train
    auto* tr = app.add_subcommand("train", "run curriculum training");
    std::string tr_stage = "all", tr_data, tr_out, tr_ckpt, tr_steps;
    int tr_batch = 8;
    float tr_lr = 0.0f;  // 0 = per-stage defaults
    uint64_t tr_seed = 0;
    TrainFlags tr_flags;
    tr->add_option("--stage", tr_stage, "0|1|2|3|all");
    tr->add_option("--data", tr_data, "datagen output directory")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--ckpt-in", tr_ckpt, "checkpoint to resume from (single-stage runs)");
    tr->add_option("--steps", tr_steps, "steps (one value, or stage0,stage1,stage2,stage3)");
    tr->add_option("--batch-size", tr_batch, "batch size");
    tr->add_option("--lr", tr_lr, "learning rate override (default: per-stage)");
    tr->add_option("--seed", tr_seed, "training seed");
    tr->add_flag("--skip-stage1", tr_flags.skip1, "ablation: skip stage 1");
    tr->add_flag("--skip-stage2", tr_flags.skip2, "ablation: skip stage 2");
    tr->add_flag("--no-align", tr_flags.no_align, "ablation: drop the distribution alignment loss");
    tr->add_flag("--no-hard", tr_flags.no_hard, "ablation: drop the hard-region loss");
    tr->add_flag("--stage2-train-s", tr_flags.stage2_train_s, "keep training S-adapters during stage 2");
    tr->add_flag("--align-bidirectional", tr_flags.align_bidirectional,
                 "let the alignment loss also pull on the simple branch");

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint per instruction level");
    std::string ev_ckpt, ev_data, ev_out, ev_levels = "concept,simple,complex", ev_baseline;
    ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    ev->add_option("--data", ev_data, "dataset directory")->required();
    ev->add_option("--out", ev_out, "output directory")->required();
    ev->add_option("--levels", ev_levels, "comma-separated levels");
    ev->add_option("--baseline", ev_baseline, "add a baseline row (np-collapse)");

    // compare
    auto* cp = app.add_subcommand("compare", "grid of eval results across checkpoints");
    std::vector<std::string> cp_ckpts, cp_labels;
    std::string cp_data, cp_out, cp_levels = "simple,complex", cp_baseline;
    cp->add_option("--ckpts", cp_ckpts, "checkpoints")->required()->delimiter(',');
    cp->add_option("--labels", cp_labels, "labels for the checkpoints")->delimiter(',');
    cp->add_option("--data", cp_data, "dataset directory")->required();
    cp->add_option("--out", cp_out, "output directory")->required();
    cp->add_option("--levels", cp_levels, "comma-separated levels");
    cp->add_option("--baseline", cp_baseline, "add a baseline row (np-collapse)");

    // overlay
    auto* ov = app.add_subcommand("overlay", "blend a mask over an image");
    std::string ov_image, ov_mask, ov_out;
    ov->add_option("--image", ov_image, "PPM P6 image")->required();
    ov->add_option("--mask", ov_mask, "PGM P5 mask")->required();
    ov->add_option("--out", ov_out, "output directory")->required();

    // rerun
    auto* rr = app.add_subcommand("rerun", "re-execute a run from its manifest");
    std::string rr_manifest;
    rr->add_option("manifest", rr_manifest, "manifest.json path")->required();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    if (dg->parsed()) return cmd_datagen(argv_full, dg_seed, dg_count, dg_out, dg_objects, dg_dup);
    if (en->parsed())
        return cmd_engine(argv_full, en_data, en_out, en_agents, en_annotator, en_inspector, en_rounds, en_seed);
    if (im->parsed()) return cmd_import(argv_full, im_queue, im_corr, im_out);
    if (tr->parsed())
        return cmd_train(argv_full, tr_stage, tr_data, tr_out, tr_ckpt, tr_steps, tr_batch, tr_lr, tr_seed, tr_flags);
    if (ev->parsed()) return cmd_eval(argv_full, ev_ckpt, ev_data, ev_out, ev_levels, ev_baseline == "np-collapse");
    if (cp->parsed())
        return cmd_compare(argv_full, cp_ckpts, cp_labels, cp_data, cp_out, cp_levels, cp_baseline == "np-collapse");
    if (ov->parsed()) return cmd_overlay(argv_full, ov_image, ov_mask, ov_out);
    if (rr->parsed()) return cmd_rerun(rr_manifest);
    return kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    try {
        return dispatch(args);
    } catch (const AgentError& e) {
        std::fprintf(stderr, "agent error: %s\n", e.what());
        return kExitAgent;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
}
