#include "fewshot/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "fewshot/checkpoint.hpp"
#include "fewshot/pipeline_check.hpp"
#include "fewshot/run_config.hpp"

namespace fewshot {

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kTagEvalEpisodes = 0x6576616cULL;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
    std::string estimator;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required) {
    auto* conf = cmd->add_option("--config", flags.config_path, "JSON run configuration");
    if (config_required) conf->required();
    cmd->add_option("--out", flags.out_dir, "output directory (overrides config)");
    cmd->add_option("--seed", flags.seed, "seed override")->each([&](const std::string&) {
        flags.seed_set = true;
    });
    cmd->add_option("--threads", flags.threads, "worker threads (overrides config)");
}

RunConfig effective_config(const CommonFlags& flags) {
    RunConfig cfg = flags.config_path.empty() ? RunConfig{} : load_run_config(flags.config_path);
    if (flags.seed_set) {
        cfg.seed = flags.seed;
        cfg.train.seed = flags.seed;
    }
    if (!flags.out_dir.empty()) cfg.output_dir = flags.out_dir;
    if (cfg.output_dir.empty()) {
        const char* env = std::getenv("FEWSHOT_OUT_DIR");
        cfg.output_dir = env && *env ? env : "out";
    }
    if (flags.threads > 0) cfg.threads = flags.threads;
    if (!flags.estimator.empty()) cfg.train.estimator = estimator_kind_from_name(flags.estimator);
    return cfg;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write file: " + path);
    out << content;
    if (!out) throw DataError("write failed: " + path);
}

std::uint64_t file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file for digest: " + path);
    std::uint64_t hash = 0xcbf29ce484222325ULL;  // FNV-1a
    char c;
    while (in.get(c)) {
        hash ^= static_cast<unsigned char>(c);
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

void echo_config(const RunConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    write_file(cfg.output_dir + "/effective_config.json", run_config_to_json(cfg));
}

EvalConfig eval_config_from(const RunConfig& cfg) {
    EvalConfig ec;
    ec.episodes = cfg.eval.episodes;
    ec.way = cfg.eval.way;
    ec.shot = cfg.eval.shot;
    ec.queries_per_class = cfg.eval.queries_per_class;
    ec.seed = Rng::mix(cfg.seed, kTagEvalEpisodes);
    ec.threads = cfg.threads;
    return ec;
}

void write_eval_outputs(const RunConfig& cfg, const EvalReport& report, const EvalConfig& ec,
                        const std::string& prefix) {
    write_file(prefix + "eval_report.txt", format_eval_report(report, ec));
    write_file(prefix + "eval_summary.csv", "mean,ci95,episodes,seed\n" + format_eval_summary(report));
    if (cfg.eval.dump_per_episode) {
        std::ostringstream out;
        out << "episode,accuracy\n";
        char buf[64];
        for (std::size_t i = 0; i < report.per_episode.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, report.per_episode[i]);
            out << buf;
        }
        write_file(prefix + "episode_accuracies.csv", out.str());
    }
}

int run_gen(const RunConfig& cfg) {
    if (cfg.dataset.kind != "synthetic") {
        throw ConfigError("gen needs dataset.kind 'synthetic'");
    }
    echo_config(cfg);
    const EmbeddingDataset base = generate_synthetic(base_synth_spec(cfg), Split::Base, 0);
    const EmbeddingDataset novel =
        generate_synthetic(novel_synth_spec(cfg), Split::Novel, cfg.dataset.base_classes);
    ensure_disjoint_labels(base, novel);
    const std::string base_path = cfg.output_dir + "/base.emb";
    const std::string novel_path = cfg.output_dir + "/novel.emb";
    save_embeddings(base, base_path);
    save_embeddings(novel, novel_path);
    std::printf("%s records=%zu digest=%016llx\n", base_path.c_str(), base.records().size(),
                static_cast<unsigned long long>(file_digest(base_path)));
    std::printf("%s records=%zu digest=%016llx\n", novel_path.c_str(), novel.records().size(),
                static_cast<unsigned long long>(file_digest(novel_path)));
    return 0;
}

int run_train(const RunConfig& cfg) {
    echo_config(cfg);
    auto [base, novel] = load_datasets(cfg);
    (void)novel;
    const TrainResult result = run_training(cfg.train, base);
    save_checkpoint(result.state, cfg.output_dir + "/checkpoint.txt");
    write_file(cfg.output_dir + "/train_log.csv", format_training_log(result.log));
    std::printf("trained: stage1 %d epochs, stage2 %d epochs, tau=%.4f\n", result.state.stage1_done,
                result.state.stage2_done, result.state.tau());
    std::printf("checkpoint: %s\n", (cfg.output_dir + "/checkpoint.txt").c_str());
    return 0;
}

int run_eval(const RunConfig& cfg, const std::string& checkpoint_path) {
    echo_config(cfg);
    const TrainState state = load_checkpoint(checkpoint_path);
    auto [base, novel] = load_datasets(cfg);
    (void)base;
    const EvalConfig ec = eval_config_from(cfg);
    const EvalReport report = evaluate(state, novel, ec);
    write_eval_outputs(cfg, report, ec, cfg.output_dir + "/");
    std::fputs(format_eval_report(report, ec).c_str(), stdout);
    return 0;
}

struct AblationRow {
    std::string section;
    std::string cell;
    EstimatorKind estimator;
    bool stage1_u = false;
    bool stage2_u = false;
    double mean = 0.0;
    double ci95 = 0.0;
};

AblationRow run_cell(const RunConfig& cfg, const EmbeddingDataset& base,
                     const EmbeddingDataset& novel, const std::string& section,
                     const std::string& cell, EstimatorKind kind, bool s1u, bool s2u) {
    RunConfig cell_cfg = cfg;
    cell_cfg.train.estimator = kind;
    cell_cfg.train.stage1.uncertainty = s1u;
    cell_cfg.train.stage2.uncertainty = s2u;

    const TrainResult result = run_training(cell_cfg.train, base);
    const std::string cell_dir = cfg.output_dir + "/cells/" + cell;
    fs::create_directories(cell_dir);
    save_checkpoint(result.state, cell_dir + "/checkpoint.txt");
    write_file(cell_dir + "/train_log.csv", format_training_log(result.log));

    const EvalReport report = evaluate(result.state, novel, eval_config_from(cell_cfg));
    AblationRow row{section, cell, kind, s1u, s2u, report.mean, report.ci95};
    std::printf("  %-10s %-12s %-5s s1=%-3s s2=%-3s acc=%.2f%% +- %.2f%%\n", section.c_str(),
                cell.c_str(), estimator_kind_name(kind).c_str(), s1u ? "on" : "off",
                s2u ? "on" : "off", row.mean * 100.0, row.ci95 * 100.0);
    return row;
}

int run_ablate(const RunConfig& cfg) {
    if (cfg.train.estimator == EstimatorKind::None) {
        throw ConfigError("ablate needs an estimator kind (graph|conv|fc), got 'none'");
    }
    echo_config(cfg);
    auto [base, novel] = load_datasets(cfg);
    const EstimatorKind kind = cfg.train.estimator;

    std::vector<AblationRow> rows;
    std::printf("stage-uncertainty grid (%s estimator):\n", estimator_kind_name(kind).c_str());
    rows.push_back(run_cell(cfg, base, novel, "grid", "model3_base", kind, false, false));
    rows.push_back(run_cell(cfg, base, novel, "grid", "model4_s1", kind, true, false));
    rows.push_back(run_cell(cfg, base, novel, "grid", "model5_s2", kind, false, true));
    rows.push_back(run_cell(cfg, base, novel, "grid", "model6_both", kind, true, true));

    std::printf("estimator sweep:\n");
    // Shared-seed duplicates of grid cells are reported, not re-run.
    AblationRow meta_base = rows[0];
    meta_base.section = "estimator";
    meta_base.cell = "meta_base";
    rows.push_back(meta_base);
    std::printf("  %-10s %-12s (grid model3_base reused)\n", "estimator", "meta_base");
    if (kind == EstimatorKind::Graph) {
        AblationRow graph_row = rows[3];
        graph_row.section = "estimator";
        graph_row.cell = "graph";
        rows.push_back(graph_row);
        std::printf("  %-10s %-12s (grid model6_both reused)\n", "estimator", "graph");
    } else {
        rows.push_back(run_cell(cfg, base, novel, "estimator", "graph", EstimatorKind::Graph, true,
                                true));
    }
    rows.push_back(run_cell(cfg, base, novel, "estimator", "conv", EstimatorKind::Conv, true, true));
    // FC parameters are tied to the stage-2 way count, so it only trains in
    // stage 2.
    rows.push_back(run_cell(cfg, base, novel, "estimator", "fc", EstimatorKind::Fc, false, true));

    std::ostringstream csv;
    csv << "section,cell,estimator,stage1_uncertainty,stage2_uncertainty,mean,ci95\n";
    char buf[256];
    for (const AblationRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%s,%d,%d,%.17g,%.17g\n", r.section.c_str(),
                      r.cell.c_str(), estimator_kind_name(r.estimator).c_str(), r.stage1_u ? 1 : 0,
                      r.stage2_u ? 1 : 0, r.mean, r.ci95);
        csv << buf;
    }
    write_file(cfg.output_dir + "/ablation.csv", csv.str());
    std::printf("ablation table: %s\n", (cfg.output_dir + "/ablation.csv").c_str());
    return 0;
}

int run_gradcheck(EstimatorKind kind, int dim, int way, int groups, int samples,
                  std::uint64_t seed) {
    PipelineInputs inputs = PipelineInputs::random(kind, dim, way, groups, samples, seed);
    const GradCheckReport report = pipeline_gradcheck(inputs);
    std::printf("gradcheck: estimator=%s dim=%d way=%d groups=%d samples=%d\n",
                estimator_kind_name(kind).c_str(), dim, way, groups, samples);
    for (const GradCheckEntry& e : report.entries) {
        std::printf("  %-18s max_rel_err=%.3e %s\n", e.group.c_str(), e.rel_err,
                    e.pass ? "ok" : "FAIL");
    }
    if (!report.all_pass()) {
        std::printf("gradcheck FAILED (tolerance %.0e)\n", kGradCheckTolerance);
        return 4;
    }
    std::printf("gradcheck passed (tolerance %.0e)\n", kGradCheckTolerance);
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"uncertainty-aware few-shot classification over feature embeddings"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, eval_flags, ablate_flags, grad_flags;
    std::string checkpoint_path;
    int grad_dim = 16, grad_way = 4, grad_groups = 8, grad_samples = 3;
    int eval_episodes = 0;

    CLI::App* gen = app.add_subcommand("gen", "write synthetic base/novel embedding files");
    add_common(gen, gen_flags, true);

    CLI::App* train = app.add_subcommand("train", "two-stage training to a checkpoint");
    add_common(train, train_flags, true);
    train->add_option("--estimator", train_flags.estimator,
                      "estimator kind override (none|graph|conv|fc)");

    CLI::App* eval = app.add_subcommand("eval", "episodic evaluation of a checkpoint");
    add_common(eval, eval_flags, true);
    eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval->add_option("--episodes", eval_episodes, "episode count override");

    CLI::App* ablate =
        app.add_subcommand("ablate", "stage-uncertainty grid and estimator sweep");
    add_common(ablate, ablate_flags, true);

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    add_common(gradcheck, grad_flags, false);
    gradcheck->add_option("--estimator", grad_flags.estimator, "estimator kind (none|graph|conv|fc)");
    gradcheck->add_option("--dim", grad_dim, "embedding dimension");
    gradcheck->add_option("--way", grad_way, "prototype count");
    gradcheck->add_option("--groups", grad_groups, "relation feature width");
    gradcheck->add_option("--samples", grad_samples, "Monte-Carlo sample count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) return run_gen(effective_config(gen_flags));
        if (train->parsed()) return run_train(effective_config(train_flags));
        if (eval->parsed()) {
            RunConfig cfg = effective_config(eval_flags);
            if (eval_episodes > 0) cfg.eval.episodes = eval_episodes;
            return run_eval(cfg, checkpoint_path);
        }
        if (ablate->parsed()) return run_ablate(effective_config(ablate_flags));
        if (gradcheck->parsed()) {
            EstimatorKind kind = EstimatorKind::Graph;
            std::uint64_t seed = 12345;
            int samples = grad_samples;
            int groups = grad_groups;
            if (!grad_flags.config_path.empty()) {
                const RunConfig cfg = effective_config(grad_flags);
                kind = cfg.train.estimator;
                seed = cfg.seed;
                samples = cfg.train.mc_samples;
            }
            if (!grad_flags.estimator.empty()) kind = estimator_kind_from_name(grad_flags.estimator);
            if (grad_flags.seed_set) seed = grad_flags.seed;
            return run_gradcheck(kind, grad_dim, grad_way, groups, samples, seed);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}

}  // namespace fewshot
