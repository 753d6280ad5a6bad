#include "doctest.h"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fewshot/cli.hpp"
#include "fewshot/run_config.hpp"

using namespace fewshot;

namespace {

namespace fs = std::filesystem;

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "fewshot");
    std::vector<const char*> argv;
    for (const std::string& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    out << content;
}

std::string tiny_config(const std::string& out_dir, const std::string& noise_lo = "0.05",
                        const std::string& noise_hi = "0.5") {
    return std::string("{\n") +
           "  \"seed\": 3,\n"
           "  \"output_dir\": \"" + out_dir + "\",\n"
           "  \"dataset\": {\"kind\": \"synthetic\", \"base_classes\": 6, \"novel_classes\": 4,\n"
           "    \"dim\": 8, \"samples_per_class\": 18, \"mean_scale\": 1.0,\n"
           "    \"noise_lo\": " + noise_lo + ", \"noise_hi\": " + noise_hi + "},\n"
           "  \"estimator\": \"graph\",\n"
           "  \"train\": {\"groups\": 4, \"mc_samples\": 3,\n"
           "    \"stage1\": {\"epochs\": 1, \"batch_size\": 16, \"lr\": 0.05, \"uncertainty\": true},\n"
           "    \"stage2\": {\"epochs\": 1, \"episodes_per_epoch\": 4, \"way\": 3, \"shot\": 1,\n"
           "      \"queries\": 3, \"lr\": 0.05, \"uncertainty\": true}},\n"
           "  \"eval\": {\"episodes\": 10, \"way\": 3, \"shot\": 1, \"queries\": 3}\n"
           "}\n";
}

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run_cli({"--help"}) == 0);
    for (const std::string sub : {"gen", "train", "eval", "ablate", "gradcheck"}) {
        CHECK(run_cli({sub, "--help"}) == 0);
    }
    CHECK(run_cli({"definitely-not-a-subcommand"}) == 1);
    CHECK(run_cli({"train", "--no-such-flag"}) == 1);
    CHECK(run_cli({"train"}) == 1);  // missing required --config
}

TEST_CASE("config schema errors exit with code 2") {
    const std::string dir = fresh_dir("cli_schema");
    const std::string cfg_path = dir + "/cfg.json";

    write_text(cfg_path, "{\"seed\": 1, \"no_such_key\": true}");
    CHECK(run_cli({"gen", "--config", cfg_path}) == 2);

    write_text(cfg_path, "{\"train\": {\"stage1\": {\"learning_rate\": 0.1}}}");
    CHECK(run_cli({"train", "--config", cfg_path}) == 2);

    write_text(cfg_path, "this is not json");
    CHECK(run_cli({"train", "--config", cfg_path}) == 2);

    CHECK(run_cli({"train", "--config", dir + "/missing.json"}) == 2);
}

TEST_CASE("gen writes deterministic disjoint splits") {
    const std::string dir1 = fresh_dir("cli_gen1");
    const std::string dir2 = fresh_dir("cli_gen2");
    const std::string cfg_path = dir1 + "/cfg.json";
    write_text(cfg_path, tiny_config(dir1));

    CHECK(run_cli({"gen", "--config", cfg_path}) == 0);
    CHECK(run_cli({"gen", "--config", cfg_path, "--out", dir2}) == 0);
    CHECK(slurp(dir1 + "/base.emb") == slurp(dir2 + "/base.emb"));
    CHECK(slurp(dir1 + "/novel.emb") == slurp(dir2 + "/novel.emb"));

    SUBCASE("reload equals the in-memory dataset") {
        const RunConfig cfg = load_run_config(cfg_path);
        const EmbeddingDataset reloaded = load_embeddings(dir1 + "/base.emb", Split::Base);
        const EmbeddingDataset generated = generate_synthetic(base_synth_spec(cfg), Split::Base, 0);
        REQUIRE(reloaded.records().size() == generated.records().size());
        for (std::size_t i = 0; i < reloaded.records().size(); ++i) {
            CHECK(reloaded.records()[i].id == generated.records()[i].id);
            CHECK(reloaded.records()[i].label == generated.records()[i].label);
            CHECK(reloaded.records()[i].vec == generated.records()[i].vec);
        }
        const EmbeddingDataset novel = load_embeddings(dir1 + "/novel.emb", Split::Novel);
        CHECK_NOTHROW(ensure_disjoint_labels(reloaded, novel));
    }
}

TEST_CASE("gen with zero noise duplicates rows within each class") {
    const std::string dir = fresh_dir("cli_gen_zero");
    const std::string cfg_path = dir + "/cfg.json";
    write_text(cfg_path, tiny_config(dir, "0.0", "0.0"));
    CHECK(run_cli({"gen", "--config", cfg_path}) == 0);
    const EmbeddingDataset ds = load_embeddings(dir + "/base.emb", Split::Base);
    for (int label : ds.labels()) {
        const auto& idx = ds.records_of(label);
        for (std::size_t i = 1; i < idx.size(); ++i) {
            CHECK(ds.records()[idx[i]].vec == ds.records()[idx[0]].vec);
        }
    }
}

TEST_CASE("train writes a checkpoint, a log and the effective config") {
    const std::string dir = fresh_dir("cli_train");
    const std::string cfg_path = dir + "/cfg.json";
    write_text(cfg_path, tiny_config(dir));

    CHECK(run_cli({"train", "--config", cfg_path}) == 0);
    CHECK(fs::exists(dir + "/checkpoint.txt"));
    CHECK(fs::exists(dir + "/effective_config.json"));
    const std::string log = slurp(dir + "/train_log.csv");
    CHECK(log.find("stage,epoch,mean_loss,tau,mean_sigma") == 0);

    SUBCASE("rerun reproduces the checkpoint byte for byte") {
        const std::string first = slurp(dir + "/checkpoint.txt");
        const std::string dir2 = fresh_dir("cli_train2");
        CHECK(run_cli({"train", "--config", cfg_path, "--out", dir2}) == 0);
        CHECK(slurp(dir2 + "/checkpoint.txt") == first);
    }
    SUBCASE("flag overrides win over the config") {
        const std::string dir3 = fresh_dir("cli_train3");
        CHECK(run_cli({"train", "--config", cfg_path, "--out", dir3, "--seed", "9"}) == 0);
        const std::string echoed = slurp(dir3 + "/effective_config.json");
        CHECK(echoed.find("\"seed\": 9") != std::string::npos);
        CHECK(slurp(dir3 + "/checkpoint.txt") != slurp(dir + "/checkpoint.txt"));
    }
}

TEST_CASE("train with zero epochs emits the initialized checkpoint") {
    const std::string dir = fresh_dir("cli_train_zero");
    const std::string cfg_path = dir + "/cfg.json";
    std::string cfg = tiny_config(dir);
    cfg.replace(cfg.find("\"epochs\": 1, \"batch_size\""), 12, "\"epochs\": 0,");
    cfg.replace(cfg.find("\"epochs\": 1, \"episodes_per_epoch\""), 12, "\"epochs\": 0,");
    write_text(cfg_path, cfg);
    CHECK(run_cli({"train", "--config", cfg_path}) == 0);
    const std::string ckpt = slurp(dir + "/checkpoint.txt");
    CHECK(ckpt.find("stage1_done 0") != std::string::npos);
    CHECK(ckpt.find("stage2_done 0") != std::string::npos);
}

TEST_CASE("eval consumes a checkpoint and writes reports") {
    const std::string dir = fresh_dir("cli_eval");
    const std::string cfg_path = dir + "/cfg.json";
    write_text(cfg_path, tiny_config(dir));
    REQUIRE(run_cli({"train", "--config", cfg_path}) == 0);

    CHECK(run_cli({"eval", "--config", cfg_path, "--checkpoint", dir + "/checkpoint.txt"}) == 0);
    CHECK(fs::exists(dir + "/eval_report.txt"));
    const std::string summary = slurp(dir + "/eval_summary.csv");
    CHECK(summary.find("mean,ci95,episodes,seed") == 0);

    SUBCASE("missing checkpoint is a data error") {
        CHECK(run_cli({"eval", "--config", cfg_path, "--checkpoint", dir + "/nope.txt"}) == 3);
    }
    SUBCASE("episode override reaches the report") {
        CHECK(run_cli({"eval", "--config", cfg_path, "--checkpoint", dir + "/checkpoint.txt",
                       "--episodes", "1"}) == 0);
        CHECK(slurp(dir + "/eval_summary.csv").find(",1,") != std::string::npos);
    }
}

TEST_CASE("ablate emits the grid and the estimator sweep") {
    const std::string dir = fresh_dir("cli_ablate");
    const std::string cfg_path = dir + "/cfg.json";
    write_text(cfg_path, tiny_config(dir));
    CHECK(run_cli({"ablate", "--config", cfg_path}) == 0);

    const std::string csv = slurp(dir + "/ablation.csv");
    CHECK(csv.find("section,cell,estimator,stage1_uncertainty,stage2_uncertainty,mean,ci95") == 0);
    for (const std::string cell : {"model3_base", "model4_s1", "model5_s2", "model6_both",
                                   "meta_base", "graph", "conv", "fc"}) {
        CAPTURE(cell);
        CHECK(csv.find("," + cell + ",") != std::string::npos);
    }

    // Shared-seed duplicate cells carry identical numbers.
    const auto row_of = [&](const std::string& section, const std::string& cell) {
        const std::string prefix = section + "," + cell + ",";
        const auto pos = csv.find("\n" + prefix);
        REQUIRE(pos != std::string::npos);
        const auto start = pos + 1 + prefix.size();
        const auto end = csv.find('\n', start);
        return csv.substr(start, end - start);  // estimator,s1,s2,mean,ci95
    };
    CHECK(row_of("grid", "model3_base") == row_of("estimator", "meta_base"));
    CHECK(row_of("grid", "model6_both") == row_of("estimator", "graph"));
}

TEST_CASE("gradcheck subcommand") {
    CHECK(run_cli({"gradcheck"}) == 0);
    CHECK(run_cli({"gradcheck", "--estimator", "conv"}) == 0);
    CHECK(run_cli({"gradcheck", "--estimator", "fc"}) == 0);
    // Estimator 'none' leaves only the bare classification path: the
    // zero-parameter head must still pass.
    CHECK(run_cli({"gradcheck", "--estimator", "none"}) == 0);
    CHECK(run_cli({"gradcheck", "--estimator", "bogus"}) == 2);
}

TEST_CASE("output directory falls back to the environment default") {
    const std::string dir = fresh_dir("cli_envout");
    const std::string cfg_path = dir + "/cfg.json";
    // Config without output_dir; the env var must supply it.
    std::string cfg = tiny_config(dir);
    const auto pos = cfg.find("  \"output_dir\": \"" + dir + "\",\n");
    REQUIRE(pos != std::string::npos);
    cfg.erase(pos, std::string("  \"output_dir\": \"" + dir + "\",\n").size());
    write_text(cfg_path, cfg);

    const std::string env_dir = dir + "/from_env";
    setenv("FEWSHOT_OUT_DIR", env_dir.c_str(), 1);
    CHECK(run_cli({"gen", "--config", cfg_path}) == 0);
    unsetenv("FEWSHOT_OUT_DIR");
    CHECK(fs::exists(env_dir + "/base.emb"));
}

TEST_CASE("per-episode accuracies can be dumped for significance testing") {
    const std::string dir = fresh_dir("cli_dump");
    const std::string cfg_path = dir + "/cfg.json";
    std::string cfg = tiny_config(dir);
    const std::string eval_tail = "\"queries\": 3}";
    cfg.replace(cfg.find(eval_tail), eval_tail.size(),
                "\"queries\": 3, \"dump_per_episode\": true}");
    write_text(cfg_path, cfg);
    REQUIRE(run_cli({"train", "--config", cfg_path}) == 0);
    CHECK(run_cli({"eval", "--config", cfg_path, "--checkpoint", dir + "/checkpoint.txt"}) == 0);
    const std::string dump = slurp(dir + "/episode_accuracies.csv");
    CHECK(dump.find("episode,accuracy") == 0);
    // header + 10 episodes
    CHECK(std::count(dump.begin(), dump.end(), '\n') == 11);
}

TEST_CASE("files dataset mode surfaces data errors") {
    const std::string dir = fresh_dir("cli_files");
    const std::string cfg_path = dir + "/cfg.json";
    write_text(cfg_path,
               "{\"seed\": 1, \"output_dir\": \"" + dir + "\",\n"
               " \"dataset\": {\"kind\": \"files\", \"base_path\": \"" + dir + "/missing.emb\",\n"
               "   \"novel_path\": \"" + dir + "/missing2.emb\"},\n"
               " \"train\": {\"groups\": 4, \"stage1\": {\"epochs\": 0}, \"stage2\": {\"epochs\": 0}}}");
    CHECK(run_cli({"train", "--config", cfg_path}) == 3);
}
