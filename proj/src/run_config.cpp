#include "fewshot/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fewshot {

namespace {

using nlohmann::json;

constexpr std::uint64_t kTagDataset = 0x64617461ULL;

void check_keys(const json& obj, const std::string& where, const std::set<std::string>& allowed) {
    if (!obj.is_object()) throw ConfigError("config section '" + where + "' must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw ConfigError("unknown config key '" + where + "." + it.key() + "'");
        }
    }
}

template <typename T>
void read_to(const json& obj, const char* key, T& out) {
    if (obj.contains(key)) {
        try {
            out = obj.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError("bad value for config key '" + std::string(key) + "': " + e.what());
        }
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    check_keys(root, "", {"seed", "output_dir", "threads", "dataset", "estimator", "train", "eval"});

    RunConfig cfg;
    read_to(root, "seed", cfg.seed);
    read_to(root, "output_dir", cfg.output_dir);
    read_to(root, "threads", cfg.threads);
    if (cfg.threads < 1) throw ConfigError("threads must be >= 1");

    if (root.contains("dataset")) {
        const json& d = root.at("dataset");
        check_keys(d, "dataset",
                   {"kind", "base_path", "novel_path", "base_classes", "novel_classes", "dim",
                    "samples_per_class", "mean_scale", "noise_lo", "noise_hi"});
        read_to(d, "kind", cfg.dataset.kind);
        read_to(d, "base_path", cfg.dataset.base_path);
        read_to(d, "novel_path", cfg.dataset.novel_path);
        read_to(d, "base_classes", cfg.dataset.base_classes);
        read_to(d, "novel_classes", cfg.dataset.novel_classes);
        read_to(d, "dim", cfg.dataset.dim);
        read_to(d, "samples_per_class", cfg.dataset.samples_per_class);
        read_to(d, "mean_scale", cfg.dataset.mean_scale);
        read_to(d, "noise_lo", cfg.dataset.noise_lo);
        read_to(d, "noise_hi", cfg.dataset.noise_hi);
        if (cfg.dataset.kind != "synthetic" && cfg.dataset.kind != "files") {
            throw ConfigError("dataset.kind must be 'synthetic' or 'files', got '" +
                              cfg.dataset.kind + "'");
        }
        if (cfg.dataset.kind == "files" &&
            (cfg.dataset.base_path.empty() || cfg.dataset.novel_path.empty())) {
            throw ConfigError("dataset.kind 'files' needs base_path and novel_path");
        }
    }

    if (root.contains("estimator")) {
        cfg.train.estimator = estimator_kind_from_name(root.at("estimator").get<std::string>());
    }

    if (root.contains("train")) {
        const json& t = root.at("train");
        check_keys(t, "train",
                   {"groups", "mc_samples", "mc_shared_noise", "tau_init", "optimizer", "stage1",
                    "stage2"});
        read_to(t, "groups", cfg.train.groups);
        read_to(t, "mc_samples", cfg.train.mc_samples);
        read_to(t, "mc_shared_noise", cfg.train.mc_shared_noise);
        read_to(t, "tau_init", cfg.train.tau_init);
        if (t.contains("optimizer")) {
            const json& o = t.at("optimizer");
            check_keys(o, "train.optimizer", {"momentum", "clip_norm"});
            read_to(o, "momentum", cfg.train.optimizer.momentum);
            read_to(o, "clip_norm", cfg.train.optimizer.clip_norm);
        }
        if (t.contains("stage1")) {
            const json& s = t.at("stage1");
            check_keys(s, "train.stage1", {"epochs", "batch_size", "lr", "uncertainty"});
            read_to(s, "epochs", cfg.train.stage1.epochs);
            read_to(s, "batch_size", cfg.train.stage1.batch_size);
            read_to(s, "lr", cfg.train.stage1.lr);
            read_to(s, "uncertainty", cfg.train.stage1.uncertainty);
        }
        if (t.contains("stage2")) {
            const json& s = t.at("stage2");
            check_keys(s, "train.stage2",
                       {"epochs", "episodes_per_epoch", "way", "shot", "queries", "lr",
                        "uncertainty"});
            read_to(s, "epochs", cfg.train.stage2.epochs);
            read_to(s, "episodes_per_epoch", cfg.train.stage2.episodes_per_epoch);
            read_to(s, "way", cfg.train.stage2.way);
            read_to(s, "shot", cfg.train.stage2.shot);
            read_to(s, "queries", cfg.train.stage2.queries);
            read_to(s, "lr", cfg.train.stage2.lr);
            read_to(s, "uncertainty", cfg.train.stage2.uncertainty);
        }
    }

    if (root.contains("eval")) {
        const json& e = root.at("eval");
        check_keys(e, "eval", {"episodes", "way", "shot", "queries", "dump_per_episode"});
        read_to(e, "episodes", cfg.eval.episodes);
        read_to(e, "way", cfg.eval.way);
        read_to(e, "shot", cfg.eval.shot);
        read_to(e, "queries", cfg.eval.queries_per_class);
        read_to(e, "dump_per_episode", cfg.eval.dump_per_episode);
    }

    cfg.train.seed = cfg.seed;
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
    json root;
    root["seed"] = cfg.seed;
    root["output_dir"] = cfg.output_dir;
    root["threads"] = cfg.threads;
    json d;
    d["kind"] = cfg.dataset.kind;
    if (cfg.dataset.kind == "files") {
        d["base_path"] = cfg.dataset.base_path;
        d["novel_path"] = cfg.dataset.novel_path;
    } else {
        d["base_classes"] = cfg.dataset.base_classes;
        d["novel_classes"] = cfg.dataset.novel_classes;
        d["dim"] = cfg.dataset.dim;
        d["samples_per_class"] = cfg.dataset.samples_per_class;
        d["mean_scale"] = cfg.dataset.mean_scale;
        d["noise_lo"] = cfg.dataset.noise_lo;
        d["noise_hi"] = cfg.dataset.noise_hi;
    }
    root["dataset"] = d;
    root["estimator"] = estimator_kind_name(cfg.train.estimator);
    json t;
    t["groups"] = cfg.train.groups;
    t["mc_samples"] = cfg.train.mc_samples;
    t["mc_shared_noise"] = cfg.train.mc_shared_noise;
    t["tau_init"] = cfg.train.tau_init;
    t["optimizer"] = {{"momentum", cfg.train.optimizer.momentum},
                      {"clip_norm", cfg.train.optimizer.clip_norm}};
    t["stage1"] = {{"epochs", cfg.train.stage1.epochs},
                   {"batch_size", cfg.train.stage1.batch_size},
                   {"lr", cfg.train.stage1.lr},
                   {"uncertainty", cfg.train.stage1.uncertainty}};
    t["stage2"] = {{"epochs", cfg.train.stage2.epochs},
                   {"episodes_per_epoch", cfg.train.stage2.episodes_per_epoch},
                   {"way", cfg.train.stage2.way},
                   {"shot", cfg.train.stage2.shot},
                   {"queries", cfg.train.stage2.queries},
                   {"lr", cfg.train.stage2.lr},
                   {"uncertainty", cfg.train.stage2.uncertainty}};
    root["train"] = t;
    root["eval"] = {{"episodes", cfg.eval.episodes},
                    {"way", cfg.eval.way},
                    {"shot", cfg.eval.shot},
                    {"queries", cfg.eval.queries_per_class},
                    {"dump_per_episode", cfg.eval.dump_per_episode}};
    return root.dump(2) + "\n";
}

SynthSpec base_synth_spec(const RunConfig& cfg) {
    SynthSpec s;
    s.num_classes = cfg.dataset.base_classes;
    s.dim = cfg.dataset.dim;
    s.samples_per_class = cfg.dataset.samples_per_class;
    s.mean_scale = cfg.dataset.mean_scale;
    s.noise_lo = cfg.dataset.noise_lo;
    s.noise_hi = cfg.dataset.noise_hi;
    s.seed = Rng::mix(cfg.seed, kTagDataset);
    return s;
}

SynthSpec novel_synth_spec(const RunConfig& cfg) {
    SynthSpec s = base_synth_spec(cfg);
    s.num_classes = cfg.dataset.novel_classes;
    return s;
}

std::pair<EmbeddingDataset, EmbeddingDataset> load_datasets(const RunConfig& cfg) {
    if (cfg.dataset.kind == "files") {
        EmbeddingDataset base = load_embeddings(cfg.dataset.base_path, Split::Base);
        EmbeddingDataset novel = load_embeddings(cfg.dataset.novel_path, Split::Novel);
        if (base.dim() != novel.dim()) {
            throw DataError("base and novel dimensions differ: " + std::to_string(base.dim()) +
                            " vs " + std::to_string(novel.dim()));
        }
        ensure_disjoint_labels(base, novel);
        return {std::move(base), std::move(novel)};
    }
    EmbeddingDataset base = generate_synthetic(base_synth_spec(cfg), Split::Base, 0);
    EmbeddingDataset novel =
        generate_synthetic(novel_synth_spec(cfg), Split::Novel, cfg.dataset.base_classes);
    ensure_disjoint_labels(base, novel);
    return {std::move(base), std::move(novel)};
}

}  // namespace fewshot
