#pragma once

#include <string>
#include <utility>

#include "fewshot/evaluation.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {

struct DatasetConfig {
    std::string kind = "synthetic";  // synthetic | files
    std::string base_path;
    std::string novel_path;
    int base_classes = 20;
    int novel_classes = 10;
    int dim = 64;
    int samples_per_class = 50;
    double mean_scale = 1.0;
    double noise_lo = 0.05;
    double noise_hi = 0.5;
};

struct EvalSection {
    int episodes = 1000;
    int way = 5;
    int shot = 1;
    int queries_per_class = 15;
    bool dump_per_episode = false;
};

// One run = one config file; flags may override individual keys and the
// effective config is echoed into the output directory.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string output_dir;  // empty -> $FEWSHOT_OUT_DIR or "out"
    int threads = 1;
    DatasetConfig dataset;
    TrainConfig train;
    EvalSection eval;
};

// Strict: unknown keys anywhere raise ConfigError.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

// Synthetic specs derived from the run seed; base labels start at 0, novel
// labels start at base_classes, so the splits never overlap.
SynthSpec base_synth_spec(const RunConfig& cfg);
SynthSpec novel_synth_spec(const RunConfig& cfg);

// Materializes (base, novel) datasets from files or the synthetic generator;
// co-loaded splits are checked for disjoint labels.
std::pair<EmbeddingDataset, EmbeddingDataset> load_datasets(const RunConfig& cfg);

}  // namespace fewshot
