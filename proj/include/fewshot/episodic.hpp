#pragma once

#include <cstdint>
#include <vector>

#include "fewshot/embeddings.hpp"

namespace fewshot {

// One N-way K-shot task. Support rows are grouped by episode class:
// rows [j*shot, (j+1)*shot) belong to class position j. Query rows carry
// their class position in query_class.
struct Episode {
    int way = 0;
    int shot = 0;
    int queries_per_class = 0;
    std::vector<int> class_labels;   // episode class position -> dataset label
    Matrix support;                  // (way*shot) x D
    Matrix query;                    // (way*queries_per_class) x D
    std::vector<int> query_class;    // in [0, way)
    std::vector<int> support_index;  // dataset record indices
    std::vector<int> query_index;
};

struct EpisodeConfig {
    int way = 5;
    int shot = 1;
    int queries_per_class = 15;
    int episodes = 1000;
    std::uint64_t seed = 0;
};

// Throws ConfigError naming the first offending class when some class has
// fewer than shot+queries_per_class records, or when way exceeds the class
// count.
void validate_episode_config(const EmbeddingDataset& ds, const EpisodeConfig& cfg);

// Deterministic function of (cfg.seed, episode_index): classes uniformly
// without replacement, then shot+queries_per_class records per class without
// replacement, first `shot` to the support set. Episodes for different
// indices are independent streams.
Episode sample_episode(const EmbeddingDataset& ds, const EpisodeConfig& cfg, int episode_index);

}  // namespace fewshot
