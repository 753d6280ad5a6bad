#include "fewshot/episodic.hpp"

#include "fewshot/errors.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

namespace {
constexpr std::uint64_t kTagEpisode = 0x657069736f6465ULL;
}

void validate_episode_config(const EmbeddingDataset& ds, const EpisodeConfig& cfg) {
    if (cfg.way < 1 || cfg.shot < 1 || cfg.queries_per_class < 1) {
        throw ConfigError("episode way/shot/queries must all be >= 1");
    }
    if (cfg.way > ds.num_classes()) {
        throw ConfigError("way " + std::to_string(cfg.way) + " exceeds class count " +
                          std::to_string(ds.num_classes()));
    }
    const int needed = cfg.shot + cfg.queries_per_class;
    for (int label : ds.labels()) {
        const int have = static_cast<int>(ds.records_of(label).size());
        if (have < needed) {
            throw ConfigError("class " + std::to_string(label) + " has " + std::to_string(have) +
                              " records, episode needs " + std::to_string(needed));
        }
    }
}

Episode sample_episode(const EmbeddingDataset& ds, const EpisodeConfig& cfg, int episode_index) {
    validate_episode_config(ds, cfg);
    Rng rng = Rng(cfg.seed).fork(kTagEpisode, static_cast<std::uint64_t>(episode_index));

    // Classes: partial Fisher-Yates over the sorted label list.
    std::vector<int> labels = ds.labels();
    for (int i = 0; i < cfg.way; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(labels.size() - i));
        std::swap(labels[i], labels[j]);
    }

    Episode ep;
    ep.way = cfg.way;
    ep.shot = cfg.shot;
    ep.queries_per_class = cfg.queries_per_class;
    ep.class_labels.assign(labels.begin(), labels.begin() + cfg.way);

    const int dim = ds.dim();
    ep.support = Matrix(cfg.way * cfg.shot, dim);
    ep.query = Matrix(cfg.way * cfg.queries_per_class, dim);

    for (int j = 0; j < cfg.way; ++j) {
        std::vector<int> pool = ds.records_of(ep.class_labels[j]);
        const int take = cfg.shot + cfg.queries_per_class;
        for (int i = 0; i < take; ++i) {
            const int r = i + static_cast<int>(rng.uniform_int(pool.size() - i));
            std::swap(pool[i], pool[r]);
        }
        for (int i = 0; i < cfg.shot; ++i) {
            const int row = j * cfg.shot + i;
            const EmbeddingRecord& rec = ds.records()[pool[i]];
            for (int d = 0; d < dim; ++d) ep.support(row, d) = rec.vec[d];
            ep.support_index.push_back(pool[i]);
        }
        for (int m = 0; m < cfg.queries_per_class; ++m) {
            const int row = j * cfg.queries_per_class + m;
            const EmbeddingRecord& rec = ds.records()[pool[cfg.shot + m]];
            for (int d = 0; d < dim; ++d) ep.query(row, d) = rec.vec[d];
            ep.query_index.push_back(pool[cfg.shot + m]);
            ep.query_class.push_back(j);
        }
    }
    return ep;
}

}  // namespace fewshot
