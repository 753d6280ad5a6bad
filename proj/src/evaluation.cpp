#include "fewshot/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include "fewshot/metric_head.hpp"

namespace fewshot {

double eval_episode(const TrainState& st, const Episode& ep) {
    if (ep.support.cols() != st.dim) {
        throw DataError("episode dimension " + std::to_string(ep.support.cols()) +
                        " does not match model dimension " + std::to_string(st.dim));
    }
    Episode adapted = ep;
    adapted.support = matmul(ep.support, st.adapter);
    adapted.query = matmul(ep.query, st.adapter);
    const Matrix protos = compute_prototypes(adapted);

    int correct = 0;
    const int num_queries = adapted.query.rows();
    for (int i = 0; i < num_queries; ++i) {
        int best = 0;
        double best_cos = cosine_row(adapted.query, i, protos, 0);
        for (int j = 1; j < ep.way; ++j) {
            const double c = cosine_row(adapted.query, i, protos, j);
            if (c > best_cos) {
                best_cos = c;
                best = j;
            }
        }
        if (best == ep.query_class[i]) ++correct;
    }
    return static_cast<double>(correct) / num_queries;
}

EvalReport summarize_accuracies(std::vector<double> per_episode, std::uint64_t seed) {
    if (per_episode.empty()) throw ConfigError("evaluation needs at least one episode");
    EvalReport report;
    report.episodes = static_cast<int>(per_episode.size());
    report.seed = seed;
    double sum = 0.0;
    for (double a : per_episode) sum += a;
    report.mean = sum / report.episodes;
    if (report.episodes > 1) {
        double sq = 0.0;
        for (double a : per_episode) {
            const double d = a - report.mean;
            sq += d * d;
        }
        const double stddev = std::sqrt(sq / (report.episodes - 1));
        report.ci95 = 1.96 * stddev / std::sqrt(static_cast<double>(report.episodes));
        report.ci_defined = true;
    } else {
        report.ci95 = 0.0;
        report.ci_defined = false;
    }
    report.per_episode = std::move(per_episode);
    return report;
}

EvalReport evaluate(const TrainState& st, const EmbeddingDataset& ds, const EvalConfig& cfg) {
    if (cfg.episodes < 1) throw ConfigError("evaluation needs at least one episode");
    EpisodeConfig ecfg;
    ecfg.way = cfg.way;
    ecfg.shot = cfg.shot;
    ecfg.queries_per_class = cfg.queries_per_class;
    ecfg.episodes = cfg.episodes;
    ecfg.seed = cfg.seed;
    validate_episode_config(ds, ecfg);

    std::vector<double> per_episode(cfg.episodes, 0.0);
    const int threads = std::max(1, cfg.threads);
    auto worker = [&](int first, int past) {
        for (int e = first; e < past; ++e) {
            per_episode[e] = eval_episode(st, sample_episode(ds, ecfg, e));
        }
    };
    if (threads == 1) {
        worker(0, cfg.episodes);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (cfg.episodes + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const int first = t * chunk;
            const int past = std::min(cfg.episodes, first + chunk);
            if (first >= past) break;
            pool.emplace_back(worker, first, past);
        }
        for (std::thread& th : pool) th.join();
    }
    return summarize_accuracies(std::move(per_episode), cfg.seed);
}

std::string format_eval_summary(const EvalReport& report) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%d,%llu\n", report.mean, report.ci95,
                  report.episodes, static_cast<unsigned long long>(report.seed));
    return buf;
}

std::string format_eval_report(const EvalReport& report, const EvalConfig& cfg) {
    std::ostringstream out;
    char buf[200];
    out << "episodic evaluation\n";
    std::snprintf(buf, sizeof(buf), "  protocol: %d-way %d-shot, %d queries/class, %d episodes\n",
                  cfg.way, cfg.shot, cfg.queries_per_class, report.episodes);
    out << buf;
    std::snprintf(buf, sizeof(buf), "  seed: %llu\n", static_cast<unsigned long long>(report.seed));
    out << buf;
    std::snprintf(buf, sizeof(buf), "  accuracy: %.2f%% +- %.2f%%\n", report.mean * 100.0,
                  report.ci95 * 100.0);
    out << buf;
    if (!report.ci_defined) {
        out << "  note: confidence interval undefined for a single episode, reported as 0\n";
    }
    return out.str();
}

}  // namespace fewshot
