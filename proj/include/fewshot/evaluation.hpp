#pragma once

#include "fewshot/episodic.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {

struct EvalConfig {
    int episodes = 1000;
    int way = 5;
    int shot = 1;
    int queries_per_class = 15;
    std::uint64_t seed = 0;
    int threads = 1;
};

struct EvalReport {
    int episodes = 0;
    std::vector<double> per_episode;
    double mean = 0.0;
    double ci95 = 0.0;       // 1.96 * sample stddev / sqrt(E); 0 when E == 1
    bool ci_defined = false; // false only for the E == 1 degenerate
    std::uint64_t seed = 0;
};

// Fraction of queries whose nearest adapted prototype (by cosine) matches
// the true class. Ties break to the lowest class index. Inference reads the
// adapter only; the uncertainty estimator is never touched.
double eval_episode(const TrainState& st, const Episode& ep);

// Mean and normal-approximation 95% CI over a per-episode accuracy list.
EvalReport summarize_accuracies(std::vector<double> per_episode, std::uint64_t seed);

// The episodic protocol: cfg.episodes episodes sampled from the split,
// mean accuracy with 95% CI. Episodes are evaluated independently and
// reduced in index order, so the report is identical at any thread count.
EvalReport evaluate(const TrainState& st, const EmbeddingDataset& ds, const EvalConfig& cfg);

// Machine-readable one-liner `mean,ci95,episodes,seed`.
std::string format_eval_summary(const EvalReport& report);
// Human-readable block.
std::string format_eval_report(const EvalReport& report, const EvalConfig& cfg);

}  // namespace fewshot
