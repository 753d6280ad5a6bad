#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fewshot/episodic.hpp"
#include "fewshot/uncertainty.hpp"

namespace fewshot {

struct Stage1Config {
    int epochs = 0;
    int batch_size = 64;
    double lr = 0.01;
    bool uncertainty = false;
};

struct Stage2Config {
    int epochs = 0;
    int episodes_per_epoch = 50;
    int way = 5;
    int shot = 1;
    int queries = 15;
    double lr = 0.01;
    bool uncertainty = false;
};

struct OptimizerConfig {
    double momentum = 0.9;
    double clip_norm = 0.0;  // 0 disables clipping
};

struct TrainConfig {
    int groups = 32;           // L, relation feature width
    int mc_samples = 10;       // T
    bool mc_shared_noise = false;
    double tau_init = 10.0;
    OptimizerConfig optimizer;
    Stage1Config stage1;
    Stage2Config stage2;
    EstimatorKind estimator = EstimatorKind::Graph;
    std::uint64_t seed = 0;
    // Diagnostic: with uncertainty on, bypass the estimator and pin sigma to
    // zero, which must collapse the Monte-Carlo loss onto the plain
    // cross-entropy path. Not reachable from run configs.
    bool force_zero_sigma = false;

    void validate(const EmbeddingDataset& base) const;
};

// Everything a run learns or carries across steps. The estimator is shared
// across the stage boundary: stage 2 fine-tunes whatever stage 1 left,
// never re-initializes. The adapter is the trainable stand-in for backbone
// fine-tuning: a DxD linear map on every embedding, identity at init so an
// untrained state reproduces the raw-embedding baseline exactly.
struct TrainState {
    int dim = 0;
    std::vector<int> base_labels;  // classifier row -> dataset label
    Matrix adapter;                // DxD
    Matrix classifier;             // |C_base| x D
    Matrix tau_rho;                // 1x1, tau = exp(rho)
    EstimatorSet estimator;
    std::map<std::string, Matrix> momentum;
    int stage1_done = 0;
    int stage2_done = 0;
    std::uint64_t seed = 0;

    double tau() const;
    int classifier_row(int label) const;  // DataError if label unknown
};

struct EpochLog {
    int stage = 0;
    int epoch = 0;
    double mean_loss = 0.0;
    double tau = 0.0;
    double mean_sigma = 0.0;  // 0 when the stage ran without uncertainty
};

struct StepStats {
    double loss = 0.0;
    double sigma_sum = 0.0;
    long sigma_count = 0;
};

TrainState init_state(const TrainConfig& cfg, const EmbeddingDataset& base);

// Loss and named gradients of one step, without the optimizer update.
// Ordering matches the parameter set the corresponding step optimizes.
// BN running statistics still advance (the forward runs in train mode).
struct GradientMap {
    StepStats stats;
    std::vector<std::pair<std::string, Matrix>> grads;
};
GradientMap stage1_gradients(TrainState& st, const TrainConfig& cfg, const EmbeddingDataset& base,
                             const std::vector<int>& batch, const Rng& noise_rng);
GradientMap stage2_gradients(TrainState& st, const TrainConfig& cfg, const Episode& ep,
                             const Rng& noise_rng);

// One optimizer update from a batch of base-split record indices (stage 1)
// or one training episode (stage 2). lr == 0 skips the update entirely so
// the step degenerates to a loss measurement.
StepStats stage1_step(TrainState& st, const TrainConfig& cfg, const EmbeddingDataset& base,
                      const std::vector<int>& batch, const Rng& noise_rng);
StepStats stage2_step(TrainState& st, const TrainConfig& cfg, const Episode& ep,
                      const Rng& noise_rng);

std::vector<EpochLog> run_stage1(TrainState& st, const TrainConfig& cfg,
                                 const EmbeddingDataset& base);
std::vector<EpochLog> run_stage2(TrainState& st, const TrainConfig& cfg,
                                 const EmbeddingDataset& base);

struct TrainResult {
    TrainState state;
    std::vector<EpochLog> log;
};

// Stage 1 then stage 2, honoring each stage's uncertainty flag; a pure
// function of (config, dataset) at the byte level of its outputs.
TrainResult run_training(const TrainConfig& cfg, const EmbeddingDataset& base);

// CSV lines `stage,epoch,mean_loss,tau,mean_sigma` with a header.
std::string format_training_log(const std::vector<EpochLog>& log);

}  // namespace fewshot
