#pragma once

#include "fewshot/gradcheck.hpp"
#include "fewshot/uncertainty.hpp"

namespace fewshot {

// Inputs of the full classification-loss pipeline: adapted query and
// prototypes, temperature, estimator parameters and a frozen noise matrix.
struct PipelineInputs {
    int groups = 0;
    int label = 0;
    Matrix query;    // 1 x D
    Matrix protos;   // N x D
    Matrix adapter;  // D x D
    Matrix tau_rho;  // 1 x 1
    EstimatorSet estimator;
    Matrix noise;    // T x N, frozen

    static PipelineInputs random(EstimatorKind kind, int dim, int way, int groups,
                                 int mc_samples, std::uint64_t seed);
};

// The Monte-Carlo classification loss (or plain cross-entropy when no
// estimator is attached) as a value; rebuilds the forward pass from the
// current input matrices. BN runs in train mode on a scratch copy.
double pipeline_loss_value(const PipelineInputs& in);

// Autodiff gradients of the same loss vs central finite differences, one
// entry per parameter group. The noise matrix is held fixed throughout.
GradCheckReport pipeline_gradcheck(PipelineInputs& in);

}  // namespace fewshot
