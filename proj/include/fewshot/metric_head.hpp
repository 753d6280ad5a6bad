#pragma once

#include <cmath>

#include "fewshot/episodic.hpp"
#include "fewshot/ops.hpp"

namespace fewshot {

// Class prototypes: per-class arithmetic mean of the support embeddings.
Matrix compute_prototypes(const Episode& ep);

// Temperature-scaled cosine logits of one query row against prototype rows:
// logit_j = tau * cos(query, proto_j). Zero-norm inputs are rejected.
Matrix cosine_logits(const Matrix& query_row, const Matrix& protos, double tau);

// Stable -log softmax(logits)[label].
double ce_loss_value(const Matrix& logits, int label);

// Tape counterparts, differentiable w.r.t. query, prototypes and tau.
// The support node must be grouped by class like Episode::support.
NodeId prototypes_node(Tape& t, NodeId support, int way, int shot);
NodeId cosine_logits_node(Tape& t, NodeId query_row, NodeId protos, NodeId tau);

// tau is optimized as exp(rho) so positivity survives any gradient step.
inline double tau_from_rho(double rho) { return std::exp(rho); }

}  // namespace fewshot
