#pragma once

#include <vector>

#include "fewshot/tape.hpp"

namespace fewshot {

using NodeId = Tape::NodeId;

// Elementwise and scalar arithmetic.
NodeId add(Tape& t, NodeId a, NodeId b);
NodeId sub(Tape& t, NodeId a, NodeId b);
NodeId mul(Tape& t, NodeId a, NodeId b);
NodeId add_scalar(Tape& t, NodeId a, double c);
NodeId mul_scalar(Tape& t, NodeId a, double c);
// Multiplies a matrix by a 1x1 scalar node; differentiable in both.
NodeId scale_by(Tape& t, NodeId a, NodeId s);
// Adds a 1xC row vector to every row of an nxC matrix.
NodeId add_rowvec(Tape& t, NodeId a, NodeId b);

NodeId matmul(Tape& t, NodeId a, NodeId b);
NodeId transpose(Tape& t, NodeId a);

NodeId exp(Tape& t, NodeId a);
NodeId log(Tape& t, NodeId a);  // requires strictly positive entries
NodeId softplus(Tape& t, NodeId a);
// x >= 0 -> x, else slope*x. The subgradient at exactly 0 is fixed to the
// negative-side slope.
NodeId leaky_relu(Tape& t, NodeId a, double slope);
// Max-subtracted softmax per row; rows sum to 1.
NodeId row_softmax(Tape& t, NodeId a);

NodeId sum_all(Tape& t, NodeId a);   // 1x1
NodeId mean_all(Tape& t, NodeId a);  // 1x1
NodeId mean_rows(Tape& t, NodeId a); // nxC -> 1xC column means

NodeId broadcast_rows(Tape& t, NodeId a, int n);  // 1xC -> nxC
NodeId select_col(Tape& t, NodeId a, int col);    // mxn -> mx1
NodeId gather_rows(Tape& t, NodeId a, const std::vector<int>& idx);
NodeId stack_rows(Tape& t, const std::vector<NodeId>& parts);  // k of 1xC -> kxC
NodeId concat_cols(Tape& t, NodeId a, NodeId b);
NodeId slice_cols(Tape& t, NodeId a, int c0, int c1);  // half-open [c0, c1)

NodeId l2_normalize_rows(Tape& t, NodeId a);
// Cosine similarity between every row of a (mxD) and every row of b (nxD),
// giving mxn. Fused primitive with its own backward; must agree with
// matmul(l2_normalize_rows(a), transpose(l2_normalize_rows(b))).
NodeId cosine_rows(Tape& t, NodeId a, NodeId b);
// Group-wise cosine: splits q (1xD) and each row of p (NxD) into L
// channel-contiguous groups and emits the per-group cosines as NxL.
NodeId group_cosine(Tape& t, NodeId q, NodeId p, int groups);

// Running statistics of one batch-norm layer (not learnable).
struct BnLayerState {
    Matrix running_mean;  // 1xC
    Matrix running_var;   // 1xC, biased batch variance
    static BnLayerState init(int cols) {
        BnLayerState s;
        s.running_mean = Matrix(1, cols);
        s.running_var = Matrix(1, cols, 1.0);
        return s;
    }
};

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;

// Batch normalization over the row (node/batch) dimension, per column.
// Train mode needs >= 2 rows, normalizes with the batch's biased variance
// and folds it into `state` with momentum kBnMomentum; eval mode normalizes
// with the running statistics and leaves `state` untouched.
NodeId batch_norm(Tape& t, NodeId x, NodeId gamma, NodeId beta, BnLayerState& state, bool train);

// Numerically stable -log softmax(logits)[label] for a 1xN logit row.
NodeId ce_loss(Tape& t, NodeId logits, int label);

}  // namespace fewshot
