#pragma once

#include <functional>
#include <optional>
#include <string>

#include "fewshot/ops.hpp"
#include "fewshot/rng.hpp"

namespace fewshot {

inline constexpr double kLeakySlope = 0.01;

// Per-query similarity distribution over the N prototypes: mean logits and
// non-negative uncertainties, both 1xN.
struct SimilarityBelief {
    Matrix mu;
    Matrix sigma;
};

// Group-wise relation features: splits the query and each prototype into
// `groups` channel-contiguous groups and emits the per-group cosines as an
// N x groups matrix. Differentiable w.r.t. both inputs.
NodeId relation_features(Tape& t, NodeId query_row, NodeId protos, int groups);
Matrix relation_features_value(const Matrix& query_row, const Matrix& protos, int groups);

// ---------------------------------------------------------------------------
// Joint graph estimator. Edges are affinities of embedded node features,
// row-softmax-normalized; nodes are updated by a residual message-passing
// block; a BN + LeakyReLU head maps updated nodes to one value per node and
// softplus keeps it non-negative. All shapes depend only on `groups`, so one
// parameter set serves any node count.
struct GraphEstimator {
    int groups = 0;
    Matrix edge_src_w, edge_src_b;  // LxL, 1xL
    Matrix edge_dst_w, edge_dst_b;
    Matrix msg_w;                    // LxL, no bias
    Matrix upd1_w, upd1_gamma, upd1_beta;  // block 1: linear LxL + BN + LeakyReLU
    BnLayerState upd1_bn;
    Matrix upd2_w, upd2_gamma, upd2_beta;  // block 2
    BnLayerState upd2_bn;
    Matrix head1_w, head1_gamma, head1_beta;  // LxL + BN
    BnLayerState head1_bn;
    Matrix head2_w;  // Lx1, zero-initialized so training starts at uniform sigma = ln 2

    static GraphEstimator init(int groups, Rng& rng);
    void visit_learnable(const std::function<void(const std::string&, Matrix&)>& fn);
    void visit_state(const std::function<void(const std::string&, Matrix&)>& fn);
};

// Per-pair estimator (no cross-node interaction): shared L->L->1 map with a
// LeakyReLU in between, then softplus. Works for any node count including 1.
struct ConvEstimator {
    int groups = 0;
    Matrix pair1_w, pair1_b;  // LxL, 1xL
    Matrix pair2_w, pair2_b;  // Lx1, 1x1

    static ConvEstimator init(int groups, Rng& rng);
    void visit_learnable(const std::function<void(const std::string&, Matrix&)>& fn);
    void visit_state(const std::function<void(const std::string&, Matrix&)>&) {}
};

// Whole-task estimator with parameters tied to one node count: flattens the
// N x L relation matrix, one hidden layer of width L, N outputs. Deliberately
// not scalable across way counts.
struct FcEstimator {
    int groups = 0;
    int way = 0;
    Matrix hidden_w, hidden_b;  // (N*L)xL, 1xL
    Matrix out_w, out_b;        // LxN, 1xN

    static FcEstimator init(int groups, int way, Rng& rng);
    void visit_learnable(const std::function<void(const std::string&, Matrix&)>& fn);
    void visit_state(const std::function<void(const std::string&, Matrix&)>&) {}
};

enum class EstimatorKind { None, Graph, Conv, Fc };

std::string estimator_kind_name(EstimatorKind kind);
EstimatorKind estimator_kind_from_name(const std::string& name);

// Owns whichever estimator the run uses.
struct EstimatorSet {
    EstimatorKind kind = EstimatorKind::None;
    std::optional<GraphEstimator> graph;
    std::optional<ConvEstimator> conv;
    std::optional<FcEstimator> fc;

    static EstimatorSet make(EstimatorKind kind, int groups, int way_for_fc, Rng& rng);
    void visit_learnable(const std::function<void(const std::string&, Matrix&)>& fn);
    void visit_state(const std::function<void(const std::string&, Matrix&)>& fn);
};

// Estimator parameters bound as leaves on one tape. Building the sigma head
// repeatedly on the same tape reuses the same leaves, so gradients aggregate
// across queries. Train mode folds BN batch statistics into the owning
// estimator's running state.
class BoundEstimator {
public:
    BoundEstimator(Tape& t, EstimatorSet& params);

    EstimatorKind kind() const { return kind_; }
    // sigma over the N relation rows, as Nx1, non-negative by construction.
    NodeId sigma(Tape& t, NodeId relation, bool train);

    // Leaf ids in visit_learnable order, for gradient collection.
    const std::vector<std::pair<std::string, NodeId>>& leaves() const { return leaves_; }

private:
    EstimatorKind kind_;
    EstimatorSet* params_;
    std::vector<std::pair<std::string, NodeId>> leaves_;
    NodeId leaf_id(const std::string& name) const;
};

// sigma for one relation matrix without touching any tape state; used by
// diagnostics on a frozen estimator (eval-mode BN).
Matrix estimator_sigma_eval(const EstimatorSet& params, const Matrix& relation);

// Draws the frozen noise for T Monte-Carlo samples over N pairs. By default
// every (t, j) cell is an independent standard normal; shared mode uses one
// draw per t across all pairs.
Matrix draw_noise(int samples, int way, Rng& rng, bool shared);

// Plain reparameterized sampling: row t is mu + sigma .* eps_t.
Matrix sample_similarities(const SimilarityBelief& belief, int samples, Rng& rng,
                           bool shared = false);

// Tape version: mu is 1xN, sigma_col is Nx1, eps is a frozen TxN constant.
// Gradients flow to mu and sigma; eps is held fixed.
NodeId sampled_similarities(Tape& t, NodeId mu, NodeId sigma_col, const Matrix& eps);

// Monte-Carlo classification loss: per-sample softmax probability of the
// true class, averaged over rows in probability space, then -log.
NodeId mc_loss(Tape& t, NodeId samples, int label);

}  // namespace fewshot
