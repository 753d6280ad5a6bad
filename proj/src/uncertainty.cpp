#include "fewshot/uncertainty.hpp"

#include <cmath>

#include "fewshot/errors.hpp"

namespace fewshot {

namespace {

// Fan-in scaled uniform init for an (in x out) linear map.
Matrix linear_init(int in, int out, Rng& rng) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(in));
    return rng.uniform_matrix(in, out, -limit, limit);
}

void check_relation(const Matrix& v, int groups) {
    if (v.cols() != groups) {
        throw ShapeError("relation matrix is " + v.shape_str() + ", estimator expects " +
                         std::to_string(groups) + " columns");
    }
}

}  // namespace

NodeId relation_features(Tape& t, NodeId query_row, NodeId protos, int groups) {
    return group_cosine(t, query_row, protos, groups);
}

Matrix relation_features_value(const Matrix& query_row, const Matrix& protos, int groups) {
    Tape scratch;
    const NodeId q = scratch.constant(query_row);
    const NodeId p = scratch.constant(protos);
    return scratch.value(group_cosine(scratch, q, p, groups));
}

GraphEstimator GraphEstimator::init(int groups, Rng& rng) {
    GraphEstimator e;
    e.groups = groups;
    e.edge_src_w = linear_init(groups, groups, rng);
    e.edge_src_b = Matrix(1, groups);
    e.edge_dst_w = linear_init(groups, groups, rng);
    e.edge_dst_b = Matrix(1, groups);
    e.msg_w = linear_init(groups, groups, rng);
    e.upd1_w = linear_init(groups, groups, rng);
    e.upd1_gamma = Matrix(1, groups, 1.0);
    e.upd1_beta = Matrix(1, groups);
    e.upd1_bn = BnLayerState::init(groups);
    e.upd2_w = linear_init(groups, groups, rng);
    e.upd2_gamma = Matrix(1, groups, 1.0);
    e.upd2_beta = Matrix(1, groups);
    e.upd2_bn = BnLayerState::init(groups);
    e.head1_w = linear_init(groups, groups, rng);
    e.head1_gamma = Matrix(1, groups, 1.0);
    e.head1_beta = Matrix(1, groups);
    e.head1_bn = BnLayerState::init(groups);
    e.head2_w = Matrix(groups, 1);
    return e;
}

void GraphEstimator::visit_learnable(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("est.edge_src_w", edge_src_w);
    fn("est.edge_src_b", edge_src_b);
    fn("est.edge_dst_w", edge_dst_w);
    fn("est.edge_dst_b", edge_dst_b);
    fn("est.msg_w", msg_w);
    fn("est.upd1_w", upd1_w);
    fn("est.upd1_gamma", upd1_gamma);
    fn("est.upd1_beta", upd1_beta);
    fn("est.upd2_w", upd2_w);
    fn("est.upd2_gamma", upd2_gamma);
    fn("est.upd2_beta", upd2_beta);
    fn("est.head1_w", head1_w);
    fn("est.head1_gamma", head1_gamma);
    fn("est.head1_beta", head1_beta);
    fn("est.head2_w", head2_w);
}

void GraphEstimator::visit_state(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("est.upd1_bn.mean", upd1_bn.running_mean);
    fn("est.upd1_bn.var", upd1_bn.running_var);
    fn("est.upd2_bn.mean", upd2_bn.running_mean);
    fn("est.upd2_bn.var", upd2_bn.running_var);
    fn("est.head1_bn.mean", head1_bn.running_mean);
    fn("est.head1_bn.var", head1_bn.running_var);
}

ConvEstimator ConvEstimator::init(int groups, Rng& rng) {
    ConvEstimator e;
    e.groups = groups;
    e.pair1_w = linear_init(groups, groups, rng);
    e.pair1_b = Matrix(1, groups);
    e.pair2_w = Matrix(groups, 1);  // zero-init, same uniform-sigma start as graph
    e.pair2_b = Matrix(1, 1);
    return e;
}

void ConvEstimator::visit_learnable(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("est.pair1_w", pair1_w);
    fn("est.pair1_b", pair1_b);
    fn("est.pair2_w", pair2_w);
    fn("est.pair2_b", pair2_b);
}

FcEstimator FcEstimator::init(int groups, int way, Rng& rng) {
    FcEstimator e;
    e.groups = groups;
    e.way = way;
    e.hidden_w = linear_init(way * groups, groups, rng);
    e.hidden_b = Matrix(1, groups);
    e.out_w = Matrix(groups, way);  // zero-init
    e.out_b = Matrix(1, way);
    return e;
}

void FcEstimator::visit_learnable(const std::function<void(const std::string&, Matrix&)>& fn) {
    fn("est.hidden_w", hidden_w);
    fn("est.hidden_b", hidden_b);
    fn("est.out_w", out_w);
    fn("est.out_b", out_b);
}

std::string estimator_kind_name(EstimatorKind kind) {
    switch (kind) {
        case EstimatorKind::None: return "none";
        case EstimatorKind::Graph: return "graph";
        case EstimatorKind::Conv: return "conv";
        case EstimatorKind::Fc: return "fc";
    }
    throw ConfigError("unknown estimator kind");
}

EstimatorKind estimator_kind_from_name(const std::string& name) {
    if (name == "none") return EstimatorKind::None;
    if (name == "graph") return EstimatorKind::Graph;
    if (name == "conv") return EstimatorKind::Conv;
    if (name == "fc") return EstimatorKind::Fc;
    throw ConfigError("unknown estimator kind '" + name + "' (expected none|graph|conv|fc)");
}

EstimatorSet EstimatorSet::make(EstimatorKind kind, int groups, int way_for_fc, Rng& rng) {
    EstimatorSet s;
    s.kind = kind;
    switch (kind) {
        case EstimatorKind::None: break;
        case EstimatorKind::Graph: s.graph = GraphEstimator::init(groups, rng); break;
        case EstimatorKind::Conv: s.conv = ConvEstimator::init(groups, rng); break;
        case EstimatorKind::Fc: s.fc = FcEstimator::init(groups, way_for_fc, rng); break;
    }
    return s;
}

void EstimatorSet::visit_learnable(const std::function<void(const std::string&, Matrix&)>& fn) {
    switch (kind) {
        case EstimatorKind::None: break;
        case EstimatorKind::Graph: graph->visit_learnable(fn); break;
        case EstimatorKind::Conv: conv->visit_learnable(fn); break;
        case EstimatorKind::Fc: fc->visit_learnable(fn); break;
    }
}

void EstimatorSet::visit_state(const std::function<void(const std::string&, Matrix&)>& fn) {
    if (kind == EstimatorKind::Graph) graph->visit_state(fn);
}

BoundEstimator::BoundEstimator(Tape& t, EstimatorSet& params) : kind_(params.kind), params_(&params) {
    params.visit_learnable([&](const std::string& name, Matrix& m) {
        leaves_.emplace_back(name, t.leaf(m));
    });
}

NodeId BoundEstimator::leaf_id(const std::string& name) const {
    for (const auto& [n, id] : leaves_) {
        if (n == name) return id;
    }
    throw ConfigError("estimator leaf '" + name + "' not bound");
}

NodeId BoundEstimator::sigma(Tape& t, NodeId relation, bool train) {
    const Matrix& v = t.value(relation);
    switch (kind_) {
        case EstimatorKind::None:
            throw ConfigError("sigma requested but no estimator is configured");
        case EstimatorKind::Graph: {
            GraphEstimator& g = *params_->graph;
            check_relation(v, g.groups);
            if (train && v.rows() < 2) {
                throw NumericError("graph estimator train mode needs >= 2 nodes, got " +
                                   std::to_string(v.rows()));
            }
            const NodeId src = add_rowvec(t, matmul(t, relation, leaf_id("est.edge_src_w")),
                                          leaf_id("est.edge_src_b"));
            // The dst bias adds a per-row constant to the edge matrix, which
            // the row softmax cancels; its gradient is structurally zero.
            const NodeId dst = add_rowvec(t, matmul(t, relation, leaf_id("est.edge_dst_w")),
                                          leaf_id("est.edge_dst_b"));
            // Edge (j, j') is the affinity of the embedded node features;
            // row-softmax makes the incoming weights of each node sum to 1.
            const NodeId adj = row_softmax(t, matmul(t, src, transpose(t, dst)));
            const NodeId msg = matmul(t, matmul(t, adj, relation), leaf_id("est.msg_w"));
            NodeId h = msg;
            h = leaky_relu(t,
                           batch_norm(t, matmul(t, h, leaf_id("est.upd1_w")),
                                      leaf_id("est.upd1_gamma"), leaf_id("est.upd1_beta"),
                                      g.upd1_bn, train),
                           kLeakySlope);
            h = leaky_relu(t,
                           batch_norm(t, matmul(t, h, leaf_id("est.upd2_w")),
                                      leaf_id("est.upd2_gamma"), leaf_id("est.upd2_beta"),
                                      g.upd2_bn, train),
                           kLeakySlope);
            const NodeId updated = add(t, relation, h);
            const NodeId head = leaky_relu(t,
                                           batch_norm(t, matmul(t, updated, leaf_id("est.head1_w")),
                                                      leaf_id("est.head1_gamma"),
                                                      leaf_id("est.head1_beta"), g.head1_bn, train),
                                           kLeakySlope);
            return softplus(t, matmul(t, head, leaf_id("est.head2_w")));
        }
        case EstimatorKind::Conv: {
            const ConvEstimator& c = *params_->conv;
            check_relation(v, c.groups);
            const NodeId h = leaky_relu(t,
                                        add_rowvec(t, matmul(t, relation, leaf_id("est.pair1_w")),
                                                   leaf_id("est.pair1_b")),
                                        kLeakySlope);
            const NodeId raw =
                add_rowvec(t, matmul(t, h, leaf_id("est.pair2_w")), leaf_id("est.pair2_b"));
            return softplus(t, raw);
        }
        case EstimatorKind::Fc: {
            const FcEstimator& f = *params_->fc;
            check_relation(v, f.groups);
            if (v.rows() != f.way) {
                throw ShapeError("fc estimator was built for " + std::to_string(f.way) +
                                 " nodes, got " + std::to_string(v.rows()));
            }
            // Row-major flatten to 1 x (N*L).
            NodeId flat = gather_rows(t, relation, {0});
            for (int j = 1; j < f.way; ++j) {
                flat = concat_cols(t, flat, gather_rows(t, relation, {j}));
            }
            const NodeId h = leaky_relu(t,
                                        add_rowvec(t, matmul(t, flat, leaf_id("est.hidden_w")),
                                                   leaf_id("est.hidden_b")),
                                        kLeakySlope);
            const NodeId raw =
                add_rowvec(t, matmul(t, h, leaf_id("est.out_w")), leaf_id("est.out_b"));
            return softplus(t, transpose(t, raw));
        }
    }
    throw ConfigError("unreachable estimator kind");
}

Matrix estimator_sigma_eval(const EstimatorSet& params, const Matrix& relation) {
    EstimatorSet scratch_params = params;
    Tape scratch;
    BoundEstimator bound(scratch, scratch_params);
    const NodeId v = scratch.constant(relation);
    return scratch.value(bound.sigma(scratch, v, /*train=*/false));
}

Matrix draw_noise(int samples, int way, Rng& rng, bool shared) {
    if (samples < 1) throw ConfigError("Monte-Carlo sample count must be >= 1");
    Matrix eps(samples, way);
    for (int ti = 0; ti < samples; ++ti) {
        if (shared) {
            const double e = rng.normal();
            for (int j = 0; j < way; ++j) eps(ti, j) = e;
        } else {
            for (int j = 0; j < way; ++j) eps(ti, j) = rng.normal();
        }
    }
    return eps;
}

Matrix sample_similarities(const SimilarityBelief& belief, int samples, Rng& rng, bool shared) {
    if (!belief.mu.same_shape(belief.sigma)) {
        throw ShapeError("belief mu/sigma shape mismatch: " + belief.mu.shape_str() + " vs " +
                         belief.sigma.shape_str());
    }
    const int way = belief.mu.cols();
    const Matrix eps = draw_noise(samples, way, rng, shared);
    Matrix out(samples, way);
    for (int ti = 0; ti < samples; ++ti) {
        for (int j = 0; j < way; ++j) {
            out(ti, j) = belief.mu(0, j) + belief.sigma(0, j) * eps(ti, j);
        }
    }
    return out;
}

NodeId sampled_similarities(Tape& t, NodeId mu, NodeId sigma_col, const Matrix& eps) {
    const Matrix& m = t.value(mu);
    const Matrix& s = t.value(sigma_col);
    if (m.rows() != 1 || s.cols() != 1 || s.rows() != m.cols()) {
        throw ShapeError("sampled_similarities expects mu 1xN and sigma Nx1, got " +
                         m.shape_str() + " and " + s.shape_str());
    }
    if (eps.cols() != m.cols()) {
        throw ShapeError("noise matrix is " + eps.shape_str() + ", expected Tx" +
                         std::to_string(m.cols()));
    }
    const int samples = eps.rows();
    const NodeId noise = t.constant(eps);
    const NodeId mu_rows = broadcast_rows(t, mu, samples);
    const NodeId sigma_rows = broadcast_rows(t, transpose(t, sigma_col), samples);
    return add(t, mu_rows, mul(t, sigma_rows, noise));
}

NodeId mc_loss(Tape& t, NodeId samples, int label) {
    const Matrix& s = t.value(samples);
    if (label < 0 || label >= s.cols()) {
        throw DataError("mc_loss label " + std::to_string(label) + " out of range [0, " +
                        std::to_string(s.cols()) + ")");
    }
    const NodeId probs = row_softmax(t, samples);
    const NodeId true_class = select_col(t, probs, label);
    const NodeId avg = mean_all(t, true_class);
    return mul_scalar(t, log(t, avg), -1.0);
}

}  // namespace fewshot
