#include "fewshot/pipeline_check.hpp"

#include "fewshot/metric_head.hpp"

namespace fewshot {

namespace {

NodeId build_loss(Tape& t, NodeId query, NodeId protos, NodeId adapter, NodeId rho,
                  BoundEstimator* bound, const Matrix& noise, int groups, int label) {
    const NodeId q = matmul(t, query, adapter);
    const NodeId p = matmul(t, protos, adapter);
    const NodeId tau = exp(t, rho);
    const NodeId mu = cosine_logits_node(t, q, p, tau);
    if (bound == nullptr) return ce_loss(t, mu, label);
    const NodeId relation = relation_features(t, q, p, groups);
    const NodeId sig = bound->sigma(t, relation, /*train=*/true);
    const NodeId samples = sampled_similarities(t, mu, sig, noise);
    return mc_loss(t, samples, label);
}

}  // namespace

PipelineInputs PipelineInputs::random(EstimatorKind kind, int dim, int way, int groups,
                                      int mc_samples, std::uint64_t seed) {
    if (dim % groups != 0) {
        throw ConfigError("groups " + std::to_string(groups) + " must divide dim " +
                          std::to_string(dim));
    }
    Rng rng(seed);
    PipelineInputs in;
    in.groups = groups;
    in.label = static_cast<int>(rng.uniform_int(way));
    in.query = rng.uniform_matrix(1, dim, -2.0, 2.0);
    in.protos = rng.uniform_matrix(way, dim, -2.0, 2.0);
    // A well-conditioned perturbation of the identity keeps the cosines and
    // relation features generic without risking near-zero group norms.
    in.adapter = Matrix::identity(dim);
    for (double& v : in.adapter.raw()) v += rng.uniform_range(-0.2, 0.2);
    in.tau_rho = Matrix(1, 1, std::log(5.0));
    in.estimator = EstimatorSet::make(kind, groups, way, rng);
    // Fan-in init leaves the sigma head at zero; randomize every tensor so
    // each group carries a non-trivial gradient to check.
    in.estimator.visit_learnable([&](const std::string& name, Matrix& m) {
        m = rng.uniform_matrix(m.rows(), m.cols(), -0.7, 0.7);
        if (name.find("gamma") != std::string::npos) {
            for (double& v : m.raw()) v += 1.0;
        }
    });
    in.noise = rng.normal_matrix(mc_samples, way);
    return in;
}

double pipeline_loss_value(const PipelineInputs& in) {
    Tape t;
    EstimatorSet est_copy = in.estimator;  // train-mode BN mutates running stats
    const NodeId query = t.constant(in.query);
    const NodeId protos = t.constant(in.protos);
    const NodeId adapter = t.constant(in.adapter);
    const NodeId rho = t.constant(in.tau_rho);
    std::optional<BoundEstimator> bound;
    if (in.estimator.kind != EstimatorKind::None) bound.emplace(t, est_copy);
    const NodeId loss = build_loss(t, query, protos, adapter, rho, bound ? &*bound : nullptr,
                                   in.noise, in.groups, in.label);
    return t.value(loss)(0, 0);
}

GradCheckReport pipeline_gradcheck(PipelineInputs& in) {
    // Analytic gradients in one reverse sweep.
    Tape t;
    EstimatorSet est_copy = in.estimator;
    const NodeId query = t.leaf(in.query);
    const NodeId protos = t.leaf(in.protos);
    const NodeId adapter = t.leaf(in.adapter);
    const NodeId rho = t.leaf(in.tau_rho);
    std::optional<BoundEstimator> bound;
    if (in.estimator.kind != EstimatorKind::None) bound.emplace(t, est_copy);
    const NodeId loss = build_loss(t, query, protos, adapter, rho, bound ? &*bound : nullptr,
                                   in.noise, in.groups, in.label);
    t.backward(loss);

    const auto value_fn = [&in]() { return pipeline_loss_value(in); };

    GradCheckReport report;
    auto check = [&](const std::string& group, const Matrix& analytic, Matrix& param) {
        const Matrix numeric = finite_difference_gradient(value_fn, param);
        GradCheckEntry entry;
        entry.group = group;
        entry.rel_err = relative_gradient_error(analytic, numeric);
        entry.pass = entry.rel_err < kGradCheckTolerance;
        report.entries.push_back(entry);
    };

    check("query", t.grad(query), in.query);
    check("prototypes", t.grad(protos), in.protos);
    check("adapter", t.grad(adapter), in.adapter);
    check("tau_rho", t.grad(rho), in.tau_rho);
    if (bound) {
        for (const auto& [name, leaf] : bound->leaves()) {
            Matrix* param = nullptr;
            in.estimator.visit_learnable([&](const std::string& n, Matrix& m) {
                if (n == name) param = &m;
            });
            check(name, t.grad(leaf), *param);
        }
    }
    return report;
}

}  // namespace fewshot
