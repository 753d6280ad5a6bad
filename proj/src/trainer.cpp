#include "fewshot/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fewshot/metric_head.hpp"

namespace fewshot {

namespace {

constexpr std::uint64_t kTagClassifierInit = 0x636c7366ULL;
constexpr std::uint64_t kTagEstimatorInit = 0x65737469ULL;
constexpr std::uint64_t kTagStage1Shuffle = 0x73317368ULL;
constexpr std::uint64_t kTagStage1Noise = 0x73316e7aULL;
constexpr std::uint64_t kTagStage2Episodes = 0x73326570ULL;
constexpr std::uint64_t kTagStage2Noise = 0x73326e7aULL;

// SGD with momentum over the given parameter set, applied in vector order.
// Optional global-norm clipping guards against Monte-Carlo loss spikes.
void apply_sgd(TrainState& st, const std::vector<std::pair<std::string, Matrix*>>& params,
               const std::vector<std::pair<std::string, Matrix>>& grads, double lr,
               const OptimizerConfig& opt) {
    if (lr == 0.0) return;
    if (params.size() != grads.size()) {
        throw ConfigError("optimizer parameter/gradient count mismatch");
    }
    double scale = 1.0;
    if (opt.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& [name, g] : grads) {
            for (double v : g.raw()) sq += v * v;
        }
        const double norm = std::sqrt(sq);
        if (norm > opt.clip_norm) scale = opt.clip_norm / norm;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& [name, param] = params[i];
        const Matrix& g = grads[i].second;
        if (grads[i].first != name) {
            throw ConfigError("optimizer gradient order mismatch at '" + name + "'");
        }
        auto [it, inserted] = st.momentum.try_emplace(name, Matrix(g.rows(), g.cols()));
        Matrix& vel = it->second;
        for (std::size_t k = 0; k < g.size(); ++k) {
            vel.raw()[k] = opt.momentum * vel.raw()[k] + scale * g.raw()[k];
            param->raw()[k] -= lr * vel.raw()[k];
        }
    }
}

// Builds the per-query loss node: cross-entropy over temperature-scaled
// cosine logits, or the Monte-Carlo loss over reparameterized similarity
// samples when an estimator is attached.
NodeId query_loss(Tape& tape, const TrainConfig& cfg, NodeId query_row, NodeId protos,
                  NodeId tau, int label, BoundEstimator* bound, const Rng& noise_rng,
                  StepStats& stats) {
    const NodeId mu = cosine_logits_node(tape, query_row, protos, tau);
    if (bound == nullptr) {
        return ce_loss(tape, mu, label);
    }
    const int way = tape.value(protos).rows();
    NodeId sig;
    if (cfg.force_zero_sigma) {
        sig = tape.constant(Matrix(way, 1));
    } else {
        const NodeId relation = relation_features(tape, query_row, protos, cfg.groups);
        sig = bound->sigma(tape, relation, /*train=*/true);
    }
    const Matrix& sig_v = tape.value(sig);
    for (double v : sig_v.raw()) stats.sigma_sum += v;
    stats.sigma_count += static_cast<long>(sig_v.size());
    Rng eps_rng = noise_rng;
    const Matrix eps = draw_noise(cfg.mc_samples, way, eps_rng, cfg.mc_shared_noise);
    const NodeId samples = sampled_similarities(tape, mu, sig, eps);
    return mc_loss(tape, samples, label);
}

}  // namespace

void TrainConfig::validate(const EmbeddingDataset& base) const {
    if (groups < 1) throw ConfigError("groups must be >= 1");
    if (base.dim() % groups != 0) {
        throw ConfigError("groups " + std::to_string(groups) + " must divide embedding dim " +
                          std::to_string(base.dim()));
    }
    if (mc_samples < 1) throw ConfigError("mc_samples must be >= 1");
    if (tau_init <= 0.0) throw ConfigError("tau_init must be positive");
    if (stage1.epochs < 0 || stage2.epochs < 0) throw ConfigError("epoch counts must be >= 0");
    if (stage1.batch_size < 1) throw ConfigError("stage1 batch_size must be >= 1");
    if (stage1.lr < 0.0 || stage2.lr < 0.0) throw ConfigError("learning rates must be >= 0");
    if (stage2.episodes_per_epoch < 1) throw ConfigError("stage2 episodes_per_epoch must be >= 1");
    if (optimizer.momentum < 0.0 || optimizer.momentum >= 1.0) {
        throw ConfigError("optimizer momentum must be in [0, 1)");
    }
    if (optimizer.clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
    if (stage2.epochs > 0) {
        EpisodeConfig ecfg;
        ecfg.way = stage2.way;
        ecfg.shot = stage2.shot;
        ecfg.queries_per_class = stage2.queries;
        validate_episode_config(base, ecfg);
    }
    if (estimator == EstimatorKind::Fc && stage1.uncertainty) {
        throw ConfigError(
            "fc estimator parameters are tied to the stage-2 way count and cannot run over all "
            "base classes; disable stage1 uncertainty for fc");
    }
    if (estimator == EstimatorKind::None && (stage1.uncertainty || stage2.uncertainty)) {
        throw ConfigError("uncertainty requested but estimator kind is 'none'");
    }
    if (estimator == EstimatorKind::Graph && stage1.uncertainty && base.num_classes() < 2) {
        throw ConfigError("graph estimator in stage 1 needs >= 2 base classes");
    }
}

double TrainState::tau() const { return std::exp(tau_rho(0, 0)); }

int TrainState::classifier_row(int label) const {
    for (std::size_t i = 0; i < base_labels.size(); ++i) {
        if (base_labels[i] == label) return static_cast<int>(i);
    }
    throw DataError("label " + std::to_string(label) + " is not a base class");
}

TrainState init_state(const TrainConfig& cfg, const EmbeddingDataset& base) {
    cfg.validate(base);
    TrainState st;
    st.dim = base.dim();
    st.base_labels = base.labels();
    st.adapter = Matrix::identity(base.dim());
    Rng cls_rng = Rng(cfg.seed).fork(kTagClassifierInit);
    const double limit = 1.0 / std::sqrt(static_cast<double>(base.dim()));
    st.classifier = cls_rng.uniform_matrix(base.num_classes(), base.dim(), -limit, limit);
    st.tau_rho = Matrix(1, 1, std::log(cfg.tau_init));
    Rng est_rng = Rng(cfg.seed).fork(kTagEstimatorInit);
    st.estimator = EstimatorSet::make(cfg.estimator, cfg.groups, cfg.stage2.way, est_rng);
    st.seed = cfg.seed;
    return st;
}

GradientMap stage1_gradients(TrainState& st, const TrainConfig& cfg, const EmbeddingDataset& base,
                             const std::vector<int>& batch, const Rng& noise_rng) {
    if (batch.empty()) throw DataError("stage1 batch is empty");
    GradientMap out;
    Tape tape;
    const NodeId adapter = tape.leaf(st.adapter);
    const NodeId classifier = tape.leaf(st.classifier);
    const NodeId rho = tape.leaf(st.tau_rho);
    const NodeId tau = exp(tape, rho);
    std::optional<BoundEstimator> bound;
    if (cfg.stage1.uncertainty) bound.emplace(tape, st.estimator);

    Matrix inputs(static_cast<int>(batch.size()), base.dim());
    std::vector<int> labels(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const EmbeddingRecord& rec = base.records().at(batch[i]);
        for (int d = 0; d < base.dim(); ++d) inputs(static_cast<int>(i), d) = rec.vec[d];
        labels[i] = st.classifier_row(rec.label);
    }
    const NodeId adapted = matmul(tape, tape.constant(std::move(inputs)), adapter);

    NodeId total = -1;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const NodeId row = gather_rows(tape, adapted, {static_cast<int>(i)});
        const NodeId loss =
            query_loss(tape, cfg, row, classifier, tau, labels[i],
                       bound ? &*bound : nullptr, noise_rng.fork(i), out.stats);
        total = (total < 0) ? loss : add(tape, total, loss);
    }
    const NodeId mean_loss = mul_scalar(tape, total, 1.0 / static_cast<double>(batch.size()));
    out.stats.loss = tape.value(mean_loss)(0, 0);
    tape.backward(mean_loss);

    out.grads.emplace_back("adapter", tape.grad(adapter));
    out.grads.emplace_back("classifier", tape.grad(classifier));
    out.grads.emplace_back("tau_rho", tape.grad(rho));
    if (bound) {
        for (const auto& [name, leaf] : bound->leaves()) out.grads.emplace_back(name, tape.grad(leaf));
    }
    return out;
}

GradientMap stage2_gradients(TrainState& st, const TrainConfig& cfg, const Episode& ep,
                             const Rng& noise_rng) {
    GradientMap out;
    Tape tape;
    const NodeId adapter = tape.leaf(st.adapter);
    const NodeId rho = tape.leaf(st.tau_rho);
    const NodeId tau = exp(tape, rho);
    std::optional<BoundEstimator> bound;
    if (cfg.stage2.uncertainty) bound.emplace(tape, st.estimator);

    const NodeId support = matmul(tape, tape.constant(ep.support), adapter);
    const NodeId queries = matmul(tape, tape.constant(ep.query), adapter);
    const NodeId protos = prototypes_node(tape, support, ep.way, ep.shot);

    const int num_queries = ep.query.rows();
    NodeId total = -1;
    for (int i = 0; i < num_queries; ++i) {
        const NodeId row = gather_rows(tape, queries, {i});
        const NodeId loss =
            query_loss(tape, cfg, row, protos, tau, ep.query_class[i],
                       bound ? &*bound : nullptr, noise_rng.fork(static_cast<std::uint64_t>(i)),
                       out.stats);
        total = (total < 0) ? loss : add(tape, total, loss);
    }
    const NodeId mean_loss = mul_scalar(tape, total, 1.0 / static_cast<double>(num_queries));
    out.stats.loss = tape.value(mean_loss)(0, 0);
    tape.backward(mean_loss);

    out.grads.emplace_back("adapter", tape.grad(adapter));
    out.grads.emplace_back("tau_rho", tape.grad(rho));
    if (bound) {
        for (const auto& [name, leaf] : bound->leaves()) out.grads.emplace_back(name, tape.grad(leaf));
    }
    return out;
}

StepStats stage1_step(TrainState& st, const TrainConfig& cfg, const EmbeddingDataset& base,
                      const std::vector<int>& batch, const Rng& noise_rng) {
    const GradientMap g = stage1_gradients(st, cfg, base, batch, noise_rng);
    std::vector<std::pair<std::string, Matrix*>> params;
    params.emplace_back("adapter", &st.adapter);
    params.emplace_back("classifier", &st.classifier);
    params.emplace_back("tau_rho", &st.tau_rho);
    if (cfg.stage1.uncertainty) {
        st.estimator.visit_learnable(
            [&](const std::string& name, Matrix& m) { params.emplace_back(name, &m); });
    }
    apply_sgd(st, params, g.grads, cfg.stage1.lr, cfg.optimizer);
    return g.stats;
}

StepStats stage2_step(TrainState& st, const TrainConfig& cfg, const Episode& ep,
                      const Rng& noise_rng) {
    const GradientMap g = stage2_gradients(st, cfg, ep, noise_rng);
    std::vector<std::pair<std::string, Matrix*>> params;
    params.emplace_back("adapter", &st.adapter);
    params.emplace_back("tau_rho", &st.tau_rho);
    if (cfg.stage2.uncertainty) {
        st.estimator.visit_learnable(
            [&](const std::string& name, Matrix& m) { params.emplace_back(name, &m); });
    }
    apply_sgd(st, params, g.grads, cfg.stage2.lr, cfg.optimizer);
    return g.stats;
}

std::vector<EpochLog> run_stage1(TrainState& st, const TrainConfig& cfg,
                                 const EmbeddingDataset& base) {
    std::vector<EpochLog> log;
    const Rng root(cfg.seed);
    for (int epoch = 0; epoch < cfg.stage1.epochs; ++epoch) {
        std::vector<int> order(base.records().size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng shuffle_rng = root.fork(kTagStage1Shuffle, static_cast<std::uint64_t>(epoch));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        double sigma_sum = 0.0;
        long sigma_count = 0;
        int steps = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.stage1.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.stage1.batch_size);
            std::vector<int> batch(order.begin() + start, order.begin() + end);
            const Rng noise =
                root.fork(kTagStage1Noise, static_cast<std::uint64_t>(epoch)).fork(steps);
            const StepStats s = stage1_step(st, cfg, base, batch, noise);
            loss_sum += s.loss;
            sigma_sum += s.sigma_sum;
            sigma_count += s.sigma_count;
            ++steps;
        }
        ++st.stage1_done;
        log.push_back({1, epoch, loss_sum / steps, st.tau(),
                       sigma_count > 0 ? sigma_sum / sigma_count : 0.0});
    }
    return log;
}

std::vector<EpochLog> run_stage2(TrainState& st, const TrainConfig& cfg,
                                 const EmbeddingDataset& base) {
    std::vector<EpochLog> log;
    const Rng root(cfg.seed);
    EpisodeConfig ecfg;
    ecfg.way = cfg.stage2.way;
    ecfg.shot = cfg.stage2.shot;
    ecfg.queries_per_class = cfg.stage2.queries;
    ecfg.seed = Rng::mix(cfg.seed, kTagStage2Episodes);
    for (int epoch = 0; epoch < cfg.stage2.epochs; ++epoch) {
        double loss_sum = 0.0;
        double sigma_sum = 0.0;
        long sigma_count = 0;
        for (int i = 0; i < cfg.stage2.episodes_per_epoch; ++i) {
            const int index = epoch * cfg.stage2.episodes_per_epoch + i;
            const Episode ep = sample_episode(base, ecfg, index);
            const Rng noise = root.fork(kTagStage2Noise, static_cast<std::uint64_t>(index));
            const StepStats s = stage2_step(st, cfg, ep, noise);
            loss_sum += s.loss;
            sigma_sum += s.sigma_sum;
            sigma_count += s.sigma_count;
        }
        ++st.stage2_done;
        log.push_back({2, epoch, loss_sum / cfg.stage2.episodes_per_epoch, st.tau(),
                       sigma_count > 0 ? sigma_sum / sigma_count : 0.0});
    }
    return log;
}

TrainResult run_training(const TrainConfig& cfg, const EmbeddingDataset& base) {
    TrainResult result{init_state(cfg, base), {}};
    std::vector<EpochLog> s1 = run_stage1(result.state, cfg, base);
    result.log.insert(result.log.end(), s1.begin(), s1.end());
    std::vector<EpochLog> s2 = run_stage2(result.state, cfg, base);
    result.log.insert(result.log.end(), s2.begin(), s2.end());
    return result;
}

std::string format_training_log(const std::vector<EpochLog>& log) {
    std::ostringstream out;
    out << "stage,epoch,mean_loss,tau,mean_sigma\n";
    char buf[128];
    for (const EpochLog& e : log) {
        std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g\n", e.stage, e.epoch, e.mean_loss,
                      e.tau, e.mean_sigma);
        out << buf;
    }
    return out.str();
}

}  // namespace fewshot
