#include "fewshot/metric_head.hpp"

#include <cmath>

namespace fewshot {

Matrix compute_prototypes(const Episode& ep) {
    if (ep.way <= 0 || ep.shot <= 0) throw DataError("episode has empty support groups");
    const int dim = ep.support.cols();
    Matrix protos(ep.way, dim);
    for (int j = 0; j < ep.way; ++j) {
        for (int i = 0; i < ep.shot; ++i) {
            for (int d = 0; d < dim; ++d) protos(j, d) += ep.support(j * ep.shot + i, d);
        }
        for (int d = 0; d < dim; ++d) protos(j, d) /= ep.shot;
    }
    return protos;
}

Matrix cosine_logits(const Matrix& query_row, const Matrix& protos, double tau) {
    if (query_row.rows() != 1 || query_row.cols() != protos.cols()) {
        throw ShapeError("cosine_logits expects 1xD query vs NxD prototypes, got " +
                         query_row.shape_str() + " vs " + protos.shape_str());
    }
    Matrix out(1, protos.rows());
    for (int j = 0; j < protos.rows(); ++j) {
        out(0, j) = tau * cosine_row(query_row, 0, protos, j);
    }
    return out;
}

double ce_loss_value(const Matrix& logits, int label) {
    if (logits.rows() != 1) {
        throw ShapeError("ce_loss_value expects a 1xN row, got " + logits.shape_str());
    }
    if (label < 0 || label >= logits.cols()) {
        throw DataError("label " + std::to_string(label) + " out of range [0, " +
                        std::to_string(logits.cols()) + ")");
    }
    double m = logits(0, 0);
    for (int j = 1; j < logits.cols(); ++j) m = std::max(m, logits(0, j));
    double sum = 0.0;
    for (int j = 0; j < logits.cols(); ++j) sum += std::exp(logits(0, j) - m);
    return m + std::log(sum) - logits(0, label);
}

NodeId prototypes_node(Tape& t, NodeId support, int way, int shot) {
    const Matrix& s = t.value(support);
    if (s.rows() != way * shot) {
        throw ShapeError("support node has " + std::to_string(s.rows()) + " rows, expected way*shot = " +
                         std::to_string(way * shot));
    }
    std::vector<NodeId> rows;
    rows.reserve(way);
    for (int j = 0; j < way; ++j) {
        std::vector<int> idx(shot);
        for (int i = 0; i < shot; ++i) idx[i] = j * shot + i;
        rows.push_back(mean_rows(t, gather_rows(t, support, idx)));
    }
    return stack_rows(t, rows);
}

NodeId cosine_logits_node(Tape& t, NodeId query_row, NodeId protos, NodeId tau) {
    return scale_by(t, cosine_rows(t, query_row, protos), tau);
}

}  // namespace fewshot
