#include "fewshot/checkpoint.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace fewshot {

namespace {

void write_tensor(std::ostream& out, const std::string& name, const Matrix& m) {
    out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << "\n";
    char buf[40];
    for (int i = 0; i < m.rows(); ++i) {
        for (int j = 0; j < m.cols(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g", m(i, j));
            out << (j ? " " : "") << buf;
        }
        out << "\n";
    }
}

Matrix read_tensor(std::istream& in, const std::string& expect_name, long& line_no) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError("unexpected end of checkpoint", line_no);
    ++line_no;
    std::istringstream hs(line);
    std::string word, name;
    int rows = 0, cols = 0;
    hs >> word >> name >> rows >> cols;
    if (word != "tensor" || hs.fail()) {
        throw ParseError("expected 'tensor <name> <rows> <cols>', got: " + line, line_no);
    }
    if (name != expect_name) {
        throw ParseError("expected tensor '" + expect_name + "', got '" + name + "'", line_no);
    }
    if (rows < 1 || cols < 1) throw ParseError("bad tensor shape for '" + name + "'", line_no);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        if (!std::getline(in, line)) throw ParseError("truncated tensor '" + name + "'", line_no);
        ++line_no;
        std::istringstream rs(line);
        for (int j = 0; j < cols; ++j) {
            if (!(rs >> m(i, j))) {
                throw ParseError("bad value in tensor '" + name + "' row " + std::to_string(i),
                                 line_no);
            }
        }
    }
    return m;
}

}  // namespace

void save_checkpoint(const TrainState& st, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    // The estimator copy is only so visit_learnable/visit_state (non-const
    // by design: the trainer mutates through them) can enumerate tensors.
    TrainState copy = st;

    out << "FSCKPT v1\n";
    out << "estimator " << estimator_kind_name(st.estimator.kind) << "\n";
    int groups = 0;
    if (st.estimator.kind == EstimatorKind::Graph) groups = st.estimator.graph->groups;
    if (st.estimator.kind == EstimatorKind::Conv) groups = st.estimator.conv->groups;
    if (st.estimator.kind == EstimatorKind::Fc) groups = st.estimator.fc->groups;
    out << "groups " << groups << "\n";
    if (st.estimator.kind == EstimatorKind::Fc) out << "fc_way " << st.estimator.fc->way << "\n";
    out << "dim " << st.dim << "\n";
    out << "seed " << st.seed << "\n";
    out << "stage1_done " << st.stage1_done << "\n";
    out << "stage2_done " << st.stage2_done << "\n";
    out << "base_labels";
    for (int label : st.base_labels) out << ' ' << label;
    out << "\n";

    write_tensor(out, "tau_rho", st.tau_rho);
    write_tensor(out, "adapter", st.adapter);
    write_tensor(out, "classifier", st.classifier);
    copy.estimator.visit_learnable(
        [&](const std::string& name, Matrix& m) { write_tensor(out, name, m); });
    copy.estimator.visit_state(
        [&](const std::string& name, Matrix& m) { write_tensor(out, "state." + name, m); });
    out << "end\n";
    if (!out) throw DataError("write failed: " + path);
}

TrainState load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    long line_no = 0;
    std::string line;

    auto next_line = [&]() -> std::string {
        if (!std::getline(in, line)) throw ParseError("unexpected end of checkpoint", line_no);
        ++line_no;
        return line;
    };

    if (next_line() != "FSCKPT v1") throw ParseError("bad checkpoint magic", line_no);

    TrainState st;
    EstimatorKind kind = EstimatorKind::None;
    int groups = 0;
    int fc_way = 0;

    auto expect_field = [&](const std::string& key) -> std::string {
        std::istringstream ls(next_line());
        std::string k, v;
        ls >> k;
        if (k != key) throw ParseError("expected field '" + key + "', got '" + k + "'", line_no);
        ls >> v;
        return v;
    };

    kind = estimator_kind_from_name(expect_field("estimator"));
    groups = std::stoi(expect_field("groups"));
    if (kind == EstimatorKind::Fc) fc_way = std::stoi(expect_field("fc_way"));
    st.dim = std::stoi(expect_field("dim"));
    st.seed = std::stoull(expect_field("seed"));
    st.stage1_done = std::stoi(expect_field("stage1_done"));
    st.stage2_done = std::stoi(expect_field("stage2_done"));
    {
        std::istringstream ls(next_line());
        std::string k;
        ls >> k;
        if (k != "base_labels") throw ParseError("expected field 'base_labels'", line_no);
        int label;
        while (ls >> label) st.base_labels.push_back(label);
    }

    st.tau_rho = read_tensor(in, "tau_rho", line_no);
    st.adapter = read_tensor(in, "adapter", line_no);
    st.classifier = read_tensor(in, "classifier", line_no);

    if (kind != EstimatorKind::None && groups < 1) {
        throw ParseError("estimator checkpoint has invalid groups " + std::to_string(groups),
                         line_no);
    }
    Rng dummy(0);
    st.estimator = EstimatorSet::make(kind, groups, std::max(fc_way, 1), dummy);
    st.estimator.visit_learnable(
        [&](const std::string& name, Matrix& m) { m = read_tensor(in, name, line_no); });
    st.estimator.visit_state(
        [&](const std::string& name, Matrix& m) { m = read_tensor(in, "state." + name, line_no); });
    if (next_line() != "end") throw ParseError("missing checkpoint terminator", line_no);
    return st;
}

}  // namespace fewshot
