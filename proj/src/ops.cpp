#include "fewshot/ops.hpp"

#include <cmath>
#include <string>

namespace fewshot {

namespace {

void require_same_shape(const Tape& t, NodeId a, NodeId b, const char* op) {
    if (!t.value(a).same_shape(t.value(b))) {
        throw ShapeError(std::string(op) + " shape mismatch: " + t.value(a).shape_str() + " vs " +
                         t.value(b).shape_str());
    }
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_scalar(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

}  // namespace

NodeId add(Tape& t, NodeId a, NodeId b) {
    require_same_shape(t, a, b, "add");
    Matrix out = t.value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.raw()[i] += t.value(b).raw()[i];
    return t.record({a, b}, std::move(out), [a, b](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) {
            tp.grad_ref(a).raw()[i] += g.raw()[i];
            tp.grad_ref(b).raw()[i] += g.raw()[i];
        }
    });
}

NodeId sub(Tape& t, NodeId a, NodeId b) {
    require_same_shape(t, a, b, "sub");
    Matrix out = t.value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.raw()[i] -= t.value(b).raw()[i];
    return t.record({a, b}, std::move(out), [a, b](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) {
            tp.grad_ref(a).raw()[i] += g.raw()[i];
            tp.grad_ref(b).raw()[i] -= g.raw()[i];
        }
    });
}

NodeId mul(Tape& t, NodeId a, NodeId b) {
    require_same_shape(t, a, b, "mul");
    Matrix out = t.value(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.raw()[i] *= t.value(b).raw()[i];
    return t.record({a, b}, std::move(out), [a, b](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& va = tp.value(a);
        const Matrix& vb = tp.value(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            tp.grad_ref(a).raw()[i] += g.raw()[i] * vb.raw()[i];
            tp.grad_ref(b).raw()[i] += g.raw()[i] * va.raw()[i];
        }
    });
}

NodeId add_scalar(Tape& t, NodeId a, double c) {
    Matrix out = t.value(a);
    for (double& v : out.raw()) v += c;
    return t.record({a}, std::move(out), [a](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) tp.grad_ref(a).raw()[i] += g.raw()[i];
    });
}

NodeId mul_scalar(Tape& t, NodeId a, double c) {
    Matrix out = t.value(a);
    for (double& v : out.raw()) v *= c;
    return t.record({a}, std::move(out), [a, c](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        for (std::size_t i = 0; i < g.size(); ++i) tp.grad_ref(a).raw()[i] += c * g.raw()[i];
    });
}

NodeId scale_by(Tape& t, NodeId a, NodeId s) {
    const Matrix& sv = t.value(s);
    if (sv.rows() != 1 || sv.cols() != 1) {
        throw ShapeError("scale_by expects a 1x1 scalar node, got " + sv.shape_str());
    }
    const double c = sv(0, 0);
    Matrix out = t.value(a);
    for (double& v : out.raw()) v *= c;
    return t.record({a, s}, std::move(out), [a, s](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& va = tp.value(a);
        const double c = tp.value(s)(0, 0);
        double ds = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            tp.grad_ref(a).raw()[i] += c * g.raw()[i];
            ds += g.raw()[i] * va.raw()[i];
        }
        tp.grad_ref(s)(0, 0) += ds;
    });
}

NodeId add_rowvec(Tape& t, NodeId a, NodeId b) {
    const Matrix& va = t.value(a);
    const Matrix& vb = t.value(b);
    if (vb.rows() != 1 || vb.cols() != va.cols()) {
        throw ShapeError("add_rowvec expects 1x" + std::to_string(va.cols()) + " bias, got " +
                         vb.shape_str());
    }
    Matrix out = va;
    for (int i = 0; i < out.rows(); ++i)
        for (int j = 0; j < out.cols(); ++j) out(i, j) += vb(0, j);
    return t.record({a, b}, std::move(out), [a, b](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad_ref(a);
        Matrix& gb = tp.grad_ref(b);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) {
                ga(i, j) += g(i, j);
                gb(0, j) += g(i, j);
            }
    });
}

NodeId matmul(Tape& t, NodeId a, NodeId b) {
    Matrix out = matmul(t.value(a), t.value(b));  // throws ShapeError on mismatch
    return t.record({a, b}, std::move(out), [a, b](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& va = tp.value(a);
        const Matrix& vb = tp.value(b);
        // dA += dC * B^T
        Matrix& ga = tp.grad_ref(a);
        for (int i = 0; i < va.rows(); ++i)
            for (int j = 0; j < vb.cols(); ++j) {
                const double gij = g(i, j);
                if (gij == 0.0) continue;
                for (int k = 0; k < va.cols(); ++k) ga(i, k) += gij * vb(k, j);
            }
        // dB += A^T * dC
        Matrix& gb = tp.grad_ref(b);
        for (int i = 0; i < va.rows(); ++i)
            for (int k = 0; k < va.cols(); ++k) {
                const double aik = va(i, k);
                if (aik == 0.0) continue;
                for (int j = 0; j < vb.cols(); ++j) gb(k, j) += aik * g(i, j);
            }
    });
}

NodeId transpose(Tape& t, NodeId a) {
    Matrix out = transpose(t.value(a));
    return t.record({a}, std::move(out), [a](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad_ref(a);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
    });
}

NodeId exp(Tape& t, NodeId a) {
    Matrix out = t.value(a);
    for (double& v : out.raw()) v = std::exp(v);
    return t.record({a}, std::move(out), [a](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& y = tp.value(self);
        for (std::size_t i = 0; i < g.size(); ++i) tp.grad_ref(a).raw()[i] += g.raw()[i] * y.raw()[i];
    });
}

NodeId log(Tape& t, NodeId a) {
    Matrix out = t.value(a);
    for (double& v : out.raw()) {
        if (!(v > 0.0)) {
            throw NumericError("log of a non-positive entry (" + std::to_string(v) + ")");
        }
        v = std::log(v);
    }
    return t.record({a}, std::move(out), [a](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& x = tp.value(a);
        for (std::size_t i = 0; i < g.size(); ++i) tp.grad_ref(a).raw()[i] += g.raw()[i] / x.raw()[i];
    });
}

NodeId softplus(Tape& t, NodeId a) {
    Matrix out = t.value(a);
    for (double& v : out.raw()) v = softplus_scalar(v);
    return t.record({a}, std::move(out), [a](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& x = tp.value(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            tp.grad_ref(a).raw()[i] += g.raw()[i] * sigmoid(x.raw()[i]);
    });
}

NodeId leaky_relu(Tape& t, NodeId a, double slope) {
    // slope 1 degenerates to the identity map.
    if (!(slope > 0.0 && slope <= 1.0)) {
        throw ConfigError("leaky_relu slope must be in (0, 1], got " + std::to_string(slope));
    }
    Matrix out = t.value(a);
    for (double& v : out.raw()) v = v >= 0.0 ? v : slope * v;
    return t.record({a}, std::move(out), [a, slope](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& x = tp.value(a);
        for (std::size_t i = 0; i < g.size(); ++i)
            tp.grad_ref(a).raw()[i] += g.raw()[i] * (x.raw()[i] > 0.0 ? 1.0 : slope);
    });
}

NodeId row_softmax(Tape& t, NodeId a) {
    const Matrix& x = t.value(a);
    x.ensure_finite("row_softmax input");
    Matrix out(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        double m = x(i, 0);
        for (int j = 1; j < x.cols(); ++j) m = std::max(m, x(i, j));
        double sum = 0.0;
        for (int j = 0; j < x.cols(); ++j) {
            out(i, j) = std::exp(x(i, j) - m);
            sum += out(i, j);
        }
        for (int j = 0; j < x.cols(); ++j) out(i, j) /= sum;
    }
    return t.record({a}, std::move(out), [a](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& y = tp.value(self);
        Matrix& ga = tp.grad_ref(a);
        for (int i = 0; i < g.rows(); ++i) {
            double dot = 0.0;
            for (int j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
            for (int j = 0; j < g.cols(); ++j) ga(i, j) += (g(i, j) - dot) * y(i, j);
        }
    });
}

NodeId sum_all(Tape& t, NodeId a) {
    double s = 0.0;
    for (double v : t.value(a).raw()) s += v;
    return t.record({a}, Matrix(1, 1, s), [a](Tape& tp, NodeId self) {
        const double g = tp.grad(self)(0, 0);
        for (double& v : tp.grad_ref(a).raw()) v += g;
    });
}

NodeId mean_all(Tape& t, NodeId a) {
    const double n = static_cast<double>(t.value(a).size());
    double s = 0.0;
    for (double v : t.value(a).raw()) s += v;
    return t.record({a}, Matrix(1, 1, s / n), [a, n](Tape& tp, NodeId self) {
        const double g = tp.grad(self)(0, 0) / n;
        for (double& v : tp.grad_ref(a).raw()) v += g;
    });
}

NodeId mean_rows(Tape& t, NodeId a) {
    const Matrix& x = t.value(a);
    Matrix out(1, x.cols());
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
    for (int j = 0; j < x.cols(); ++j) out(0, j) /= x.rows();
    return t.record({a}, std::move(out), [a](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad_ref(a);
        const double inv = 1.0 / ga.rows();
        for (int i = 0; i < ga.rows(); ++i)
            for (int j = 0; j < ga.cols(); ++j) ga(i, j) += g(0, j) * inv;
    });
}

NodeId broadcast_rows(Tape& t, NodeId a, int n) {
    const Matrix& x = t.value(a);
    if (x.rows() != 1) {
        throw ShapeError("broadcast_rows expects a 1xC input, got " + x.shape_str());
    }
    Matrix out(n, x.cols());
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < x.cols(); ++j) out(i, j) = x(0, j);
    return t.record({a}, std::move(out), [a](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad_ref(a);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) ga(0, j) += g(i, j);
    });
}

NodeId select_col(Tape& t, NodeId a, int col) {
    const Matrix& x = t.value(a);
    if (col < 0 || col >= x.cols()) {
        throw ShapeError("select_col index " + std::to_string(col) + " out of range for " +
                         x.shape_str());
    }
    Matrix out(x.rows(), 1);
    for (int i = 0; i < x.rows(); ++i) out(i, 0) = x(i, col);
    return t.record({a}, std::move(out), [a, col](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad_ref(a);
        for (int i = 0; i < g.rows(); ++i) ga(i, col) += g(i, 0);
    });
}

NodeId gather_rows(Tape& t, NodeId a, const std::vector<int>& idx) {
    const Matrix& x = t.value(a);
    Matrix out(static_cast<int>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= x.rows()) {
            throw ShapeError("gather_rows index " + std::to_string(idx[i]) + " out of range for " +
                             x.shape_str());
        }
        for (int j = 0; j < x.cols(); ++j) out(static_cast<int>(i), j) = x(idx[i], j);
    }
    return t.record({a}, std::move(out), [a, idx](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad_ref(a);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < g.cols(); ++j) ga(idx[i], j) += g(static_cast<int>(i), j);
    });
}

NodeId stack_rows(Tape& t, const std::vector<NodeId>& parts) {
    if (parts.empty()) throw ShapeError("stack_rows needs at least one row");
    const int cols = t.value(parts[0]).cols();
    Matrix out(static_cast<int>(parts.size()), cols);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const Matrix& r = t.value(parts[i]);
        if (r.rows() != 1 || r.cols() != cols) {
            throw ShapeError("stack_rows part " + std::to_string(i) + " has shape " + r.shape_str() +
                             ", expected 1x" + std::to_string(cols));
        }
        for (int j = 0; j < cols; ++j) out(static_cast<int>(i), j) = r(0, j);
    }
    return t.record(parts, std::move(out), [parts](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        for (std::size_t i = 0; i < parts.size(); ++i) {
            Matrix& gp = tp.grad_ref(parts[i]);
            for (int j = 0; j < g.cols(); ++j) gp(0, j) += g(static_cast<int>(i), j);
        }
    });
}

NodeId concat_cols(Tape& t, NodeId a, NodeId b) {
    const Matrix& va = t.value(a);
    const Matrix& vb = t.value(b);
    if (va.rows() != vb.rows()) {
        throw ShapeError("concat_cols row mismatch: " + va.shape_str() + " vs " + vb.shape_str());
    }
    Matrix out(va.rows(), va.cols() + vb.cols());
    for (int i = 0; i < va.rows(); ++i) {
        for (int j = 0; j < va.cols(); ++j) out(i, j) = va(i, j);
        for (int j = 0; j < vb.cols(); ++j) out(i, va.cols() + j) = vb(i, j);
    }
    const int split = va.cols();
    return t.record({a, b}, std::move(out), [a, b, split](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad_ref(a);
        Matrix& gb = tp.grad_ref(b);
        for (int i = 0; i < g.rows(); ++i) {
            for (int j = 0; j < split; ++j) ga(i, j) += g(i, j);
            for (int j = split; j < g.cols(); ++j) gb(i, j - split) += g(i, j);
        }
    });
}

NodeId slice_cols(Tape& t, NodeId a, int c0, int c1) {
    const Matrix& x = t.value(a);
    if (c0 < 0 || c1 > x.cols() || c0 >= c1) {
        throw ShapeError("slice_cols [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") invalid for " + x.shape_str());
    }
    Matrix out(x.rows(), c1 - c0);
    for (int i = 0; i < x.rows(); ++i)
        for (int j = c0; j < c1; ++j) out(i, j - c0) = x(i, j);
    return t.record({a}, std::move(out), [a, c0](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        Matrix& ga = tp.grad_ref(a);
        for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) ga(i, c0 + j) += g(i, j);
    });
}

NodeId l2_normalize_rows(Tape& t, NodeId a) {
    const Matrix& x = t.value(a);
    Matrix out(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        const double n = row_norm(x, i);
        if (n == 0.0) {
            throw NumericError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
        }
        for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / n;
    }
    return t.record({a}, std::move(out), [a](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& x = tp.value(a);
        Matrix& ga = tp.grad_ref(a);
        for (int i = 0; i < x.rows(); ++i) {
            const double n = row_norm(x, i);
            double gx = 0.0;
            for (int j = 0; j < x.cols(); ++j) gx += g(i, j) * x(i, j);
            const double n3 = n * n * n;
            for (int j = 0; j < x.cols(); ++j) ga(i, j) += g(i, j) / n - x(i, j) * gx / n3;
        }
    });
}

NodeId cosine_rows(Tape& t, NodeId a, NodeId b) {
    const Matrix& va = t.value(a);
    const Matrix& vb = t.value(b);
    if (va.cols() != vb.cols()) {
        throw ShapeError("cosine_rows width mismatch: " + va.shape_str() + " vs " + vb.shape_str());
    }
    Matrix out(va.rows(), vb.rows());
    for (int i = 0; i < va.rows(); ++i)
        for (int j = 0; j < vb.rows(); ++j) out(i, j) = cosine_row(va, i, vb, j);
    return t.record({a, b}, std::move(out), [a, b](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& va = tp.value(a);
        const Matrix& vb = tp.value(b);
        const Matrix& c = tp.value(self);
        Matrix& ga = tp.grad_ref(a);
        Matrix& gb = tp.grad_ref(b);
        std::vector<double> na(va.rows()), nb(vb.rows());
        for (int i = 0; i < va.rows(); ++i) na[i] = row_norm(va, i);
        for (int j = 0; j < vb.rows(); ++j) nb[j] = row_norm(vb, j);
        for (int i = 0; i < va.rows(); ++i) {
            for (int j = 0; j < vb.rows(); ++j) {
                const double gij = g(i, j);
                if (gij == 0.0) continue;
                const double inv = 1.0 / (na[i] * nb[j]);
                const double cij = c(i, j);
                for (int k = 0; k < va.cols(); ++k) {
                    ga(i, k) += gij * (vb(j, k) * inv - cij * va(i, k) / (na[i] * na[i]));
                    gb(j, k) += gij * (va(i, k) * inv - cij * vb(j, k) / (nb[j] * nb[j]));
                }
            }
        }
    });
}

NodeId group_cosine(Tape& t, NodeId q, NodeId p, int groups) {
    const Matrix& vq = t.value(q);
    const Matrix& vp = t.value(p);
    if (vq.rows() != 1) {
        throw ShapeError("group_cosine expects a 1xD query, got " + vq.shape_str());
    }
    if (vq.cols() != vp.cols()) {
        throw ShapeError("group_cosine width mismatch: " + vq.shape_str() + " vs " + vp.shape_str());
    }
    const int dim = vq.cols();
    if (groups < 1 || dim % groups != 0) {
        throw ConfigError("group count " + std::to_string(groups) + " must divide dimension " +
                          std::to_string(dim));
    }
    const int width = dim / groups;
    Matrix out(vp.rows(), groups);
    for (int j = 0; j < vp.rows(); ++j) {
        for (int l = 0; l < groups; ++l) {
            double qq = 0.0, pp = 0.0, qp = 0.0;
            for (int k = l * width; k < (l + 1) * width; ++k) {
                qq += vq(0, k) * vq(0, k);
                pp += vp(j, k) * vp(j, k);
                qp += vq(0, k) * vp(j, k);
            }
            if (qq == 0.0 || pp == 0.0) {
                throw NumericError("group_cosine: zero-norm group (prototype " + std::to_string(j) +
                                   ", group " + std::to_string(l) + ")");
            }
            out(j, l) = qp / std::sqrt(qq * pp);
        }
    }
    return t.record({q, p}, std::move(out), [q, p, groups, width](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& vq = tp.value(q);
        const Matrix& vp = tp.value(p);
        const Matrix& r = tp.value(self);
        Matrix& gq = tp.grad_ref(q);
        Matrix& gp = tp.grad_ref(p);
        for (int j = 0; j < vp.rows(); ++j) {
            for (int l = 0; l < groups; ++l) {
                const double gjl = g(j, l);
                if (gjl == 0.0) continue;
                double qq = 0.0, pp = 0.0;
                for (int k = l * width; k < (l + 1) * width; ++k) {
                    qq += vq(0, k) * vq(0, k);
                    pp += vp(j, k) * vp(j, k);
                }
                const double nq = std::sqrt(qq);
                const double np = std::sqrt(pp);
                const double inv = 1.0 / (nq * np);
                const double rjl = r(j, l);
                for (int k = l * width; k < (l + 1) * width; ++k) {
                    gq(0, k) += gjl * (vp(j, k) * inv - rjl * vq(0, k) / qq);
                    gp(j, k) += gjl * (vq(0, k) * inv - rjl * vp(j, k) / pp);
                }
            }
        }
    });
}

NodeId batch_norm(Tape& t, NodeId x, NodeId gamma, NodeId beta, BnLayerState& state, bool train) {
    const Matrix& vx = t.value(x);
    const int n = vx.rows();
    const int c = vx.cols();
    const Matrix& vg = t.value(gamma);
    const Matrix& vb = t.value(beta);
    if (vg.rows() != 1 || vg.cols() != c || vb.rows() != 1 || vb.cols() != c) {
        throw ShapeError("batch_norm affine params must be 1x" + std::to_string(c) + ", got " +
                         vg.shape_str() + " and " + vb.shape_str());
    }
    if (state.running_mean.cols() != c) {
        throw ShapeError("batch_norm running stats are 1x" +
                         std::to_string(state.running_mean.cols()) + ", input is " + vx.shape_str());
    }

    Matrix mean(1, c);
    Matrix var(1, c);
    if (train) {
        if (n < 2) {
            throw NumericError("batch_norm train mode needs >= 2 rows, got " + std::to_string(n));
        }
        for (int j = 0; j < c; ++j) {
            double m = 0.0;
            for (int i = 0; i < n; ++i) m += vx(i, j);
            m /= n;
            double v = 0.0;
            for (int i = 0; i < n; ++i) {
                const double d = vx(i, j) - m;
                v += d * d;
            }
            mean(0, j) = m;
            var(0, j) = v / n;
        }
        for (int j = 0; j < c; ++j) {
            state.running_mean(0, j) =
                (1.0 - kBnMomentum) * state.running_mean(0, j) + kBnMomentum * mean(0, j);
            state.running_var(0, j) =
                (1.0 - kBnMomentum) * state.running_var(0, j) + kBnMomentum * var(0, j);
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }

    Matrix xhat(n, c);
    Matrix out(n, c);
    for (int j = 0; j < c; ++j) {
        const double istd = 1.0 / std::sqrt(var(0, j) + kBnEpsilon);
        for (int i = 0; i < n; ++i) {
            xhat(i, j) = (vx(i, j) - mean(0, j)) * istd;
            out(i, j) = vg(0, j) * xhat(i, j) + vb(0, j);
        }
    }

    if (train) {
        // Batch statistics depend on x, so the full three-term rule applies.
        return t.record(
            {x, gamma, beta}, std::move(out),
            [x, gamma, beta, mean, var, xhat](Tape& tp, NodeId self) {
                const Matrix& g = tp.grad(self);
                const Matrix& vx = tp.value(x);
                const Matrix& vg = tp.value(gamma);
                Matrix& gx = tp.grad_ref(x);
                Matrix& gg = tp.grad_ref(gamma);
                Matrix& gb = tp.grad_ref(beta);
                const int n = vx.rows();
                const int c = vx.cols();
                for (int j = 0; j < c; ++j) {
                    const double istd = 1.0 / std::sqrt(var(0, j) + kBnEpsilon);
                    double sum_dxhat = 0.0;
                    double sum_dxhat_xhat = 0.0;
                    for (int i = 0; i < n; ++i) {
                        const double dxhat = g(i, j) * vg(0, j);
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat(i, j);
                        gg(0, j) += g(i, j) * xhat(i, j);
                        gb(0, j) += g(i, j);
                    }
                    for (int i = 0; i < n; ++i) {
                        const double dxhat = g(i, j) * vg(0, j);
                        gx(i, j) += istd / n * (n * dxhat - sum_dxhat - xhat(i, j) * sum_dxhat_xhat);
                    }
                }
            });
    }

    // Eval mode: running statistics are constants, so this is a per-column
    // affine map.
    return t.record({x, gamma, beta}, std::move(out), [x, gamma, beta, var, xhat](Tape& tp, NodeId self) {
        const Matrix& g = tp.grad(self);
        const Matrix& vg = tp.value(gamma);
        Matrix& gx = tp.grad_ref(x);
        Matrix& gg = tp.grad_ref(gamma);
        Matrix& gb = tp.grad_ref(beta);
        for (int j = 0; j < g.cols(); ++j) {
            const double istd = 1.0 / std::sqrt(var(0, j) + kBnEpsilon);
            for (int i = 0; i < g.rows(); ++i) {
                gx(i, j) += g(i, j) * vg(0, j) * istd;
                gg(0, j) += g(i, j) * xhat(i, j);
                gb(0, j) += g(i, j);
            }
        }
    });
}

NodeId ce_loss(Tape& t, NodeId logits, int label) {
    const Matrix& x = t.value(logits);
    if (x.rows() != 1) {
        throw ShapeError("ce_loss expects a 1xN logit row, got " + x.shape_str());
    }
    if (label < 0 || label >= x.cols()) {
        throw DataError("ce_loss label " + std::to_string(label) + " out of range [0, " +
                        std::to_string(x.cols()) + ")");
    }
    double m = x(0, 0);
    for (int j = 1; j < x.cols(); ++j) m = std::max(m, x(0, j));
    double sum = 0.0;
    for (int j = 0; j < x.cols(); ++j) sum += std::exp(x(0, j) - m);
    const double lse = m + std::log(sum);
    return t.record({logits}, Matrix(1, 1, lse - x(0, label)), [logits, label, lse](Tape& tp, NodeId self) {
        const double g = tp.grad(self)(0, 0);
        const Matrix& x = tp.value(logits);
        Matrix& gx = tp.grad_ref(logits);
        for (int j = 0; j < x.cols(); ++j) {
            const double p = std::exp(x(0, j) - lse);
            gx(0, j) += g * (p - (j == label ? 1.0 : 0.0));
        }
    });
}

}  // namespace fewshot
