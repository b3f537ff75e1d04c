#include "planllm/tape.hpp"

#include <cmath>

namespace planllm {

namespace {

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gauss_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double gauss_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

}  // namespace

int Tape::check(Var v) const {
    if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw ShapeError("Var does not belong to this tape");
    return v.id;
}

Var Tape::push(Mat value, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_of(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::clear() {
    nodes_.clear();
    param_nodes_.clear();
}

Var Tape::constant(Mat value) { return push(std::move(value)); }

Var Tape::param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{this, it->second};
    Var v = push(p.value);
    nodes_.back().parameter = &p;
    param_nodes_.emplace(&p, v.id);
    return v;
}

Var Tape::matmul(Var a, Var b) {
    int ia = check(a), ib = check(b);
    const Mat& A = nodes_[ia].value;
    const Mat& B = nodes_[ib].value;
    if (A.cols() != B.rows())
        throw ShapeError("matmul: inner dimensions differ (" + std::to_string(A.cols()) +
                         " vs " + std::to_string(B.rows()) + ")");
    Var v = push(A * B);
    int ic = v.id;
    nodes_[ic].back = [ia, ib, ic](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        t.grad_of(ia).noalias() += g * t.nodes_[ib].value.transpose();
        t.grad_of(ib).noalias() += t.nodes_[ia].value.transpose() * g;
    };
    return v;
}

Var Tape::matmul_nt(Var a, Var b) {
    int ia = check(a), ib = check(b);
    const Mat& A = nodes_[ia].value;
    const Mat& B = nodes_[ib].value;
    if (A.cols() != B.cols()) throw ShapeError("matmul_nt: column counts differ");
    Var v = push(A * B.transpose());
    int ic = v.id;
    nodes_[ic].back = [ia, ib, ic](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        t.grad_of(ia).noalias() += g * t.nodes_[ib].value;
        t.grad_of(ib).noalias() += g.transpose() * t.nodes_[ia].value;
    };
    return v;
}

Var Tape::add(Var a, Var b) {
    int ia = check(a), ib = check(b);
    const Mat& A = nodes_[ia].value;
    const Mat& B = nodes_[ib].value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeError("add: shapes differ");
    Var v = push(A + B);
    int ic = v.id;
    nodes_[ic].back = [ia, ib, ic](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        t.grad_of(ia) += g;
        t.grad_of(ib) += g;
    };
    return v;
}

Var Tape::sub(Var a, Var b) {
    int ia = check(a), ib = check(b);
    const Mat& A = nodes_[ia].value;
    const Mat& B = nodes_[ib].value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeError("sub: shapes differ");
    Var v = push(A - B);
    int ic = v.id;
    nodes_[ic].back = [ia, ib, ic](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        t.grad_of(ia) += g;
        t.grad_of(ib) -= g;
    };
    return v;
}

Var Tape::mul_elem(Var a, Var b) {
    int ia = check(a), ib = check(b);
    const Mat& A = nodes_[ia].value;
    const Mat& B = nodes_[ib].value;
    if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeError("mul_elem: shapes differ");
    Var v = push(A.cwiseProduct(B));
    int ic = v.id;
    nodes_[ic].back = [ia, ib, ic](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        t.grad_of(ia) += g.cwiseProduct(t.nodes_[ib].value);
        t.grad_of(ib) += g.cwiseProduct(t.nodes_[ia].value);
    };
    return v;
}

Var Tape::scale(Var a, double s) {
    int ia = check(a);
    Var v = push(nodes_[ia].value * s);
    int ic = v.id;
    nodes_[ic].back = [ia, ic, s](Tape& t) { t.grad_of(ia) += t.nodes_[ic].grad * s; };
    return v;
}

Var Tape::add_rowwise(Var a, Var row) {
    int ia = check(a), ir = check(row);
    const Mat& A = nodes_[ia].value;
    const Mat& R = nodes_[ir].value;
    if (R.rows() != 1 || R.cols() != A.cols()) throw ShapeError("add_rowwise: bias must be 1 x cols");
    Mat out = A.rowwise() + R.row(0);
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ir, ic](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        t.grad_of(ia) += g;
        t.grad_of(ir).row(0) += g.colwise().sum();
    };
    return v;
}

Var Tape::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input");
    std::vector<int> ids;
    Eigen::Index rows = 0;
    Eigen::Index cols = nodes_[check(parts[0])].value.cols();
    for (Var p : parts) {
        int id = check(p);
        ids.push_back(id);
        if (nodes_[id].value.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += nodes_[id].value.rows();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (int id : ids) {
        out.middleRows(r, nodes_[id].value.rows()) = nodes_[id].value;
        r += nodes_[id].value.rows();
    }
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ids, ic](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        Eigen::Index r = 0;
        for (int id : ids) {
            Eigen::Index n = t.nodes_[id].value.rows();
            t.grad_of(id) += g.middleRows(r, n);
            r += n;
        }
    };
    return v;
}

Var Tape::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    std::vector<int> ids;
    Eigen::Index cols = 0;
    Eigen::Index rows = nodes_[check(parts[0])].value.rows();
    for (Var p : parts) {
        int id = check(p);
        ids.push_back(id);
        if (nodes_[id].value.rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += nodes_[id].value.cols();
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (int id : ids) {
        out.middleCols(c, nodes_[id].value.cols()) = nodes_[id].value;
        c += nodes_[id].value.cols();
    }
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ids, ic](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        Eigen::Index c = 0;
        for (int id : ids) {
            Eigen::Index n = t.nodes_[id].value.cols();
            t.grad_of(id) += g.middleCols(c, n);
            c += n;
        }
    };
    return v;
}

Var Tape::slice_rows(Var a, Eigen::Index start, Eigen::Index count) {
    int ia = check(a);
    const Mat& A = nodes_[ia].value;
    if (start < 0 || count < 0 || start + count > A.rows()) throw ShapeError("slice_rows: out of range");
    Var v = push(A.middleRows(start, count));
    int ic = v.id;
    nodes_[ic].back = [ia, ic, start, count](Tape& t) {
        t.grad_of(ia).middleRows(start, count) += t.nodes_[ic].grad;
    };
    return v;
}

Var Tape::tanh(Var a) {
    int ia = check(a);
    Var v = push(nodes_[ia].value.array().tanh().matrix());
    int ic = v.id;
    nodes_[ic].back = [ia, ic](Tape& t) {
        const Mat& y = t.nodes_[ic].value;
        t.grad_of(ia) += t.nodes_[ic].grad.cwiseProduct((1.0 - y.array().square()).matrix());
    };
    return v;
}

Var Tape::gelu(Var a) {
    int ia = check(a);
    const Mat& A = nodes_[ia].value;
    Mat out = A.unaryExpr([](double x) { return x * gauss_cdf(x); });
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ic](Tape& t) {
        const Mat& x = t.nodes_[ia].value;
        Mat d = x.unaryExpr([](double u) { return gauss_cdf(u) + u * gauss_pdf(u); });
        t.grad_of(ia) += t.nodes_[ic].grad.cwiseProduct(d);
    };
    return v;
}

Var Tape::softmax_rows(Var a, const Mat* add_mask) {
    int ia = check(a);
    Mat logits = nodes_[ia].value;
    if (add_mask) {
        if (add_mask->rows() != logits.rows() || add_mask->cols() != logits.cols())
            throw ShapeError("softmax_rows: mask shape differs from logits");
        logits += *add_mask;
    }
    Mat out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        double m = logits.row(r).maxCoeff();
        if (!std::isfinite(m)) throw NumericError("softmax_rows: row has no finite logit");
        Eigen::ArrayXd e = (logits.row(r).array() - m).exp();
        out.row(r) = (e / e.sum()).matrix();
    }
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ic](Tape& t) {
        const Mat& y = t.nodes_[ic].value;
        const Mat& g = t.nodes_[ic].grad;
        Mat& ga = t.grad_of(ia);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            double dot = y.row(r).dot(g.row(r));
            ga.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(y.row(r));
        }
    };
    return v;
}

Var Tape::layer_norm(Var a, Var gain, Var bias, double eps) {
    int ia = check(a), ig = check(gain), ib = check(bias);
    const Mat& A = nodes_[ia].value;
    const Mat& G = nodes_[ig].value;
    const Mat& B = nodes_[ib].value;
    if (G.rows() != 1 || G.cols() != A.cols() || B.rows() != 1 || B.cols() != A.cols())
        throw ShapeError("layer_norm: gain/bias must be 1 x cols");
    Eigen::Index n = A.cols();
    Mat xhat(A.rows(), n);
    Vec inv_sd(A.rows());
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
        double mu = A.row(r).mean();
        double var = (A.row(r).array() - mu).square().sum() / static_cast<double>(n);
        double isd = 1.0 / std::sqrt(var + eps);
        inv_sd(r) = isd;
        xhat.row(r) = (A.row(r).array() - mu) * isd;
    }
    Mat out(A.rows(), n);
    for (Eigen::Index r = 0; r < A.rows(); ++r)
        out.row(r) = xhat.row(r).cwiseProduct(G.row(0)) + B.row(0);
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ig, ib, ic, xhat, inv_sd](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        const Mat& G = t.nodes_[ig].value;
        Mat& ga = t.grad_of(ia);
        Mat& gg = t.grad_of(ig);
        Mat& gb = t.grad_of(ib);
        for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
            Eigen::RowVectorXd dy = g.row(r).cwiseProduct(G.row(0));
            double m1 = dy.mean();
            double m2 = dy.cwiseProduct(xhat.row(r)).mean();
            ga.row(r) += ((dy.array() - m1 - xhat.row(r).array() * m2) * inv_sd(r)).matrix();
        }
        gg.row(0) += g.cwiseProduct(xhat).colwise().sum();
        gb.row(0) += g.colwise().sum();
    };
    return v;
}

Var Tape::mean_rows(Var a) {
    int ia = check(a);
    const Mat& A = nodes_[ia].value;
    Mat out = A.colwise().mean();
    Var v = push(std::move(out));
    int ic = v.id;
    double inv = 1.0 / static_cast<double>(A.rows());
    nodes_[ic].back = [ia, ic, inv](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        Eigen::RowVectorXd add = g.row(0) * inv;
        t.grad_of(ia).rowwise() += add;
    };
    return v;
}

Var Tape::l2_normalize_rows(Var a) {
    int ia = check(a);
    const Mat& A = nodes_[ia].value;
    Mat out(A.rows(), A.cols());
    Vec norms(A.rows());
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
        double n = A.row(r).norm();
        if (n < 1e-12) throw NumericError("l2_normalize_rows: near-zero row norm");
        norms(r) = n;
        out.row(r) = A.row(r) / n;
    }
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ic, norms](Tape& t) {
        const Mat& y = t.nodes_[ic].value;
        const Mat& g = t.nodes_[ic].grad;
        Mat& ga = t.grad_of(ia);
        for (Eigen::Index r = 0; r < y.rows(); ++r) {
            double dot = y.row(r).dot(g.row(r));
            ga.row(r) += (g.row(r) - dot * y.row(r)) / norms(r);
        }
    };
    return v;
}

Var Tape::sum_all(Var a) {
    int ia = check(a);
    Mat out(1, 1);
    out(0, 0) = nodes_[ia].value.sum();
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ic](Tape& t) {
        t.grad_of(ia).array() += t.nodes_[ic].grad(0, 0);
    };
    return v;
}

Var Tape::mean_all(Var a) {
    int ia = check(a);
    const Mat& A = nodes_[ia].value;
    double inv = 1.0 / static_cast<double>(A.size());
    Mat out(1, 1);
    out(0, 0) = A.sum() * inv;
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ic, inv](Tape& t) {
        t.grad_of(ia).array() += t.nodes_[ic].grad(0, 0) * inv;
    };
    return v;
}

Var Tape::logsumexp_all(Var a) {
    int ia = check(a);
    const Mat& A = nodes_[ia].value;
    if (!all_finite(A)) throw NumericError("logsumexp_all: non-finite input");
    double m = A.maxCoeff();
    double s = (A.array() - m).exp().sum();
    double lse = m + std::log(s);
    Var v = push(Mat::Constant(1, 1, lse));
    int ic = v.id;
    nodes_[ic].back = [ia, ic, lse](Tape& t) {
        const Mat& A = t.nodes_[ia].value;
        t.grad_of(ia) += t.nodes_[ic].grad(0, 0) * (A.array() - lse).exp().matrix();
    };
    return v;
}

Var Tape::logsumexp_diag(Var a) {
    int ia = check(a);
    const Mat& A = nodes_[ia].value;
    if (A.rows() != A.cols()) throw ShapeError("logsumexp_diag: matrix not square");
    if (!all_finite(A)) throw NumericError("logsumexp_diag: non-finite input");
    Vec d = A.diagonal();
    double m = d.maxCoeff();
    double s = (d.array() - m).exp().sum();
    double lse = m + std::log(s);
    Var v = push(Mat::Constant(1, 1, lse));
    int ic = v.id;
    nodes_[ic].back = [ia, ic, lse](Tape& t) {
        const Mat& A = t.nodes_[ia].value;
        Mat& ga = t.grad_of(ia);
        double g = t.nodes_[ic].grad(0, 0);
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            ga(i, i) += g * std::exp(A(i, i) - lse);
    };
    return v;
}

Var Tape::gather_rows(Var table, std::vector<int> ids) {
    int ia = check(table);
    const Mat& A = nodes_[ia].value;
    Mat out(static_cast<Eigen::Index>(ids.size()), A.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= A.rows())
            throw ShapeError("gather_rows: index " + std::to_string(ids[i]) + " out of range");
        out.row(static_cast<Eigen::Index>(i)) = A.row(ids[i]);
    }
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ic, ids = std::move(ids)](Tape& t) {
        const Mat& g = t.nodes_[ic].grad;
        Mat& ga = t.grad_of(ia);
        for (std::size_t i = 0; i < ids.size(); ++i)
            ga.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
    };
    return v;
}

Var Tape::cross_entropy_rows(Var logits, std::vector<int> targets) {
    int ia = check(logits);
    const Mat& A = nodes_[ia].value;
    if (static_cast<Eigen::Index>(targets.size()) != A.rows())
        throw ShapeError("cross_entropy_rows: one target per row required");
    if (!all_finite(A)) throw NumericError("cross_entropy_rows: non-finite logits");
    double total = 0.0;
    Mat probs(A.rows(), A.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
        int tgt = targets[static_cast<std::size_t>(r)];
        if (tgt < 0 || tgt >= A.cols())
            throw ValidationError("cross_entropy_rows: target id " + std::to_string(tgt) +
                                  " outside [0, " + std::to_string(A.cols()) + ")");
        double m = A.row(r).maxCoeff();
        Eigen::ArrayXd e = (A.row(r).array() - m).exp();
        double Z = e.sum();
        probs.row(r) = (e / Z).matrix();
        total += std::log(Z) + m - A(r, tgt);
    }
    double inv = 1.0 / static_cast<double>(A.rows());
    Mat out(1, 1);
    out(0, 0) = total * inv;
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ic, probs, targets = std::move(targets), inv](Tape& t) {
        double g = t.nodes_[ic].grad(0, 0) * inv;
        Mat& ga = t.grad_of(ia);
        ga += g * probs;
        for (Eigen::Index r = 0; r < probs.rows(); ++r)
            ga(r, targets[static_cast<std::size_t>(r)]) -= g;
    };
    return v;
}

Var Tape::bce_with_logits(Var logits, Mat targets) {
    int ia = check(logits);
    const Mat& A = nodes_[ia].value;
    if (A.rows() != targets.rows() || A.cols() != targets.cols())
        throw ShapeError("bce_with_logits: shapes differ");
    if (!all_finite(A)) throw NumericError("bce_with_logits: non-finite logit");
    // softplus(z) - t*z, with softplus(z) = max(z,0) + log1p(exp(-|z|))
    double total = 0.0;
    for (Eigen::Index i = 0; i < A.size(); ++i) {
        double z = A(i);
        total += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - targets(i) * z;
    }
    double inv = 1.0 / static_cast<double>(A.size());
    Mat out(1, 1);
    out(0, 0) = total * inv;
    Var v = push(std::move(out));
    int ic = v.id;
    nodes_[ic].back = [ia, ic, targets = std::move(targets), inv](Tape& t) {
        const Mat& A = t.nodes_[ia].value;
        double g = t.nodes_[ic].grad(0, 0) * inv;
        Mat sig = A.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
        t.grad_of(ia) += g * (sig - targets);
    };
    return v;
}

void Tape::backward(Var loss) {
    int il = check(loss);
    const Mat& L = nodes_[il].value;
    if (L.rows() != 1 || L.cols() != 1) throw ShapeError("backward: loss must be 1 x 1");
    if (!std::isfinite(L(0, 0))) throw NumericError("backward: loss is not finite");
    grad_of(il)(0, 0) += 1.0;
    for (int i = il; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.size() == 0) continue;  // not on any path to the loss
        if (n.back) n.back(*this);
        if (n.parameter) n.parameter->grad += n.grad;
    }
}

}  // namespace planllm
