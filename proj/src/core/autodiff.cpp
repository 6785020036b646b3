#include "autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace apr::ad {

const Tensor &Var::value() const {
    require(tape_ != nullptr, ErrorKind::Contract, "use of an unbound Var");
    return tape_->node(id_).value;
}

const Tensor &BackwardContext::grad() const { return tape_.grads_[node_]; }

const Tensor &BackwardContext::input(std::size_t k) const {
    return tape_.nodes_[tape_.nodes_[node_].inputs[k]].value;
}

const Tensor &BackwardContext::output() const { return tape_.nodes_[node_].value; }

bool BackwardContext::needs(std::size_t k) const {
    return tape_.nodes_[tape_.nodes_[node_].inputs[k]].requires_grad;
}

void BackwardContext::accumulate(std::size_t k, const Tensor &g) const {
    const auto target = tape_.nodes_[node_].inputs[k];
    if (!tape_.has_grad_[target]) {
        tape_.grads_[target] = g;
        tape_.has_grad_[target] = true;
        return;
    }
    auto dst = tape_.grads_[target].data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Var Tape::leaf(Tensor value) {
    require(value.all_finite(), ErrorKind::Numeric, "non-finite leaf value");
    nodes_.push_back(TapeNode{"leaf", {}, std::move(value), {}, true, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    require(value.all_finite(), ErrorKind::Numeric, "non-finite constant value");
    nodes_.push_back(TapeNode{"constant", {}, std::move(value), {}, false, true});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
    if (!value.all_finite()) fail(ErrorKind::Numeric, "non-finite result in op '" + op + "'");
    TapeNode n;
    n.op = std::move(op);
    n.value = std::move(value);
    n.backward = std::move(backward);
    for (const auto &v : inputs) {
        require(v.tape() == this, ErrorKind::Contract, "op '" + n.op + "' mixes tapes");
        n.inputs.push_back(v.id());
        n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Gradients Tape::value_and_grad(Var output, std::span<const Var> wanted) {
    require(output.tape() == this, ErrorKind::Contract, "output belongs to another tape");
    const auto &out = nodes_[output.id()];
    require(out.value.size() == 1, ErrorKind::Contract,
            "value_and_grad needs a scalar output, got shape " + shape_string(out.value.shape()));
    for (const auto &w : wanted) {
        require(w.tape() == this && nodes_[w.id()].is_leaf, ErrorKind::Contract,
                "gradient requested for a non-leaf node");
    }

    grads_.assign(nodes_.size(), Tensor());
    has_grad_.assign(nodes_.size(), false);
    grads_[output.id()] = Tensor::filled(out.value.shape(), 1.0);
    has_grad_[output.id()] = true;

    for (std::size_t i = output.id() + 1; i-- > 0;) {
        const auto &n = nodes_[i];
        if (!has_grad_[i] || n.is_leaf || !n.requires_grad) continue;
        n.backward(BackwardContext(*this, i));
    }

    Gradients result;
    result.value = out.value[0];
    for (const auto &w : wanted) {
        if (has_grad_[w.id()])
            result.grads.push_back(grads_[w.id()]);
        else
            result.grads.push_back(Tensor::zeros(nodes_[w.id()].value.shape()));
    }
    grads_.clear();
    has_grad_.clear();
    return result;
}

namespace {

Tape &tape_of(Var a) {
    require(a.valid(), ErrorKind::Contract, "use of an unbound Var");
    return *a.tape();
}

void require_matrix(const Tensor &t, const char *op) {
    require(t.rank() == 2, ErrorKind::Dimension,
            std::string(op) + " expects a rank-2 tensor, got " + shape_string(t.shape()));
}

enum class Broadcast { Same, Rows };

Broadcast broadcast_kind(const Tensor &a, const Tensor &b, const char *op) {
    if (a.shape() == b.shape()) return Broadcast::Same;
    const bool row_vec = (b.rank() == 1 || (b.rank() == 2 && b.dim(0) == 1));
    if (a.rank() == 2 && row_vec && b.cols() == a.cols()) return Broadcast::Rows;
    fail(ErrorKind::Dimension, std::string(op) + ": cannot broadcast " + shape_string(b.shape()) +
                                   " onto " + shape_string(a.shape()));
}

Tensor column_sums(const Tensor &g, const Shape &shape) {
    Tensor out(shape);
    const auto r = g.rows(), c = g.cols();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j] += g.at(i, j);
    return out;
}

template <typename F>
Tensor map(const Tensor &a, F f) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

}  // namespace

Var matmul(Var a, Var b) {
    const auto &A = a.value();
    const auto &B = b.value();
    require_matrix(A, "matmul");
    require_matrix(B, "matmul");
    require(A.cols() == B.rows(), ErrorKind::Dimension,
            "matmul: " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
    Tensor out({A.rows(), B.cols()});
    out.mat().noalias() = A.mat() * B.mat();
    return tape_of(a).record("matmul", {a, b}, std::move(out), [](const BackwardContext &ctx) {
        const auto &G = ctx.grad();
        if (ctx.needs(0)) {
            Tensor da(ctx.input(0).shape());
            da.mat().noalias() = G.mat() * ctx.input(1).mat().transpose();
            ctx.accumulate(0, da);
        }
        if (ctx.needs(1)) {
            Tensor db(ctx.input(1).shape());
            db.mat().noalias() = ctx.input(0).mat().transpose() * G.mat();
            ctx.accumulate(1, db);
        }
    });
}

Var matmul_nt(Var a, Var b) {
    const auto &A = a.value();
    const auto &B = b.value();
    require_matrix(A, "matmul_nt");
    require_matrix(B, "matmul_nt");
    require(A.cols() == B.cols(), ErrorKind::Dimension,
            "matmul_nt: " + shape_string(A.shape()) + " x " + shape_string(B.shape()) + "^T");
    Tensor out({A.rows(), B.rows()});
    out.mat().noalias() = A.mat() * B.mat().transpose();
    return tape_of(a).record("matmul_nt", {a, b}, std::move(out), [](const BackwardContext &ctx) {
        const auto &G = ctx.grad();
        if (ctx.needs(0)) {
            Tensor da(ctx.input(0).shape());
            da.mat().noalias() = G.mat() * ctx.input(1).mat();
            ctx.accumulate(0, da);
        }
        if (ctx.needs(1)) {
            Tensor db(ctx.input(1).shape());
            db.mat().noalias() = G.mat().transpose() * ctx.input(0).mat();
            ctx.accumulate(1, db);
        }
    });
}

Var transpose(Var a) {
    const auto &A = a.value();
    require_matrix(A, "transpose");
    Tensor out({A.cols(), A.rows()});
    out.mat() = A.mat().transpose();
    return tape_of(a).record("transpose", {a}, std::move(out), [](const BackwardContext &ctx) {
        Tensor da(ctx.input(0).shape());
        da.mat() = ctx.grad().mat().transpose();
        ctx.accumulate(0, da);
    });
}

Var add(Var a, Var b) {
    const auto &A = a.value();
    const auto &B = b.value();
    const auto kind = broadcast_kind(A, B, "add");
    Tensor out = A;
    const auto c = B.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[kind == Broadcast::Same ? i : i % c];
    return tape_of(a).record("add", {a, b}, std::move(out), [kind](const BackwardContext &ctx) {
        if (ctx.needs(0)) ctx.accumulate(0, ctx.grad());
        if (ctx.needs(1)) {
            if (kind == Broadcast::Same)
                ctx.accumulate(1, ctx.grad());
            else
                ctx.accumulate(1, column_sums(ctx.grad(), ctx.input(1).shape()));
        }
    });
}

Var sub(Var a, Var b) {
    const auto &A = a.value();
    const auto &B = b.value();
    const auto kind = broadcast_kind(A, B, "sub");
    Tensor out = A;
    const auto c = B.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[kind == Broadcast::Same ? i : i % c];
    return tape_of(a).record("sub", {a, b}, std::move(out), [kind](const BackwardContext &ctx) {
        if (ctx.needs(0)) ctx.accumulate(0, ctx.grad());
        if (ctx.needs(1)) {
            Tensor g = kind == Broadcast::Same ? ctx.grad()
                                               : column_sums(ctx.grad(), ctx.input(1).shape());
            for (auto &v : g.data()) v = -v;
            ctx.accumulate(1, g);
        }
    });
}

Var mul(Var a, Var b) {
    const auto &A = a.value();
    const auto &B = b.value();
    const auto kind = broadcast_kind(A, B, "mul");
    Tensor out = A;
    const auto c = B.size();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[kind == Broadcast::Same ? i : i % c];
    return tape_of(a).record("mul", {a, b}, std::move(out), [kind](const BackwardContext &ctx) {
        const auto &G = ctx.grad();
        const auto &A = ctx.input(0);
        const auto &B = ctx.input(1);
        const auto c = B.size();
        if (ctx.needs(0)) {
            Tensor da(A.shape());
            for (std::size_t i = 0; i < da.size(); ++i)
                da[i] = G[i] * B[kind == Broadcast::Same ? i : i % c];
            ctx.accumulate(0, da);
        }
        if (ctx.needs(1)) {
            Tensor prod(A.shape());
            for (std::size_t i = 0; i < prod.size(); ++i) prod[i] = G[i] * A[i];
            ctx.accumulate(1, kind == Broadcast::Same ? prod : column_sums(prod, B.shape()));
        }
    });
}

Var scale(Var a, double s) {
    Tensor out = map(a.value(), [s](double v) { return v * s; });
    return tape_of(a).record("scale", {a}, std::move(out), [s](const BackwardContext &ctx) {
        ctx.accumulate(0, map(ctx.grad(), [s](double v) { return v * s; }));
    });
}

Var relu(Var a) {
    Tensor out = map(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
    return tape_of(a).record("relu", {a}, std::move(out), [](const BackwardContext &ctx) {
        const auto &x = ctx.input(0);
        Tensor g = ctx.grad();
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!(x[i] > 0.0)) g[i] = 0.0;
        ctx.accumulate(0, g);
    });
}

Var tanh(Var a) {
    Tensor out = map(a.value(), [](double v) { return std::tanh(v); });
    return tape_of(a).record("tanh", {a}, std::move(out), [](const BackwardContext &ctx) {
        const auto &y = ctx.output();
        Tensor g = ctx.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
        ctx.accumulate(0, g);
    });
}

Var exp(Var a) {
    Tensor out = map(a.value(), [](double v) { return std::exp(v); });
    return tape_of(a).record("exp", {a}, std::move(out), [](const BackwardContext &ctx) {
        const auto &y = ctx.output();
        Tensor g = ctx.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i];
        ctx.accumulate(0, g);
    });
}

Var log(Var a) {
    Tensor out = map(a.value(), [](double v) { return std::log(v); });
    return tape_of(a).record("log", {a}, std::move(out), [](const BackwardContext &ctx) {
        const auto &x = ctx.input(0);
        Tensor g = ctx.grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] /= x[i];
        ctx.accumulate(0, g);
    });
}

Var softmax_rows(Var a) {
    const auto &A = a.value();
    require(A.rank() >= 1, ErrorKind::Dimension, "softmax_rows on a scalar");
    Tensor out(A.shape());
    const auto r = A.rows(), c = A.cols();
    for (std::size_t i = 0; i < r; ++i) {
        double m = A[i * c];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, A[i * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (out[i * c + j] = std::exp(A[i * c + j] - m));
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
    }
    return tape_of(a).record("softmax_rows", {a}, std::move(out), [](const BackwardContext &ctx) {
        const auto &y = ctx.output();
        const auto &G = ctx.grad();
        const auto r = y.rows(), c = y.cols();
        Tensor g(y.shape());
        for (std::size_t i = 0; i < r; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += G[i * c + j] * y[i * c + j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] = y[i * c + j] * (G[i * c + j] - dot);
        }
        ctx.accumulate(0, g);
    });
}

Var log_softmax_rows(Var a) {
    const auto &A = a.value();
    require(A.rank() >= 1, ErrorKind::Dimension, "log_softmax_rows on a scalar");
    Tensor out(A.shape());
    const auto r = A.rows(), c = A.cols();
    for (std::size_t i = 0; i < r; ++i) {
        double m = A[i * c];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, A[i * c + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(A[i * c + j] - m);
        const double lse = m + std::log(z);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = A[i * c + j] - lse;
    }
    return tape_of(a).record("log_softmax_rows", {a}, std::move(out), [](const BackwardContext &ctx) {
        const auto &y = ctx.output();
        const auto &G = ctx.grad();
        const auto r = y.rows(), c = y.cols();
        Tensor g(y.shape());
        for (std::size_t i = 0; i < r; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < c; ++j) gsum += G[i * c + j];
            for (std::size_t j = 0; j < c; ++j)
                g[i * c + j] = G[i * c + j] - std::exp(y[i * c + j]) * gsum;
        }
        ctx.accumulate(0, g);
    });
}

Var sum(Var a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return tape_of(a).record("sum", {a}, Tensor::scalar(s), [](const BackwardContext &ctx) {
        ctx.accumulate(0, Tensor::filled(ctx.input(0).shape(), ctx.grad()[0]));
    });
}

Var mean(Var a) {
    const auto n = static_cast<double>(a.value().size());
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return tape_of(a).record("mean", {a}, Tensor::scalar(s / n), [n](const BackwardContext &ctx) {
        ctx.accumulate(0, Tensor::filled(ctx.input(0).shape(), ctx.grad()[0] / n));
    });
}

Var sum_rows(Var a) {
    const auto &A = a.value();
    const auto r = A.rows(), c = A.cols();
    Tensor out({r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i] += A[i * c + j];
    return tape_of(a).record("sum_rows", {a}, std::move(out), [](const BackwardContext &ctx) {
        const auto &x = ctx.input(0);
        const auto c = x.cols();
        Tensor g(x.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = ctx.grad()[i / c];
        ctx.accumulate(0, g);
    });
}

Var l2norm_rows(Var a) {
    const auto &A = a.value();
    const auto r = A.rows(), c = A.cols();
    Tensor out({r});
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += A[i * c + j] * A[i * c + j];
        out[i] = std::sqrt(s);
    }
    return tape_of(a).record("l2norm_rows", {a}, std::move(out), [](const BackwardContext &ctx) {
        const auto &x = ctx.input(0);
        const auto &n = ctx.output();
        const auto c = x.cols();
        Tensor g(x.shape());
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double ni = n[i / c];
            g[i] = ni < kNormalizeEps ? 0.0 : ctx.grad()[i / c] * x[i] / ni;
        }
        ctx.accumulate(0, g);
    });
}

Var normalize_rows(Var a) {
    const auto &A = a.value();
    const auto r = A.rows(), c = A.cols();
    Tensor out(A.shape());
    std::vector<double> norms(r);
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += A[i * c + j] * A[i * c + j];
        norms[i] = std::sqrt(s);
        if (norms[i] < kNormalizeEps) continue;
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = A[i * c + j] / norms[i];
    }
    return tape_of(a).record(
        "normalize_rows", {a}, std::move(out), [norms = std::move(norms)](const BackwardContext &ctx) {
            const auto &y = ctx.output();
            const auto &G = ctx.grad();
            const auto c = y.cols();
            Tensor g(y.shape());
            for (std::size_t i = 0; i < norms.size(); ++i) {
                if (norms[i] < kNormalizeEps) continue;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += y[i * c + j] * G[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    g[i * c + j] = (G[i * c + j] - y[i * c + j] * dot) / norms[i];
            }
            ctx.accumulate(0, g);
        });
}

Var select_cols(Var a, std::vector<std::size_t> cols) {
    const auto &A = a.value();
    require_matrix(A, "select_cols");
    require(!cols.empty(), ErrorKind::Contract, "select_cols with no columns");
    for (auto c : cols)
        require(c < A.cols(), ErrorKind::Contract,
                "select_cols: column " + std::to_string(c) + " absent from width " +
                    std::to_string(A.cols()));
    const auto r = A.rows(), w = cols.size();
    Tensor out({r, w});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) out.at(i, j) = A.at(i, cols[j]);
    return tape_of(a).record(
        "select_cols", {a}, std::move(out), [cols = std::move(cols)](const BackwardContext &ctx) {
            const auto &G = ctx.grad();
            Tensor g(ctx.input(0).shape());
            for (std::size_t i = 0; i < G.rows(); ++i)
                for (std::size_t j = 0; j < cols.size(); ++j) g.at(i, cols[j]) += G.at(i, j);
            ctx.accumulate(0, g);
        });
}

Var concat_rows(Var a, Var b) {
    const auto &A = a.value();
    const auto &B = b.value();
    require_matrix(A, "concat_rows");
    require_matrix(B, "concat_rows");
    const Tensor parts[] = {A, B};
    Tensor out = vstack(parts);
    return tape_of(a).record("concat_rows", {a, b}, std::move(out), [](const BackwardContext &ctx) {
        const auto &G = ctx.grad();
        const auto split = ctx.input(0).size();
        if (ctx.needs(0))
            ctx.accumulate(0, Tensor(ctx.input(0).shape(),
                                     std::vector<double>(G.storage().begin(), G.storage().begin() + split)));
        if (ctx.needs(1))
            ctx.accumulate(1, Tensor(ctx.input(1).shape(),
                                     std::vector<double>(G.storage().begin() + split, G.storage().end())));
    });
}

}  // namespace apr::ad
