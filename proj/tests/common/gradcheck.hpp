// Central-difference gradient checks shared by the unit and acceptance tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "train.hpp"

namespace gradcheck {

using apr::Tensor;
namespace ad = apr::ad;

// Builds a scalar from the tape leaves.
using Builder = std::function<ad::Var(ad::Tape &, const std::vector<ad::Var> &)>;

inline Tensor normal(apr::Shape shape, apr::Rng &rng, double scale = 1.0, double shift = 0.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto &v : t.storage()) v = shift + scale * n(rng);
    return t;
}

inline Tensor uniform(apr::Shape shape, apr::Rng &rng, double lo, double hi) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto &v : t.storage()) v = u(rng);
    return t;
}

// Pushes entries away from 0 so relu kinks stay outside the FD stencil.
inline Tensor off_kink(Tensor t, double margin = 1e-3) {
    for (auto &v : t.storage())
        if (std::abs(v) < margin) v = v < 0 ? -margin : margin;
    return t;
}

inline double evaluate(const Builder &build, const std::vector<Tensor> &inputs) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto &x : inputs) leaves.push_back(tape.leaf(x));
    return build(tape, leaves).value().item();
}

// ||g_ad - g_fd|| / max(||g_ad||, ||g_fd||, 1e-8) over all inputs jointly.
inline double relative_error(const Builder &build, const std::vector<Tensor> &inputs, double h = 1e-6) {
    ad::Tape tape;
    std::vector<ad::Var> leaves;
    for (const auto &x : inputs) leaves.push_back(tape.leaf(x));
    const auto out = build(tape, leaves);
    const auto res = tape.value_and_grad(out, leaves);

    double diff = 0.0, na = 0.0, nf = 0.0;
    auto probe = inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            const double x0 = inputs[k][i];
            probe[k][i] = x0 + h;
            const double up = evaluate(build, probe);
            probe[k][i] = x0 - h;
            const double dn = evaluate(build, probe);
            probe[k][i] = x0;
            const double fd = (up - dn) / (2.0 * h);
            const double g = res.grads[k][i];
            diff += (g - fd) * (g - fd);
            na += g * g;
            nf += fd * fd;
        }
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nf), 1e-8});
}

// Contracts an op output with a fixed random tensor so every output entry
// reaches the scalar with its own weight.
inline ad::Var contract(ad::Tape &tape, ad::Var out, std::uint64_t seed) {
    apr::Rng rng(seed);
    return ad::sum(ad::mul(out, tape.constant(normal(out.shape(), rng))));
}

struct OpCase {
    std::string name;
    std::function<std::vector<Tensor>(apr::Rng &)> inputs;
    std::function<ad::Var(ad::Tape &, const std::vector<ad::Var> &)> op;
};

inline std::vector<OpCase> op_cases() {
    auto dims = [](apr::Rng &rng) {
        std::uniform_int_distribution<std::size_t> u(1, 5);
        return std::pair{u(rng), u(rng)};
    };
    std::vector<OpCase> cases;
    cases.push_back({"matmul",
                     [=](apr::Rng &rng) {
                         auto [n, k] = dims(rng);
                         auto m = dims(rng).first;
                         return std::vector{normal({n, k}, rng), normal({k, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::matmul(v[0], v[1]); }});
    cases.push_back({"matmul_nt",
                     [=](apr::Rng &rng) {
                         auto [n, k] = dims(rng);
                         auto m = dims(rng).first;
                         return std::vector{normal({n, k}, rng), normal({m, k}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::matmul_nt(v[0], v[1]); }});
    cases.push_back({"transpose",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::transpose(v[0]); }});
    cases.push_back({"add",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng), normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::add(v[0], v[1]); }});
    cases.push_back({"add_broadcast",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng), normal({m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::add(v[0], v[1]); }});
    cases.push_back({"sub",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng), normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::sub(v[0], v[1]); }});
    cases.push_back({"mul",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng), normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::mul(v[0], v[1]); }});
    cases.push_back({"scale",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::scale(v[0], -1.7); }});
    cases.push_back({"relu",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{off_kink(normal({n, m}, rng))};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::relu(v[0]); }});
    cases.push_back({"tanh",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::tanh(v[0]); }});
    cases.push_back({"exp",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::exp(v[0]); }});
    cases.push_back({"log",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{uniform({n, m}, rng, 0.5, 3.0)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::log(v[0]); }});
    cases.push_back({"softmax_rows",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng, 2.0)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::softmax_rows(v[0]); }});
    cases.push_back({"log_softmax_rows",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng, 2.0)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::log_softmax_rows(v[0]); }});
    cases.push_back({"sum",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) {
                         return ad::mul(ad::sum(v[0]), ad::sum(v[0]));
                     }});
    cases.push_back({"mean",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::mul(ad::mean(v[0]), ad::mean(v[0])); }});
    cases.push_back({"sum_rows",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::sum_rows(v[0]); }});
    cases.push_back({"l2norm_rows",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng, 1.0, 0.3)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::l2norm_rows(v[0]); }});
    cases.push_back({"normalize_rows",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         return std::vector{normal({n, m}, rng, 1.0, 0.3)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::normalize_rows(v[0]); }});
    cases.push_back({"select_cols",
                     [=](apr::Rng &rng) {
                         auto n = dims(rng).first;
                         return std::vector{normal({n, 5}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::select_cols(v[0], {4, 0, 2}); }});
    cases.push_back({"concat_rows",
                     [=](apr::Rng &rng) {
                         auto [n, m] = dims(rng);
                         auto n2 = dims(rng).first;
                         return std::vector{normal({n, m}, rng), normal({n2, m}, rng)};
                     },
                     [](ad::Tape &, const std::vector<ad::Var> &v) { return ad::concat_rows(v[0], v[1]); }});
    return cases;
}

// Scalar builder for one op case under a given seed.
inline Builder op_builder(const OpCase &c, std::uint64_t seed) {
    return [&c, seed](ad::Tape &tape, const std::vector<ad::Var> &v) {
        auto out = c.op(tape, v);
        return out.value().rank() == 0 ? out : contract(tape, out, seed ^ 0x5bd1e995ULL);
    };
}

// Combined incremental loss with every network parameter as a leaf. Small
// widths keep the number of relu pre-activations, and so the chance of one
// sitting inside the FD stencil, low.
struct LossCase {
    apr::Network net;
    Tensor x_new, x_apr, prev;
    std::vector<std::uint32_t> labels;
    apr::LossConfig loss;
};

inline LossCase loss_case(std::uint64_t seed, apr::HeadMode mode) {
    apr::Rng rng(seed);
    LossCase c;
    c.net.extractor = apr::ExtractorParams::mlp({6, 7, 4}, {apr::Activation::Relu, apr::Activation::Identity}, rng);
    for (auto &l : c.net.extractor.layers) l.bias = normal(l.bias.shape(), rng, 0.1);
    c.net.head = apr::ClassifierHead::create(3, 4, mode, 4.0, 0.5, rng);
    c.net.head.add_classes(2, 0.5, rng);
    c.x_new = normal({4, 6}, rng);
    c.x_apr = normal({3, 6}, rng);
    c.prev = normal({7, 3}, rng, 2.0);
    c.labels = {0, 1, 1, 0};
    c.loss.lambda_kd = 3.0;
    c.loss.kd_temperature = 2.0;
    return c;
}

inline std::vector<Tensor> loss_inputs(const LossCase &c) {
    std::vector<Tensor> in;
    for (const auto *p : apr::parameters(c.net)) in.push_back(*p);
    return in;
}

inline Builder loss_builder(const LossCase &c) {
    return [&c](ad::Tape &tape, const std::vector<ad::Var> &v) {
        apr::BoundExtractor f;
        std::size_t k = 0;
        for (const auto &l : c.net.extractor.layers) {
            f.weights.push_back(v[k++]);
            f.biases.push_back(v[k++]);
            f.activations.push_back(l.activation);
        }
        apr::BoundHead g = apr::bind(tape, c.net.head, false);
        g.weight = v[k];
        return apr::incremental_loss(tape, f, g, c.x_new, c.labels, &c.x_apr, &c.prev, c.loss).total;
    };
}

}  // namespace gradcheck
