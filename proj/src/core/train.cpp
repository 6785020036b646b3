#include "train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace apr {

void validate(const LossConfig &cfg) {
    require(cfg.lambda_kd >= 0.0 && std::isfinite(cfg.lambda_kd), ErrorKind::Config, "lambda_kd must be >= 0");
    require(cfg.kd_temperature > 0.0, ErrorKind::Config, "kd temperature must be positive");
    require(cfg.ce_temperature > 0.0, ErrorKind::Config, "ce temperature must be positive");
}

void validate(const OptimConfig &cfg) {
    require(cfg.lr >= 0.0 && std::isfinite(cfg.lr), ErrorKind::Config, "learning rate must be >= 0");
    require(cfg.weight_decay >= 0.0, ErrorKind::Config, "weight decay must be >= 0");
    require(cfg.momentum >= 0.0 && cfg.momentum < 1.0, ErrorKind::Config, "momentum must lie in [0, 1)");
    require(cfg.epochs >= 1, ErrorKind::Config, "epochs must be positive");
    require(cfg.batch_size >= 1 && cfg.replay_batch_size >= 1, ErrorKind::Config, "batch sizes must be positive");
}

double cosine_lr(double base, std::size_t epoch, std::size_t epochs) {
    return 0.5 * base * (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

ad::Var local_ce_loss(ad::Var logits_new, const std::vector<std::uint32_t> &labels_rel, double temperature) {
    const auto &z = logits_new.value();
    require(z.rank() == 2 && z.rows() == labels_rel.size(), ErrorKind::Dimension, "one label per logit row");
    const auto b = z.rows(), c = z.cols();
    Tensor onehot({b, c});
    for (std::size_t i = 0; i < b; ++i) {
        require(labels_rel[i] < c, ErrorKind::Contract,
                "relative label " + std::to_string(labels_rel[i]) + " outside " + std::to_string(c) + " new classes");
        onehot.at(i, labels_rel[i]) = 1.0;
    }
    auto &tape = *logits_new.tape();
    const auto lsm = ad::log_softmax_rows(ad::scale(logits_new, 1.0 / temperature));
    return ad::scale(ad::sum(ad::mul(lsm, tape.constant(std::move(onehot)))), -1.0 / static_cast<double>(b));
}

ad::Var local_kd_loss(ad::Var logits_old_cur, const Tensor &logits_old_prev, double temperature) {
    const auto &cur = logits_old_cur.value();
    require(cur.same_shape(logits_old_prev), ErrorKind::Contract,
            "kd: current " + shape_string(cur.shape()) + " vs previous " + shape_string(logits_old_prev.shape()));
    const auto b = cur.rows(), c = cur.cols();
    Tensor p({b, c});
    double entropy_term = 0.0;  // sum p log p
    for (std::size_t i = 0; i < b; ++i) {
        double m = logits_old_prev.at(i, 0) / temperature;
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, logits_old_prev.at(i, j) / temperature);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(logits_old_prev.at(i, j) / temperature - m);
        const double lse = m + std::log(z);
        for (std::size_t j = 0; j < c; ++j) {
            const double lp = logits_old_prev.at(i, j) / temperature - lse;
            p.at(i, j) = std::exp(lp);
            if (p.at(i, j) > 0.0) entropy_term += p.at(i, j) * lp;
        }
    }
    auto &tape = *logits_old_cur.tape();
    const double w = temperature * temperature / static_cast<double>(b);
    const auto lsm = ad::log_softmax_rows(ad::scale(logits_old_cur, 1.0 / temperature));
    const auto cross = ad::scale(ad::sum(ad::mul(lsm, tape.constant(std::move(p)))), -w);
    return ad::add(cross, tape.constant(Tensor::scalar(w * entropy_term)));
}

IncrementalLoss incremental_loss(ad::Tape &tape, const BoundExtractor &f, const BoundHead &g, const Tensor &x_new,
                                 const std::vector<std::uint32_t> &labels_rel, const Tensor *x_apr,
                                 const Tensor *prev, const LossConfig &loss) {
    const auto feats_new = extract(f, tape.constant(x_new));
    const auto ce = local_ce_loss(logits(g, feats_new, Split::NewOnly), labels_rel, loss.ce_temperature);
    if (loss.lambda_kd <= 0.0) return {ce, ce, {}};
    require(prev != nullptr, ErrorKind::Contract, "kd needs the frozen model's logits");
    auto feats_kd = feats_new;
    if (x_apr != nullptr) feats_kd = ad::concat_rows(feats_new, extract(f, tape.constant(*x_apr)));
    const auto kd = local_kd_loss(logits(g, feats_kd, Split::OldOnly), *prev, loss.kd_temperature);
    return {ad::add(ce, ad::scale(kd, loss.lambda_kd)), ce, kd};
}

namespace {

struct StepLoss {
    ad::Var total;
    double ce = 0.0;
    double kd = 0.0;
};

class Sgd {
   public:
    Sgd(const OptimConfig &cfg, const Network &net) : cfg_(cfg) {
        for (const auto *p : parameters(net)) velocity_.push_back(Tensor::zeros(p->shape()));
    }

    void step(Network &net, const std::vector<Tensor> &grads, double lr) {
        auto params = parameters(net);
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto p = params[k]->data();
            auto g = grads[k].data();
            auto v = velocity_[k].data();
            for (std::size_t i = 0; i < p.size(); ++i) {
                double d = g[i] + cfg_.weight_decay * p[i];
                if (cfg_.momentum > 0.0) d = v[i] = cfg_.momentum * v[i] + d;
                p[i] -= lr * d;
            }
        }
    }

   private:
    OptimConfig cfg_;
    std::vector<Tensor> velocity_;
};

// Builds the loss on a fresh tape and returns gradients for every parameter.
struct StepResult {
    double total = 0.0;
    double ce = 0.0;
    double kd = 0.0;
    std::vector<Tensor> grads;
};

template <typename BuildLoss>
StepResult loss_and_grads(const Network &net, BuildLoss build) {
    ad::Tape tape;
    const auto f = bind(tape, net.extractor, true);
    const auto g = bind(tape, net.head, true);
    StepLoss loss = build(tape, f, g);
    std::vector<ad::Var> leaves;
    for (std::size_t l = 0; l < f.weights.size(); ++l) {
        leaves.push_back(f.weights[l]);
        leaves.push_back(f.biases[l]);
    }
    leaves.push_back(g.weight);
    auto res = tape.value_and_grad(loss.total, leaves);
    return StepResult{res.value, loss.ce, loss.kd, std::move(res.grads)};
}

std::vector<std::size_t> shuffled(std::size_t n, Rng &rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i-- > 1;) std::swap(order[i], order[rng() % (i + 1)]);
    return order;
}

Tensor augment(const Tensor &x, const ReplayOptions &opts, std::uint64_t seed) {
    if (!opts.train_augment || !opts.family.enabled) return x;
    Rng rng(seed);
    std::vector<AugPolicy> policies;
    for (std::size_t i = 0; i < x.rows(); ++i) policies.push_back(sample_policy(opts.family, x.cols(), rng));
    return apply_policies(x, policies);
}

std::vector<std::uint32_t> relative_labels(const LabeledSet &data, const std::vector<std::size_t> &rows,
                                           std::size_t offset) {
    std::vector<std::uint32_t> out;
    for (auto r : rows) {
        require(data.labels[r] >= offset, ErrorKind::Contract, "old-class sample in the new-task training set");
        out.push_back(static_cast<std::uint32_t>(data.labels[r] - offset));
    }
    return out;
}

}  // namespace

ModelState train_initial(ModelState state, const LabeledSet &data, const OptimConfig &optim, const LossConfig &loss,
                         const ReplayOptions &opts, std::uint64_t seed, const EpochCallback &on_epoch) {
    validate(optim);
    validate(loss);
    require(data.split == SplitTag::Train, ErrorKind::Contract, "training on a non-train split");
    auto &net = state.current;
    Sgd sgd(optim, net);
    const auto N = data.size();
    const auto offset = net.head.old_classes;
    for (std::size_t epoch = 0; epoch < optim.epochs; ++epoch) {
        const double lr = cosine_lr(optim.lr, epoch, optim.epochs);
        auto rng = derive_rng(seed, {1, epoch});
        const auto order = shuffled(N, rng);
        EpochLog log{epoch, lr, 0, 0, 0};
        std::size_t steps = 0;
        for (std::size_t start = 0; start < N; start += optim.batch_size, ++steps) {
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(std::min(N, start + optim.batch_size)));
            const Tensor x = augment(data.samples.rows_subset(rows), opts, derive_seed(seed, {2, epoch, steps}));
            const auto labels = relative_labels(data, rows, offset);
            const auto step = loss_and_grads(net, [&](ad::Tape &tape, const BoundExtractor &f, const BoundHead &g) {
                const auto z = logits(g, extract(f, tape.constant(x)), Split::NewOnly);
                const auto ce = local_ce_loss(z, labels, loss.ce_temperature);
                return StepLoss{ce, ce.value().item(), 0.0};
            });
            sgd.step(net, step.grads, lr);
            log.loss += step.total;
            log.ce += step.ce;
        }
        log.loss /= static_cast<double>(steps);
        log.ce /= static_cast<double>(steps);
        if (on_epoch) on_epoch(log);
    }
    return state;
}

ModelState run_task(ModelState state, const LabeledSet &data, const CandidateSet &candidates,
                    const std::map<std::uint32_t, Tensor> &prototypes, double noise_r, const OptimConfig &optim,
                    const LossConfig &loss, const ReplayOptions &opts, std::uint64_t seed,
                    const EpochCallback &on_epoch) {
    validate(optim);
    validate(loss);
    require(state.task >= 1 && state.frozen_previous.has_value(), ErrorKind::Contract,
            "run_task needs t >= 1 and a frozen snapshot");
    require(data.split == SplitTag::Train, ErrorKind::Contract, "training on a non-train split");
    auto &net = state.current;
    const auto &frozen = *state.frozen_previous;
    const auto n_old = net.head.old_classes;
    require(frozen.head.classes() == n_old, ErrorKind::Contract, "frozen head does not cover the old classes");

    const bool use_kd = loss.lambda_kd > 0.0;
    const bool use_replay = use_kd && opts.replay;
    std::vector<const CandidateClass *> pools;
    if (use_replay) {
        for (std::uint32_t c = 0; c < n_old; ++c) {
            const auto *cc = candidates.find(c);
            require(cc != nullptr && !cc->indices.empty(), ErrorKind::Contract,
                    "missing candidates for old class " + std::to_string(c));
            require(prototypes.count(c) == 1, ErrorKind::Contract, "missing prototype for old class " + std::to_string(c));
            for (auto idx : cc->indices)
                require(idx < data.size(), ErrorKind::Contract, "candidate index outside the task data");
            pools.push_back(cc);
        }
        if (opts.attack) validate(opts.attack_cfg);
    }

    Sgd sgd(optim, net);
    const auto N = data.size();
    for (std::size_t epoch = 0; epoch < optim.epochs; ++epoch) {
        const double lr = cosine_lr(optim.lr, epoch, optim.epochs);
        auto rng = derive_rng(seed, {1, epoch});
        const auto order = shuffled(N, rng);
        std::vector<std::vector<std::size_t>> replay_order;
        std::vector<std::size_t> cursor(pools.size(), 0);
        for (const auto *p : pools) replay_order.push_back(shuffled(p->indices.size(), rng));
        std::size_t rr = 0;  // round-robin position over old classes

        EpochLog log{epoch, lr, 0, 0, 0};
        std::size_t steps = 0;
        for (std::size_t start = 0; start < N; start += optim.batch_size, ++steps) {
            const std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                order.begin() + static_cast<std::ptrdiff_t>(std::min(N, start + optim.batch_size)));
            const Tensor x_new = augment(data.samples.rows_subset(rows), opts, derive_seed(seed, {2, epoch, steps}));
            const auto labels = relative_labels(data, rows, n_old);

            Tensor x_apr;
            if (use_replay) {
                std::vector<std::size_t> idx;
                std::vector<AugPolicy> policies;
                std::vector<Tensor> targets;
                for (std::size_t j = 0; j < optim.replay_batch_size; ++j, ++rr) {
                    const auto m = rr % pools.size();
                    const auto *p = pools[m];
                    const auto pos = replay_order[m][cursor[m]++ % p->indices.size()];
                    const auto &mu = prototypes.at(p->cls);
                    idx.push_back(p->indices[pos]);
                    policies.push_back(p->policies[pos]);
                    targets.push_back(mu.reshaped({1, mu.size()}));
                }
                x_apr = apply_policies(data.samples.rows_subset(idx), policies);
                if (opts.attack)
                    x_apr = adversarial_attack(frozen.extractor, x_apr, vstack(targets), opts.attack_cfg, noise_r,
                                               derive_seed(seed, {3, epoch, steps}));
            }
            Tensor prev;
            if (use_kd) {
                if (use_replay) {
                    const Tensor parts[] = {x_new, x_apr};
                    prev = logits(frozen.head, extract(frozen.extractor, vstack(parts)), Split::All);
                } else {
                    prev = logits(frozen.head, extract(frozen.extractor, x_new), Split::All);
                }
            }

            const auto step = loss_and_grads(net, [&](ad::Tape &tape, const BoundExtractor &f, const BoundHead &g) {
                const auto l = incremental_loss(tape, f, g, x_new, labels, use_replay ? &x_apr : nullptr,
                                                use_kd ? &prev : nullptr, loss);
                return StepLoss{l.total, l.ce.value().item(), use_kd ? l.kd.value().item() : 0.0};
            });
            sgd.step(net, step.grads, lr);
            log.loss += step.total;
            log.ce += step.ce;
            log.kd += step.kd;
        }
        log.loss /= static_cast<double>(steps);
        log.ce /= static_cast<double>(steps);
        log.kd /= static_cast<double>(steps);
        if (on_epoch) on_epoch(log);
    }
    return state;
}

std::map<std::uint32_t, ClassStats> compute_class_stats(const ExtractorParams &f, const LabeledSet &data,
                                                        const std::vector<std::uint32_t> &classes) {
    std::map<std::uint32_t, ClassStats> out;
    for (auto c : classes) {
        const auto rows = data.rows_of(c);
        require(rows.size() >= 2, ErrorKind::Stats,
                "class " + std::to_string(c) + " has " + std::to_string(rows.size()) + " samples; need at least 2");
        const Tensor feats = extract(f, data.samples.rows_subset(rows));
        const Eigen::MatrixXd X = feats.to_eigen();
        const Eigen::RowVectorXd mu = X.colwise().mean();
        const Eigen::MatrixXd centered = X.rowwise() - mu;
        Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows.size() - 1);
        cov = (0.5 * (cov + cov.transpose())).eval();
        out[c] = ClassStats{Tensor::vector(std::vector<double>(mu.data(), mu.data() + mu.size())),
                            Tensor::from_eigen(cov)};
    }
    return out;
}

}  // namespace apr
