#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "data.hpp"
#include "model.hpp"
#include "replay.hpp"

namespace apr {

struct LossConfig {
    double lambda_kd = 10.0;
    double kd_temperature = 2.0;
    double ce_temperature = 1.0;
};

struct OptimConfig {
    double lr = 0.1;
    double weight_decay = 5e-4;
    double momentum = 0.0;
    std::size_t epochs = 30;
    std::size_t batch_size = 64;         // B_t
    std::size_t replay_batch_size = 64;  // B_APR
};

void validate(const LossConfig &cfg);
void validate(const OptimConfig &cfg);

// Cosine decay from `base` to 0 over `epochs`, evaluated at the start of `epoch`.
double cosine_lr(double base, std::size_t epoch, std::size_t epochs);

// Mean softmax cross-entropy at `temperature`; labels index the columns of
// `logits_new` (relative class index within the current task).
ad::Var local_ce_loss(ad::Var logits_new, const std::vector<std::uint32_t> &labels_rel, double temperature);

// T^2 * KL(softmax(prev/T) || softmax(cur/T)), averaged over rows. `prev` is
// the frozen model's output and carries no gradient.
ad::Var local_kd_loss(ad::Var logits_old_cur, const Tensor &logits_old_prev, double temperature);

struct IncrementalLoss {
    ad::Var total;  // ce + lambda_kd * kd
    ad::Var ce;
    ad::Var kd;  // invalid when lambda_kd == 0
};

// Loss of one incremental step. CE runs over the new-class logits of x_new;
// KD runs over the old-class logits of x_new and, when given, x_apr, against
// the frozen model's logits `prev` for the same rows.
IncrementalLoss incremental_loss(ad::Tape &tape, const BoundExtractor &f, const BoundHead &g, const Tensor &x_new,
                                 const std::vector<std::uint32_t> &labels_rel, const Tensor *x_apr,
                                 const Tensor *prev, const LossConfig &loss);

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0.0;
    double loss = 0.0;
    double ce = 0.0;
    double kd = 0.0;
};

using EpochCallback = std::function<void(const EpochLog &)>;

struct ReplayOptions {
    bool replay = true;  // use pseudo-replay batches in KD
    bool attack = true;  // perturb them toward the prototypes
    AttackConfig attack_cfg;
    bool train_augment = true;  // fresh random policies on B_t
    AugFamily family;
};

// Task-0 training: cross-entropy over every class of the head.
ModelState train_initial(ModelState state, const LabeledSet &data, const OptimConfig &optim, const LossConfig &loss,
                         const ReplayOptions &opts, std::uint64_t seed, const EpochCallback &on_epoch = {});

// One incremental task: local CE on new classes over B_t plus local KD on old
// classes over B_t and the attacked pseudo-replay batch.
ModelState run_task(ModelState state, const LabeledSet &data, const CandidateSet &candidates,
                    const std::map<std::uint32_t, Tensor> &prototypes, double noise_r, const OptimConfig &optim,
                    const LossConfig &loss, const ReplayOptions &opts, std::uint64_t seed,
                    const EpochCallback &on_epoch = {});

struct ClassStats {
    Tensor mean;        // [d]
    Tensor covariance;  // [d, d], unbiased
};

std::map<std::uint32_t, ClassStats> compute_class_stats(const ExtractorParams &f, const LabeledSet &data,
                                                        const std::vector<std::uint32_t> &classes);

}  // namespace apr
