#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "replay.hpp"

namespace apr {

struct AdcConfig {
    double alpha = 6.32;
    std::size_t iterations = 9;
    std::size_t candidates = 1000;
    bool unit_norm = false;  // step alpha * grad / ||grad|| instead of the attack's 1 / ||grad||^2
};

struct TransferConfig {
    double lr = 1e-4;
    bool auto_lr = false;  // step 1/L from the largest eigenvalue of the normal matrix; lr ignored
    std::size_t epochs = 64;
    bool center = true;   // fit on mean-removed pairs
    bool shared = false;  // one W per task instead of one per class
};

void validate(const AdcConfig &cfg);
void validate(const TransferConfig &cfg);

struct DriftSamples {
    Tensor x;
    bool truncated = false;  // fewer samples available than requested
};

// Nearest samples to `mu` under f_old (no augmentation), attacked toward `mu`
// with the ADC settings and noise disabled.
DriftSamples generate_drift_samples(const ExtractorParams &f_old, const LabeledSet &data, const Tensor &mu,
                                    const AdcConfig &cfg, std::uint64_t seed);

struct Transfer {
    Tensor W;      // [d, d]
    Tensor delta;  // [d] = mean(new) - mean(old)
    double initial_mse = 0.0;
    double final_mse = 0.0;
};

// Full-batch gradient descent on mean((new - W old)^2), W starting at I.
Transfer fit_transfer_matrix(const Tensor &feats_old, const Tensor &feats_new, const TransferConfig &cfg);

struct LowRankCov {
    Tensor U;  // [d, k]
    Tensor S;  // [k, k]
    Tensor V;  // [k, d]

    std::size_t rank() const { return S.rows(); }
};

struct StoreEntry {
    std::uint32_t cls = 0;
    Tensor mean;                              // [d]
    std::variant<Tensor, LowRankCov> cov;     // full [d, d] or rank-k factors
    std::uint32_t created_task = 0;
    std::uint32_t calibrated_task = 0;

    bool decomposed() const { return std::holds_alternative<LowRankCov>(cov); }
    Tensor covariance() const;  // recomposes when decomposed
    std::size_t stored_cov_scalars() const;
};

struct PrototypeStore {
    std::map<std::uint32_t, StoreEntry> entries;
    std::size_t feature_dim = 0;

    std::vector<std::uint32_t> classes() const;
    std::map<std::uint32_t, Tensor> means() const;
    std::vector<Tensor> covariances() const;
};

// mu += delta, Sigma = W Sigma W^T (re-symmetrised). Decomposed entries are
// recomposed, calibrated and compressed again at the same rank.
StoreEntry calibrate(const StoreEntry &entry, const Tensor &W, const Tensor &delta);

// Sigma_s = Sigma + (g1 V1 + g2 V2) I with V1/V2 the mean diagonal/off-diagonal
// entries, followed by correlation normalisation.
Tensor shrink_normalize(const Tensor &sigma, double gamma1, double gamma2);

LowRankCov decompose(const Tensor &sigma, std::size_t k);
Tensor recompose(const LowRankCov &f);

inline std::size_t decomposed_size(std::size_t d, std::size_t k) { return 2 * k * d + k * k; }

struct ShrinkageChoice {
    double gamma1 = 1.0;
    double gamma2 = 1.0;
    double val_accuracy = 0.0;
};

struct ShrinkageGrid {
    std::vector<double> values{1, 3, 8, 16, 24, 32, 40, 48, 56, 64, 72, 80, 88, 96, 104, 112, 120};
    bool coupled = true;  // gamma1 == gamma2
};

// Exhaustive search maximising Mahalanobis accuracy on the validation split.
ShrinkageChoice tune_shrinkage(const PrototypeStore &store, const ExtractorParams &f, const LabeledSet &val,
                               const ShrinkageGrid &grid);

std::vector<char> encode_store(const PrototypeStore &store);
PrototypeStore decode_store(const std::vector<char> &bytes);
void save_store(const PrototypeStore &store, const std::string &path);
PrototypeStore load_store(const std::string &path);

// Replaces every full covariance with its rank-k factors (k = 0 recomposes to full).
PrototypeStore compress_store(const PrototypeStore &store, std::size_t k);

}  // namespace apr
