#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include "data.hpp"
#include "model.hpp"

namespace apr {

// Pseudo-replay candidates for one old class: indices into the current task's
// training set plus the policy recorded when each index was scored.
struct CandidateClass {
    std::uint32_t cls = 0;
    std::vector<std::uint32_t> indices;
    std::vector<AugPolicy> policies;
};

struct CandidateSet {
    std::vector<CandidateClass> classes;  // ascending class id

    bool empty() const { return classes.empty(); }
    const CandidateClass *find(std::uint32_t cls) const;
    std::size_t total() const;
};

inline constexpr std::size_t kNoCap = std::numeric_limits<std::size_t>::max();

struct CandidateConfig {
    std::size_t k = 200;
    std::size_t cap = kNoCap;  // max classes a single sample may be assigned to
};

// Scores every sample of `data` against each prototype under a freshly drawn
// policy and keeps the k nearest per class. Classes are processed in
// ascending id order; ties fall to the smaller sample index.
CandidateSet sample_candidates(const ExtractorParams &f_old, const LabeledSet &data,
                               const std::map<std::uint32_t, Tensor> &prototypes, const CandidateConfig &cfg,
                               const AugFamily &family, Rng &rng);

// Distances d_i = ||f_old(P_i(x_i)) - mu||_2 for a fixed policy list.
std::vector<double> candidate_distances(const ExtractorParams &f_old, const Tensor &samples,
                                        const std::vector<AugPolicy> &policies, const Tensor &mu);

std::vector<char> encode_candidates(const CandidateSet &set);
CandidateSet decode_candidates(const std::vector<char> &bytes);

struct AttackConfig {
    double alpha = 64.0;
    std::size_t iterations = 4;
    bool noise = true;
    bool unit_norm = false;  // divide by ||grad|| instead of ||grad||^2
};

void validate(const AttackConfig &cfg);

// r = sqrt(sum_c Tr(Sigma_c) / d)
double noise_magnitude(const std::vector<Tensor> &covariances, std::size_t d);

// Moves each row of x so that f_old(x) approaches its target row. Noise for
// sample i at iteration j is drawn from a stream keyed by (seed, i, j).
Tensor adversarial_attack(const ExtractorParams &f_old, const Tensor &x, const Tensor &targets,
                          const AttackConfig &cfg, double noise_r, std::uint64_t seed);

// Per-row Euclidean distance ||f(x) - target||_2.
std::vector<double> feature_distances(const ExtractorParams &f, const Tensor &x, const Tensor &targets);

}  // namespace apr
