#include "replay.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

namespace apr {

const CandidateClass *CandidateSet::find(std::uint32_t cls) const {
    for (const auto &c : classes)
        if (c.cls == cls) return &c;
    return nullptr;
}

std::size_t CandidateSet::total() const {
    std::size_t n = 0;
    for (const auto &c : classes) n += c.indices.size();
    return n;
}

std::vector<double> candidate_distances(const ExtractorParams &f_old, const Tensor &samples,
                                        const std::vector<AugPolicy> &policies, const Tensor &mu) {
    const Tensor feats = extract(f_old, apply_policies(samples, policies));
    require(mu.size() == feats.cols(), ErrorKind::Dimension, "prototype width does not match features");
    std::vector<double> d(feats.rows());
    for (std::size_t i = 0; i < feats.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < feats.cols(); ++j) {
            const double e = feats.at(i, j) - mu[j];
            s += e * e;
        }
        d[i] = std::sqrt(s);
    }
    return d;
}

CandidateSet sample_candidates(const ExtractorParams &f_old, const LabeledSet &data,
                               const std::map<std::uint32_t, Tensor> &prototypes, const CandidateConfig &cfg,
                               const AugFamily &family, Rng &rng) {
    const auto N = data.size();
    const auto M = prototypes.size();
    require(cfg.k >= 1, ErrorKind::Config, "candidate k must be positive");
    require(cfg.cap >= 1, ErrorKind::Config, "candidate cap must be positive");
    require(cfg.k <= N, ErrorKind::Config,
            "k=" + std::to_string(cfg.k) + " exceeds the " + std::to_string(N) + " samples of the task");
    if (cfg.cap != kNoCap) {
        require(cfg.k * M <= N * cfg.cap, ErrorKind::Config,
                "infeasible cap: k*classes=" + std::to_string(cfg.k * M) + " exceeds samples*cap=" +
                    std::to_string(N * cfg.cap));
    }

    struct Scored {
        std::uint32_t cls;
        std::vector<AugPolicy> policies;
        std::vector<double> dist;
    };
    std::vector<Scored> scored;
    for (const auto &[cls, mu] : prototypes) {
        Scored s{cls, {}, {}};
        s.policies.reserve(N);
        for (std::size_t i = 0; i < N; ++i) s.policies.push_back(sample_policy(family, data.input_dim(), rng));
        s.dist = candidate_distances(f_old, data.samples, s.policies, mu);
        scored.push_back(std::move(s));
    }

    CandidateSet out;
    if (cfg.cap == kNoCap) {
        for (auto &s : scored) {
            std::vector<std::uint32_t> order(N);
            std::iota(order.begin(), order.end(), 0u);
            std::stable_sort(order.begin(), order.end(),
                             [&](std::uint32_t a, std::uint32_t b) { return s.dist[a] < s.dist[b]; });
            CandidateClass c{s.cls, {}, {}};
            for (std::size_t j = 0; j < cfg.k; ++j) {
                c.indices.push_back(order[j]);
                c.policies.push_back(s.policies[order[j]]);
            }
            out.classes.push_back(std::move(c));
        }
        return out;
    }

    // Global greedy assignment over all (class, sample) pairs by distance.
    std::vector<std::tuple<double, std::size_t, std::uint32_t>> pairs;
    pairs.reserve(M * N);
    for (std::size_t m = 0; m < M; ++m)
        for (std::uint32_t n = 0; n < N; ++n) pairs.emplace_back(scored[m].dist[n], m, n);
    std::sort(pairs.begin(), pairs.end());

    std::vector<std::size_t> uses(N, 0);
    for (const auto &s : scored) out.classes.push_back(CandidateClass{s.cls, {}, {}});
    std::size_t filled = 0;
    for (const auto &[d, m, n] : pairs) {
        auto &c = out.classes[m];
        if (c.indices.size() == cfg.k || uses[n] == cfg.cap) continue;
        c.indices.push_back(n);
        c.policies.push_back(scored[m].policies[n]);
        ++uses[n];
        if (c.indices.size() == cfg.k && ++filled == M) break;
    }
    for (const auto &c : out.classes)
        require(c.indices.size() == cfg.k, ErrorKind::Config,
                "cap " + std::to_string(cfg.cap) + " exhausted: class " + std::to_string(c.cls) + " received " +
                    std::to_string(c.indices.size()) + " of " + std::to_string(cfg.k) + " candidates");
    return out;
}

std::vector<char> encode_candidates(const CandidateSet &set) {
    binio::Writer w;
    for (const auto &c : set.classes) {
        require(c.indices.size() == c.policies.size(), ErrorKind::Contract, "candidate indices/policies mismatch");
        w.u32(c.cls);
        w.u32(static_cast<std::uint32_t>(c.indices.size()));
        for (auto i : c.indices) w.u32(i);
        for (const auto &p : c.policies) encode_policy(w, p);
    }
    return w.buffer();
}

CandidateSet decode_candidates(const std::vector<char> &bytes) {
    binio::Reader r(bytes);
    CandidateSet set;
    while (!r.at_end()) {
        CandidateClass c;
        c.cls = r.u32();
        const auto k = r.u32();
        for (std::uint32_t i = 0; i < k; ++i) c.indices.push_back(r.u32());
        for (std::uint32_t i = 0; i < k; ++i) c.policies.push_back(decode_policy(r));
        set.classes.push_back(std::move(c));
    }
    return set;
}

void validate(const AttackConfig &cfg) {
    require(cfg.alpha > 0.0 && std::isfinite(cfg.alpha), ErrorKind::Config, "attack alpha must be positive");
    require(cfg.iterations >= 1, ErrorKind::Config, "attack iterations must be at least 1");
}

double noise_magnitude(const std::vector<Tensor> &covariances, std::size_t d) {
    require(!covariances.empty(), ErrorKind::Contract, "noise_magnitude needs at least one covariance");
    require(d > 0, ErrorKind::Contract, "feature dimension must be positive");
    double total = 0.0;
    for (const auto &s : covariances) {
        require(s.rank() == 2 && s.rows() == d && s.cols() == d, ErrorKind::Dimension,
                "covariance is " + shape_string(s.shape()) + ", expected d x d");
        for (std::size_t i = 0; i < d; ++i) total += s.at(i, i);
    }
    return std::sqrt(total / static_cast<double>(d));
}

Tensor adversarial_attack(const ExtractorParams &f_old, const Tensor &x, const Tensor &targets,
                          const AttackConfig &cfg, double noise_r, std::uint64_t seed) {
    validate(cfg);
    require(x.rank() == 2 && targets.rank() == 2 && targets.rows() == x.rows(), ErrorKind::Dimension,
            "attack needs one target row per sample");
    require(targets.cols() == f_old.feature_dim(), ErrorKind::Dimension, "target width does not match features");
    const auto b = x.rows(), D = x.cols(), d = targets.cols();
    Tensor cur = x;
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        Tensor goal = targets;
        if (cfg.noise && noise_r > 0.0) {
            for (std::size_t i = 0; i < b; ++i) {
                auto rng = derive_rng(seed, {i, it});
                std::normal_distribution<double> normal(0.0, 1.0);
                for (std::size_t j = 0; j < d; ++j) goal.at(i, j) += noise_r * normal(rng);
            }
        }
        ad::Tape tape;
        const auto xv = tape.leaf(cur);
        const auto f = bind(tape, f_old, false);
        const auto diff = ad::sub(extract(f, xv), tape.constant(goal));
        const auto loss = ad::sum(ad::mul(diff, diff));
        const ad::Var wanted[] = {xv};
        const auto g = tape.value_and_grad(loss, wanted).grads[0];
        for (std::size_t i = 0; i < b; ++i) {
            double n2 = 0.0;
            for (std::size_t j = 0; j < D; ++j) n2 += g.at(i, j) * g.at(i, j);
            if (std::sqrt(n2) < ad::kNormalizeEps) continue;
            const double denom = cfg.unit_norm ? std::sqrt(n2) : n2;
            for (std::size_t j = 0; j < D; ++j) cur.at(i, j) -= cfg.alpha * g.at(i, j) / denom;
        }
        require(cur.all_finite(), ErrorKind::Numeric, "non-finite sample after attack step");
    }
    return cur;
}

std::vector<double> feature_distances(const ExtractorParams &f, const Tensor &x, const Tensor &targets) {
    const Tensor feats = extract(f, x);
    require(feats.same_shape(targets), ErrorKind::Dimension, "feature_distances shape mismatch");
    std::vector<double> out(feats.rows());
    for (std::size_t i = 0; i < feats.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < feats.cols(); ++j) {
            const double e = feats.at(i, j) - targets.at(i, j);
            s += e * e;
        }
        out[i] = std::sqrt(s);
    }
    return out;
}

}  // namespace apr
