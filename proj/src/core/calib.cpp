#include "calib.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "binio.hpp"
#include "classify.hpp"

namespace apr {

void validate(const AdcConfig &cfg) {
    require(cfg.alpha > 0.0 && std::isfinite(cfg.alpha), ErrorKind::Config, "adc alpha must be positive");
    require(cfg.iterations >= 1, ErrorKind::Config, "adc iterations must be at least 1");
    require(cfg.candidates >= 1, ErrorKind::Config, "adc candidates must be at least 1");
}

void validate(const TransferConfig &cfg) {
    require(cfg.auto_lr || (cfg.lr > 0.0 && std::isfinite(cfg.lr)), ErrorKind::Config,
            "transfer lr must be positive");
    require(cfg.epochs >= 1, ErrorKind::Config, "transfer epochs must be at least 1");
}

DriftSamples generate_drift_samples(const ExtractorParams &f_old, const LabeledSet &data, const Tensor &mu,
                                    const AdcConfig &cfg, std::uint64_t seed) {
    validate(cfg);
    require(data.size() > 0, ErrorKind::Contract, "drift samples need a non-empty task set");
    const std::vector<AugPolicy> none(data.size());
    const auto dist = candidate_distances(f_old, data.samples, none, mu);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    DriftSamples out;
    out.truncated = cfg.candidates > order.size();
    order.resize(std::min(cfg.candidates, order.size()));

    const Tensor x = data.samples.rows_subset(order);
    Tensor targets({x.rows(), mu.size()});
    for (std::size_t i = 0; i < x.rows(); ++i)
        std::copy(mu.storage().begin(), mu.storage().end(), targets.storage().begin() + i * mu.size());
    AttackConfig attack{cfg.alpha, cfg.iterations, false, cfg.unit_norm};
    out.x = adversarial_attack(f_old, x, targets, attack, 0.0, seed);
    return out;
}

Transfer fit_transfer_matrix(const Tensor &feats_old, const Tensor &feats_new, const TransferConfig &cfg) {
    validate(cfg);
    require(feats_old.rank() == 2 && feats_old.same_shape(feats_new), ErrorKind::Contract,
            "transfer fit needs paired [m, d] features, got " + shape_string(feats_old.shape()) + " and " +
                shape_string(feats_new.shape()));
    const auto m = feats_old.rows();
    const auto d = feats_old.cols();
    require(m >= 1, ErrorKind::Contract, "transfer fit needs at least one pair");

    const Eigen::RowVectorXd mean_old = feats_old.mat().colwise().mean();
    const Eigen::RowVectorXd mean_new = feats_new.mat().colwise().mean();
    Eigen::MatrixXd X = feats_old.mat();
    Eigen::MatrixXd Y = feats_new.mat();
    if (cfg.center) {
        X.rowwise() -= mean_old;
        Y.rowwise() -= mean_new;
    }

    // Loss = mean over all m*d residual entries of (Y - X W^T)^2.
    const double norm = 1.0 / static_cast<double>(m * d);
    const Eigen::MatrixXd XtX = X.transpose() * X;
    const Eigen::MatrixXd YtX = Y.transpose() * X;
    const double YtY = Y.squaredNorm();
    auto mse = [&](const Eigen::MatrixXd &W) {
        return norm * (YtY - 2.0 * (W.cwiseProduct(YtX)).sum() + (W * XtX).cwiseProduct(W).sum());
    };

    Eigen::MatrixXd W = Eigen::MatrixXd::Identity(d, d);
    Transfer out;
    out.initial_mse = mse(W);
    double lr = cfg.lr;
    if (cfg.auto_lr) {
        const double top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(XtX, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
        if (top <= 0.0) lr = 0.0;  // all pairs identical: W stays at I
        else lr = 1.0 / (2.0 * norm * top);
    }
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        const Eigen::MatrixXd grad = 2.0 * norm * (W * XtX - YtX);
        W -= lr * grad;
    }
    require(W.allFinite(), ErrorKind::Numeric, "transfer fit diverged; lower the transfer lr");
    out.final_mse = std::max(0.0, mse(W));
    out.W = Tensor::from_eigen(W);
    out.delta = Tensor::from_eigen((mean_new - mean_old).transpose()).reshaped({d});
    return out;
}

Tensor StoreEntry::covariance() const {
    if (const auto *f = std::get_if<LowRankCov>(&cov)) return recompose(*f);
    return std::get<Tensor>(cov);
}

std::size_t StoreEntry::stored_cov_scalars() const {
    if (const auto *f = std::get_if<LowRankCov>(&cov)) return f->U.size() + f->S.size() + f->V.size();
    return std::get<Tensor>(cov).size();
}

std::vector<std::uint32_t> PrototypeStore::classes() const {
    std::vector<std::uint32_t> out;
    for (const auto &[c, e] : entries) out.push_back(c);
    return out;
}

std::map<std::uint32_t, Tensor> PrototypeStore::means() const {
    std::map<std::uint32_t, Tensor> out;
    for (const auto &[c, e] : entries) out.emplace(c, e.mean);
    return out;
}

std::vector<Tensor> PrototypeStore::covariances() const {
    std::vector<Tensor> out;
    for (const auto &[c, e] : entries) out.push_back(e.covariance());
    return out;
}

StoreEntry calibrate(const StoreEntry &entry, const Tensor &W, const Tensor &delta) {
    const auto d = entry.mean.size();
    require(W.rank() == 2 && W.rows() == d && W.cols() == d, ErrorKind::Dimension,
            "transfer matrix must be " + std::to_string(d) + "x" + std::to_string(d));
    require(delta.size() == d, ErrorKind::Dimension, "delta width does not match the prototype");

    StoreEntry out = entry;
    for (std::size_t j = 0; j < d; ++j) out.mean[j] += delta[j];

    const Tensor sigma = entry.covariance();
    const Eigen::MatrixXd M = W.mat() * sigma.mat() * W.mat().transpose();
    const Eigen::MatrixXd S = 0.5 * (M + M.transpose());
    Tensor calibrated = Tensor::from_eigen(S);
    if (const auto *f = std::get_if<LowRankCov>(&entry.cov))
        out.cov = decompose(calibrated, f->rank());
    else
        out.cov = std::move(calibrated);
    return out;
}

Tensor shrink_normalize(const Tensor &sigma, double gamma1, double gamma2) {
    require(sigma.rank() == 2 && sigma.rows() == sigma.cols(), ErrorKind::Dimension,
            "covariance must be square, got " + shape_string(sigma.shape()));
    const auto d = sigma.rows();
    const auto S = sigma.mat();
    const double v1 = S.diagonal().mean();
    const double v2 = d > 1 ? (S.sum() - S.diagonal().sum()) / static_cast<double>(d * (d - 1)) : 0.0;

    Eigen::MatrixXd Ss = S;
    Ss.diagonal().array() += gamma1 * v1 + gamma2 * v2;
    Eigen::VectorXd inv_sd(d);
    for (std::size_t i = 0; i < d; ++i) {
        require(Ss(i, i) > 0.0 && std::isfinite(Ss(i, i)), ErrorKind::Numeric,
                "shrunk covariance has non-positive diagonal at " + std::to_string(i) + "; increase shrinkage");
        inv_sd(i) = 1.0 / std::sqrt(Ss(i, i));
    }
    Eigen::MatrixXd N = inv_sd.asDiagonal() * Ss * inv_sd.asDiagonal();
    N = (0.5 * (N + N.transpose())).eval();
    N.diagonal().setOnes();
    return Tensor::from_eigen(N);
}

LowRankCov decompose(const Tensor &sigma, std::size_t k) {
    require(sigma.rank() == 2 && sigma.rows() == sigma.cols(), ErrorKind::Dimension,
            "covariance must be square, got " + shape_string(sigma.shape()));
    const auto d = sigma.rows();
    require(k >= 1 && k <= d, ErrorKind::Config,
            "svd rank k=" + std::to_string(k) + " outside [1, " + std::to_string(d) + "]");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(sigma.to_eigen(), Eigen::ComputeFullU | Eigen::ComputeFullV);
    LowRankCov f;
    f.U = Tensor::from_eigen(svd.matrixU().leftCols(k));
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(k, k);
    S.diagonal() = svd.singularValues().head(k);
    f.S = Tensor::from_eigen(S);
    f.V = Tensor::from_eigen(svd.matrixV().leftCols(k).transpose());
    return f;
}

Tensor recompose(const LowRankCov &f) {
    require(f.U.cols() == f.S.rows() && f.S.cols() == f.V.rows() && f.U.rows() == f.V.cols(), ErrorKind::Dimension,
            "inconsistent low-rank factors");
    return Tensor::from_eigen(f.U.mat() * f.S.mat() * f.V.mat());
}

ShrinkageChoice tune_shrinkage(const PrototypeStore &store, const ExtractorParams &f, const LabeledSet &val,
                               const ShrinkageGrid &grid) {
    require(!grid.values.empty(), ErrorKind::Config, "shrinkage grid is empty");
    std::vector<std::pair<double, double>> pairs;
    for (double g1 : grid.values) {
        if (grid.coupled) {
            pairs.emplace_back(g1, g1);
            continue;
        }
        for (double g2 : grid.values) pairs.emplace_back(g1, g2);
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const auto &a, const auto &b) {
        return a.first + a.second < b.first + b.second ||
               (a.first + a.second == b.first + b.second && a.first < b.first);
    });

    ShrinkageChoice best{pairs.front().first, pairs.front().second, -1.0};
    require(val.split == SplitTag::Val, ErrorKind::Contract,
            std::string("shrinkage tuning refuses a ") + split_name(val.split) + " split");
    if (pairs.size() == 1 && val.size() == 0) return best;  // nothing to choose, nothing to score
    require(val.size() > 0, ErrorKind::Contract, "shrinkage tuning needs validation samples");
    for (auto c : store.classes())
        require(!val.rows_of(c).empty(), ErrorKind::Contract,
                "validation split has no samples of class " + std::to_string(c));

    const Tensor feats = extract(f, val.samples);
    for (const auto &[g1, g2] : pairs) {
        const auto model = build_mahalanobis(store, g1, g2);
        const auto pred = predict_mahalanobis(model, feats);
        std::size_t hit = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == val.labels[i];
        const double acc = static_cast<double>(hit) / static_cast<double>(pred.size());
        if (acc > best.val_accuracy) best = {g1, g2, acc};
    }
    return best;
}

namespace {

constexpr char kStoreMagic[] = "APRS";
constexpr std::uint32_t kStoreVersion = 1;

void put_tensor(binio::Writer &w, const Tensor &t) {
    w.u32(static_cast<std::uint32_t>(t.rows()));
    w.u32(static_cast<std::uint32_t>(t.cols()));
    for (double v : t.storage()) w.f64(v);
}

Tensor get_tensor(binio::Reader &r) {
    const auto rows = r.u32();
    const auto cols = r.u32();
    std::vector<double> data(static_cast<std::size_t>(rows) * cols);
    for (auto &v : data) v = r.f64();
    return Tensor::matrix(rows, cols, std::move(data));
}

}  // namespace

std::vector<char> encode_store(const PrototypeStore &store) {
    binio::Writer w;
    w.bytes(std::string_view(kStoreMagic, 4));
    w.u32(kStoreVersion);
    w.u32(static_cast<std::uint32_t>(store.feature_dim));
    w.u32(static_cast<std::uint32_t>(store.entries.size()));
    for (const auto &[c, e] : store.entries) {
        w.u32(c);
        w.u32(e.created_task);
        w.u32(e.calibrated_task);
        for (double v : e.mean.storage()) w.f64(v);
        if (const auto *f = std::get_if<LowRankCov>(&e.cov)) {
            w.u8(1);
            w.u32(static_cast<std::uint32_t>(f->rank()));
            put_tensor(w, f->U);
            put_tensor(w, f->S);
            put_tensor(w, f->V);
        } else {
            w.u8(0);
            put_tensor(w, std::get<Tensor>(e.cov));
        }
    }
    return w.buffer();
}

PrototypeStore decode_store(const std::vector<char> &bytes) {
    binio::Reader r(bytes);
    require(r.bytes(4) == std::string_view(kStoreMagic, 4), ErrorKind::Decode, "not a prototype store");
    const auto version = r.u32();
    require(version == kStoreVersion, ErrorKind::Decode, "unsupported store version " + std::to_string(version));
    PrototypeStore store;
    store.feature_dim = r.u32();
    const auto d = store.feature_dim;
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        StoreEntry e;
        e.cls = r.u32();
        e.created_task = r.u32();
        e.calibrated_task = r.u32();
        std::vector<double> mu(d);
        for (auto &v : mu) v = r.f64();
        e.mean = Tensor::vector(std::move(mu));
        const auto tag = r.u8();
        if (tag == 1) {
            const auto k = r.u32();
            LowRankCov f{get_tensor(r), get_tensor(r), get_tensor(r)};
            require(f.U.rows() == d && f.U.cols() == k && f.S.rows() == k && f.S.cols() == k && f.V.rows() == k &&
                        f.V.cols() == d,
                    ErrorKind::Decode, "low-rank factor shapes disagree with the header");
            e.cov = std::move(f);
        } else if (tag == 0) {
            Tensor s = get_tensor(r);
            require(s.rows() == d && s.cols() == d, ErrorKind::Decode, "covariance shape disagrees with the header");
            e.cov = std::move(s);
        } else {
            fail(ErrorKind::Decode, "unknown covariance tag " + std::to_string(tag));
        }
        require(store.entries.emplace(e.cls, e).second, ErrorKind::Decode,
                "duplicate class " + std::to_string(e.cls));
    }
    require(r.at_end(), ErrorKind::Decode, "trailing bytes after store");
    return store;
}

void save_store(const PrototypeStore &store, const std::string &path) { binio::write_file(path, encode_store(store)); }

PrototypeStore load_store(const std::string &path) { return decode_store(binio::read_file(path)); }

PrototypeStore compress_store(const PrototypeStore &store, std::size_t k) {
    PrototypeStore out = store;
    for (auto &[c, e] : out.entries) {
        const Tensor full = e.covariance();
        if (k == 0)
            e.cov = full;
        else
            e.cov = decompose(full, k);
    }
    return out;
}

}  // namespace apr
