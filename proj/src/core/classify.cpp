#include "classify.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace apr {

const char *classifier_name(ClassifierKind kind) {
    switch (kind) {
        case ClassifierKind::Linear: return "linear";
        case ClassifierKind::Ncm: return "ncm";
        case ClassifierKind::Mahalanobis: return "mahalanobis";
    }
    return "?";
}

ClassifierKind parse_classifier(const std::string &name) {
    if (name == "linear") return ClassifierKind::Linear;
    if (name == "ncm") return ClassifierKind::Ncm;
    if (name == "mahalanobis" || name == "maha") return ClassifierKind::Mahalanobis;
    fail(ErrorKind::Config, "unknown classifier '" + name + "'");
}

MahalanobisModel build_mahalanobis(const PrototypeStore &store, double gamma1, double gamma2) {
    require(!store.entries.empty(), ErrorKind::Contract, "prototype store is empty");
    MahalanobisModel m;
    for (const auto &[c, e] : store.entries) {
        const Tensor s = shrink_normalize(e.covariance(), gamma1, gamma2);
        Eigen::LLT<Eigen::MatrixXd> llt(s.to_eigen());
        require(llt.info() == Eigen::Success, ErrorKind::Numeric,
                "shrunk covariance of class " + std::to_string(c) + " is not positive definite");
        m.classes.push_back(c);
        m.means.push_back(e.mean.mat().row(0).transpose());
        m.factors.push_back(std::move(llt));
    }
    return m;
}

namespace {

std::vector<std::uint32_t> argmin_rows(const Eigen::MatrixXd &dist, const std::vector<std::uint32_t> &classes) {
    // `classes` is ascending, so strict comparison keeps the smallest id on ties.
    std::vector<std::uint32_t> out(dist.rows());
    for (Eigen::Index i = 0; i < dist.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < dist.cols(); ++j)
            if (dist(i, j) < dist(i, best)) best = j;
        out[i] = classes[best];
    }
    return out;
}

void check_features(const Tensor &features, std::size_t d) {
    require(features.rank() == 2 && features.cols() == d, ErrorKind::Dimension,
            "features " + shape_string(features.shape()) + " do not have width " + std::to_string(d));
}

}  // namespace

Tensor mahalanobis_distances(const MahalanobisModel &model, const Tensor &features) {
    require(!model.classes.empty(), ErrorKind::Contract, "empty Mahalanobis model");
    check_features(features, model.means.front().size());
    const auto F = features.mat();
    Eigen::MatrixXd dist(F.rows(), model.classes.size());
    for (std::size_t c = 0; c < model.classes.size(); ++c) {
        Eigen::MatrixXd E = (F.rowwise() - model.means[c].transpose()).transpose();
        model.factors[c].matrixL().solveInPlace(E);
        dist.col(c) = E.colwise().squaredNorm().transpose();
    }
    return Tensor::from_eigen(dist);
}

std::vector<std::uint32_t> predict_mahalanobis(const MahalanobisModel &model, const Tensor &features) {
    return argmin_rows(mahalanobis_distances(model, features).to_eigen(), model.classes);
}

std::vector<std::uint32_t> predict_ncm(const PrototypeStore &store, const Tensor &features) {
    require(!store.entries.empty(), ErrorKind::Contract, "prototype store is empty");
    check_features(features, store.entries.begin()->second.mean.size());
    const auto F = features.mat();
    Eigen::MatrixXd dist(F.rows(), store.entries.size());
    std::vector<std::uint32_t> classes;
    for (const auto &[c, e] : store.entries) {
        dist.col(classes.size()) = (F.rowwise() - e.mean.mat().row(0)).rowwise().squaredNorm();
        classes.push_back(c);
    }
    return argmin_rows(dist, classes);
}

std::vector<std::uint32_t> predict_linear(const ClassifierHead &head, const Tensor &features) {
    const Tensor z = logits(head, features, Split::All);
    std::vector<std::uint32_t> out(z.rows());
    for (std::size_t i = 0; i < z.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < z.cols(); ++j)
            if (z.at(i, j) > z.at(i, best)) best = j;
        out[i] = static_cast<std::uint32_t>(best);
    }
    return out;
}

std::vector<std::uint32_t> predict(const Predictor &p, const Tensor &x) {
    require(p.net != nullptr, ErrorKind::Contract, "predictor has no network");
    const Tensor feats = extract(p.net->extractor, x);
    switch (p.kind) {
        case ClassifierKind::Linear: return predict_linear(p.net->head, feats);
        case ClassifierKind::Ncm:
            require(p.store != nullptr, ErrorKind::Contract, "ncm needs a prototype store");
            return predict_ncm(*p.store, feats);
        case ClassifierKind::Mahalanobis:
            require(p.store != nullptr, ErrorKind::Contract, "mahalanobis needs a prototype store");
            return predict_mahalanobis(build_mahalanobis(*p.store, p.gamma1, p.gamma2), feats);
    }
    fail(ErrorKind::Contract, "unknown classifier");
}

std::vector<double> group_accuracy(const std::vector<std::uint32_t> &pred, const std::vector<std::uint32_t> &labels,
                                   const std::vector<std::vector<std::uint32_t>> &groups) {
    require(pred.size() == labels.size(), ErrorKind::Dimension, "prediction and label counts differ");
    std::vector<double> out;
    for (const auto &g : groups) {
        const std::set<std::uint32_t> members(g.begin(), g.end());
        std::size_t n = 0, hit = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (!members.count(labels[i])) continue;
            ++n;
            hit += pred[i] == labels[i];
        }
        require(n > 0, ErrorKind::Contract, "class group has no evaluation samples");
        out.push_back(static_cast<double>(hit) / static_cast<double>(n));
    }
    return out;
}

EvalResult metrics(const std::vector<std::vector<double>> &acc) {
    require(!acc.empty(), ErrorKind::Contract, "accuracy matrix is empty");
    EvalResult r;
    r.acc = acc;
    for (std::size_t k = 0; k < acc.size(); ++k) {
        require(acc[k].size() == k + 1, ErrorKind::Contract,
                "accuracy row " + std::to_string(k) + " has " + std::to_string(acc[k].size()) + " entries, expected " +
                    std::to_string(k + 1));
        double s = 0.0;
        for (double a : acc[k]) {
            require(a >= 0.0 && a <= 1.0, ErrorKind::Contract, "accuracy outside [0, 1]");
            s += a;
        }
        r.A.push_back(s / static_cast<double>(k + 1));
    }
    double s = 0.0;
    for (double a : r.A) s += a;
    r.A_inc = s / static_cast<double>(r.A.size());
    r.A_last = r.A.back();
    return r;
}

}  // namespace apr
