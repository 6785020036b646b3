#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "calib.hpp"
#include "model.hpp"

namespace apr {

enum class ClassifierKind { Linear, Ncm, Mahalanobis };

const char *classifier_name(ClassifierKind kind);
ClassifierKind parse_classifier(const std::string &name);

// Shrunk, normalised covariances factorised once per evaluation pass.
struct MahalanobisModel {
    std::vector<std::uint32_t> classes;
    std::vector<Eigen::VectorXd> means;
    std::vector<Eigen::LLT<Eigen::MatrixXd>> factors;
};

MahalanobisModel build_mahalanobis(const PrototypeStore &store, double gamma1, double gamma2);

// Feature-space predictions; ties go to the smallest class id.
std::vector<std::uint32_t> predict_ncm(const PrototypeStore &store, const Tensor &features);
std::vector<std::uint32_t> predict_mahalanobis(const MahalanobisModel &model, const Tensor &features);
std::vector<std::uint32_t> predict_linear(const ClassifierHead &head, const Tensor &features);

// Squared Mahalanobis distance of every row to every class, [n, classes].
Tensor mahalanobis_distances(const MahalanobisModel &model, const Tensor &features);

struct Predictor {
    ClassifierKind kind = ClassifierKind::Ncm;
    const Network *net = nullptr;
    const PrototypeStore *store = nullptr;
    double gamma1 = 1.0;
    double gamma2 = 1.0;
};

std::vector<std::uint32_t> predict(const Predictor &p, const Tensor &x);

// Accuracy per class group, each group evaluated over the rows whose label
// belongs to it.
std::vector<double> group_accuracy(const std::vector<std::uint32_t> &pred, const std::vector<std::uint32_t> &labels,
                                   const std::vector<std::vector<std::uint32_t>> &groups);

struct EvalResult {
    std::vector<std::vector<double>> acc;  // acc[k][j], j <= k
    std::vector<double> A;                 // A_k
    double A_inc = 0.0;
    double A_last = 0.0;
};

EvalResult metrics(const std::vector<std::vector<double>> &acc);

}  // namespace apr
