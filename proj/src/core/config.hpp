#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "calib.hpp"
#include "classify.hpp"
#include "data.hpp"
#include "model.hpp"
#include "replay.hpp"
#include "train.hpp"

namespace apr {

struct DatasetConfig {
    std::string kind = "synthetic";  // synthetic | files
    std::uint64_t seed = 7;          // generator seed, fixed across benchmark seeds
    SyntheticSpec synthetic;
    std::string train_path;
    std::string test_path;
};

struct ModelConfig {
    std::vector<std::size_t> hidden{256, 128};
    std::size_t feature_dim = 32;
    Activation activation = Activation::Relu;
    HeadMode head = HeadMode::Cosine;
    double head_scale = 16.0;
    double head_init_std = 0.01;
};

struct RunConfig {
    DatasetConfig dataset;
    StreamSpec stream;
    std::uint64_t seed = 0;  // randomness seed
    ModelConfig model;
    OptimConfig optim_initial;
    OptimConfig optim_incremental{0.01, 2e-4, 0.0, 30, 32, 64};
    LossConfig loss;
    AugFamily augment;
    bool train_augment = true;
    bool replay = true;
    bool attack = true;
    AttackConfig attack_cfg;
    CandidateConfig candidates;
    bool calibration = true;
    AdcConfig adc;
    TransferConfig transfer;
    std::size_t svd_k = 0;  // 0 keeps full covariances
    ShrinkageGrid shrinkage;
    std::vector<ClassifierKind> classifiers{ClassifierKind::Linear, ClassifierKind::Ncm, ClassifierKind::Mahalanobis};
    std::vector<std::uint64_t> bench_class_shuffle{1993, 2993, 3993};
    std::vector<std::uint64_t> bench_randomness{0, 1000, 2000};
    std::vector<double> sweep_alpha{16, 32, 64, 128};
    std::vector<std::size_t> sweep_iterations{1, 2, 4, 8};
    std::string output_root = "runs";
    std::string run_name = "run";
    bool save_checkpoints = false;

    bool uses(ClassifierKind k) const;
};

nlohmann::json default_config_json();
nlohmann::json to_json(const RunConfig &cfg);

// Overlays `user` on the defaults; unknown keys and wrong types are config
// errors. resolve_config stops there, parse_config also runs validate().
RunConfig resolve_config(const nlohmann::json &user);
RunConfig parse_config(const nlohmann::json &user);

// Sets `dotted.key` in a config tree. The value is parsed as JSON when it can
// be, otherwise kept as a string.
void apply_override(nlohmann::json &tree, const std::string &dotted_key, const std::string &value);

RunConfig load_config(const std::string &path, const std::vector<std::pair<std::string, std::string>> &overrides = {});

// Range checks run before any compute.
void validate(const RunConfig &cfg);

}  // namespace apr
