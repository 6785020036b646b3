#include "config.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace apr {

using nlohmann::json;

bool RunConfig::uses(ClassifierKind k) const {
    for (auto c : classifiers)
        if (c == k) return true;
    return false;
}

namespace {

const char *activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
    }
    return "?";
}

Activation parse_activation(const std::string &s) {
    if (s == "identity") return Activation::Identity;
    if (s == "relu") return Activation::Relu;
    if (s == "tanh") return Activation::Tanh;
    fail(ErrorKind::Config, "unknown activation '" + s + "'");
}

json optim_json(const OptimConfig &o) {
    return {{"lr", o.lr},
            {"weight_decay", o.weight_decay},
            {"momentum", o.momentum},
            {"epochs", o.epochs},
            {"batch_size", o.batch_size},
            {"replay_batch_size", o.replay_batch_size}};
}

// Typed reads with the dotted path in the error message.
template <typename T>
T get(const json &node, const std::string &path) {
    try {
        return node.get<T>();
    } catch (const json::exception &e) {
        fail(ErrorKind::Config, "config key '" + path + "' has the wrong type: " + e.what());
    }
}

struct View {
    const json &node;
    std::string path;

    View operator[](const char *key) const {
        return {node.at(key), path.empty() ? std::string(key) : path + "." + key};
    }
    template <typename T>
    T as() const {
        return get<T>(node, path);
    }
};

OptimConfig parse_optim(const View &v) {
    OptimConfig o;
    o.lr = v["lr"].as<double>();
    o.weight_decay = v["weight_decay"].as<double>();
    o.momentum = v["momentum"].as<double>();
    o.epochs = v["epochs"].as<std::size_t>();
    o.batch_size = v["batch_size"].as<std::size_t>();
    o.replay_batch_size = v["replay_batch_size"].as<std::size_t>();
    return o;
}

void merge_checked(json &base, const json &patch, const std::string &path) {
    require(patch.is_object(), ErrorKind::Config,
            "config section '" + (path.empty() ? std::string("<root>") : path) + "' must be an object");
    for (auto it = patch.begin(); it != patch.end(); ++it) {
        const auto key = path.empty() ? it.key() : path + "." + it.key();
        require(base.contains(it.key()), ErrorKind::Config, "unknown config key '" + key + "'");
        auto &slot = base[it.key()];
        if (slot.is_object())
            merge_checked(slot, it.value(), key);
        else
            slot = it.value();
    }
}

}  // namespace

json to_json(const RunConfig &c) {
    json classifiers = json::array();
    for (auto k : c.classifiers) classifiers.push_back(classifier_name(k));
    json cap = c.candidates.cap == kNoCap ? json("inf") : json(c.candidates.cap);
    const auto &s = c.dataset.synthetic;
    return {
        {"dataset",
         {{"kind", c.dataset.kind},
          {"seed", c.dataset.seed},
          {"classes", s.classes},
          {"input_dim", s.input_dim},
          {"radius", s.radius},
          {"cluster_std", s.cluster_std},
          {"anisotropy", s.anisotropy},
          {"n_train", s.n_train},
          {"n_test", s.n_test},
          {"train_path", c.dataset.train_path},
          {"test_path", c.dataset.test_path}}},
        {"stream",
         {{"tasks", c.stream.tasks},
          {"mode", c.stream.mode == StartMode::Cold ? "cold" : "warm"},
          {"n_val", c.stream.n_val}}},
        {"seeds", {{"class_shuffle", c.stream.class_shuffle_seed}, {"randomness", c.seed}}},
        {"model",
         {{"hidden", c.model.hidden},
          {"feature_dim", c.model.feature_dim},
          {"activation", activation_name(c.model.activation)},
          {"head", c.model.head == HeadMode::Cosine ? "cosine" : "linear"},
          {"head_scale", c.model.head_scale},
          {"head_init_std", c.model.head_init_std}}},
        {"optim", {{"initial", optim_json(c.optim_initial)}, {"incremental", optim_json(c.optim_incremental)}}},
        {"loss",
         {{"lambda_kd", c.loss.lambda_kd},
          {"kd_temperature", c.loss.kd_temperature},
          {"ce_temperature", c.loss.ce_temperature}}},
        {"augment",
         {{"enabled", c.augment.enabled},
          {"train", c.train_augment},
          {"jitter_max_sigma", c.augment.jitter_max_sigma},
          {"crop_max_width", c.augment.crop_max_width},
          {"crop_prob", c.augment.crop_prob},
          {"flip_prob", c.augment.flip_prob},
          {"scale_lo", c.augment.scale_lo},
          {"scale_hi", c.augment.scale_hi}}},
        {"apr",
         {{"replay", c.replay},
          {"attack", c.attack},
          {"noise", c.attack_cfg.noise},
          {"alpha", c.attack_cfg.alpha},
          {"iterations", c.attack_cfg.iterations},
          {"unit_norm", c.attack_cfg.unit_norm},
          {"k", c.candidates.k},
          {"cap", cap}}},
        {"adc", {{"alpha", c.adc.alpha}, {"iterations", c.adc.iterations}, {"candidates", c.adc.candidates},
                 {"unit_norm", c.adc.unit_norm}}},
        {"calibration",
         {{"enabled", c.calibration},
          {"lr", c.transfer.auto_lr ? json("auto") : json(c.transfer.lr)},
          {"epochs", c.transfer.epochs},
          {"center", c.transfer.center},
          {"shared", c.transfer.shared}}},
        {"covariance", {{"mode", c.svd_k == 0 ? "full" : "svd"}, {"k", c.svd_k == 0 ? 8 : c.svd_k}}},
        {"shrinkage", {{"grid", c.shrinkage.values}, {"coupled", c.shrinkage.coupled}}},
        {"eval", {{"classifiers", classifiers}}},
        {"bench", {{"class_shuffle", c.bench_class_shuffle}, {"randomness", c.bench_randomness}}},
        {"sweep", {{"alpha", c.sweep_alpha}, {"iterations", c.sweep_iterations}}},
        {"output", {{"root", c.output_root}, {"name", c.run_name}, {"save_checkpoints", c.save_checkpoints}}},
    };
}

json default_config_json() { return to_json(RunConfig{}); }

RunConfig resolve_config(const json &user) {
    json tree = default_config_json();
    merge_checked(tree, user, "");
    const View root{tree, ""};
    RunConfig c;

    const auto ds = root["dataset"];
    c.dataset.kind = ds["kind"].as<std::string>();
    c.dataset.seed = ds["seed"].as<std::uint64_t>();
    c.dataset.synthetic.classes = ds["classes"].as<std::size_t>();
    c.dataset.synthetic.input_dim = ds["input_dim"].as<std::size_t>();
    c.dataset.synthetic.radius = ds["radius"].as<double>();
    c.dataset.synthetic.cluster_std = ds["cluster_std"].as<double>();
    c.dataset.synthetic.anisotropy = ds["anisotropy"].as<double>();
    c.dataset.synthetic.n_train = ds["n_train"].as<std::size_t>();
    c.dataset.synthetic.n_test = ds["n_test"].as<std::size_t>();
    c.dataset.train_path = ds["train_path"].as<std::string>();
    c.dataset.test_path = ds["test_path"].as<std::string>();

    const auto st = root["stream"];
    c.stream.tasks = st["tasks"].as<std::size_t>();
    const auto mode = st["mode"].as<std::string>();
    require(mode == "cold" || mode == "warm", ErrorKind::Config, "stream.mode must be cold or warm");
    c.stream.mode = mode == "cold" ? StartMode::Cold : StartMode::Warm;
    c.stream.n_val = st["n_val"].as<std::size_t>();
    c.stream.class_shuffle_seed = root["seeds"]["class_shuffle"].as<std::uint64_t>();
    c.seed = root["seeds"]["randomness"].as<std::uint64_t>();

    const auto m = root["model"];
    c.model.hidden = m["hidden"].as<std::vector<std::size_t>>();
    c.model.feature_dim = m["feature_dim"].as<std::size_t>();
    c.model.activation = parse_activation(m["activation"].as<std::string>());
    const auto head = m["head"].as<std::string>();
    require(head == "cosine" || head == "linear", ErrorKind::Config, "model.head must be cosine or linear");
    c.model.head = head == "cosine" ? HeadMode::Cosine : HeadMode::Linear;
    c.model.head_scale = m["head_scale"].as<double>();
    c.model.head_init_std = m["head_init_std"].as<double>();

    c.optim_initial = parse_optim(root["optim"]["initial"]);
    c.optim_incremental = parse_optim(root["optim"]["incremental"]);

    const auto l = root["loss"];
    c.loss.lambda_kd = l["lambda_kd"].as<double>();
    c.loss.kd_temperature = l["kd_temperature"].as<double>();
    c.loss.ce_temperature = l["ce_temperature"].as<double>();

    const auto a = root["augment"];
    c.augment.enabled = a["enabled"].as<bool>();
    c.train_augment = a["train"].as<bool>();
    c.augment.jitter_max_sigma = a["jitter_max_sigma"].as<double>();
    c.augment.crop_max_width = a["crop_max_width"].as<std::size_t>();
    c.augment.crop_prob = a["crop_prob"].as<double>();
    c.augment.flip_prob = a["flip_prob"].as<double>();
    c.augment.scale_lo = a["scale_lo"].as<double>();
    c.augment.scale_hi = a["scale_hi"].as<double>();

    const auto p = root["apr"];
    c.replay = p["replay"].as<bool>();
    c.attack = p["attack"].as<bool>();
    c.attack_cfg.noise = p["noise"].as<bool>();
    c.attack_cfg.alpha = p["alpha"].as<double>();
    c.attack_cfg.iterations = p["iterations"].as<std::size_t>();
    c.attack_cfg.unit_norm = p["unit_norm"].as<bool>();
    c.candidates.k = p["k"].as<std::size_t>();
    const auto &cap = tree["apr"]["cap"];
    if (cap.is_string()) {
        require(cap.get<std::string>() == "inf", ErrorKind::Config, "apr.cap must be a positive integer or \"inf\"");
        c.candidates.cap = kNoCap;
    } else {
        c.candidates.cap = p["cap"].as<std::size_t>();
    }

    const auto adc = root["adc"];
    c.adc.alpha = adc["alpha"].as<double>();
    c.adc.iterations = adc["iterations"].as<std::size_t>();
    c.adc.candidates = adc["candidates"].as<std::size_t>();
    c.adc.unit_norm = adc["unit_norm"].as<bool>();

    const auto cal = root["calibration"];
    c.calibration = cal["enabled"].as<bool>();
    const auto &lr = tree["calibration"]["lr"];
    if (lr.is_string()) {
        require(lr.get<std::string>() == "auto", ErrorKind::Config, "calibration.lr must be a positive number or \"auto\"");
        c.transfer.auto_lr = true;
    } else {
        c.transfer.lr = cal["lr"].as<double>();
    }
    c.transfer.epochs = cal["epochs"].as<std::size_t>();
    c.transfer.center = cal["center"].as<bool>();
    c.transfer.shared = cal["shared"].as<bool>();

    const auto cov_mode = root["covariance"]["mode"].as<std::string>();
    require(cov_mode == "full" || cov_mode == "svd", ErrorKind::Config, "covariance.mode must be full or svd");
    c.svd_k = cov_mode == "full" ? 0 : root["covariance"]["k"].as<std::size_t>();
    require(cov_mode == "full" || c.svd_k >= 1, ErrorKind::Config, "covariance.k must be at least 1");

    c.shrinkage.values = root["shrinkage"]["grid"].as<std::vector<double>>();
    c.shrinkage.coupled = root["shrinkage"]["coupled"].as<bool>();

    c.classifiers.clear();
    for (const auto &name : root["eval"]["classifiers"].as<std::vector<std::string>>())
        c.classifiers.push_back(parse_classifier(name));

    c.bench_class_shuffle = root["bench"]["class_shuffle"].as<std::vector<std::uint64_t>>();
    c.bench_randomness = root["bench"]["randomness"].as<std::vector<std::uint64_t>>();
    c.sweep_alpha = root["sweep"]["alpha"].as<std::vector<double>>();
    c.sweep_iterations = root["sweep"]["iterations"].as<std::vector<std::size_t>>();

    c.output_root = root["output"]["root"].as<std::string>();
    c.run_name = root["output"]["name"].as<std::string>();
    c.save_checkpoints = root["output"]["save_checkpoints"].as<bool>();
    return c;
}

RunConfig parse_config(const json &user) {
    auto c = resolve_config(user);
    validate(c);
    return c;
}

void apply_override(json &tree, const std::string &dotted_key, const std::string &value) {
    require(!dotted_key.empty(), ErrorKind::Config, "empty override key");
    json *node = &tree;
    std::stringstream ss(dotted_key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        require(!parts[i].empty(), ErrorKind::Config, "malformed override key '" + dotted_key + "'");
        if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
        node = &(*node)[parts[i]];
        require(node->is_object(), ErrorKind::Config, "override '" + dotted_key + "' descends into a non-object");
    }
    json parsed = json::parse(value, nullptr, false);
    (*node)[parts.back()] = parsed.is_discarded() ? json(value) : parsed;
}

RunConfig load_config(const std::string &path, const std::vector<std::pair<std::string, std::string>> &overrides) {
    json tree = json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        require(static_cast<bool>(in), ErrorKind::Io, "cannot open config " + path);
        try {
            tree = json::parse(in, nullptr, true, true);
        } catch (const json::exception &e) {
            fail(ErrorKind::Config, "config " + path + " is not valid JSON: " + e.what());
        }
    }
    for (const auto &[k, v] : overrides) apply_override(tree, k, v);
    return parse_config(tree);
}

namespace {

void positive(double v, const char *key) {
    require(std::isfinite(v) && v > 0.0, ErrorKind::Config, std::string(key) + " must be positive");
}

void nonneg(double v, const char *key) {
    require(std::isfinite(v) && v >= 0.0, ErrorKind::Config, std::string(key) + " must be non-negative");
}

void check_optim(const OptimConfig &o, const char *which) {
    const std::string p = std::string("optim.") + which;
    try {
        validate(o);
    } catch (const Error &e) {
        fail(ErrorKind::Config, p + ": " + e.what());
    }
}

}  // namespace

void validate(const RunConfig &c) {
    namespace fs = std::filesystem;
    if (c.dataset.kind == "synthetic") {
        const auto &s = c.dataset.synthetic;
        require(s.classes >= 1 && s.input_dim >= 1, ErrorKind::Config, "dataset needs classes and input_dim");
        positive(s.radius, "dataset.radius");
        positive(s.cluster_std, "dataset.cluster_std");
        require(s.anisotropy >= 1.0, ErrorKind::Config, "dataset.anisotropy must be at least 1");
        require(s.n_train >= c.stream.n_val + 2, ErrorKind::Config,
                "dataset.n_train must leave at least 2 training samples per class after the validation carve-out");
        require(s.n_test >= 1, ErrorKind::Config, "dataset.n_test must be positive");
        group_sizes(s.classes, c.stream.tasks, c.stream.mode);
    } else if (c.dataset.kind == "files") {
        require(fs::exists(c.dataset.train_path), ErrorKind::Config,
                "dataset.train_path '" + c.dataset.train_path + "' does not exist");
        require(fs::exists(c.dataset.test_path), ErrorKind::Config,
                "dataset.test_path '" + c.dataset.test_path + "' does not exist");
    } else {
        fail(ErrorKind::Config, "dataset.kind must be synthetic or files");
    }
    require(c.stream.tasks >= 1, ErrorKind::Config, "stream.tasks must be at least 1");

    require(!c.model.hidden.empty() || c.model.feature_dim >= 1, ErrorKind::Config, "model needs layers");
    for (auto w : c.model.hidden) require(w >= 1, ErrorKind::Config, "model.hidden widths must be positive");
    require(c.model.feature_dim >= 1, ErrorKind::Config, "model.feature_dim must be positive");
    positive(c.model.head_scale, "model.head_scale");
    nonneg(c.model.head_init_std, "model.head_init_std");

    check_optim(c.optim_initial, "initial");
    check_optim(c.optim_incremental, "incremental");
    try {
        validate(c.loss);
    } catch (const Error &e) {
        fail(ErrorKind::Config, std::string("loss: ") + e.what());
    }

    nonneg(c.augment.jitter_max_sigma, "augment.jitter_max_sigma");
    for (double pr : {c.augment.crop_prob, c.augment.flip_prob})
        require(pr >= 0.0 && pr <= 1.0, ErrorKind::Config, "augment probabilities must lie in [0, 1]");
    require(c.augment.scale_lo > 0.0 && c.augment.scale_lo <= c.augment.scale_hi, ErrorKind::Config,
            "augment.scale_lo must be positive and not above scale_hi");
    if (c.dataset.kind == "synthetic")
        require(c.augment.crop_max_width <= c.dataset.synthetic.input_dim, ErrorKind::Config,
                "augment.crop_max_width exceeds input_dim");

    validate(c.attack_cfg);
    require(c.candidates.k >= 1, ErrorKind::Config, "apr.k must be positive");
    require(c.candidates.cap >= 1, ErrorKind::Config, "apr.cap must be positive");
    validate(c.adc);
    validate(c.transfer);
    if (c.svd_k > 0)
        require(c.svd_k <= c.model.feature_dim, ErrorKind::Config,
                "covariance.k=" + std::to_string(c.svd_k) + " exceeds feature_dim=" +
                    std::to_string(c.model.feature_dim));
    require(!c.shrinkage.values.empty(), ErrorKind::Config, "shrinkage.grid is empty");
    for (double g : c.shrinkage.values) nonneg(g, "shrinkage.grid entries");
    const bool tuning = c.uses(ClassifierKind::Mahalanobis) && (c.shrinkage.values.size() > 1 || !c.shrinkage.coupled);
    require(!tuning || c.stream.n_val >= 1, ErrorKind::Config,
            "shrinkage tuning needs stream.n_val >= 1 (or a single-value grid)");
    require(!c.classifiers.empty(), ErrorKind::Config, "eval.classifiers is empty");
    require(c.bench_class_shuffle.size() == c.bench_randomness.size() && !c.bench_randomness.empty(),
            ErrorKind::Config, "bench seed lists must be non-empty and of equal length");
    for (double a : c.sweep_alpha) positive(a, "sweep.alpha entries");
    for (auto n : c.sweep_iterations) require(n >= 1, ErrorKind::Config, "sweep.iterations entries must be >= 1");
    require(!c.run_name.empty(), ErrorKind::Config, "output.name is empty");
}

}  // namespace apr
