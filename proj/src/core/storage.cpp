#include "storage.hpp"

namespace apr {

namespace {

StorageRow row(std::string name, std::uint64_t bytes) {
    return {std::move(name), bytes, static_cast<double>(bytes) / 1e6};
}

}  // namespace

std::vector<StorageRow> storage_report(const StorageQuery &q) {
    const auto C = q.classes, d = q.feature_dim, fb = q.float_bytes;
    std::vector<StorageRow> rows;
    rows.push_back(row("prototypes", C * d * fb));
    rows.push_back(row("covariances_full", C * d * d * fb));
    if (q.svd_k > 0) {
        require(q.svd_k <= d, ErrorKind::Config, "svd k exceeds the feature dimension");
        rows.push_back(row("covariances_svd" + std::to_string(q.svd_k),
                           C * decomposed_size(static_cast<std::size_t>(d), static_cast<std::size_t>(q.svd_k)) * fb));
    }
    rows.push_back(row("candidate_indices", C * q.candidates * q.index_bytes));
    rows.push_back(row("augmentation_params", q.policy_records * q.policy_bytes));
    return rows;
}

StorageQuery storage_query(const RunConfig &cfg, std::size_t task) {
    require(cfg.dataset.kind == "synthetic", ErrorKind::Config, "storage from config needs a synthetic dataset spec");
    const auto sizes = group_sizes(cfg.dataset.synthetic.classes, cfg.stream.tasks, cfg.stream.mode);
    require(task < sizes.size(), ErrorKind::Config,
            "task " + std::to_string(task) + " outside a " + std::to_string(sizes.size()) + "-task stream");
    std::uint64_t old = 0;
    for (std::size_t t = 0; t < task; ++t) old += sizes[t];

    Rng rng(0);
    const auto policy = sample_policy(cfg.augment, cfg.dataset.synthetic.input_dim, rng);
    StorageQuery q;
    q.classes = old;
    q.feature_dim = cfg.model.feature_dim;
    q.candidates = task == 0 || !cfg.replay ? 0 : cfg.candidates.k;
    q.policy_records = q.classes * q.candidates;
    q.policy_bytes = encoded_policy_size(policy);
    q.float_bytes = sizeof(double);
    q.index_bytes = sizeof(std::uint32_t);
    q.svd_k = cfg.svd_k;
    return q;
}

}  // namespace apr
