#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "config.hpp"

namespace apr {

struct StorageQuery {
    std::uint64_t classes = 0;      // old classes held in the store
    std::uint64_t feature_dim = 0;
    std::uint64_t candidates = 0;   // k per class
    std::uint64_t policy_records = 0;
    std::uint64_t policy_bytes = 0;  // per record
    std::uint64_t float_bytes = 8;
    std::uint64_t index_bytes = 4;
    std::uint64_t svd_k = 0;  // 0: no decomposed row
};

struct StorageRow {
    std::string component;
    std::uint64_t bytes = 0;
    double megabytes = 0.0;  // 1 MB = 1e6 bytes
};

// Payload bytes per component; headers of the on-disk records are excluded.
std::vector<StorageRow> storage_report(const StorageQuery &q);

// The query a run with this config would produce at task t, using the native
// element sizes of the store and candidate formats.
StorageQuery storage_query(const RunConfig &cfg, std::size_t task);

}  // namespace apr
