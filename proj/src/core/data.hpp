#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "binio.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace apr {

enum class SplitTag : std::uint8_t { Train, Val, Test };
enum class StartMode { Cold, Warm };

const char *split_name(SplitTag tag);

struct LabeledSet {
    Tensor samples;                     // [n, input_dim]
    std::vector<std::uint32_t> labels;  // global class index per row
    SplitTag split = SplitTag::Train;

    std::size_t size() const { return labels.size(); }
    std::size_t input_dim() const { return samples.cols(); }

    LabeledSet subset(const std::vector<std::size_t> &rows) const;
    std::vector<std::size_t> rows_of(std::uint32_t cls) const;
};

LabeledSet concat(const std::vector<const LabeledSet *> &parts);

// Class-pooled data before grouping into tasks; labels are original class ids.
struct DataPool {
    LabeledSet train;
    LabeledSet test;
    std::size_t classes = 0;
};

struct SyntheticSpec {
    std::size_t classes = 20;
    std::size_t input_dim = 32;
    double radius = 8.0;       // cluster means lie on a sphere of this radius
    double cluster_std = 1.0;  // typical per-axis spread
    double anisotropy = 4.0;   // ratio between largest and smallest covariance eigenvalue
    std::size_t n_train = 300;  // per class, includes the validation carve-out
    std::size_t n_test = 100;
};

// Means are palindromic and covariances commute with coordinate reversal, so
// the flip augmentation maps each class distribution onto itself.
DataPool make_synthetic_pool(const SyntheticSpec &spec, std::uint64_t seed);

// External formats. CSV: header `label,f0,...`; binary: `APRD` u32 version
// u32 rows u32 cols, rows*cols f64, rows u32 labels, all little endian.
LabeledSet read_csv(const std::string &path, SplitTag split);
void write_csv(const LabeledSet &set, const std::string &path);
LabeledSet read_binary_matrix(const std::string &path, SplitTag split);
void write_binary_matrix(const LabeledSet &set, const std::string &path);
LabeledSet read_dataset_file(const std::string &path, SplitTag split);  // dispatch on extension/magic

struct TaskData {
    LabeledSet train;
    LabeledSet val;
    LabeledSet test;
};

struct TaskStream {
    std::size_t tasks = 0;
    StartMode mode = StartMode::Cold;
    std::vector<std::vector<std::uint32_t>> class_groups;  // global indices, C_0 first
    std::vector<std::uint32_t> original_class;             // global index -> pool label
    std::vector<TaskData> per_task;

    std::size_t total_classes() const { return original_class.size(); }
    std::size_t classes_before(std::size_t task) const;
};

struct StreamSpec {
    std::size_t tasks = 5;
    StartMode mode = StartMode::Cold;
    std::uint64_t class_shuffle_seed = 1993;
    std::size_t n_val = 50;  // per class, carved from train
};

std::vector<std::size_t> group_sizes(std::size_t total_classes, std::size_t tasks, StartMode mode);
TaskStream make_task_stream(const DataPool &pool, const StreamSpec &spec);

// ---- augmentation record / replay ----

enum class TransformId : std::uint8_t { Jitter = 1, CropMask = 2, Flip = 3, Scale = 4 };

struct TransformRecord {
    TransformId id = TransformId::Jitter;
    bool apply = true;
    std::vector<std::int64_t> ints;
    std::vector<double> reals;
};

struct AugPolicy {
    std::vector<TransformRecord> transforms;

    bool identity() const { return transforms.empty(); }
    // Recorded random scalars (apply flags of always-on transforms excluded).
    std::size_t parameter_count() const;
};

struct AugFamily {
    bool enabled = true;
    double jitter_max_sigma = 0.1;
    std::size_t crop_max_width = 4;
    double crop_prob = 0.5;
    double flip_prob = 0.5;
    double scale_lo = 0.9;
    double scale_hi = 1.1;
};

AugPolicy sample_policy(const AugFamily &family, std::size_t input_dim, Rng &rng);
Tensor apply_policy(const Tensor &x, const AugPolicy &p);
// Applies p[i] to row i.
Tensor apply_policies(const Tensor &rows, const std::vector<AugPolicy> &policies);

void encode_policy(binio::Writer &w, const AugPolicy &p);
AugPolicy decode_policy(binio::Reader &r);
std::size_t encoded_policy_size(const AugPolicy &p);

}  // namespace apr
