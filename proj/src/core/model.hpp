#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace apr {

enum class Activation : std::uint8_t { Identity = 0, Relu = 1, Tanh = 2 };

struct DenseLayer {
    Tensor weight;  // [in, out]
    Tensor bias;    // [out]
    Activation activation = Activation::Identity;
};

struct ExtractorParams {
    std::vector<DenseLayer> layers;

    std::size_t input_dim() const;
    std::size_t feature_dim() const;

    // He-normal weights, zero biases.
    static ExtractorParams mlp(const std::vector<std::size_t> &widths, const std::vector<Activation> &acts,
                               Rng &rng);
};

enum class HeadMode : std::uint8_t { Cosine = 0, Linear = 1 };

enum class Split { All, OldOnly, NewOnly };

// One weight row per class, ordered by global class index. Rows below
// `old_classes` belong to earlier tasks.
struct ClassifierHead {
    Tensor weight;  // [classes, d]
    HeadMode mode = HeadMode::Cosine;
    double scale = 16.0;
    std::size_t old_classes = 0;

    std::size_t classes() const { return weight.rows(); }
    std::size_t feature_dim() const { return weight.cols(); }

    static ClassifierHead create(std::size_t classes, std::size_t d, HeadMode mode, double scale, double init_std,
                                 Rng &rng);
    // Marks every current row as old and appends `n_new` freshly initialised rows.
    void add_classes(std::size_t n_new, double init_std, Rng &rng);

    std::vector<std::size_t> split_columns(Split split) const;
};

struct Network {
    ExtractorParams extractor;
    ClassifierHead head;
};

struct ModelState {
    Network current;
    std::optional<Network> frozen_previous;
    std::size_t task = 0;
};

// Copies `current` into `frozen_previous`.
ModelState snapshot(const ModelState &state);

// Tape bindings. `trainable` decides whether parameters become leaves.
struct BoundExtractor {
    std::vector<ad::Var> weights;
    std::vector<ad::Var> biases;
    std::vector<Activation> activations;
};

struct BoundHead {
    ad::Var weight;
    HeadMode mode = HeadMode::Cosine;
    double scale = 16.0;
    std::vector<std::size_t> old_cols;
    std::vector<std::size_t> new_cols;
};

BoundExtractor bind(ad::Tape &tape, const ExtractorParams &params, bool trainable);
BoundHead bind(ad::Tape &tape, const ClassifierHead &head, bool trainable);

ad::Var extract(const BoundExtractor &f, ad::Var x);
ad::Var logits(const BoundHead &g, ad::Var features, Split split);

// Tape-free evaluation; same arithmetic as the tape path.
Tensor extract(const ExtractorParams &params, const Tensor &x);
Tensor logits(const ClassifierHead &head, const Tensor &features, Split split);

std::vector<Tensor *> parameters(Network &net);
std::vector<const Tensor *> parameters(const Network &net);

// FNV-1a over the raw parameter bytes.
std::uint64_t checksum(const Network &net);

std::vector<char> encode_checkpoint(const ModelState &state);
ModelState decode_checkpoint(const std::vector<char> &bytes);
void save_checkpoint(const ModelState &state, const std::string &path);
ModelState load_checkpoint(const std::string &path);

}  // namespace apr
