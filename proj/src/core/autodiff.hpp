#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace apr::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
   public:
    Var() = default;

    const Tensor &value() const;
    const Shape &shape() const { return value().shape(); }
    std::size_t id() const noexcept { return id_; }
    Tape *tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

   private:
    friend class Tape;
    Var(Tape *tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape *tape_ = nullptr;
    std::size_t id_ = 0;
};

// Receives the upstream gradient and pushes contributions into the inputs.
class BackwardContext {
   public:
    BackwardContext(Tape &tape, std::size_t node) : tape_(tape), node_(node) {}

    const Tensor &grad() const;
    const Tensor &input(std::size_t k) const;
    const Tensor &output() const;
    bool needs(std::size_t k) const;
    void accumulate(std::size_t k, const Tensor &g) const;

   private:
    Tape &tape_;
    std::size_t node_;
};

using BackwardFn = std::function<void(const BackwardContext &)>;

struct TapeNode {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_leaf = false;
};

struct Gradients {
    double value = 0.0;
    std::vector<Tensor> grads;  // aligned with the `wanted` argument
};

// Define-by-run tape. Nodes are appended in evaluation order, so reverse
// insertion order is a valid reverse topological order.
class Tape {
   public:
    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var leaf(Tensor value);      // differentiable input
    Var constant(Tensor value);  // excluded from differentiation

    Var record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

    const TapeNode &node(std::size_t id) const { return nodes_.at(id); }
    std::size_t size() const noexcept { return nodes_.size(); }

    Gradients value_and_grad(Var output, std::span<const Var> wanted);

   private:
    friend class BackwardContext;

    std::vector<TapeNode> nodes_;
    std::vector<Tensor> grads_;
    std::vector<bool> has_grad_;
};

Var matmul(Var a, Var b);     // [n,k] x [k,m]
Var matmul_nt(Var a, Var b);  // [n,k] x [m,k]^T
Var transpose(Var a);
Var add(Var a, Var b);  // b may be a row vector broadcast over a's rows
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
Var log(Var a);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
Var sum(Var a);
Var mean(Var a);
Var sum_rows(Var a);     // [n,m] -> [n]
Var l2norm_rows(Var a);  // [n,m] -> [n]
Var normalize_rows(Var a);
Var select_cols(Var a, std::vector<std::size_t> cols);
Var concat_rows(Var a, Var b);

// Rows whose L2 norm falls below this are mapped to zero with zero gradient.
inline constexpr double kNormalizeEps = 1e-12;

}  // namespace apr::ad
