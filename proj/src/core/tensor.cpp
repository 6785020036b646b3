#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace apr {

const char *error_kind_name(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::Dimension:
            return "dimension error";
        case ErrorKind::Numeric:
            return "numeric error";
        case ErrorKind::Contract:
            return "contract error";
        case ErrorKind::Config:
            return "config error";
        case ErrorKind::Decode:
            return "decode error";
        case ErrorKind::Stats:
            return "stats error";
        case ErrorKind::Io:
            return "io error";
    }
    return "error";
}

std::size_t shape_numel(const Shape &shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape &shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
    for (auto s : shape_) require(s > 0, ErrorKind::Dimension, "tensor extents must be positive");
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    for (auto s : shape_) require(s > 0, ErrorKind::Dimension, "tensor extents must be positive");
    require(data_.size() == shape_numel(shape_), ErrorKind::Dimension,
            "data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_string(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::filled(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) { return vector(std::vector<double>(values)); }

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    require(rows.size() > 0, ErrorKind::Dimension, "empty matrix literal");
    const std::size_t cols = rows.begin()->size();
    std::vector<double> values;
    values.reserve(rows.size() * cols);
    for (const auto &r : rows) {
        require(r.size() == cols, ErrorKind::Dimension, "ragged matrix literal");
        values.insert(values.end(), r.begin(), r.end());
    }
    return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

Tensor Tensor::from_eigen(const Eigen::MatrixXd &m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.mat() = m;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    require(axis < shape_.size(), ErrorKind::Dimension, "axis out of range");
    return shape_[axis];
}

std::size_t Tensor::rows() const noexcept {
    if (shape_.size() < 2) return 1;
    return shape_numel(shape_) / shape_.back();
}

std::size_t Tensor::cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }

double Tensor::item() const {
    require(data_.size() == 1, ErrorKind::Contract, "item() on a tensor with " +
                                                        std::to_string(data_.size()) + " elements");
    return data_[0];
}

Tensor Tensor::row(std::size_t r) const {
    require(r < rows(), ErrorKind::Dimension, "row index out of range");
    const auto c = cols();
    return Tensor({c}, std::vector<double>(data_.begin() + r * c, data_.begin() + (r + 1) * c));
}

Tensor Tensor::rows_subset(std::span<const std::size_t> indices) const {
    require(!indices.empty(), ErrorKind::Dimension, "empty row selection");
    const auto c = cols();
    std::vector<double> out;
    out.reserve(indices.size() * c);
    for (auto r : indices) {
        require(r < rows(), ErrorKind::Dimension, "row index out of range");
        out.insert(out.end(), data_.begin() + r * c, data_.begin() + (r + 1) * c);
    }
    return Tensor({indices.size(), c}, std::move(out));
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor vstack(std::span<const Tensor> parts) {
    require(!parts.empty(), ErrorKind::Dimension, "vstack of nothing");
    const auto c = parts.front().cols();
    std::size_t r = 0;
    for (const auto &p : parts) {
        require(p.cols() == c, ErrorKind::Dimension, "vstack column mismatch");
        r += p.rows();
    }
    std::vector<double> out;
    out.reserve(r * c);
    for (const auto &p : parts) out.insert(out.end(), p.storage().begin(), p.storage().end());
    return Tensor({r, c}, std::move(out));
}

double max_abs_diff(const Tensor &a, const Tensor &b) {
    require(a.size() == b.size(), ErrorKind::Dimension, "max_abs_diff size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double frobenius(const Tensor &a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

}  // namespace apr
