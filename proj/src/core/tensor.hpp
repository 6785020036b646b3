#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"

namespace apr {

using Shape = std::vector<std::size_t>;

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<MatrixRM>;
using ConstMatMap = Eigen::Map<const MatrixRM>;

// Dense row-major array of doubles. A rank-0 tensor (empty shape) holds one
// scalar. Value type: copies are deep.
class Tensor {
   public:
    Tensor() : shape_{}, data_(1, 0.0) {}
    explicit Tensor(Shape shape);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor filled(Shape shape, double v);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor vector(std::vector<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);
    static Tensor from_eigen(const Eigen::MatrixXd &m);

    const Shape &shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const;

    // Treats rank 1 as a single row and rank 0 as 1x1.
    std::size_t rows() const noexcept;
    std::size_t cols() const noexcept;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::vector<double> &storage() noexcept { return data_; }
    const std::vector<double> &storage() const noexcept { return data_; }

    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double &at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double item() const;

    MatMap mat() { return MatMap(data_.data(), rows(), cols()); }
    ConstMatMap mat() const { return ConstMatMap(data_.data(), rows(), cols()); }
    Eigen::MatrixXd to_eigen() const { return mat(); }

    Tensor row(std::size_t r) const;
    Tensor rows_subset(std::span<const std::size_t> indices) const;
    Tensor reshaped(Shape shape) const;

    bool all_finite() const noexcept;
    bool same_shape(const Tensor &other) const noexcept { return shape_ == other.shape_; }
    bool operator==(const Tensor &other) const noexcept {
        return shape_ == other.shape_ && data_ == other.data_;
    }

   private:
    Shape shape_;
    std::vector<double> data_;
};

std::size_t shape_numel(const Shape &shape);
std::string shape_string(const Shape &shape);

// Row-wise concatenation of rank-2 tensors with equal column counts.
Tensor vstack(std::span<const Tensor> parts);

double max_abs_diff(const Tensor &a, const Tensor &b);
double frobenius(const Tensor &a);

}  // namespace apr
