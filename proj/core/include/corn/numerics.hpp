#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace corn {

/// Additive guard inside every log of a cross-entropy.
inline constexpr double kLogEpsilon = 1e-12;

/// Dense row-major matrix of doubles. Entries are required to be finite.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
    /// Throws std::invalid_argument if data.size() != rows * cols or any entry is non-finite.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    std::span<const double> data() const noexcept { return data_; }
    std::span<double> data() noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Subtracts each column's mean. Throws "empty input" for a matrix with no rows.
Matrix mean_center(const Matrix& x);

/// Sample covariance Xc^T Xc / max(rows - 1, 1) of the rows of x (cols x cols).
Matrix covariance(const Matrix& x);

double frobenius_norm_sq(const Matrix& a);

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& a);

/// (1/rows) * sum_r sum_c -p[r,c] * log(q[r,c] + kLogEpsilon).
double cross_entropy_rows(const Matrix& p, const Matrix& q);

/// Gradient of cross_entropy_rows with respect to its first argument.
Matrix cross_entropy_rows_grad_p(const Matrix& p, const Matrix& q);

/// Gradient of cross_entropy_rows with respect to its second argument.
Matrix cross_entropy_rows_grad_q(const Matrix& p, const Matrix& q);

/// Pulls a gradient on softmax outputs back to the logits:
/// g_logit[k] = s[k] * (g[k] - sum_c s[c] g[c]).
Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_probs);

/// Index of the largest entry of each row; ties go to the lowest index.
std::vector<int> argmax_rows(const Matrix& a);

}  // namespace corn
