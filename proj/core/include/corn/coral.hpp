#pragma once

// CORAL-correlation consistency: covariance distance between embedding sets,
// the per-pair distance matrix against anchors, and the cross-branch
// consistency loss built on it.

#include <cstddef>
#include <span>

#include "corn/numerics.hpp"

namespace corn {

/// A set of embeddings, one per row (count x dim). count >= 1.
class FeatureMatrix {
public:
    explicit FeatureMatrix(Matrix values);

    std::size_t count() const noexcept { return values_.rows(); }
    std::size_t dim() const noexcept { return values_.cols(); }
    std::span<const double> row(std::size_t r) const { return values_.row(r); }
    const Matrix& values() const noexcept { return values_; }

private:
    Matrix values_;
};

/// m x n matrix of nonnegative CORAL distances; rows index unlabeled
/// embeddings, columns index anchors.
class CorrelationMatrix {
public:
    explicit CorrelationMatrix(Matrix values);

    std::size_t m() const noexcept { return values_.rows(); }
    std::size_t n() const noexcept { return values_.cols(); }
    double operator()(std::size_t r, std::size_t k) const { return values_(r, k); }
    const Matrix& values() const noexcept { return values_; }

private:
    Matrix values_;
};

/// ||cov(zp) - cov(zm)||_F^2 / (4 dim^2).
double coral_distance(const FeatureMatrix& zp, const FeatureMatrix& zm);

/// CORAL between two single embeddings. Each vector v contributes the rank-1
/// covariance (v - mean v)(v - mean v)^T / (dim - 1). Requires dim >= 2.
double vector_coral(std::span<const double> vp, std::span<const double> vm);

/// d vector_coral(vp, vm) / d vm, written into grad (size dim).
void vector_coral_grad(std::span<const double> vp, std::span<const double> vm, std::span<double> grad);

/// out(r, k) = vector_coral(anchors.row(k), unlabeled.row(r)).
CorrelationMatrix correlation_matrix(const FeatureMatrix& unlabeled, const FeatureMatrix& anchors);

/// Pulls d loss / d CORR back onto the unlabeled rows (anchors are constants).
Matrix correlation_matrix_backward(const FeatureMatrix& unlabeled, const FeatureMatrix& anchors,
                                   const Matrix& grad_corr);

/// Cross-entropy between the row softmaxes of the negated distance matrices:
/// CE(softmax(-corr_mp), softmax(-corr_ap)), averaged over the m rows.
double consistency_loss(const CorrelationMatrix& corr_mp, const CorrelationMatrix& corr_ap);

/// Value and gradients of CE(softmax(logits_main), softmax(logits_aux)) with
/// respect to both logit matrices. Both sides receive gradient.
struct LogitConsistency {
    double loss = 0.0;
    Matrix grad_main;
    Matrix grad_aux;
};
LogitConsistency logit_consistency(const Matrix& logits_main, const Matrix& logits_aux);

}  // namespace corn
