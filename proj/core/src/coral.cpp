#include "corn/coral.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace corn {

namespace {

void require_dims(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": dim mismatch");
}

// Centered copy of v.
std::vector<double> centered(std::span<const double> v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - mean;
    return out;
}

}  // namespace

FeatureMatrix::FeatureMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.rows() == 0) throw std::invalid_argument("FeatureMatrix: count must be >= 1");
    if (values_.cols() == 0) throw std::invalid_argument("FeatureMatrix: dim must be >= 1");
}

CorrelationMatrix::CorrelationMatrix(Matrix values) : values_(std::move(values)) {
    for (double v : values_.data()) {
        if (v < 0.0) throw std::invalid_argument("CorrelationMatrix: negative distance");
    }
}

double coral_distance(const FeatureMatrix& zp, const FeatureMatrix& zm) {
    require_dims(zp.dim(), zm.dim(), "coral_distance");
    const Matrix cp = covariance(zp.values());
    const Matrix cm = covariance(zm.values());
    double sum = 0.0;
    for (std::size_t i = 0; i < cp.size(); ++i) {
        const double d = cp.data()[i] - cm.data()[i];
        sum += d * d;
    }
    const double dim = static_cast<double>(zp.dim());
    return sum / (4.0 * dim * dim);
}

double vector_coral(std::span<const double> vp, std::span<const double> vm) {
    require_dims(vp.size(), vm.size(), "vector_coral");
    const std::size_t d = vp.size();
    if (d < 2) throw std::invalid_argument("degenerate per-vector covariance");
    const auto a = centered(vp);
    const auto b = centered(vm);
    const double inv = 1.0 / static_cast<double>(d - 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = (a[i] * a[j] - b[i] * b[j]) * inv;
            sum += diff * diff;
        }
    }
    const double dd = static_cast<double>(d);
    return sum / (4.0 * dd * dd);
}

void vector_coral_grad(std::span<const double> vp, std::span<const double> vm, std::span<double> grad) {
    require_dims(vp.size(), vm.size(), "vector_coral_grad");
    require_dims(vp.size(), grad.size(), "vector_coral_grad");
    const std::size_t d = vp.size();
    if (d < 2) throw std::invalid_argument("degenerate per-vector covariance");
    const auto a = centered(vp);
    const auto b = centered(vm);
    double ab = 0.0;
    double bb = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        ab += a[i] * b[i];
        bb += b[i] * b[i];
    }
    // f = s ||a a^T - b b^T||^2 / (d-1)^2 with s = 1 / (4 d^2);
    // df/db = -4 s / (d-1)^2 * (a (a.b) - b (b.b)), then project out the mean.
    const double dd = static_cast<double>(d);
    const double dm1 = static_cast<double>(d - 1);
    const double scale = -4.0 / (4.0 * dd * dd) / (dm1 * dm1);
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        grad[i] = scale * (a[i] * ab - b[i] * bb);
        mean += grad[i];
    }
    mean /= dd;
    for (std::size_t i = 0; i < d; ++i) grad[i] -= mean;
}

CorrelationMatrix correlation_matrix(const FeatureMatrix& unlabeled, const FeatureMatrix& anchors) {
    require_dims(unlabeled.dim(), anchors.dim(), "correlation_matrix");
    Matrix out(unlabeled.count(), anchors.count());
    for (std::size_t r = 0; r < unlabeled.count(); ++r) {
        for (std::size_t k = 0; k < anchors.count(); ++k) {
            out(r, k) = vector_coral(anchors.row(k), unlabeled.row(r));
        }
    }
    return CorrelationMatrix(std::move(out));
}

Matrix correlation_matrix_backward(const FeatureMatrix& unlabeled, const FeatureMatrix& anchors,
                                   const Matrix& grad_corr) {
    require_dims(unlabeled.dim(), anchors.dim(), "correlation_matrix_backward");
    if (grad_corr.rows() != unlabeled.count() || grad_corr.cols() != anchors.count()) {
        throw std::invalid_argument("correlation_matrix_backward: gradient shape mismatch");
    }
    Matrix grad(unlabeled.count(), unlabeled.dim());
    std::vector<double> pair(unlabeled.dim());
    for (std::size_t r = 0; r < unlabeled.count(); ++r) {
        auto out = grad.row(r);
        for (std::size_t k = 0; k < anchors.count(); ++k) {
            const double g = grad_corr(r, k);
            if (g == 0.0) continue;
            vector_coral_grad(anchors.row(k), unlabeled.row(r), pair);
            for (std::size_t i = 0; i < pair.size(); ++i) out[i] += g * pair[i];
        }
    }
    return grad;
}

namespace {

Matrix negated(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data()) v = -v;
    return out;
}

}  // namespace

double consistency_loss(const CorrelationMatrix& corr_mp, const CorrelationMatrix& corr_ap) {
    if (corr_mp.m() != corr_ap.m() || corr_mp.n() != corr_ap.n()) {
        throw std::invalid_argument("consistency_loss: shape mismatch");
    }
    if (corr_mp.m() == 0) throw std::invalid_argument("consistency_loss: empty input");
    return cross_entropy_rows(softmax_rows(negated(corr_mp.values())), softmax_rows(negated(corr_ap.values())));
}

LogitConsistency logit_consistency(const Matrix& logits_main, const Matrix& logits_aux) {
    if (logits_main.rows() != logits_aux.rows() || logits_main.cols() != logits_aux.cols()) {
        throw std::invalid_argument("logit_consistency: shape mismatch");
    }
    const Matrix p = softmax_rows(logits_main);
    const Matrix q = softmax_rows(logits_aux);
    LogitConsistency out;
    out.loss = cross_entropy_rows(p, q);
    out.grad_main = softmax_rows_backward(p, cross_entropy_rows_grad_p(p, q));
    out.grad_aux = softmax_rows_backward(q, cross_entropy_rows_grad_q(p, q));
    return out;
}

}  // namespace corn
