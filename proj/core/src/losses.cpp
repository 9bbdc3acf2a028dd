#include "corn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace corn {

double rampup_factor(std::size_t t, std::size_t t_max, double beta) {
    if (t_max == 0) throw std::invalid_argument("rampup_factor: t_max must be >= 1");
    const double phase = static_cast<double>(std::min(t, t_max)) / static_cast<double>(t_max);
    const double gap = 1.0 - phase;
    return beta * std::exp(-5.0 * gap * gap);
}

RampedWeights rampup_weight(const LossWeights& w) {
    if (!(w.beta > 0.0)) throw std::invalid_argument("LossWeights: beta must be > 0");
    if (w.lambda_c < 0.0 || w.lambda_d < 0.0) throw std::invalid_argument("LossWeights: negative base weight");
    if (w.lambda_c > w.beta || w.lambda_d > w.beta) {
        throw std::invalid_argument("LossWeights: base weights must not exceed beta");
    }
    const double factor = rampup_factor(w.t, w.t_max, w.beta);
    return {w.lambda_c * factor, w.lambda_d * factor};
}

double total_loss(double sup, double cps, double consist, const LossWeights& w) {
    const auto lam = rampup_weight(w);
    return sup + lam.lambda_c * cps + lam.lambda_d * consist;
}

namespace {

void check_labels(const std::vector<int>& labels, std::size_t pixels, std::size_t classes, const char* what) {
    if (labels.size() != pixels) throw std::invalid_argument(std::string(what) + ": label count mismatch");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw std::invalid_argument(std::string(what) + ": label out of range");
        }
    }
}

void check_distributions(const Matrix& p, const char* what) {
    for (std::size_t r = 0; r < p.rows(); ++r) {
        double sum = 0.0;
        for (double v : p.row(r)) {
            if (v < 0.0) throw std::invalid_argument(std::string(what) + ": negative probability");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-8) throw std::invalid_argument(std::string(what) + ": row is not a distribution");
    }
}

// Sum over pixels of -log(p[i, labels[i]] + eps) / S, with its gradient.
double onehot_ce(const Matrix& p, const std::vector<int>& labels, Matrix* grad) {
    const double inv = 1.0 / static_cast<double>(p.rows());
    double total = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        const double q = p(i, static_cast<std::size_t>(labels[i])) + kLogEpsilon;
        total -= std::log(q);
        if (grad != nullptr) (*grad)(i, static_cast<std::size_t>(labels[i])) = -inv / q;
    }
    return total * inv;
}

ProbabilityLoss paired_ce(const Matrix& p1, const Matrix& p2, const std::vector<int>& target1,
                          const std::vector<int>& target2) {
    ProbabilityLoss out;
    out.grad_p1 = Matrix(p1.rows(), p1.cols());
    out.grad_p2 = Matrix(p2.rows(), p2.cols());
    out.value = onehot_ce(p1, target1, &out.grad_p1) + onehot_ce(p2, target2, &out.grad_p2);
    return out;
}

}  // namespace

PixelBatch::PixelBatch(Matrix p1, Matrix p2, std::optional<std::vector<int>> y_star)
    : p1_(std::move(p1)), p2_(std::move(p2)), y_star_(std::move(y_star)) {
    if (p1_.rows() != p2_.rows() || p1_.cols() != p2_.cols()) {
        throw std::invalid_argument("PixelBatch: p1 and p2 shapes differ");
    }
    if (p1_.rows() == 0 || p1_.cols() == 0) throw std::invalid_argument("PixelBatch: empty probability map");
    check_distributions(p1_, "PixelBatch p1");
    check_distributions(p2_, "PixelBatch p2");
    if (y_star_) check_labels(*y_star_, p1_.rows(), p1_.cols(), "PixelBatch y_star");
    y1_ = argmax_rows(p1_);
    y2_ = argmax_rows(p2_);
}

double supervised_loss(const PixelBatch& batch) {
    if (!batch.y_star()) throw std::invalid_argument("supervised loss requires ground truth");
    return supervised_loss_grad(batch.p1(), batch.p2(), *batch.y_star()).value;
}

double cps_loss(const PixelBatch& batch) {
    return cps_loss_grad(batch.p1(), batch.p2(), batch.y1(), batch.y2()).value;
}

ProbabilityLoss supervised_loss_grad(const Matrix& p1, const Matrix& p2, const std::vector<int>& labels) {
    if (p1.rows() != p2.rows() || p1.cols() != p2.cols()) throw std::invalid_argument("supervised_loss: shape mismatch");
    if (p1.rows() == 0) throw std::invalid_argument("supervised_loss: no pixels");
    check_labels(labels, p1.rows(), p1.cols(), "supervised_loss");
    return paired_ce(p1, p2, labels, labels);
}

ProbabilityLoss cps_loss_grad(const Matrix& p1, const Matrix& p2, const std::vector<int>& y1,
                              const std::vector<int>& y2) {
    if (p1.rows() != p2.rows() || p1.cols() != p2.cols()) throw std::invalid_argument("cps_loss: shape mismatch");
    if (p1.rows() == 0) throw std::invalid_argument("cps_loss: no pixels");
    check_labels(y1, p1.rows(), p1.cols(), "cps_loss y1");
    check_labels(y2, p1.rows(), p1.cols(), "cps_loss y2");
    // Each branch is supervised by the other's pseudo-labels.
    return paired_ce(p1, p2, y2, y1);
}

namespace {

constexpr double kNormEpsilonSq = 1e-24;

double guarded_norm(std::span<const double> v) {
    double s = kNormEpsilonSq;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// Gradient of cos(u, a) w.r.t. u, accumulated with weight g.
void accumulate_cosine_grad(std::span<const double> u, std::span<const double> a, double g, std::span<double> out) {
    const double nu = guarded_norm(u);
    const double na = guarded_norm(a);
    double dot = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * a[i];
    // d/du [u.a / (|u| |a|)] = a / (|u||a|) - (u.a) u / (|u|^3 |a|)
    const double c1 = g / (nu * na);
    const double c2 = g * dot / (nu * nu * nu * na);
    for (std::size_t i = 0; i < u.size(); ++i) out[i] += c1 * a[i] - c2 * u[i];
}

Matrix cosine_backward(const FeatureMatrix& unlabeled, const FeatureMatrix& anchors, const Matrix& grad_sim) {
    Matrix grad(unlabeled.count(), unlabeled.dim());
    for (std::size_t r = 0; r < unlabeled.count(); ++r) {
        for (std::size_t k = 0; k < anchors.count(); ++k) {
            accumulate_cosine_grad(unlabeled.row(r), anchors.row(k), grad_sim(r, k), grad.row(r));
        }
    }
    return grad;
}

Matrix negated(const Matrix& m) {
    Matrix out = m;
    for (double& v : out.data()) v = -v;
    return out;
}

}  // namespace

Matrix cosine_similarity_matrix(const FeatureMatrix& unlabeled, const FeatureMatrix& anchors) {
    if (unlabeled.dim() != anchors.dim()) throw std::invalid_argument("cosine_similarity_matrix: dim mismatch");
    Matrix out(unlabeled.count(), anchors.count());
    for (std::size_t r = 0; r < unlabeled.count(); ++r) {
        const auto u = unlabeled.row(r);
        const double nu = guarded_norm(u);
        for (std::size_t k = 0; k < anchors.count(); ++k) {
            const auto a = anchors.row(k);
            double dot = 0.0;
            for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * a[i];
            out(r, k) = dot / (nu * guarded_norm(a));
        }
    }
    return out;
}

ConsistencyTerm consistency_term(const FeatureMatrix& z_main, const FeatureMatrix& z_aux,
                                 const FeatureMatrix& anchors, Similarity kind) {
    if (z_main.count() != z_aux.count() || z_main.dim() != z_aux.dim()) {
        throw std::invalid_argument("consistency_term: branch selections differ in shape");
    }
    ConsistencyTerm out;
    if (kind == Similarity::coral) {
        const auto corr_mp = correlation_matrix(z_main, anchors);
        const auto corr_ap = correlation_matrix(z_aux, anchors);
        const auto lc = logit_consistency(negated(corr_mp.values()), negated(corr_ap.values()));
        out.value = lc.loss;
        out.grad_main = correlation_matrix_backward(z_main, anchors, negated(lc.grad_main));
        out.grad_aux = correlation_matrix_backward(z_aux, anchors, negated(lc.grad_aux));
    } else {
        const auto lc = logit_consistency(cosine_similarity_matrix(z_main, anchors),
                                          cosine_similarity_matrix(z_aux, anchors));
        out.value = lc.loss;
        out.grad_main = cosine_backward(z_main, anchors, lc.grad_main);
        out.grad_aux = cosine_backward(z_aux, anchors, lc.grad_aux);
    }
    return out;
}

}  // namespace corn
