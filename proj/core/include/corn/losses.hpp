#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "corn/coral.hpp"
#include "corn/numerics.hpp"

namespace corn {

/// Base weights and schedule position for the unsupervised terms.
struct LossWeights {
    double lambda_c = 0.1;  ///< base weight of the cross pseudo supervision term
    double lambda_d = 0.1;  ///< base weight of the correlation consistency term
    double beta = 1.0;      ///< ramp ceiling
    std::size_t t = 0;
    std::size_t t_max = 1;
};

struct RampedWeights {
    double lambda_c = 0.0;
    double lambda_d = 0.0;
};

/// beta * exp(-5 (1 - t/t_max)^2); t is clamped to t_max.
double rampup_factor(std::size_t t, std::size_t t_max, double beta = 1.0);

/// Shared ramp applied to both base weights. Validates the LossWeights invariants.
RampedWeights rampup_weight(const LossWeights& w);

/// sup + lambda_c(t) * cps + lambda_d(t) * consist.
double total_loss(double sup, double cps, double consist, const LossWeights& w);

/// Per-pixel class probabilities of both branches for one image (S x C each),
/// optional ground truth, and the derived argmax pseudo-labels.
class PixelBatch {
public:
    PixelBatch(Matrix p1, Matrix p2, std::optional<std::vector<int>> y_star = std::nullopt);

    const Matrix& p1() const noexcept { return p1_; }
    const Matrix& p2() const noexcept { return p2_; }
    const std::optional<std::vector<int>>& y_star() const noexcept { return y_star_; }
    const std::vector<int>& y1() const noexcept { return y1_; }
    const std::vector<int>& y2() const noexcept { return y2_; }
    std::size_t pixels() const noexcept { return p1_.rows(); }
    std::size_t classes() const noexcept { return p1_.cols(); }

private:
    Matrix p1_;
    Matrix p2_;
    std::optional<std::vector<int>> y_star_;
    std::vector<int> y1_;
    std::vector<int> y2_;
};

double supervised_loss(const PixelBatch& batch);
double cps_loss(const PixelBatch& batch);

/// A loss value with its gradients on the two branches' probability maps.
struct ProbabilityLoss {
    double value = 0.0;
    Matrix grad_p1;
    Matrix grad_p2;
};

/// (1/S) sum_i [CE(onehot(labels_i), p1_i) + CE(onehot(labels_i), p2_i)].
ProbabilityLoss supervised_loss_grad(const Matrix& p1, const Matrix& p2, const std::vector<int>& labels);

/// (1/S) sum_i [CE(onehot(y2_i), p1_i) + CE(onehot(y1_i), p2_i)] with the
/// pseudo-labels held constant.
ProbabilityLoss cps_loss_grad(const Matrix& p1, const Matrix& p2, const std::vector<int>& y1,
                              const std::vector<int>& y2);

/// How unlabeled embeddings are compared with anchors in the consistency term.
enum class Similarity { coral, cosine };

/// cos(unlabeled_r, anchors_k), each norm computed as sqrt(v.v + 1e-24).
Matrix cosine_similarity_matrix(const FeatureMatrix& unlabeled, const FeatureMatrix& anchors);

/// Consistency term between the two branches' selected embeddings against a
/// shared anchor set, with gradients on both embedding matrices.
///   coral:  CE(softmax(-CORR_mp), softmax(-CORR_ap))
///   cosine: CE(softmax(COS_mp), softmax(COS_ap))
struct ConsistencyTerm {
    double value = 0.0;
    Matrix grad_main;
    Matrix grad_aux;
};
ConsistencyTerm consistency_term(const FeatureMatrix& z_main, const FeatureMatrix& z_aux,
                                 const FeatureMatrix& anchors, Similarity kind);

}  // namespace corn
