#include "corn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace corn {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
    }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (!std::isfinite(fill)) throw std::invalid_argument("Matrix: non-finite fill value");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw std::invalid_argument("Matrix: data length does not match rows * cols");
    }
    for (double v : data_) {
        if (!std::isfinite(v)) throw std::invalid_argument("Matrix: non-finite entry");
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw std::invalid_argument("Matrix::from_rows: ragged rows");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(r, c, std::move(data));
}

Matrix mean_center(const Matrix& x) {
    if (x.rows() == 0 || x.cols() == 0) throw std::invalid_argument("empty input");
    Matrix out = x;
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    for (std::size_t c = 0; c < x.cols(); ++c) {
        double sum = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r) sum += x(r, c);
        const double mean = sum * inv_n;
        for (std::size_t r = 0; r < x.rows(); ++r) out(r, c) = x(r, c) - mean;
    }
    return out;
}

Matrix covariance(const Matrix& x) {
    const Matrix xc = mean_center(x);
    const std::size_t d = x.cols();
    const double divisor = static_cast<double>(std::max<std::size_t>(x.rows() - 1, 1));
    Matrix cov(d, d);
    for (std::size_t r = 0; r < xc.rows(); ++r) {
        const auto row = xc.row(r);
        for (std::size_t i = 0; i < d; ++i) {
            const double ri = row[i];
            for (std::size_t j = i; j < d; ++j) cov(i, j) += ri * row[j];
        }
    }
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            cov(i, j) /= divisor;
            cov(j, i) = cov(i, j);
        }
    }
    return cov;
}

double frobenius_norm_sq(const Matrix& a) {
    double sum = 0.0;
    for (double v : a.data()) sum += v * v;
    return sum;
}

Matrix softmax_rows(const Matrix& a) {
    Matrix out(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto in = a.row(r);
        auto o = out.row(r);
        if (in.empty()) continue;
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t c = 0; c < in.size(); ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

double cross_entropy_rows(const Matrix& p, const Matrix& q) {
    require_same_shape(p, q, "cross_entropy_rows");
    if (p.rows() == 0) throw std::invalid_argument("cross_entropy_rows: empty input");
    double total = 0.0;
    for (std::size_t r = 0; r < p.rows(); ++r) {
        for (std::size_t c = 0; c < p.cols(); ++c) {
            const double pv = p(r, c);
            if (pv != 0.0) total -= pv * std::log(q(r, c) + kLogEpsilon);
        }
    }
    return total / static_cast<double>(p.rows());
}

Matrix cross_entropy_rows_grad_p(const Matrix& p, const Matrix& q) {
    require_same_shape(p, q, "cross_entropy_rows_grad_p");
    const double inv = 1.0 / static_cast<double>(p.rows());
    Matrix g(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.size(); ++i) g.data()[i] = -inv * std::log(q.data()[i] + kLogEpsilon);
    return g;
}

Matrix cross_entropy_rows_grad_q(const Matrix& p, const Matrix& q) {
    require_same_shape(p, q, "cross_entropy_rows_grad_q");
    const double inv = 1.0 / static_cast<double>(p.rows());
    Matrix g(p.rows(), p.cols());
    for (std::size_t i = 0; i < p.size(); ++i) g.data()[i] = -inv * p.data()[i] / (q.data()[i] + kLogEpsilon);
    return g;
}

Matrix softmax_rows_backward(const Matrix& probs, const Matrix& grad_probs) {
    require_same_shape(probs, grad_probs, "softmax_rows_backward");
    Matrix g(probs.rows(), probs.cols());
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        const auto s = probs.row(r);
        const auto gp = grad_probs.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < s.size(); ++c) dot += s[c] * gp[c];
        auto out = g.row(r);
        for (std::size_t c = 0; c < s.size(); ++c) out[c] = s[c] * (gp[c] - dot);
    }
    return g;
}

std::vector<int> argmax_rows(const Matrix& a) {
    std::vector<int> out(a.rows(), 0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row(r);
        std::size_t best = 0;
        for (std::size_t c = 1; c < row.size(); ++c) {
            if (row[c] > row[best]) best = c;
        }
        out[r] = static_cast<int>(best);
    }
    return out;
}

}  // namespace corn
