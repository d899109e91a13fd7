#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dasp/errors.hpp"
#include "dasp/tensor.hpp"

namespace dasp {

constexpr double kVarianceEps = 1e-8;

struct VarianceFilterResult {
    Tensor filtered;                // B x D' surviving columns, original order
    std::vector<std::size_t> kept;  // original column indices
};

// Drops every dimension whose population variance falls below eps. A batch
// that loses all dimensions is degenerate (constant) and cannot be diagnosed.
inline VarianceFilterResult variance_filter(const Tensor& z, double eps = kVarianceEps) {
    detail::require_matrix(z, "variance_filter");
    const std::size_t rows = z.rows(), cols = z.cols();
    if (rows < 2) throw ContractError("variance_filter: need at least two samples");
    if (eps <= 0.0) throw ContractError("variance_filter: eps must be positive");

    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < cols; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < rows; ++i) mean += z.at(i, j);
        mean /= static_cast<double>(rows);
        double var = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double d = z.at(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(rows);
        if (var >= eps) kept.push_back(j);
    }
    if (kept.empty()) {
        throw DegenerateBatchError("variance_filter: every dimension is (near-)constant");
    }
    Tensor out({rows, kept.size()});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < kept.size(); ++j) out.at(i, j) = z.at(i, kept[j]);
    return {std::move(out), std::move(kept)};
}

// Pearson correlation matrix with the population (divisor B) convention.
// Expects variance-filtered input; a zero-variance column here is a caller bug.
inline Tensor correlation_matrix(const Tensor& z) {
    detail::require_matrix(z, "correlation_matrix");
    const std::size_t rows = z.rows(), cols = z.cols();
    if (rows < 2) throw ContractError("correlation_matrix: need at least two samples");

    std::vector<double> mean(cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) mean[j] += z.at(i, j);
    for (double& m : mean) m /= static_cast<double>(rows);

    Tensor centered({rows, cols});
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) centered.at(i, j) = z.at(i, j) - mean[j];

    Tensor cov({cols, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        const double* row = centered.data() + i * cols;
        for (std::size_t a = 0; a < cols; ++a) {
            const double ra = row[a];
            if (ra == 0.0) continue;
            double* crow = cov.data() + a * cols;
            for (std::size_t b = a; b < cols; ++b) crow[b] += ra * row[b];
        }
    }
    const double inv = 1.0 / static_cast<double>(rows);
    std::vector<double> sd(cols);
    for (std::size_t a = 0; a < cols; ++a) {
        const double var = cov.at(a, a) * inv;
        if (var <= 0.0) {
            throw ContractError("correlation_matrix: zero-variance column " + std::to_string(a) +
                                " reached past the variance filter");
        }
        sd[a] = std::sqrt(var);
    }
    Tensor corr({cols, cols});
    for (std::size_t a = 0; a < cols; ++a) {
        for (std::size_t b = a; b < cols; ++b) {
            double c = (cov.at(a, b) * inv) / (sd[a] * sd[b]);
            c = std::clamp(c, -1.0, 1.0);
            corr.at(a, b) = c;
            corr.at(b, a) = c;
        }
    }
    return corr;
}

inline double off_diagonal_mean_square(const Tensor& corr) {
    const std::size_t d = corr.rows();
    if (d < 2) throw ContractError("off_diagonal_mean_square: need a 2x2 matrix or larger");
    double sum = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            if (i != j) sum += corr.at(i, j) * corr.at(i, j);
    return sum / static_cast<double>(d * (d - 1));
}

// Mean squared off-diagonal correlation of the filtered batch, in [0, 1].
inline double redundancy_score(const Tensor& z, double eps = kVarianceEps) {
    const VarianceFilterResult f = variance_filter(z, eps);
    if (f.filtered.cols() < 2) {
        throw DegenerateBatchError(
            "redundancy_score: fewer than two dimensions survive variance filtering");
    }
    return off_diagonal_mean_square(correlation_matrix(f.filtered));
}

// Rule-based diagnosis: relative scores against the per-batch minimum, then
// thresholding. The argmin modality always has a relative score of zero, so
// the biased set can never cover every modality.
inline std::set<std::size_t> diagnose(const std::map<std::size_t, double>& scores,
                                      double delta) {
    if (delta <= 0.0) throw ContractError("diagnose: delta must be positive");
    if (scores.size() < 2) {
        throw DiagnosisUnavailableError("diagnose: need at least two diagnosable modalities");
    }
    double lo = scores.begin()->second;
    for (const auto& [m, r] : scores) lo = std::min(lo, r);
    std::set<std::size_t> biased;
    for (const auto& [m, r] : scores) {
        if (r - lo >= delta) biased.insert(m);
    }
    return biased;
}

// Per-modality diagnosis summary attached to step outcomes and reports.
struct RedundancyReport {
    std::map<std::size_t, double> scores;            // r^m for diagnosable modalities
    std::map<std::size_t, double> relative;          // delta^m = r^m - min r
    std::set<std::size_t> biased;                    // G
    double threshold = 0.0;
    std::map<std::size_t, std::size_t> kept_dims;    // columns surviving the filter
    std::set<std::size_t> undiagnosable;             // degenerate batches
    bool diagnosis_available = false;
};

inline RedundancyReport build_redundancy_report(const std::vector<Tensor>& projected,
                                                double delta, double eps = kVarianceEps) {
    RedundancyReport rep;
    rep.threshold = delta;
    for (std::size_t m = 0; m < projected.size(); ++m) {
        try {
            const VarianceFilterResult f = variance_filter(projected[m], eps);
            if (f.filtered.cols() < 2) {
                rep.undiagnosable.insert(m);
                continue;
            }
            rep.kept_dims[m] = f.filtered.cols();
            rep.scores[m] = off_diagonal_mean_square(correlation_matrix(f.filtered));
        } catch (const DegenerateBatchError&) {
            rep.undiagnosable.insert(m);
        }
    }
    if (rep.scores.size() >= 2) {
        rep.biased = diagnose(rep.scores, delta);
        rep.diagnosis_available = true;
        double lo = rep.scores.begin()->second;
        for (const auto& [m, r] : rep.scores) lo = std::min(lo, r);
        for (const auto& [m, r] : rep.scores) rep.relative[m] = r - lo;
    }
    return rep;
}

// Closed-form correlation matrix for features z~ = z + alpha*v with identity
// source covariance, independent zero-mean alpha of variance sigma^2 and a
// fixed direction v. Diagonal is one by definition.
inline Tensor analytic_shift_correlation(const Tensor& v, double sigma_alpha) {
    if (v.rank() != 1) throw ShapeError("analytic_shift_correlation: v must be rank-1");
    if (sigma_alpha < 0.0) throw ContractError("analytic_shift_correlation: sigma must be >= 0");
    const std::size_t d = v.size();
    const double s2 = sigma_alpha * sigma_alpha;
    Tensor corr({d, d});
    for (std::size_t i = 0; i < d; ++i) {
        corr.at(i, i) = 1.0;
        for (std::size_t j = i + 1; j < d; ++j) {
            const double num = s2 * v[i] * v[j];
            const double den = std::sqrt((1.0 + s2 * v[i] * v[i]) * (1.0 + s2 * v[j] * v[j]));
            corr.at(i, j) = num / den;
            corr.at(j, i) = corr.at(i, j);
        }
    }
    return corr;
}

// Redundancy of the analytically shifted features; strictly positive exactly
// when sigma > 0 and v has at least two nonzero entries.
inline double redundancy_of_shifted(const Tensor& v, double sigma_alpha) {
    if (v.size() < 2) return 0.0;
    return off_diagonal_mean_square(analytic_shift_correlation(v, sigma_alpha));
}

// FIFO cache of recent feature rows, used to widen the effective batch when
// the incoming batch is too small for a stable redundancy estimate.
class FeatureQueue {
public:
    explicit FeatureQueue(std::size_t capacity = 256) : capacity_(capacity) {}

    void push_rows(const Tensor& z) {
        detail::require_matrix(z, "FeatureQueue::push_rows");
        for (std::size_t i = 0; i < z.rows(); ++i) {
            std::vector<double> row(z.data() + i * z.cols(), z.data() + (i + 1) * z.cols());
            rows_.push_back(std::move(row));
            if (rows_.size() > capacity_) rows_.pop_front();
        }
        cols_ = z.cols();
    }

    std::size_t size() const { return rows_.size(); }
    std::size_t capacity() const { return capacity_; }

    // Oldest-first snapshot of the cached rows.
    Tensor snapshot() const {
        if (rows_.empty()) throw ContractError("FeatureQueue::snapshot: queue is empty");
        Tensor out({rows_.size(), cols_});
        for (std::size_t i = 0; i < rows_.size(); ++i)
            for (std::size_t j = 0; j < cols_; ++j) out.at(i, j) = rows_[i][j];
        return out;
    }

    void clear() { rows_.clear(); }

private:
    std::size_t capacity_;
    std::size_t cols_ = 0;
    std::deque<std::vector<double>> rows_;
};

}  // namespace dasp
