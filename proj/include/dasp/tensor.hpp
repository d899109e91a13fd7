#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dasp/errors.hpp"
#include "dasp/rng.hpp"

namespace dasp {

// Dense row-major array of 64-bit reals. Rank 1 and 2 cover everything the
// engine needs; biases are rank-1, batches and weights rank-2.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != data_.size()) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_string(shape_));
        }
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

    static Tensor full(std::vector<std::size_t> shape, double value) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), value);
        return t;
    }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
        return t;
    }

    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    static Tensor gaussian(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (double& v : t.data_) v = rng.gaussian(0.0, stddev);
        return t;
    }

    static Tensor uniform(std::vector<std::size_t> shape, Rng& rng, double lo, double hi) {
        Tensor t(std::move(shape));
        for (double& v : t.data_) v = rng.uniform(lo, hi);
        return t;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
    std::size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& flat() { return data_; }
    const std::vector<double>& flat() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool bit_equal(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

    std::string shape_str() const { return shape_string(shape_); }

    static std::string shape_string(const std::vector<std::size_t>& s) {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) os << 'x';
            os << s[i];
        }
        os << ']';
        return os.str();
    }

private:
    static std::size_t count(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " + t.shape_str());
    }
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitive forward operations. The tape wraps these; evaluation paths call
// them directly so graph and plain forwards agree bit for bit.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions disagree, " + a.shape_str() + " x " +
                         b.shape_str());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a.at(i, p);
            if (aip == 0.0) continue;
            const double* brow = b.data() + p * n;
            double* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    detail::require_matrix(a, "transpose");
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

// Adds a rank-1 bias of length N to every row of a [B x N] matrix.
inline Tensor add_rowvec(const Tensor& a, const Tensor& bias) {
    detail::require_matrix(a, "add_rowvec");
    if (bias.rank() != 1 || bias.size() != a.cols()) {
        throw ShapeError("add_rowvec: bias " + bias.shape_str() + " does not fit " +
                         a.shape_str());
    }
    Tensor out = a;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(i, j) += bias[j];
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (double& v : out.flat()) v *= s;
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out = a;
    for (double& v : out.flat()) v = v > 0.0 ? v : 0.0;
    return out;
}

// Elementwise natural log with the argument clamped at `floor`; keeps the
// probability losses finite when a class collapses to zero mass.
inline Tensor log_clamped(const Tensor& a, double floor = 1e-12) {
    Tensor out = a;
    for (double& v : out.flat()) v = std::log(v < floor ? floor : v);
    return out;
}

// Row-wise softmax with per-row max subtraction.
inline Tensor softmax_rows(const Tensor& a) {
    detail::require_matrix(a, "softmax_rows");
    const std::size_t rows = a.rows(), cols = a.cols();
    if (cols < 1) throw ShapeError("softmax_rows: empty rows in " + a.shape_str());
    Tensor out({rows, cols});
    for (std::size_t i = 0; i < rows; ++i) {
        double mx = a.at(i, 0);
        for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, a.at(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            const double e = std::exp(a.at(i, j) - mx);
            out.at(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < cols; ++j) out.at(i, j) /= sum;
    }
    return out;
}

// Column means over the batch dimension: [B x C] -> [1 x C].
inline Tensor batch_mean(const Tensor& a) {
    detail::require_matrix(a, "batch_mean");
    const std::size_t rows = a.rows(), cols = a.cols();
    Tensor out({std::size_t{1}, cols});
    for (std::size_t j = 0; j < cols; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < rows; ++i) s += a.at(i, j);
        out.at(0, j) = s / static_cast<double>(rows);
    }
    return out;
}

// Sum of all entries, returned as a scalar tensor of shape [1].
inline Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.flat()) s += v;
    return Tensor::scalar(s);
}

}  // namespace dasp
