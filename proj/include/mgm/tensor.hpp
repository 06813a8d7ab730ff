#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "mgm/error.hpp"

namespace mgm {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

/// Dense row-major array of doubles. Most of the library works with rank-2
/// tensors; a scalar is stored as 1x1.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
        validate_shape();
        values_.assign(count(shape_), fill);
    }

    Tensor(Shape shape, std::vector<double> values)
        : shape_(std::move(shape)), values_(std::move(values)) {
        validate_shape();
        if (values_.size() != count(shape_)) {
            throw ShapeError("tensor of shape " + shape_str(shape_) + " given " +
                             std::to_string(values_.size()) + " values");
        }
    }

    static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

    static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

    static Tensor identity(std::size_t n) {
        Tensor t({n, n});
        for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
        return t;
    }

    static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty()) throw ShapeError("from_rows needs at least one row");
        const std::size_t cols = rows.front().size();
        std::vector<double> v;
        v.reserve(rows.size() * cols);
        for (const auto& r : rows) {
            if (r.size() != cols) throw ShapeError("ragged rows");
            v.insert(v.end(), r.begin(), r.end());
        }
        return Tensor({rows.size(), cols}, std::move(v));
    }

    const Shape& shape() const { return shape_; }
    bool empty() const { return shape_.empty(); }
    std::size_t size() const { return values_.size(); }
    std::size_t rank() const { return shape_.size(); }

    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const {
        if (shape_.empty()) return 0;
        return shape_.size() == 1 ? 1 : shape_[1];
    }

    double& operator()(std::size_t r, std::size_t c) { return values_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return values_[r * cols() + c]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::vector<double>& raw() { return values_; }
    const std::vector<double>& raw() const { return values_; }

    std::span<const double> row(std::size_t r) const {
        return std::span<const double>(values_).subspan(r * cols(), cols());
    }
    std::span<double> row(std::size_t r) {
        return std::span<double>(values_).subspan(r * cols(), cols());
    }

    double item() const {
        if (values_.size() != 1) throw ShapeError("item() on tensor " + shape_str(shape_));
        return values_[0];
    }

    void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        return std::all_of(values_.begin(), values_.end(), [](double x) { return std::isfinite(x); });
    }

    double sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    static std::size_t count(const Shape& s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }

    void validate_shape() const {
        if (shape_.empty()) throw ShapeError("tensor shape must have at least one dimension");
        for (auto d : shape_) {
            if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape_));
        }
    }

    Shape shape_;
    std::vector<double> values_;
};

/// Plain dense product, no tape.
inline Tensor dense_matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor out = Tensor::zeros(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* o = &out(i, 0);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            const double* br = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
        }
    }
    return out;
}

inline Tensor transpose(const Tensor& a) {
    Tensor t = Tensor::zeros(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

struct Triplet {
    std::size_t row;
    std::size_t col;
    double weight;
};

/// Coordinate-format sparse matrix. Entries are kept sorted by (row, col)
/// with duplicates summed, so every traversal has a fixed order.
class SparseMatrix {
public:
    SparseMatrix() = default;

    SparseMatrix(std::size_t rows, std::size_t cols, std::vector<Triplet> entries)
        : rows_(rows), cols_(cols), entries_(std::move(entries)) {
        for (const auto& e : entries_) {
            if (e.row >= rows_ || e.col >= cols_) {
                throw ShapeError("sparse entry (" + std::to_string(e.row) + "," +
                                 std::to_string(e.col) + ") outside " + std::to_string(rows_) +
                                 "x" + std::to_string(cols_));
            }
            if (!std::isfinite(e.weight)) throw DomainError("sparse entry weight is not finite");
        }
        std::stable_sort(entries_.begin(), entries_.end(), [](const Triplet& a, const Triplet& b) {
            return std::tie(a.row, a.col) < std::tie(b.row, b.col);
        });
        std::vector<Triplet> merged;
        merged.reserve(entries_.size());
        for (const auto& e : entries_) {
            if (!merged.empty() && merged.back().row == e.row && merged.back().col == e.col) {
                merged.back().weight += e.weight;
            } else {
                merged.push_back(e);
            }
        }
        entries_ = std::move(merged);
    }

    static SparseMatrix identity(std::size_t n) {
        std::vector<Triplet> t;
        t.reserve(n);
        for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0});
        return SparseMatrix(n, n, std::move(t));
    }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t nnz() const { return entries_.size(); }
    const std::vector<Triplet>& entries() const { return entries_; }

    Tensor densify() const {
        Tensor d = Tensor::zeros(rows_, cols_);
        for (const auto& e : entries_) d(e.row, e.col) += e.weight;
        return d;
    }

    /// y = A x (no tape).
    Tensor multiply(const Tensor& x) const {
        if (cols_ != x.rows()) {
            throw ShapeError("spmm " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                             " with " + shape_str(x.shape()));
        }
        const std::size_t f = x.cols();
        Tensor y = Tensor::zeros(rows_, f);
        for (const auto& e : entries_) {
            double* yr = &y(e.row, 0);
            const double* xr = x.row(e.col).data();
            for (std::size_t j = 0; j < f; ++j) yr[j] += e.weight * xr[j];
        }
        return y;
    }

    /// y = A^T g (no tape).
    Tensor multiply_transposed(const Tensor& g) const {
        if (rows_ != g.rows()) throw ShapeError("spmm transpose row mismatch");
        const std::size_t f = g.cols();
        Tensor y = Tensor::zeros(cols_, f);
        for (const auto& e : entries_) {
            double* yr = &y(e.col, 0);
            const double* gr = g.row(e.row).data();
            for (std::size_t j = 0; j < f; ++j) yr[j] += e.weight * gr[j];
        }
        return y;
    }

    std::vector<double> row_sums() const {
        std::vector<double> s(rows_, 0.0);
        for (const auto& e : entries_) s[e.row] += e.weight;
        return s;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<Triplet> entries_;
};

}  // namespace mgm
