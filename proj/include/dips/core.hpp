#pragma once

// Core value types shared by every module: a dense row-major matrix, the
// labeled/unlabeled Dataset, and the library's exception hierarchy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dips {

using ClassIndex = int;
using Labels = std::vector<ClassIndex>;

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

class ArgumentError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "argument_error"; }
};

class ShapeError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "shape_error"; }
};

class DegenerateTrainingError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "degenerate_training"; }
};

class NumericError : public Error {
public:
    NumericError(const std::string& what, int checkpoint)
        : Error(what + " (checkpoint " + std::to_string(checkpoint) + ")"), checkpoint_(checkpoint) {}
    int checkpoint() const noexcept { return checkpoint_; }
    const char* kind() const noexcept override { return "numeric_error"; }

private:
    int checkpoint_;
};

class NoDynamicsError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "no_dynamics"; }
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t row, std::size_t column)
        : Error(what + " at row " + std::to_string(row) + ", column " + std::to_string(column)),
          row_(row), column_(column) {}
    std::size_t row() const noexcept { return row_; }
    std::size_t column() const noexcept { return column_; }
    const char* kind() const noexcept override { return "parse_error"; }

private:
    std::size_t row_;
    std::size_t column_;
};

class IoError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "io_error"; }
};

// ---------------------------------------------------------------------------
// Matrix

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("matrix data size does not match rows*cols");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return rows_ == 0; }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }

    /// Rows picked by index, in the given order.
    Matrix select_rows(std::span<const std::size_t> idx) const {
        Matrix out(idx.size(), cols_);
        for (std::size_t i = 0; i < idx.size(); ++i)
            std::copy_n(data_.begin() + idx[i] * cols_, cols_, out.data_.begin() + i * cols_);
        return out;
    }

    /// Vertical concatenation.
    static Matrix stack(const Matrix& top, const Matrix& bottom) {
        if (top.empty()) return bottom;
        if (bottom.empty()) return top;
        if (top.cols_ != bottom.cols_) throw ShapeError("cannot stack matrices with different widths");
        Matrix out(top.rows_ + bottom.rows_, top.cols_);
        std::copy(top.data_.begin(), top.data_.end(), out.data_.begin());
        std::copy(bottom.data_.begin(), bottom.data_.end(), out.data_.begin() + top.data_.size());
        return out;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Dataset

struct Dataset {
    Matrix features;
    std::optional<Labels> labels;
    int class_count = 2;
    std::vector<std::string> feature_names;

    std::size_t size() const noexcept { return features.rows(); }
    std::size_t dim() const noexcept { return features.cols(); }
    bool labeled() const noexcept { return labels.has_value(); }

    /// Checks the type invariants; throws ArgumentError on violation.
    void validate() const {
        if (class_count < 1) throw ArgumentError("class_count must be positive");
        for (double v : features.data())
            if (!std::isfinite(v)) throw ArgumentError("features contain NaN or Inf");
        if (labels) {
            if (labels->size() != features.rows()) throw ShapeError("labels length differs from sample count");
            for (ClassIndex y : *labels)
                if (y < 0 || y >= class_count) throw ArgumentError("label outside [0, class_count)");
        }
    }

    Dataset subset(std::span<const std::size_t> idx) const {
        Dataset out;
        out.features = features.select_rows(idx);
        out.class_count = class_count;
        out.feature_names = feature_names;
        if (labels) {
            Labels l(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) l[i] = (*labels)[idx[i]];
            out.labels = std::move(l);
        }
        return out;
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Per-class counts of a label vector.
inline std::vector<std::size_t> class_counts(std::span<const ClassIndex> labels, int class_count) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(class_count), 0);
    for (ClassIndex y : labels) {
        if (y < 0 || y >= class_count) throw ArgumentError("label outside [0, class_count)");
        ++counts[static_cast<std::size_t>(y)];
    }
    return counts;
}

inline int distinct_classes(std::span<const ClassIndex> labels, int class_count) {
    auto counts = class_counts(labels, class_count);
    return static_cast<int>(std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }));
}

/// Index of the largest entry; ties resolve to the lowest index.
inline ClassIndex argmax(std::span<const double> row) {
    ClassIndex best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
        if (row[k] > row[static_cast<std::size_t>(best)]) best = static_cast<ClassIndex>(k);
    return best;
}

inline constexpr double kProbClip = 1e-7;

inline double clip_prob(double p) noexcept { return std::clamp(p, kProbClip, 1.0 - kProbClip); }

}  // namespace dips
