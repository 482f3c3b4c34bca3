#pragma once
// Dense row-major matrix of doubles. The single numeric substrate shared by
// the tape engine, the model, and the clustering code.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace lechpe {

class Matrix {
public:
    Matrix() = default;

    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols),
          data_(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols), fill) {
        if (rows < 0 || cols < 0) {
            throw std::invalid_argument("Matrix: negative dimensions " + shape_str());
        }
    }

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const int r = static_cast<int>(rows.size());
        const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
        Matrix m(r, c);
        int i = 0;
        for (const auto& row : rows) {
            if (static_cast<int>(row.size()) != c) {
                throw std::invalid_argument("Matrix::from_rows: ragged rows");
            }
            int j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return m;
    }

    static Matrix row_vector(const std::vector<double>& v) {
        Matrix m(1, static_cast<int>(v.size()));
        for (int j = 0; j < m.cols(); ++j) m(0, j) = v[static_cast<std::size_t>(j)];
        return m;
    }

    static Matrix col_vector(const std::vector<double>& v) {
        Matrix m(static_cast<int>(v.size()), 1);
        for (int i = 0; i < m.rows(); ++i) m(i, 0) = v[static_cast<std::size_t>(i)];
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(int i, int j) {
        return data_[static_cast<std::size_t>(i) * cols_ + static_cast<std::size_t>(j)];
    }
    double operator()(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * cols_ + static_cast<std::size_t>(j)];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

    std::string shape_str() const {
        return std::to_string(rows_) + "x" + std::to_string(cols_);
    }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    void fill(double v) { data_.assign(data_.size(), v); }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

inline void require_shape(const Matrix& m, int rows, int cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols) {
        throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(rows) +
                                    "x" + std::to_string(cols) + ", got " + m.shape_str());
    }
}

inline void require_finite(const Matrix& m, const char* what) {
    if (!m.all_finite()) {
        throw std::runtime_error(std::string(what) + ": non-finite entries in " + m.shape_str() +
                                 " matrix");
    }
}

}  // namespace lechpe
