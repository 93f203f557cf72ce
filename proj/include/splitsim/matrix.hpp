#pragma once

#include <cstddef>
#include <vector>

#include "splitsim/errors.hpp"

namespace splitsim {

// Dense row-major matrix of 64-bit reals. Deliberately small surface: the
// kernels below are the only linear algebra the rest of the library needs.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
    Matrix(std::size_t r, std::size_t c, double fill)
        : rows(r), cols(c), data(r * c, fill) {}

    double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }

    std::size_t size() const { return data.size(); }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
    void resize(std::size_t r, std::size_t c) {
        rows = r;
        cols = c;
        data.assign(r * c, 0.0);
    }

    bool same_shape(const Matrix& o) const {
        return rows == o.rows && cols == o.cols;
    }
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T   (B stored as rows of the transposed operand)
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// In-place accumulating variants used on the backward paths.
void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);

void add_inplace(Matrix& a, const Matrix& b);
void scale_inplace(Matrix& a, double s);

// Adds bias (1 x cols) to every row.
void add_row_vector(Matrix& a, const Matrix& bias);

bool all_finite(const Matrix& a);

inline void check_shape(bool ok, const char* what) {
    if (!ok) raise(ErrorKind::Shape, std::string("shape mismatch: ") + what);
}

}  // namespace splitsim
