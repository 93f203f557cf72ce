#include "splitsim/matrix.hpp"

#include <cmath>

namespace splitsim {

Matrix matmul(const Matrix& a, const Matrix& b) {
    check_shape(a.cols == b.rows, "matmul inner dimensions");
    Matrix c(a.rows, b.cols);
    matmul_acc(a, b, c);
    return c;
}

void matmul_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_shape(a.cols == b.rows, "matmul inner dimensions");
    check_shape(c.rows == a.rows && c.cols == b.cols, "matmul output");
    const std::size_t n = a.rows, k = a.cols, m = b.cols;
    for (std::size_t i = 0; i < n; ++i) {
        double* ci = c.data.data() + i * m;
        const double* ai = a.data.data() + i * k;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = ai[l];
            if (av == 0.0) continue;
            const double* bl = b.data.data() + l * m;
            for (std::size_t j = 0; j < m; ++j) ci[j] += av * bl[j];
        }
    }
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
    check_shape(a.cols == b.cols, "matmul_nt inner dimensions");
    const std::size_t n = a.rows, k = a.cols, m = b.rows;
    Matrix c(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.data.data() + i * k;
        double* ci = c.data.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) {
            const double* bj = b.data.data() + j * k;
            double s = 0.0;
            for (std::size_t l = 0; l < k; ++l) s += ai[l] * bj[l];
            ci[j] = s;
        }
    }
    return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
    Matrix c(a.cols, b.cols);
    matmul_tn_acc(a, b, c);
    return c;
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
    check_shape(a.rows == b.rows, "matmul_tn inner dimensions");
    check_shape(c.rows == a.cols && c.cols == b.cols, "matmul_tn output");
    const std::size_t n = a.rows, k = a.cols, m = b.cols;
    for (std::size_t i = 0; i < n; ++i) {
        const double* ai = a.data.data() + i * k;
        const double* bi = b.data.data() + i * m;
        for (std::size_t l = 0; l < k; ++l) {
            const double av = ai[l];
            if (av == 0.0) continue;
            double* cl = c.data.data() + l * m;
            for (std::size_t j = 0; j < m; ++j) cl[j] += av * bi[j];
        }
    }
}

void add_inplace(Matrix& a, const Matrix& b) {
    check_shape(a.same_shape(b), "add_inplace");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

void scale_inplace(Matrix& a, double s) {
    for (double& v : a.data) v *= s;
}

void add_row_vector(Matrix& a, const Matrix& bias) {
    check_shape(bias.rows == 1 && bias.cols == a.cols, "add_row_vector");
    for (std::size_t i = 0; i < a.rows; ++i) {
        double* r = a.row(i);
        for (std::size_t j = 0; j < a.cols; ++j) r[j] += bias.data[j];
    }
}

bool all_finite(const Matrix& a) {
    for (double v : a.data)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace splitsim
