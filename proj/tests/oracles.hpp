#pragma once

// Independent reference implementations used as test oracles. They use plain
// loops over std::vector and share no code with the library.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;  // row-major, grid[r][c]

/// Direct quadruple-loop convolution. `input` is c x h x w channel-major,
/// `weight` is out x in x k x k.
inline std::vector<double> conv2d(const std::vector<double>& input, int in_c, int h, int w,
                                  const std::vector<double>& weight, const std::vector<double>& bias,
                                  int out_c, int k, int stride, int pad, int& out_h, int& out_w) {
    out_h = (h + 2 * pad - k) / stride + 1;
    out_w = (w + 2 * pad - k) / stride + 1;
    std::vector<double> out(static_cast<std::size_t>(out_c) * out_h * out_w, 0.0);
    for (int o = 0; o < out_c; ++o) {
        for (int y = 0; y < out_h; ++y) {
            for (int x = 0; x < out_w; ++x) {
                double sum = bias[static_cast<std::size_t>(o)];
                for (int c = 0; c < in_c; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = y * stride + ky - pad;
                            const int ix = x * stride + kx - pad;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                            const double v = input[(static_cast<std::size_t>(c) * h + iy) * w + ix];
                            const double wt = weight[((static_cast<std::size_t>(o) * in_c + c) * k + ky) * k + kx];
                            sum += v * wt;
                        }
                    }
                }
                out[(static_cast<std::size_t>(o) * out_h + y) * out_w + x] = sum;
            }
        }
    }
    return out;
}

/// Dense layer by explicit dot products; `weight` is out x in row-major.
inline std::vector<double> dense(const std::vector<double>& x, const std::vector<double>& weight,
                                 const std::vector<double>& bias) {
    const std::size_t out = bias.size();
    const std::size_t in = x.size();
    std::vector<double> y(out);
    for (std::size_t o = 0; o < out; ++o) {
        double s = bias[o];
        for (std::size_t i = 0; i < in; ++i) s += weight[o * in + i] * x[i];
        y[o] = s;
    }
    return y;
}

inline std::vector<double> mean(const Grid& rows) {
    std::vector<double> m(rows.front().size(), 0.0);
    for (const auto& r : rows) {
        for (std::size_t j = 0; j < m.size(); ++j) m[j] += r[j];
    }
    for (double& v : m) v /= static_cast<double>(rows.size());
    return m;
}

inline double mse(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

/// Solves A X = B by Gaussian elimination with partial pivoting (A square).
inline Grid solve(Grid A, Grid B) {
    const std::size_t n = A.size();
    const std::size_t k = B.front().size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::fabs(A[r][col]) > std::fabs(A[piv][col])) piv = r;
        }
        if (A[piv][col] == 0.0) throw std::runtime_error("oracle::solve: singular system");
        std::swap(A[col], A[piv]);
        std::swap(B[col], B[piv]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = A[r][col] / A[col][col];
            for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
            for (std::size_t c = 0; c < k; ++c) B[r][c] -= f * B[col][c];
        }
    }
    Grid X(n, std::vector<double>(k, 0.0));
    for (std::size_t r = n; r-- > 0;) {
        for (std::size_t c = 0; c < k; ++c) {
            double s = B[r][c];
            for (std::size_t j = r + 1; j < n; ++j) s -= A[r][j] * X[j][c];
            X[r][c] = s / A[r][r];
        }
    }
    return X;
}

/// Ridge regression on population-standardized inputs and centered targets,
/// solved from the d x d normal equations. Predicts `query` rows.
inline Grid ridge_predict(const Grid& X, const Grid& Y, double lambda, const Grid& query) {
    const std::size_t n = X.size();
    const std::size_t d = X.front().size();
    const std::size_t k = Y.front().size();
    const std::vector<double> mx = mean(X);
    const std::vector<double> my = mean(Y);
    std::vector<double> sd(d, 0.0);
    for (const auto& r : X) {
        for (std::size_t j = 0; j < d; ++j) sd[j] += (r[j] - mx[j]) * (r[j] - mx[j]);
    }
    for (double& s : sd) s = std::sqrt(s / static_cast<double>(n));

    auto z = [&](const std::vector<double>& r) {
        std::vector<double> out(d);
        for (std::size_t j = 0; j < d; ++j) out[j] = (r[j] - mx[j]) / sd[j];
        return out;
    };
    Grid A(d, std::vector<double>(d, 0.0));
    Grid B(d, std::vector<double>(k, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        const auto zi = z(X[i]);
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t b = 0; b < d; ++b) A[a][b] += zi[a] * zi[b];
            for (std::size_t c = 0; c < k; ++c) B[a][c] += zi[a] * (Y[i][c] - my[c]);
        }
    }
    for (std::size_t a = 0; a < d; ++a) A[a][a] += lambda;
    const Grid W = solve(A, B);

    Grid out;
    for (const auto& q : query) {
        const auto zq = z(q);
        std::vector<double> p(my);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t a = 0; a < d; ++a) p[c] += zq[a] * W[a][c];
        }
        out.push_back(p);
    }
    return out;
}

}  // namespace oracle
