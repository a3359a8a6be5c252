#include "abmpipe/regress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace abmpipe {

namespace {

struct Standardized {
    Vector mean;
    Vector scale;
    std::vector<Eigen::Index> active;  // columns with non-negligible spread
    Matrix z;                          // rows x active.size()
};

Standardized standardize(const Matrix& X) {
    Standardized s;
    const auto n = static_cast<double>(X.rows());
    s.mean = X.colwise().mean().transpose();
    s.scale.resize(X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        const double var = (X.col(j).array() - s.mean(j)).square().sum() / n;
        const double sd = std::sqrt(var);
        if (sd > kScaleFloor) s.active.push_back(j);
        s.scale(j) = std::max(sd, kScaleFloor);
    }
    s.z.resize(X.rows(), static_cast<Eigen::Index>(s.active.size()));
    for (std::size_t a = 0; a < s.active.size(); ++a) {
        const auto j = s.active[a];
        s.z.col(static_cast<Eigen::Index>(a)) = (X.col(j).array() - s.mean(j)) / s.scale(j);
    }
    return s;
}

Matrix apply_standardization(const Standardized& s, const Matrix& X) {
    Matrix z(X.rows(), static_cast<Eigen::Index>(s.active.size()));
    for (std::size_t a = 0; a < s.active.size(); ++a) {
        const auto j = s.active[a];
        z.col(static_cast<Eigen::Index>(a)) = (X.col(j).array() - s.mean(j)) / s.scale(j);
    }
    return z;
}

double singular_tolerance(Eigen::Index dim) {
    return 10.0 * static_cast<double>(std::max<Eigen::Index>(dim, 1)) *
           std::numeric_limits<double>::epsilon();
}

// Cholesky of a symmetric matrix; rejects numerically singular systems.
Eigen::LLT<Matrix> factor_spd(const Matrix& A, double lambda) {
    Eigen::LLT<Matrix> llt(A);
    const double max_diag = A.diagonal().maxCoeff();
    bool singular = llt.info() != Eigen::Success;
    if (!singular && max_diag > 0.0) {
        const Vector piv = llt.matrixLLT().diagonal();
        const double min_piv = piv.minCoeff();
        singular = min_piv * min_piv <= singular_tolerance(A.rows()) * max_diag;
    }
    if (singular || max_diag <= 0.0) {
        throw NumericalError("singular normal equations (" + std::to_string(A.rows()) + "x" +
                             std::to_string(A.cols()) + ") at lambda = " + std::to_string(lambda));
    }
    return llt;
}

void check_inputs(const Matrix& X, const Matrix& Y) {
    if (X.rows() == 0) throw DataError("regression needs at least one row");
    if (Y.rows() != X.rows()) {
        throw DataError("regression inputs have " + std::to_string(X.rows()) + " rows, targets " +
                        std::to_string(Y.rows()));
    }
    if (!X.allFinite()) throw DataError("regression inputs contain NaN or Inf");
    if (!Y.allFinite()) throw DataError("regression targets contain NaN or Inf");
}

}  // namespace

RegressionModel fit_ridge(const Matrix& X, const Matrix& Y, double lambda, RidgeSolver solver) {
    check_inputs(X, Y);
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
        throw DataError("ridge lambda must be a finite non-negative number");
    }

    const Standardized s = standardize(X);
    const Vector y_mean = Y.colwise().mean().transpose();
    const Matrix yc = Y.rowwise() - y_mean.transpose();
    const auto n = X.rows();
    const auto a = s.z.cols();

    Matrix coef(a, Y.cols());  // active x k
    if (a > 0) {
        const bool primal = solver == RidgeSolver::Primal || (solver == RidgeSolver::Auto && a <= n);
        if (primal) {
            Matrix G = s.z.transpose() * s.z;
            G.diagonal().array() += lambda;
            coef = factor_spd(G, lambda).solve(s.z.transpose() * yc);
        } else {
            Matrix K = s.z * s.z.transpose();
            K.diagonal().array() += lambda;
            coef = s.z.transpose() * factor_spd(K, lambda).solve(yc);
        }
    }

    RegressionModel m;
    m.lambda = lambda;
    m.input_mean = s.mean;
    m.input_scale = s.scale;
    m.target_mean = y_mean;
    m.weights = Matrix::Zero(Y.cols(), X.cols());
    for (std::size_t i = 0; i < s.active.size(); ++i) {
        m.weights.col(s.active[i]) = coef.row(static_cast<Eigen::Index>(i)).transpose();
    }
    const Vector shift = s.mean.cwiseQuotient(s.scale);
    m.bias = y_mean - m.weights * shift;
    return m;
}

Vector predict(const RegressionModel& model, std::span<const double> x) {
    if (static_cast<Eigen::Index>(x.size()) != model.inputs()) {
        throw DataError("predict: input length " + std::to_string(x.size()) + ", model expects " +
                        std::to_string(model.inputs()));
    }
    const Eigen::Map<const Vector> xv(x.data(), static_cast<Eigen::Index>(x.size()));
    const Vector z = (xv - model.input_mean).cwiseQuotient(model.input_scale);
    return model.target_mean + model.weights * z;
}

Matrix predict_rows(const RegressionModel& model, const Matrix& X) {
    if (X.cols() != model.inputs()) {
        throw DataError("predict: input width " + std::to_string(X.cols()) + ", model expects " +
                        std::to_string(model.inputs()));
    }
    const Matrix z = (X.rowwise() - model.input_mean.transpose()).array().rowwise() /
                     model.input_scale.transpose().array();
    Matrix out = z * model.weights.transpose();
    out.rowwise() += model.target_mean.transpose();
    return out;
}

std::vector<double> CvReport::mean_mse() const {
    std::vector<double> out(lambda_grid.size());
    for (std::size_t g = 0; g < out.size(); ++g) {
        out[g] = fold_mse.row(static_cast<Eigen::Index>(g)).mean();
    }
    return out;
}

std::vector<double> default_lambda_grid() {
    std::vector<double> grid;
    for (int k = -3; k <= 5; ++k) grid.push_back(std::pow(10.0, k));
    return grid;
}

std::vector<int> fold_assignment(std::size_t n, int folds, std::uint64_t seed,
                                 std::span<const std::string> ids) {
    if (folds < 2) throw DataError("cross-validation needs at least 2 folds");
    if (n < static_cast<std::size_t>(folds)) {
        throw DataError("cross-validation with " + std::to_string(folds) + " folds needs at least " +
                        std::to_string(folds) + " rows, got " + std::to_string(n));
    }
    if (!ids.empty() && ids.size() != n) throw DataError("fold_assignment: id count mismatch");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (!ids.empty()) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    }
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<int> fold(n);
    for (std::size_t p = 0; p < n; ++p) fold[order[p]] = static_cast<int>(p % static_cast<std::size_t>(folds));
    return fold;
}

std::vector<CvReport> kfold_cv_blocks(const Matrix& X, std::span<const Matrix> targets,
                                      std::span<const double> lambda_grid, int folds,
                                      std::uint64_t seed, std::span<const std::string> ids) {
    if (lambda_grid.empty()) throw DataError("cross-validation needs a non-empty lambda grid");
    for (double l : lambda_grid) {
        if (!(l >= 0.0) || !std::isfinite(l)) throw DataError("lambda grid values must be non-negative");
    }
    if (targets.empty()) throw DataError("cross-validation needs at least one target block");
    for (const auto& Y : targets) check_inputs(X, Y);

    const auto n = static_cast<std::size_t>(X.rows());
    const auto fold_of = fold_assignment(n, folds, seed, ids);
    const auto grid_size = static_cast<Eigen::Index>(lambda_grid.size());

    std::vector<CvReport> reports(targets.size());
    for (auto& r : reports) {
        r.lambda_grid.assign(lambda_grid.begin(), lambda_grid.end());
        r.fold_mse = Matrix::Zero(grid_size, folds);
        r.folds = folds;
        r.seed = seed;
    }

    auto take_rows = [](const Matrix& M, const std::vector<Eigen::Index>& rows) {
        Matrix out(static_cast<Eigen::Index>(rows.size()), M.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = M.row(rows[i]);
        return out;
    };

    for (int f = 0; f < folds; ++f) {
        std::vector<Eigen::Index> train, held;
        for (std::size_t i = 0; i < n; ++i) {
            (fold_of[i] == f ? held : train).push_back(static_cast<Eigen::Index>(i));
        }
        const Standardized s = standardize(take_rows(X, train));
        const Matrix z_held = apply_standardization(s, take_rows(X, held));
        const auto n_train = static_cast<Eigen::Index>(train.size());
        const auto a = s.z.cols();

        // Held-out prediction for every lambda is P * diag(1 / (eig + lambda)) * Q_b + mean_b,
        // with P and Q_b from one eigendecomposition of the primal or dual Gram matrix.
        Vector eig;
        Matrix P;
        const bool primal = a <= n_train;
        if (a > 0) {
            Eigen::SelfAdjointEigenSolver<Matrix> es;
            if (primal) {
                es.compute(s.z.transpose() * s.z);
                P = z_held * es.eigenvectors();
            } else {
                es.compute(s.z * s.z.transpose());
                P = (z_held * s.z.transpose()) * es.eigenvectors();
            }
            if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed in cross-validation");
            eig = es.eigenvalues().cwiseMax(0.0);

            // All target blocks share one wide product per lambda.
            Eigen::Index width = 0;
            for (const auto& Y : targets) width += Y.cols();
            Matrix y_train(n_train, width);
            Matrix y_held(static_cast<Eigen::Index>(held.size()), width);
            for (Eigen::Index c = 0; const auto& Y : targets) {
                y_train.middleCols(c, Y.cols()) = take_rows(Y, train);
                y_held.middleCols(c, Y.cols()) = take_rows(Y, held);
                c += Y.cols();
            }
            const Vector y_mean = y_train.colwise().mean().transpose();
            const Matrix yc = y_train.rowwise() - y_mean.transpose();
            const Matrix Q = primal ? Matrix(es.eigenvectors().transpose() * (s.z.transpose() * yc))
                                    : Matrix(es.eigenvectors().transpose() * yc);
            const double tol = singular_tolerance(eig.size()) * eig.maxCoeff();
            for (Eigen::Index g = 0; g < grid_size; ++g) {
                const double lambda = lambda_grid[static_cast<std::size_t>(g)];
                if (lambda == 0.0 && (eig.maxCoeff() <= 0.0 || eig.minCoeff() <= tol)) {
                    for (auto& r : reports) r.fold_mse(g, f) = std::numeric_limits<double>::infinity();
                    continue;
                }
                const Vector inv = (eig.array() + lambda).inverse().matrix();
                Matrix pred = (P * inv.asDiagonal()) * Q;
                pred.rowwise() += y_mean.transpose();
                Eigen::Index c = 0;
                for (std::size_t b = 0; b < targets.size(); ++b) {
                    const auto k = targets[b].cols();
                    reports[b].fold_mse(g, f) = (pred.middleCols(c, k) - y_held.middleCols(c, k)).squaredNorm() /
                                                static_cast<double>(y_held.rows() * k);
                    c += k;
                }
            }
        } else {
            for (std::size_t b = 0; b < targets.size(); ++b) {
                const Matrix y_train = take_rows(targets[b], train);
                const Matrix y_held = take_rows(targets[b], held);
                const Vector y_mean = y_train.colwise().mean().transpose();
                const double err = (y_held.rowwise() - y_mean.transpose()).squaredNorm() /
                                   static_cast<double>(y_held.size());
                reports[b].fold_mse.col(f).setConstant(err);
            }
        }
    }

    for (auto& r : reports) {
        const auto means = r.mean_mse();
        std::size_t best = means.size();
        for (std::size_t g = 0; g < means.size(); ++g) {
            if (!std::isfinite(means[g])) continue;
            if (best == means.size() || means[g] < means[best] ||
                (means[g] == means[best] && r.lambda_grid[g] > r.lambda_grid[best])) {
                best = g;
            }
        }
        if (best == means.size()) {
            throw NumericalError("every lambda in the grid gave a singular system");
        }
        r.selected_lambda = r.lambda_grid[best];
    }
    return reports;
}

CvReport kfold_cv(const Matrix& X, const Matrix& Y, std::span<const double> lambda_grid, int folds,
                  std::uint64_t seed, std::span<const std::string> ids) {
    const std::array<Matrix, 1> blocks{Y};
    return kfold_cv_blocks(X, blocks, lambda_grid, folds, seed, ids).front();
}

double mse(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DataError("mse: length mismatch " + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()));
    }
    if (a.empty()) throw DataError("mse: empty input");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

}  // namespace abmpipe
