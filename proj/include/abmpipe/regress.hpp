#pragma once

// Multi-output ridge regression on standardized inputs, plus k-fold
// cross-validation over a lambda grid.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "abmpipe/core.hpp"

namespace abmpipe {

/// Columns whose standard deviation is below this are treated as constant.
inline constexpr double kScaleFloor = 1e-12;

/// predict(x) = target_mean + weights * ((x - input_mean) / input_scale).
/// `bias` is the same map's intercept in raw input coordinates, so that
/// predict(x) == (weights / input_scale) * x + bias.
struct RegressionModel {
    Matrix weights;  // k x d, standardized input coordinates
    Vector bias;     // k
    double lambda = 0.0;
    Vector input_mean;   // d
    Vector input_scale;  // d, strictly positive
    Vector target_mean;  // k

    Eigen::Index inputs() const { return input_mean.size(); }
    Eigen::Index outputs() const { return target_mean.size(); }
};

enum class RidgeSolver {
    Auto,    // primal when active inputs <= rows, dual otherwise
    Primal,  // (X'X + lambda I) d x d system
    Dual,    // (XX' + lambda I) n x n system
};

/// Closed-form ridge fit. Throws DataError for empty or non-finite input or a
/// negative lambda, NumericalError when the system is singular (lambda = 0).
RegressionModel fit_ridge(const Matrix& X, const Matrix& Y, double lambda,
                          RidgeSolver solver = RidgeSolver::Auto);

Vector predict(const RegressionModel& model, std::span<const double> x);
/// Row-wise prediction, n x d -> n x k.
Matrix predict_rows(const RegressionModel& model, const Matrix& X);

struct CvReport {
    std::vector<double> lambda_grid;
    Matrix fold_mse;  // grid x folds; +inf where lambda = 0 is singular
    double selected_lambda = 0.0;
    int folds = 0;
    std::uint64_t seed = 0;

    std::vector<double> mean_mse() const;
};

/// {1e-3, 1e-2, ..., 1e5}
std::vector<double> default_lambda_grid();

/// Fold index per row. Rows are ordered by `ids` (row order when empty),
/// shuffled with `seed`, then dealt round-robin.
std::vector<int> fold_assignment(std::size_t n, int folds, std::uint64_t seed,
                                 std::span<const std::string> ids = {});

CvReport kfold_cv(const Matrix& X, const Matrix& Y, std::span<const double> lambda_grid, int folds,
                  std::uint64_t seed, std::span<const std::string> ids = {});

/// Cross-validates several target blocks against one input matrix, sharing the
/// per-fold factorization. Equivalent to calling kfold_cv once per block.
std::vector<CvReport> kfold_cv_blocks(const Matrix& X, std::span<const Matrix> targets,
                                      std::span<const double> lambda_grid, int folds,
                                      std::uint64_t seed, std::span<const std::string> ids = {});

double mse(std::span<const double> a, std::span<const double> b);

}  // namespace abmpipe
