#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <optional>
#include <span>

namespace ncart {

// Worker threads used by the column-parallel loops below. 0 = hardware concurrency.
void set_thread_count(std::size_t threads);
std::size_t thread_count();

/// Runs fn(i) for i in [0, n), split into contiguous chunks over thread_count()
/// workers. Each index is processed by exactly one worker with the same code
/// path, so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

double mean(std::span<const double> x);
/// Population variance (divides by the length).
double variance(std::span<const double> x);

/// Pearson correlation. Returns 0 when either input is constant.
double pearson(std::span<const double> x, std::span<const double> y);
double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Entry (i, j) is pearson(A.col(i), B.col(j)). Constant columns give 0.
Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

struct RidgeResult {
  Eigen::VectorXd weights;
  double bias = 0.0;
  double mse = 0.0;
  double lambda = 0.0;
};

/// 1e-3 * trace(centered Gram) / D.
double default_ridge_lambda(const Eigen::MatrixXd& x);

/// Minimizes |Xw + b - y|^2 + lambda |w|^2 with X centered internally.
/// lambda defaults to default_ridge_lambda(X). Throws NumericalError when the
/// normal equations are singular (only possible at lambda = 0).
RidgeResult ridge_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::optional<double> lambda = std::nullopt);

/// Ridge regression of many targets on one design matrix, sharing the factorization.
struct MultiRidgeResult {
  Eigen::MatrixXd weights;  // D x targets
  Eigen::VectorXd bias;     // targets
  Eigen::VectorXd mse;      // targets
  double lambda = 0.0;
};
MultiRidgeResult ridge_solve_multi(const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets,
                                   std::optional<double> lambda = std::nullopt);

struct PcaBasis {
  Eigen::VectorXd mean;             // D
  Eigen::MatrixXd components;       // D x r, orthonormal columns
  Eigen::VectorXd singular_values;  // r, descending
  double retained_fraction = 0.0;
  double total_variance = 0.0;      // population variance summed over columns

  std::size_t rank() const { return static_cast<std::size_t>(components.cols()); }
  /// Scores in the reduced space: (X - mean) * components.
  Eigen::MatrixXd project(const Eigen::MatrixXd& x) const;
};

/// Keeps the smallest r whose cumulative squared singular values reach
/// variance_fraction of the total. Each component is signed so its
/// largest-magnitude entry is positive.
PcaBasis pca(const Eigen::MatrixXd& x, double variance_fraction);

struct CcaBasis {
  Eigen::MatrixXd projection_a;  // r_a x c
  Eigen::MatrixXd projection_b;  // r_b x c
  Eigen::VectorXd coefficients;  // c, non-increasing, in [0, 1]
  double epsilon_a = 0.0;
  double epsilon_b = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(coefficients.size()); }
};

/// Canonical correlation analysis via the SVD of the whitened cross-covariance
/// Saa^{-1/2} Sab Sbb^{-1/2}, with epsilon*I added to each covariance.
/// epsilon defaults to 1e-8 times that covariance's mean diagonal.
CcaBasis cca(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& xb, std::optional<double> epsilon = std::nullopt);

/// Flips each column so its largest-magnitude entry is positive (first index wins ties).
/// Returns the applied signs.
Eigen::VectorXd canonicalize_signs(Eigen::MatrixXd& columns);

}  // namespace ncart
