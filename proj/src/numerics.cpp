#include "ncart/numerics.hpp"

#include "ncart/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace ncart {

namespace {

std::atomic<std::size_t> g_threads{1};

bool is_constant(std::span<const double> x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

Eigen::MatrixXd centered(const Eigen::MatrixXd& x, Eigen::VectorXd& means) {
  means = x.colwise().mean().transpose();
  return x.rowwise() - means.transpose();
}

// Columns scaled to unit norm after centering; constant columns become zero.
Eigen::MatrixXd standardize(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z(x.rows(), x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const auto col = x.col(c);
    std::span<const double> s(col.data(), static_cast<std::size_t>(col.size()));
    if (is_constant(s)) {
      z.col(c).setZero();
      continue;
    }
    const double m = col.mean();
    z.col(c) = col.array() - m;
    z.col(c) /= z.col(c).norm();
  }
  return z;
}

}  // namespace

void set_thread_count(std::size_t threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  g_threads = threads;
}

std::size_t thread_count() { return g_threads; }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    pool.emplace_back([&, w, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double mean(std::span<const double> x) {
  if (x.empty()) throw ValidationError(ValidationError::Code::kInvalidArgument, "mean of empty vector");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

double variance(std::span<const double> x) {
  if (is_constant(x)) return 0.0;
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size());
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw ValidationError(ValidationError::Code::kShapeMismatch,
                          "pearson: length mismatch " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  if (x.size() < 2) throw ValidationError(ValidationError::Code::kInvalidArgument, "pearson: need at least 2 samples");
  if (is_constant(x) || is_constant(y)) return 0.0;
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) { return pearson(as_span(x), as_span(y)); }

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "correlation_matrix: row counts " +
                                                                     std::to_string(a.rows()) + " vs " +
                                                                     std::to_string(b.rows()));
  if (a.rows() < 2)
    throw ValidationError(ValidationError::Code::kInvalidArgument, "correlation_matrix: need at least 2 rows");
  const Eigen::MatrixXd za = standardize(a);
  const Eigen::MatrixXd zb = standardize(b);
  Eigen::MatrixXd out(a.cols(), b.cols());
  parallel_for(static_cast<std::size_t>(b.cols()), [&](std::size_t j) {
    const auto jj = static_cast<Eigen::Index>(j);
    Eigen::VectorXd col = za.transpose() * zb.col(jj);
    out.col(jj) = col.cwiseMax(-1.0).cwiseMin(1.0);
  });
  return out;
}

double default_ridge_lambda(const Eigen::MatrixXd& x) {
  Eigen::VectorXd means;
  const Eigen::MatrixXd xc = centered(x, means);
  return 1e-3 * xc.squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, x.cols()));
}

MultiRidgeResult ridge_solve_multi(const Eigen::MatrixXd& x, const Eigen::MatrixXd& targets,
                                   std::optional<double> lambda) {
  if (x.rows() != targets.rows())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "ridge: design has " + std::to_string(x.rows()) +
                                                                     " rows, targets " +
                                                                     std::to_string(targets.rows()));
  if (x.rows() < 2) throw ValidationError(ValidationError::Code::kInvalidArgument, "ridge: need at least 2 rows");
  if (lambda && *lambda < 0.0) throw ValidationError(ValidationError::Code::kInvalidArgument, "ridge: lambda < 0");

  const auto t = static_cast<double>(x.rows());
  Eigen::VectorXd x_mean, y_mean;
  const Eigen::MatrixXd xc = centered(x, x_mean);
  const Eigen::MatrixXd yc = centered(targets, y_mean);
  const Eigen::MatrixXd gram = xc.transpose() * xc;
  const double lam = lambda.value_or(1e-3 * gram.trace() / static_cast<double>(std::max<Eigen::Index>(1, x.cols())));

  MultiRidgeResult out;
  out.lambda = lam;
  out.weights = Eigen::MatrixXd::Zero(x.cols(), targets.cols());
  if (gram.trace() > 0.0) {
    Eigen::MatrixXd system = gram;
    system.diagonal().array() += lam;
    Eigen::LLT<Eigen::MatrixXd> llt(system);
    if (llt.info() != Eigen::Success || llt.rcond() < 1e-13)
      throw NumericalError("ridge: normal equations are singular at lambda=" + std::to_string(lam) +
                           "; retry with lambda > 0");
    out.weights = llt.solve(xc.transpose() * yc);
  }
  out.bias = y_mean - out.weights.transpose() * x_mean;
  out.mse = ((xc * out.weights - yc).colwise().squaredNorm() / t).transpose();
  return out;
}

RidgeResult ridge_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::optional<double> lambda) {
  auto multi = ridge_solve_multi(x, y, lambda);
  return {multi.weights.col(0), multi.bias(0), multi.mse(0), multi.lambda};
}

Eigen::VectorXd canonicalize_signs(Eigen::MatrixXd& columns) {
  Eigen::VectorXd signs = Eigen::VectorXd::Ones(columns.cols());
  for (Eigen::Index c = 0; c < columns.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < columns.rows(); ++r)
      if (std::abs(columns(r, c)) > std::abs(columns(best, c))) best = r;
    if (columns.rows() > 0 && columns(best, c) < 0.0) {
      columns.col(c) *= -1.0;
      signs(c) = -1.0;
    }
  }
  return signs;
}

Eigen::MatrixXd PcaBasis::project(const Eigen::MatrixXd& x) const {
  return (x.rowwise() - mean.transpose()) * components;
}

PcaBasis pca(const Eigen::MatrixXd& x, double variance_fraction) {
  if (!(variance_fraction > 0.0 && variance_fraction <= 1.0))
    throw ValidationError(ValidationError::Code::kInvalidArgument, "pca: variance fraction must be in (0, 1]");
  if (x.rows() < 2) throw ValidationError(ValidationError::Code::kInvalidArgument, "pca: need at least 2 rows");
  PcaBasis basis;
  const Eigen::MatrixXd xc = centered(x, basis.mean);
  const double total = xc.squaredNorm();
  if (total == 0.0) throw NumericalError("pca: every column is constant");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(xc, Eigen::ComputeThinV);
  const Eigen::VectorXd& s = svd.singularValues();
  // Relative slack absorbs rounding in the cumulative sum so boundary spectra
  // (e.g. 0.95 + 0.04 against 0.99) resolve to the mathematically minimal r.
  const double target = (variance_fraction - 1e-10) * total;
  double cumulative = 0.0;
  Eigen::Index r = 0;
  while (r < s.size()) {
    cumulative += s(r) * s(r);
    ++r;
    if (cumulative >= target) break;
  }
  basis.components = svd.matrixV().leftCols(r);
  canonicalize_signs(basis.components);
  basis.singular_values = s.head(r);
  basis.retained_fraction = cumulative / total;
  basis.total_variance = total / static_cast<double>(x.rows());
  return basis;
}

namespace {

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& cov, const char* view) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError(std::string("cca: eigendecomposition failed for ") + view);
  const Eigen::VectorXd& vals = eig.eigenvalues();  // ascending
  const double max = vals(vals.size() - 1);
  if (!(max > 0.0) || vals(0) <= 1e-12 * max)
    throw NumericalError(std::string("cca: covariance of ") + view +
                         " is ill-conditioned; use epsilon > 0 or reduce dimensionality");
  return eig.eigenvectors() * vals.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

CcaBasis cca(const Eigen::MatrixXd& xa, const Eigen::MatrixXd& xb, std::optional<double> epsilon) {
  if (xa.rows() != xb.rows())
    throw ValidationError(ValidationError::Code::kShapeMismatch, "cca: views have different row counts");
  if (xa.rows() <= std::max(xa.cols(), xb.cols()))
    throw ValidationError(ValidationError::Code::kInvalidArgument, "cca: need more rows than columns in each view");
  if (epsilon && *epsilon < 0.0) throw ValidationError(ValidationError::Code::kInvalidArgument, "cca: epsilon < 0");

  const auto t = static_cast<double>(xa.rows());
  Eigen::VectorXd ma, mb;
  const Eigen::MatrixXd ca = centered(xa, ma);
  const Eigen::MatrixXd cb = centered(xb, mb);
  Eigen::MatrixXd saa = ca.transpose() * ca / t;
  Eigen::MatrixXd sbb = cb.transpose() * cb / t;
  const Eigen::MatrixXd sab = ca.transpose() * cb / t;

  CcaBasis basis;
  basis.epsilon_a = epsilon.value_or(1e-8 * saa.trace() / static_cast<double>(saa.rows()));
  basis.epsilon_b = epsilon.value_or(1e-8 * sbb.trace() / static_cast<double>(sbb.rows()));
  saa.diagonal().array() += basis.epsilon_a;
  sbb.diagonal().array() += basis.epsilon_b;

  const Eigen::MatrixXd wa = inverse_sqrt(saa, "view a");
  const Eigen::MatrixXd wb = inverse_sqrt(sbb, "view b");
  const Eigen::MatrixXd whitened = wa * sab * wb;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(whitened, Eigen::ComputeThinU | Eigen::ComputeThinV);

  const Eigen::Index c = std::min(xa.cols(), xb.cols());
  basis.coefficients = svd.singularValues().head(c).cwiseMax(0.0).cwiseMin(1.0);
  basis.projection_a = wa * svd.matrixU().leftCols(c);
  basis.projection_b = wb * svd.matrixV().leftCols(c);
  const Eigen::VectorXd signs = canonicalize_signs(basis.projection_a);
  basis.projection_b = basis.projection_b * signs.asDiagonal();
  return basis;
}

}  // namespace ncart
