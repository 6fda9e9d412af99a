#include "mobs/stats.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <string>

namespace mobs {
namespace {

constexpr Index kChunkRows = 256;  // bounds the centered temporary

// Unbiased covariance of `rows`, accumulated in fixed-size chunks so the
// centered temporary stays small regardless of n.
Matrix sample_covariance(const Matrix& rows, const Vector& mean) {
  const Index n = rows.rows();
  const Index m = rows.cols();
  Matrix k = Matrix::Zero(m, m);
  Matrix centered;
  for (Index start = 0; start < n; start += kChunkRows) {
    const Index len = std::min(kChunkRows, n - start);
    centered = rows.middleRows(start, len);
    centered.rowwise() -= mean.transpose();
    k.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0);
  }
  k /= static_cast<Scalar>(n - 1);
  k.triangularView<Eigen::StrictlyUpper>() =
      k.transpose().triangularView<Eigen::StrictlyUpper>();
  return k;
}

}  // namespace

void validate_symmetric(const Matrix& a, const char* what) {
  if (a.rows() != a.cols())
    throw ValidationError(std::string(what) + ": matrix is not square");
  if (!a.allFinite())
    throw ValidationError(std::string(what) + ": non-finite entries");
  if (a.size() == 0)
    throw ValidationError(std::string(what) + ": empty matrix");
  const Scalar scale = 1.0 + a.cwiseAbs().maxCoeff();
  for (Index j = 0; j < a.cols(); ++j)
    for (Index i = j + 1; i < a.rows(); ++i)
      if (std::abs(a(i, j) - a(j, i)) > 1e-10 * scale)
        throw ValidationError(std::string(what) +
                              ": matrix is not symmetric (entry " +
                              std::to_string(i) + "," + std::to_string(j) +
                              ")");
}

TaskStats to_task_stats(const ClassStats& stats) {
  TaskStats task;
  task.k_sum = stats.k0 + stats.k1;
  task.delta_mean = stats.delta_mean;
  return task;
}

TaskStats to_task_stats(const ClassStats& stats, const SignalImage& signal) {
  if (signal.pixels.size() != stats.k0.rows())
    throw ValidationError("to_task_stats: signal length " +
                          std::to_string(signal.pixels.size()) +
                          " does not match covariance dimension " +
                          std::to_string(stats.k0.rows()));
  TaskStats task;
  task.k_sum = stats.k0 + stats.k1;
  task.delta_mean = signal.pixels;
  return task;
}

ClassStats estimate_class_stats(const Matrix& data,
                                const std::vector<std::uint8_t>& labels) {
  if (static_cast<Index>(labels.size()) != data.rows())
    throw ValidationError("estimate_class_stats: label count mismatch");
  Index n1 = 0;
  for (auto b : labels) {
    if (b > 1)
      throw ValidationError("estimate_class_stats: labels must be 0 or 1");
    n1 += b;
  }
  const Index n0 = data.rows() - n1;
  if (n0 < 2 || n1 < 2)
    throw InsufficientDataError(
        "estimate_class_stats: need at least two images per class, got " +
        std::to_string(n0) + " absent / " + std::to_string(n1) + " present");

  const Index m = data.cols();
  Matrix rows0(n0, m), rows1(n1, m);
  Index i0 = 0, i1 = 0;
  for (Index i = 0; i < data.rows(); ++i) {
    if (labels[static_cast<std::size_t>(i)])
      rows1.row(i1++) = data.row(i);
    else
      rows0.row(i0++) = data.row(i);
  }

  ClassStats stats;
  stats.n0 = n0;
  stats.n1 = n1;
  stats.mean0 = rows0.colwise().mean().transpose();
  stats.mean1 = rows1.colwise().mean().transpose();
  stats.delta_mean = stats.mean1 - stats.mean0;
  stats.k0 = sample_covariance(rows0, stats.mean0);
  stats.k1 = sample_covariance(rows1, stats.mean1);
  return stats;
}

ClassStats estimate_class_stats(const ImageStack& stack) {
  validate_stack(stack);
  return estimate_class_stats(stack.data, stack.labels);
}

ClassStats cmd_covariance(const ImageStack& backgrounds,
                          const Matrix& noise_cov) {
  validate_stack(backgrounds);
  validate_symmetric(noise_cov, "cmd_covariance: noise_cov");
  if (noise_cov.rows() != backgrounds.pixels())
    throw ValidationError("cmd_covariance: noise_cov is " +
                          std::to_string(noise_cov.rows()) + "x" +
                          std::to_string(noise_cov.cols()) +
                          " but images have " +
                          std::to_string(backgrounds.pixels()) + " pixels");
  if (backgrounds.count() < 2)
    throw InsufficientDataError(
        "cmd_covariance: need at least two backgrounds");

  ClassStats stats;
  stats.n0 = stats.n1 = backgrounds.count();
  stats.mean0 = backgrounds.data.colwise().mean().transpose();
  stats.mean1 = stats.mean0;
  stats.delta_mean = Vector::Zero(backgrounds.pixels());
  stats.k0 = sample_covariance(backgrounds.data, stats.mean0);
  stats.k0 += noise_cov;
  stats.k1 = stats.k0;
  return stats;
}

ClassStats cmd_covariance_iid(const ImageStack& backgrounds,
                              Scalar noise_sigma) {
  validate_stack(backgrounds);
  if (!(noise_sigma >= 0.0))
    throw ValidationError("cmd_covariance_iid: noise_sigma must be >= 0");
  if (backgrounds.count() < 2)
    throw InsufficientDataError(
        "cmd_covariance_iid: need at least two backgrounds");

  ClassStats stats;
  stats.n0 = stats.n1 = backgrounds.count();
  stats.mean0 = backgrounds.data.colwise().mean().transpose();
  stats.mean1 = stats.mean0;
  stats.delta_mean = Vector::Zero(backgrounds.pixels());
  stats.k0 = sample_covariance(backgrounds.data, stats.mean0);
  stats.k0.diagonal().array() += noise_sigma * noise_sigma;
  stats.k1 = stats.k0;
  return stats;
}

Vector symmetric_solve(const Matrix& a, const Vector& rhs, Scalar ridge) {
  validate_symmetric(a, "symmetric_solve");
  if (rhs.size() != a.rows())
    throw ValidationError("symmetric_solve: rhs length " +
                          std::to_string(rhs.size()) +
                          " does not match matrix dimension " +
                          std::to_string(a.rows()));
  if (!(ridge >= 0.0))
    throw ValidationError("symmetric_solve: ridge must be >= 0");

  Matrix b = a;
  if (ridge > 0.0) b.diagonal().array() += ridge;
  Eigen::LLT<Matrix> llt(b);
  if (llt.info() != Eigen::Success) {
    // Rerun an unblocked Cholesky to name the offending leading minor.
    // The common failure (sample covariance with too few images) trips
    // within the first n+1 columns, so this path is cheap in practice.
    const Index n = b.rows();
    Matrix l = Matrix::Zero(n, n);
    for (Index j = 0; j < n; ++j) {
      Scalar pivot = b(j, j) - l.row(j).head(j).squaredNorm();
      if (!(pivot > 0.0))
        throw SingularityError(
            "symmetric_solve: matrix is not positive definite; leading "
            "minor of order " +
                std::to_string(j + 1) + " is not positive",
            j + 1);
      const Scalar diag = std::sqrt(pivot);
      l(j, j) = diag;
      for (Index i = j + 1; i < n; ++i)
        l(i, j) = (b(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / diag;
    }
    throw SingularityError(
        "symmetric_solve: factorization failed (conditioning)", n);
  }
  // LLT can "succeed" on an exactly singular matrix when the zero pivot
  // rounds to a tiny positive value; the pivot spread catches that while
  // leaving merely ill-conditioned systems (ratio >= ~1e-12) solvable.
  const Vector pivots = llt.matrixLLT().diagonal().cwiseAbs2();
  Index weakest = 0;
  const Scalar pmin = pivots.minCoeff(&weakest);
  if (pmin <= 1e-14 * pivots.maxCoeff())
    throw SingularityError(
        "symmetric_solve: matrix is numerically singular; leading minor of "
        "order " +
            std::to_string(weakest + 1) + " is degenerate",
        weakest + 1);
  return llt.solve(rhs);
}

Vector pseudo_solve(const Matrix& a, const Vector& rhs, Scalar rank_tol) {
  validate_symmetric(a, "pseudo_solve");
  if (rhs.size() != a.rows())
    throw ValidationError("pseudo_solve: rhs length does not match matrix");
  if (!(rank_tol > 0.0 && rank_tol <= 1.0))
    throw ValidationError("pseudo_solve: rank_tol must be in (0, 1]");

  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  if (eig.info() != Eigen::Success)
    throw Error("pseudo_solve: eigendecomposition failed");
  const Vector& lambda = eig.eigenvalues();
  const Matrix& v = eig.eigenvectors();
  const Scalar lmax = lambda.cwiseAbs().maxCoeff();
  Vector x = Vector::Zero(a.rows());
  if (lmax == 0.0) return x;  // zero matrix: minimum-norm solution is zero
  const Scalar cutoff = rank_tol * lmax;
  for (Index i = 0; i < lambda.size(); ++i) {
    if (std::abs(lambda[i]) >= cutoff)
      x += v.col(i) * (v.col(i).dot(rhs) / lambda[i]);
  }
  return x;
}

IncrementalInverse block_inverse_extend(const IncrementalInverse& state,
                                        const Vector& cross_cov,
                                        Scalar new_var, Scalar tol_scale) {
  if (cross_cov.size() != state.dim)
    throw ValidationError("block_inverse_extend: cross_cov length " +
                          std::to_string(cross_cov.size()) +
                          " does not match state dimension " +
                          std::to_string(state.dim));
  if (!std::isfinite(new_var))
    throw ValidationError("block_inverse_extend: new_var is not finite");

  const Index d = state.dim;
  IncrementalInverse next;
  next.dim = d + 1;
  next.inv.resize(d + 1, d + 1);

  if (d == 0) {
    if (!(new_var > tol_scale * new_var) || new_var <= 0.0)
      throw DegenerateChannelError(
          "block_inverse_extend: first variance is not positive", {0});
    next.inv(0, 0) = 1.0 / new_var;
    return next;
  }

  const Vector u = state.inv.selfadjointView<Eigen::Lower>() * cross_cov;
  const Scalar schur = new_var - cross_cov.dot(u);
  if (schur <= tol_scale * new_var)
    throw DegenerateChannelError(
        "block_inverse_extend: new row is linearly dependent on the "
        "existing block (Schur complement " +
            std::to_string(schur) + " vs variance " +
            std::to_string(new_var) + ")",
        {d});

  next.inv.topLeftCorner(d, d) = state.inv + (u * u.transpose()) / schur;
  next.inv.block(0, d, d, 1) = -u / schur;
  next.inv.block(d, 0, 1, d) = (-u / schur).transpose();
  next.inv(d, d) = 1.0 / schur;
  return next;
}

}  // namespace mobs
