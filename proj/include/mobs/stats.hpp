#pragma once

// First- and second-order statistics for binary detection tasks, the
// covariance-matrix-decomposition shortcut for noiseless backgrounds, and
// the symmetric solvers the observers are built on.

#include "mobs/core.hpp"

namespace mobs {

// Per-class sample statistics. k0/k1 are unbiased (n - 1) covariance
// estimates, stored fully symmetric.
struct ClassStats {
  Vector mean0;       // signal-absent mean
  Vector mean1;       // signal-present mean
  Vector delta_mean;  // mean1 - mean0
  Matrix k0;          // signal-absent covariance
  Matrix k1;          // signal-present covariance
  Index n0 = 0;
  Index n1 = 0;
};

// What a linear-observer computation actually consumes: the summed class
// covariance K0 + K1 and a mean difference. For signal-known-exactly
// tasks the mean difference is the signal itself.
struct TaskStats {
  Matrix k_sum;       // K0 + K1
  Vector delta_mean;  // mean1 - mean0 (or the known signal)
};

TaskStats to_task_stats(const ClassStats& stats);
TaskStats to_task_stats(const ClassStats& stats, const SignalImage& signal);

// Throws ValidationError unless `a` is square, finite, and symmetric to
// 1e-10 relative. `what` prefixes the message.
void validate_symmetric(const Matrix& a, const char* what);

// Estimates per-class means and covariances from a labeled stack. Both
// classes need at least two images. Deterministic: a fixed chunked
// accumulation order, so results do not depend on thread count.
ClassStats estimate_class_stats(const ImageStack& stack);

// Same estimator on a bare matrix + labels (no image geometry attached);
// used for channel-domain statistics.
ClassStats estimate_class_stats(const Matrix& data,
                                const std::vector<std::uint8_t>& labels);

// Covariance-decomposition statistics: the class covariance of noisy
// images over noiseless backgrounds is noise_cov + sample covariance of
// the backgrounds. Labels on `backgrounds` are ignored; every row is a
// background. Returns stats with k0 == k1 and delta_mean == 0 (callers
// supply the known signal via to_task_stats).
ClassStats cmd_covariance(const ImageStack& backgrounds,
                          const Matrix& noise_cov);

// Convenience for iid pixel noise with standard deviation noise_sigma.
ClassStats cmd_covariance_iid(const ImageStack& backgrounds,
                              Scalar noise_sigma);

// Solves (a + ridge * I) x = rhs for symmetric positive definite a via
// Cholesky. Throws SingularityError naming the first non-positive leading
// minor when the (ridged) matrix is not positive definite.
Vector symmetric_solve(const Matrix& a, const Vector& rhs,
                       Scalar ridge = 0.0);

// Minimum-norm pseudoinverse solve for symmetric a: eigendecomposes and
// inverts only eigenvalues with |lambda| >= rank_tol * max|lambda|.
// rank_tol = 1 keeps only the dominant eigenspace.
Vector pseudo_solve(const Matrix& a, const Vector& rhs, Scalar rank_tol);

// Inverse of a growing symmetric positive definite matrix, extended one
// row/column at a time by the block-inverse (Schur complement) identity.
struct IncrementalInverse {
  Matrix inv;  // dim x dim inverse of the accreted matrix
  Index dim = 0;
};

// Extends `state` with a new trailing row/column [cross_cov; new_var].
// Throws DegenerateChannelError when the Schur complement
// new_var - cross_cov' * inv * cross_cov falls at or below
// tol_scale * new_var (the new direction is linearly dependent).
IncrementalInverse block_inverse_extend(const IncrementalInverse& state,
                                        const Vector& cross_cov,
                                        Scalar new_var,
                                        Scalar tol_scale = 1e-12);

}  // namespace mobs
