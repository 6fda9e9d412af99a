#pragma once

// Efficient-channel generation. The iterative algorithm walks the
// Lagrangian of the constrained variance-minimization problem: each new
// channel is the negative half-gradient at the current channelized
// template, which makes the channel span a Krylov subspace of the average
// covariance applied to the mean difference. A supervised PLS baseline is
// included for comparison.

#include "mobs/core.hpp"
#include "mobs/stats.hpp"

#include <functional>

namespace mobs {

// Snapshot of the iteration after channel i has been accepted.
struct LgradState {
  ChannelMatrix channel_matrix;     // rows t_1 .. t_i
  IncrementalInverse inc_inverse;   // inverse of the i x i channelized covariance
  Vector cho_template;              // expanded template T' (K_v^-1 dv), the next iterate
  Index iteration = 0;              // i
};

// Optional per-iteration callback; pass nullptr to skip snapshots.
using LgradObserver = std::function<void(const LgradState&)>;

// Applies the averaged covariance K_bar = (K0 + K1) / 2 to a vector.
// Lets one algorithm serve both explicit matrices and factored
// (data-resident) covariances.
using CovarianceOp = std::function<Vector(const Vector&)>;

inline constexpr Scalar kDefaultDependenceTol = 1e-12;

// Population Lagrangian: w' K0 w / 2 + w' K1 w / 2 - lambda (w' delta - c).
Scalar lagrangian_value(const Vector& w, Scalar lambda, Scalar c,
                        const ClassStats& stats);

// Gradient at lambda = 2: k_sum * w - 2 * delta_mean.
Vector lagrangian_gradient(const Vector& w, const TaskStats& stats);

// Iterative channel generation against an explicit averaged covariance.
// Starting from w = 0, each iteration appends t = delta - K_bar w as a
// channel, extends the channelized-covariance inverse incrementally, and
// updates w to the channelized-optimal template. Returns fewer than
// num_channels rows (with a stderr warning) once a new channel becomes
// linearly dependent below dependence_tol.
ChannelMatrix generate_lgrad_channels(
    const TaskStats& stats, Index num_channels,
    Scalar dependence_tol = kDefaultDependenceTol,
    const LgradObserver& observer = nullptr);

// Same algorithm against a covariance given only by its action on a
// vector. delta_mean is the mean-difference (or known-signal) image.
ChannelMatrix generate_lgrad_channels_op(
    const CovarianceOp& kbar, const Vector& delta_mean, Index num_channels,
    Scalar dependence_tol = kDefaultDependenceTol,
    const LgradObserver& observer = nullptr);

// Estimates the task from a labeled training stack. When `signal` is
// non-null the known signal replaces the sample mean difference (the
// signal-known-exactly convention); class covariances always come from
// the samples. The covariance is applied in factored form through the
// centered data, so the pixel-domain covariance matrix is never formed:
// generation cost is two data passes per channel.
ChannelMatrix generate_lgrad_channels_from_samples(
    const ImageStack& train, const SignalImage* signal, Index num_channels,
    Scalar dependence_tol = kDefaultDependenceTol,
    const LgradObserver& observer = nullptr);

// Covariance-decomposition variant: class covariance = noise_cov + sample
// covariance of noiseless backgrounds, mean difference = known signal.
// The channels carry no realization noise from any noisy training set.
ChannelMatrix generate_lgrad_cmd_channels(
    const ImageStack& backgrounds, const Matrix& noise_cov,
    const SignalImage& signal, Index num_channels,
    Scalar dependence_tol = kDefaultDependenceTol,
    const LgradObserver& observer = nullptr);

// Convenience for iid noise with standard deviation noise_sigma.
ChannelMatrix generate_lgrad_cmd_channels(
    const ImageStack& backgrounds, Scalar noise_sigma,
    const SignalImage& signal, Index num_channels,
    Scalar dependence_tol = kDefaultDependenceTol,
    const LgradObserver& observer = nullptr);

// NIPALS PLS1 against the class labels: center X and y; per component,
// weight = X' y normalized, scores t = X w, then deflate X and y by the
// score direction. Channel rows are the weight vectors. Stops early when
// ||X' y|| falls below 1e-12 times the initial centered ||X||_F.
ChannelMatrix generate_pls_channels(const ImageStack& train,
                                    Index num_channels);

// Unit-L2-normalizes each row. For visualization only: channelized test
// statistics are invariant to per-channel scale.
ChannelMatrix normalize_rows(const ChannelMatrix& channels);

}  // namespace mobs
