#include "mobs/channels.hpp"

#include <cmath>
#include <iostream>
#include <string>

namespace mobs {
namespace {

// Lagrange multiplier fixed by the theory: the minimizer of L(w, 2) is the
// optimal linear template, and the gradient loses its constraint constant.
constexpr Scalar kLagrangeMultiplier = 2.0;

// Relative floor under which the next candidate channel is numerically
// zero: the iteration has converged and any further channel would be
// roundoff of the finished template, not information.
constexpr Scalar kConvergenceTol = 1e-11;

}  // namespace

Scalar lagrangian_value(const Vector& w, Scalar lambda, Scalar c,
                        const ClassStats& stats) {
  if (w.size() != stats.k0.rows() || w.size() != stats.delta_mean.size())
    throw ValidationError("lagrangian_value: dimension mismatch");
  const Scalar var0 = w.dot(stats.k0.selfadjointView<Eigen::Lower>() * w);
  const Scalar var1 = w.dot(stats.k1.selfadjointView<Eigen::Lower>() * w);
  return 0.5 * var0 + 0.5 * var1 - lambda * (w.dot(stats.delta_mean) - c);
}

Vector lagrangian_gradient(const Vector& w, const TaskStats& stats) {
  if (w.size() != stats.k_sum.rows() || w.size() != stats.delta_mean.size())
    throw ValidationError("lagrangian_gradient: dimension mismatch");
  return stats.k_sum.selfadjointView<Eigen::Lower>() * w -
         kLagrangeMultiplier * stats.delta_mean;
}

ChannelMatrix generate_lgrad_channels_op(const CovarianceOp& kbar,
                                         const Vector& delta_mean,
                                         Index num_channels,
                                         Scalar dependence_tol,
                                         const LgradObserver& observer) {
  const Index m = delta_mean.size();
  if (m < 1) throw ValidationError("lgrad: empty mean difference");
  if (num_channels < 1 || num_channels > m)
    throw ValidationError("lgrad: num_channels must be in [1, " +
                          std::to_string(m) + "], got " +
                          std::to_string(num_channels));
  if (!delta_mean.allFinite())
    throw ValidationError("lgrad: mean difference has non-finite entries");

  Matrix t_rows(num_channels, m);     // accepted channels, one per row
  Matrix kbar_t(m, num_channels);     // cached K_bar t_j, one per column
  Vector vbar(num_channels);          // channelized mean difference
  IncrementalInverse inv;
  Vector w_v;

  // Next candidate channel: t_{i+1} = delta - K_bar w_i, and w_0 = 0.
  Vector t = delta_mean;
  Index found = 0;
  while (found < num_channels) {
    const Vector u = kbar(t);
    if (u.size() != m)
      throw ValidationError("lgrad: covariance operator changed dimension");
    const Vector cross = t_rows.topRows(found) * u;
    const Scalar new_var = t.dot(u);
    try {
      inv = block_inverse_extend(inv, cross, new_var, dependence_tol);
    } catch (const DegenerateChannelError&) {
      if (found == 0)
        throw DegenerateTaskError(
            "lgrad: the mean difference carries no variance under the "
            "averaged covariance; no informative channel exists");
      std::cerr << "warning: lgrad channels saturated after " << found
                << " of " << num_channels << " requested\n";
      break;
    }
    t_rows.row(found) = t.transpose();
    kbar_t.col(found) = u;
    vbar[found] = t.dot(delta_mean);
    ++found;

    // Channelized-optimal coefficients and the next template iterate.
    w_v = inv.inv.selfadjointView<Eigen::Lower>() * vbar.head(found);
    if (observer) {
      LgradState state;
      state.channel_matrix.rows = t_rows.topRows(found);
      state.inc_inverse = inv;
      state.cho_template = t_rows.topRows(found).transpose() * w_v;
      state.iteration = found;
      observer(state);
    }
    if (found < num_channels) {
      t = delta_mean - kbar_t.leftCols(found) * w_v;
      if (t.norm() <= kConvergenceTol * delta_mean.norm()) {
        std::cerr << "note: lgrad channels converged after " << found
                  << " of " << num_channels << " requested\n";
        break;
      }
    }
  }
  return make_channel_matrix(t_rows.topRows(found));
}

ChannelMatrix generate_lgrad_channels(const TaskStats& stats,
                                      Index num_channels,
                                      Scalar dependence_tol,
                                      const LgradObserver& observer) {
  validate_symmetric(stats.k_sum, "lgrad: k_sum");
  if (stats.delta_mean.size() != stats.k_sum.rows())
    throw ValidationError("lgrad: delta_mean length does not match k_sum");
  const auto kbar = [&stats](const Vector& v) -> Vector {
    return 0.5 * (stats.k_sum.selfadjointView<Eigen::Lower>() * v);
  };
  return generate_lgrad_channels_op(kbar, stats.delta_mean, num_channels,
                                    dependence_tol, observer);
}

ChannelMatrix generate_lgrad_channels_from_samples(
    const ImageStack& train, const SignalImage* signal, Index num_channels,
    Scalar dependence_tol, const LgradObserver& observer) {
  validate_stack(train);
  const Index n = train.count();
  const Index m = train.pixels();

  Index n1 = 0;
  for (auto b : train.labels) n1 += b;
  const Index n0 = n - n1;
  if (n0 < 2 || n1 < 2)
    throw InsufficientDataError(
        "lgrad: need at least two training images per class, got " +
        std::to_string(n0) + " absent / " + std::to_string(n1) + " present");

  Vector mean0 = Vector::Zero(m), mean1 = Vector::Zero(m);
  for (Index i = 0; i < n; ++i) {
    if (train.labels[static_cast<std::size_t>(i)])
      mean1 += train.data.row(i).transpose();
    else
      mean0 += train.data.row(i).transpose();
  }
  mean0 /= static_cast<Scalar>(n0);
  mean1 /= static_cast<Scalar>(n1);
  const Vector pool =
      (static_cast<Scalar>(n0) * mean0 + static_cast<Scalar>(n1) * mean1) /
      static_cast<Scalar>(n);
  const Vector nu0 = mean0 - pool;
  const Vector nu1 = mean1 - pool;

  // Center on the pooled mean and pre-scale each row by 1/sqrt(n_j - 1),
  // so K0 + K1 factors as Y'Y minus two rank-1 mean corrections. The dc
  // level cancels before any product is taken, which keeps the products
  // well conditioned, and K_bar then costs two data passes to apply.
  Matrix centered(n, m);
  const Scalar s0 = 1.0 / std::sqrt(static_cast<Scalar>(n0 - 1));
  const Scalar s1 = 1.0 / std::sqrt(static_cast<Scalar>(n1 - 1));
  for (Index i = 0; i < n; ++i) {
    const Scalar s = train.labels[static_cast<std::size_t>(i)] ? s1 : s0;
    centered.row(i) = (train.data.row(i) - pool.transpose()) * s;
  }
  const Scalar a0 = static_cast<Scalar>(n0) / static_cast<Scalar>(n0 - 1);
  const Scalar a1 = static_cast<Scalar>(n1) / static_cast<Scalar>(n1 - 1);

  Vector delta;
  if (signal) {
    if (signal->pixels.size() != m)
      throw ValidationError("lgrad: signal length does not match images");
    delta = signal->pixels;
  } else {
    delta = mean1 - mean0;
  }

  const auto kbar = [&centered, &nu0, &nu1, a0, a1](const Vector& v) -> Vector {
    Vector r = centered.transpose() * (centered * v);
    r -= (a0 * nu0.dot(v)) * nu0;
    r -= (a1 * nu1.dot(v)) * nu1;
    return 0.5 * r;
  };
  return generate_lgrad_channels_op(kbar, delta, num_channels, dependence_tol,
                                    observer);
}

ChannelMatrix generate_lgrad_cmd_channels(const ImageStack& backgrounds,
                                          const Matrix& noise_cov,
                                          const SignalImage& signal,
                                          Index num_channels,
                                          Scalar dependence_tol,
                                          const LgradObserver& observer) {
  const ClassStats stats = cmd_covariance(backgrounds, noise_cov);
  return generate_lgrad_channels(to_task_stats(stats, signal), num_channels,
                                 dependence_tol, observer);
}

ChannelMatrix generate_lgrad_cmd_channels(const ImageStack& backgrounds,
                                          Scalar noise_sigma,
                                          const SignalImage& signal,
                                          Index num_channels,
                                          Scalar dependence_tol,
                                          const LgradObserver& observer) {
  const ClassStats stats = cmd_covariance_iid(backgrounds, noise_sigma);
  return generate_lgrad_channels(to_task_stats(stats, signal), num_channels,
                                 dependence_tol, observer);
}

ChannelMatrix generate_pls_channels(const ImageStack& train,
                                    Index num_channels) {
  validate_stack(train);
  const Index n = train.count();
  const Index m = train.pixels();

  Index n1 = 0;
  for (auto b : train.labels) n1 += b;
  if (n1 == 0 || n1 == n)
    throw ValidationError(
        "pls: training labels are constant; both classes are required");
  const Index cap = std::min(n - 1, m);
  if (num_channels < 1 || num_channels > cap)
    throw ValidationError("pls: num_channels must be in [1, " +
                          std::to_string(cap) + "] for " + std::to_string(n) +
                          " images of " + std::to_string(m) +
                          " pixels, got " + std::to_string(num_channels));

  Matrix x = train.data;
  const Vector col_mean = x.colwise().mean().transpose();
  x.rowwise() -= col_mean.transpose();
  Vector y(n);
  const Scalar y_mean = static_cast<Scalar>(n1) / static_cast<Scalar>(n);
  for (Index i = 0; i < n; ++i)
    y[i] = static_cast<Scalar>(train.labels[static_cast<std::size_t>(i)]) -
           y_mean;

  const Scalar stop = 1e-12 * x.norm();
  Matrix weights(num_channels, m);
  Index found = 0;
  Vector w(m), scores(n), loadings(m);
  for (Index k = 0; k < num_channels; ++k) {
    w.noalias() = x.transpose() * y;
    const Scalar wnorm = w.norm();
    if (wnorm <= stop) break;
    w /= wnorm;
    scores.noalias() = x * w;
    const Scalar ss = scores.squaredNorm();
    if (ss == 0.0) break;
    loadings.noalias() = x.transpose() * scores / ss;
    x.noalias() -= scores * loadings.transpose();
    y -= scores * (scores.dot(y) / ss);
    weights.row(found++) = w.transpose();
  }
  if (found < num_channels)
    std::cerr << "warning: pls channels saturated after " << found << " of "
              << num_channels << " requested\n";
  if (found == 0)
    throw DegenerateTaskError(
        "pls: cross-covariance between images and labels is zero");
  return make_channel_matrix(weights.topRows(found));
}

ChannelMatrix normalize_rows(const ChannelMatrix& channels) {
  validate_channels(channels);
  ChannelMatrix out = channels;
  for (Index i = 0; i < out.rows.rows(); ++i)
    out.rows.row(i) /= out.rows.row(i).norm();
  return out;
}

}  // namespace mobs
