#include "mobs/observers.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <string>

namespace mobs {
namespace {

// Solves K_v w_v = delta_v, rethrowing a singular K_v as a channel
// diagnosis: the null-space eigenvectors point at the dependent rows.
Vector solve_channel_covariance(const Matrix& k_v, const Vector& delta_v) {
  try {
    return symmetric_solve(k_v, delta_v, 0.0);
  } catch (const SingularityError&) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(k_v);
    std::vector<Index> dependent;
    if (eig.info() == Eigen::Success) {
      const Vector& lambda = eig.eigenvalues();
      const Scalar lmax = std::max(lambda.cwiseAbs().maxCoeff(), Scalar(0));
      for (Index i = 0; i < lambda.size(); ++i) {
        if (std::abs(lambda[i]) <= 1e-12 * lmax) {
          Index worst = 0;
          eig.eigenvectors().col(i).cwiseAbs().maxCoeff(&worst);
          dependent.push_back(worst);
        }
      }
      std::sort(dependent.begin(), dependent.end());
      dependent.erase(std::unique(dependent.begin(), dependent.end()),
                      dependent.end());
    }
    std::string which;
    for (Index idx : dependent)
      which += (which.empty() ? "" : ", ") + std::to_string(idx);
    throw DegenerateChannelError(
        "channel covariance is singular; dependent channel rows: {" + which +
            "}",
        std::move(dependent));
  }
}

ChoModel assemble_cho(const ChannelMatrix& channels, Matrix k_v,
                      const Vector& delta_v) {
  ChoModel model;
  model.channels = channels;
  model.template_v = solve_channel_covariance(k_v, delta_v);
  model.expanded_template =
      channels.rows.transpose() * model.template_v;
  return model;
}

}  // namespace

void validate_scores(const ScoreSet& scores) {
  if (static_cast<Index>(scores.labels.size()) != scores.scores.size())
    throw ValidationError("score set: label/score length mismatch");
  if (!scores.scores.allFinite())
    throw ValidationError("score set: non-finite scores");
  for (auto b : scores.labels)
    if (b > 1) throw ValidationError("score set: labels must be 0 or 1");
}

ObserverTemplate build_ho(const ClassStats& stats, Scalar ridge) {
  const Matrix kbar = 0.5 * (stats.k0 + stats.k1);
  ObserverTemplate tmpl;
  tmpl.weights = symmetric_solve(kbar, stats.delta_mean, ridge);
  tmpl.kind = ObserverKind::HO;
  return tmpl;
}

ObserverTemplate build_ho(const ClassStats& stats, const SignalImage& signal,
                          Scalar ridge) {
  if (signal.pixels.size() != stats.k0.rows())
    throw ValidationError("build_ho: signal length does not match covariance");
  const Matrix kbar = 0.5 * (stats.k0 + stats.k1);
  ObserverTemplate tmpl;
  tmpl.weights = symmetric_solve(kbar, signal.pixels, ridge);
  tmpl.kind = ObserverKind::HO;
  return tmpl;
}

ObserverTemplate build_ho(const TaskStats& stats, Scalar ridge) {
  const Matrix kbar = 0.5 * stats.k_sum;
  ObserverTemplate tmpl;
  tmpl.weights = symmetric_solve(kbar, stats.delta_mean, ridge);
  tmpl.kind = ObserverKind::HO;
  return tmpl;
}

ObserverTemplate build_rho(const ImageStack& train, const SignalImage* signal,
                           Scalar rank_tol) {
  const ClassStats stats = estimate_class_stats(train);
  Vector delta = stats.delta_mean;
  if (signal) {
    if (signal->pixels.size() != train.pixels())
      throw ValidationError("build_rho: signal length does not match images");
    delta = signal->pixels;
  }
  const Matrix kbar = 0.5 * (stats.k0 + stats.k1);
  ObserverTemplate tmpl;
  tmpl.weights = pseudo_solve(kbar, delta, rank_tol);
  tmpl.kind = ObserverKind::RHO;
  return tmpl;
}

ChoModel build_cho(const ChannelMatrix& channels, const TaskStats& stats) {
  validate_channels(channels);
  if (stats.k_sum.rows() != channels.pixels())
    throw ValidationError("build_cho: channel length does not match k_sum");
  if (stats.delta_mean.size() != channels.pixels())
    throw ValidationError("build_cho: delta_mean does not match channels");
  const Matrix kbar_t =
      0.5 * (stats.k_sum.selfadjointView<Eigen::Lower>() *
             channels.rows.transpose());
  Matrix k_v = channels.rows * kbar_t;
  const Vector delta_v = channels.rows * stats.delta_mean;
  return assemble_cho(channels, std::move(k_v), delta_v);
}

ChoModel build_cho(const ChannelMatrix& channels, const ClassStats& stats) {
  return build_cho(channels, to_task_stats(stats));
}

ChoModel build_cho(const ChannelMatrix& channels, const ClassStats& stats,
                   const SignalImage& signal) {
  return build_cho(channels, to_task_stats(stats, signal));
}

ChoModel build_cho(const ChannelMatrix& channels, const ImageStack& train,
                   const SignalImage* signal) {
  validate_channels(channels);
  validate_stack(train);
  if (train.pixels() != channels.pixels())
    throw ValidationError("build_cho: channel length does not match images");

  // Channelize first, then estimate: D x D statistics instead of M x M.
  const Matrix v = train.data * channels.rows.transpose();
  const ClassStats stats_v = estimate_class_stats(v, train.labels);
  Matrix k_v = 0.5 * (stats_v.k0 + stats_v.k1);
  Vector delta_v;
  if (signal) {
    if (signal->pixels.size() != train.pixels())
      throw ValidationError("build_cho: signal length does not match images");
    delta_v = channels.rows * signal->pixels;
  } else {
    delta_v = stats_v.delta_mean;
  }
  return assemble_cho(channels, std::move(k_v), delta_v);
}

ScoreSet score(const ObserverTemplate& tmpl, const ImageStack& test) {
  validate_template(tmpl);
  validate_stack(test);
  if (tmpl.weights.size() != test.pixels())
    throw ValidationError("score: template length " +
                          std::to_string(tmpl.weights.size()) +
                          " does not match image pixels " +
                          std::to_string(test.pixels()));
  ScoreSet out;
  out.scores = test.data * tmpl.weights;
  out.labels = test.labels;
  validate_scores(out);
  return out;
}

ScoreSet score_expanded(const ChoModel& model, const ImageStack& test) {
  validate_stack(test);
  if (model.expanded_template.size() != test.pixels())
    throw ValidationError("score: expanded template does not match images");
  ScoreSet out;
  out.scores = test.data * model.expanded_template;
  out.labels = test.labels;
  validate_scores(out);
  return out;
}

ScoreSet score_channelized(const ChoModel& model, const ImageStack& test) {
  validate_stack(test);
  if (model.channels.pixels() != test.pixels())
    throw ValidationError("score: channels do not match images");
  ScoreSet out;
  out.scores = (test.data * model.channels.rows.transpose()) * model.template_v;
  out.labels = test.labels;
  validate_scores(out);
  return out;
}

ScoreSet score(const ChoModel& model, const ImageStack& test) {
  return score_expanded(model, test);
}

}  // namespace mobs
