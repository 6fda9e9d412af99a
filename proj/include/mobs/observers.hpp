#pragma once

// Linear observer construction and scoring: the optimal linear (Hotelling)
// template, its pseudoinverse-regularized variant for rank-deficient
// covariances, and the channelized form.

#include "mobs/core.hpp"
#include "mobs/stats.hpp"

namespace mobs {

// Channelized model: test statistic is template_v . (T g), equivalently
// expanded_template . g with expanded_template = T' template_v.
struct ChoModel {
  ChannelMatrix channels;    // T, D x M
  Vector template_v;         // w_v, length D
  Vector expanded_template;  // T' w_v, length M
};

struct ScoreSet {
  Vector scores;
  std::vector<std::uint8_t> labels;  // 0 = absent, 1 = present
};

void validate_scores(const ScoreSet& scores);

// Optimal linear template: solve [ (K0 + K1) / 2 + ridge I ] w = delta.
// The ClassStats overloads take delta from the stats or from a known
// signal; the TaskStats overload halves k_sum internally.
ObserverTemplate build_ho(const ClassStats& stats, Scalar ridge = 0.0);
ObserverTemplate build_ho(const ClassStats& stats, const SignalImage& signal,
                          Scalar ridge = 0.0);
ObserverTemplate build_ho(const TaskStats& stats, Scalar ridge = 0.0);

// Pseudoinverse-regularized template from sample statistics; survives
// rank-deficient covariances (fewer images than pixels). signal may be
// null (sample mean difference is used instead).
ObserverTemplate build_rho(const ImageStack& train, const SignalImage* signal,
                           Scalar rank_tol);

// Channelized observer. Analytic path: K_v = T ((K0 + K1) / 2) T'.
// Sample path: channelize the training stack and estimate K_v from the
// channelized samples. Delta_v is T s when a signal is given, otherwise
// the (channelized) sample mean difference.
ChoModel build_cho(const ChannelMatrix& channels, const TaskStats& stats);
ChoModel build_cho(const ChannelMatrix& channels, const ClassStats& stats);
ChoModel build_cho(const ChannelMatrix& channels, const ClassStats& stats,
                   const SignalImage& signal);
ChoModel build_cho(const ChannelMatrix& channels, const ImageStack& train,
                   const SignalImage* signal);

// scores[k] = weights . g_k.
ScoreSet score(const ObserverTemplate& tmpl, const ImageStack& test);

// The two algebraically identical CHO scoring paths. score(ChoModel)
// uses the expanded template (one pass over the data).
ScoreSet score(const ChoModel& model, const ImageStack& test);
ScoreSet score_expanded(const ChoModel& model, const ImageStack& test);
ScoreSet score_channelized(const ChoModel& model, const ImageStack& test);

}  // namespace mobs
