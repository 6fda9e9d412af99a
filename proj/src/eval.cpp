#include "mobs/eval.hpp"

#include "mobs/channels.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace mobs {
namespace {

// Rank AUC over two ascending-sorted score arrays, half credit for ties.
Scalar sorted_pair_auc(const std::vector<Scalar>& absent,
                       const std::vector<Scalar>& present) {
  const std::size_t n0 = absent.size(), n1 = present.size();
  std::size_t i0 = 0, i1 = 0;
  double wins = 0.0;
  double absent_below = 0.0;
  while (i0 < n0 || i1 < n1) {
    Scalar v;
    if (i0 == n0)
      v = present[i1];
    else if (i1 == n1)
      v = absent[i0];
    else
      v = std::min(absent[i0], present[i1]);
    std::size_t g0 = 0, g1 = 0;
    while (i0 < n0 && absent[i0] == v) ++i0, ++g0;
    while (i1 < n1 && present[i1] == v) ++i1, ++g1;
    wins += double(g1) * absent_below + 0.5 * double(g1) * double(g0);
    absent_below += double(g0);
  }
  return wins / (double(n0) * double(n1));
}

}  // namespace

const char* to_string(ChannelMethod method) {
  switch (method) {
    case ChannelMethod::Lgrad:
      return "lgrad";
    case ChannelMethod::LgradCmd:
      return "lgrad_cmd";
    case ChannelMethod::Pls:
      return "pls";
  }
  return "unknown";
}

RocResult compute_auc(const ScoreSet& scores) {
  validate_scores(scores);
  std::vector<Scalar> absent, present;
  absent.reserve(scores.labels.size());
  present.reserve(scores.labels.size());
  for (Index i = 0; i < scores.scores.size(); ++i) {
    if (scores.labels[static_cast<std::size_t>(i)])
      present.push_back(scores.scores[i]);
    else
      absent.push_back(scores.scores[i]);
  }
  if (absent.empty() || present.empty())
    throw ValidationError("compute_auc: both classes must be present, got " +
                          std::to_string(absent.size()) + " absent / " +
                          std::to_string(present.size()) + " present");
  std::sort(absent.begin(), absent.end());
  std::sort(present.begin(), present.end());

  RocResult result;
  result.n0 = static_cast<Index>(absent.size());
  result.n1 = static_cast<Index>(present.size());
  result.auc = sorted_pair_auc(absent, present);

  // Tie-grouped curve, thresholds sweeping from +inf downward.
  result.curve.emplace_back(0.0, 0.0);
  std::size_t i0 = absent.size(), i1 = present.size();
  double fp = 0.0, tp = 0.0;
  while (i0 > 0 || i1 > 0) {
    Scalar v;
    if (i0 == 0)
      v = present[i1 - 1];
    else if (i1 == 0)
      v = absent[i0 - 1];
    else
      v = std::max(absent[i0 - 1], present[i1 - 1]);
    while (i0 > 0 && absent[i0 - 1] == v) --i0, ++fp;
    while (i1 > 0 && present[i1 - 1] == v) --i1, ++tp;
    result.curve.emplace_back(fp / double(absent.size()),
                              tp / double(present.size()));
  }
  return result;
}

Scalar analytic_gaussian_auc(Scalar snr) {
  if (!(snr >= 0.0))
    throw ValidationError("analytic_gaussian_auc: snr must be >= 0");
  // Equal-variance Gaussian scores: the score difference is N(snr^2, 2 snr^2)
  // in template units, so AUC = (1 + erf(snr / 2)) / 2 = Phi(snr / sqrt 2).
  return 0.5 * std::erfc(-snr / 2.0);
}

TimingRecord benchmark_generation(ChannelMethod method,
                                  const ImageStack& train,
                                  const SignalImage* signal,
                                  Scalar noise_sigma, Index num_channels,
                                  Index repeats) {
  if (repeats < 1)
    throw ValidationError("benchmark_generation: repeats must be >= 1");

  const auto run = [&]() {
    switch (method) {
      case ChannelMethod::Lgrad:
        generate_lgrad_channels_from_samples(train, signal, num_channels);
        return;
      case ChannelMethod::LgradCmd:
        if (!signal)
          throw ValidationError(
              "benchmark_generation: covariance-decomposition mode needs a "
              "signal");
        generate_lgrad_cmd_channels(train, noise_sigma, *signal,
                                    num_channels);
        return;
      case ChannelMethod::Pls:
        generate_pls_channels(train, num_channels);
        return;
    }
    throw ValidationError("benchmark_generation: unknown method");
  };

  run();  // warm-up, excluded from timing
  double total = 0.0;
  for (Index r = 0; r < repeats; ++r) {
    const auto start = std::chrono::steady_clock::now();
    run();
    const auto stop = std::chrono::steady_clock::now();
    total += std::chrono::duration<double>(stop - start).count();
  }

  TimingRecord record;
  record.method = method;
  record.num_train = train.count();
  record.num_channels = num_channels;
  record.seconds = total / static_cast<double>(repeats);
  record.repeats = repeats;
  return record;
}

std::pair<Scalar, Scalar> bootstrap_auc_ci(const ScoreSet& scores,
                                           Index resamples,
                                           std::uint64_t seed) {
  validate_scores(scores);
  if (resamples < 100)
    throw ValidationError("bootstrap_auc_ci: resamples must be >= 100");

  std::vector<Scalar> absent, present;
  for (Index i = 0; i < scores.scores.size(); ++i) {
    if (scores.labels[static_cast<std::size_t>(i)])
      present.push_back(scores.scores[i]);
    else
      absent.push_back(scores.scores[i]);
  }
  if (absent.empty() || present.empty())
    throw ValidationError("bootstrap_auc_ci: both classes must be present");
  std::sort(absent.begin(), absent.end());
  std::sort(present.begin(), present.end());

  // Drawing indices into the sorted source and walking them in order
  // yields each resample already sorted; the multiset drawn is the same
  // as for draw-then-sort.
  std::vector<std::uint32_t> count0(absent.size()), count1(present.size());
  std::vector<Scalar> sample0(absent.size()), sample1(present.size());
  std::vector<Scalar> aucs(static_cast<std::size_t>(resamples));
  for (Index r = 0; r < resamples; ++r) {
    std::mt19937_64 engine(derive_seed(seed, static_cast<std::uint64_t>(r)));
    std::fill(count0.begin(), count0.end(), 0);
    std::fill(count1.begin(), count1.end(), 0);
    for (std::size_t i = 0; i < absent.size(); ++i)
      ++count0[uniform_below(engine, absent.size())];
    for (std::size_t i = 0; i < present.size(); ++i)
      ++count1[uniform_below(engine, present.size())];
    std::size_t at = 0;
    for (std::size_t i = 0; i < absent.size(); ++i)
      for (std::uint32_t k = 0; k < count0[i]; ++k) sample0[at++] = absent[i];
    at = 0;
    for (std::size_t i = 0; i < present.size(); ++i)
      for (std::uint32_t k = 0; k < count1[i]; ++k) sample1[at++] = present[i];
    aucs[static_cast<std::size_t>(r)] = sorted_pair_auc(sample0, sample1);
  }
  std::sort(aucs.begin(), aucs.end());

  const auto quantile = [&aucs](double q) {
    const double pos = q * static_cast<double>(aucs.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - std::floor(pos);
    return aucs[lo] * (1.0 - frac) + aucs[hi] * frac;
  };
  return {quantile(0.025), quantile(0.975)};
}

}  // namespace mobs
