#pragma once

// Figures of merit (ROC/AUC, the equal-covariance Gaussian AUC relation,
// bootstrap confidence intervals) and wall-clock benchmarking of channel
// generation.

#include "mobs/core.hpp"
#include "mobs/observers.hpp"
#include "mobs/phantom.hpp"

#include <utility>
#include <vector>

namespace mobs {

struct RocResult {
  Scalar auc = 0.0;
  std::vector<std::pair<Scalar, Scalar>> curve;  // (FPF, TPF), (0,0) to (1,1)
  Index n0 = 0;
  Index n1 = 0;
};

enum class ChannelMethod { Lgrad, LgradCmd, Pls };
const char* to_string(ChannelMethod method);

struct TimingRecord {
  ChannelMethod method = ChannelMethod::Lgrad;
  Index num_train = 0;
  Index num_channels = 0;
  Scalar seconds = 0.0;  // mean over repeats, warm-up excluded
  Index repeats = 0;
};

// Rank (pair-counting) AUC with half-credit ties, plus the tie-grouped
// ROC curve whose trapezoidal area equals the rank estimate exactly.
RocResult compute_auc(const ScoreSet& scores);

// AUC of the equal-covariance Gaussian detection task:
// (1 + erf(snr / 2)) / 2, equivalently Phi(snr / sqrt 2).
Scalar analytic_gaussian_auc(Scalar snr);

// Times the full channel-generation pipeline (statistics estimation
// included). For LgradCmd, `train` is the noiseless background stack and
// `signal` is required; for Lgrad a non-null signal selects the
// known-signal mode; Pls ignores both signal and noise_sigma.
TimingRecord benchmark_generation(ChannelMethod method,
                                  const ImageStack& train,
                                  const SignalImage* signal,
                                  Scalar noise_sigma, Index num_channels,
                                  Index repeats);

// Stratified percentile bootstrap 95% interval for the AUC,
// deterministic given seed. Resample r draws from its own derived
// stream, so resamples are order-independent.
std::pair<Scalar, Scalar> bootstrap_auc_ci(const ScoreSet& scores,
                                           Index resamples,
                                           std::uint64_t seed);

}  // namespace mobs
