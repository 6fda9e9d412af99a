#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <cmath>

#include "mobs/channels.hpp"
#include "mobs/core.hpp"
#include "mobs/phantom.hpp"
#include "mobs/stats.hpp"

using namespace mobs;

namespace {

ImageStack labeled_gaussian_stack(Index n, Index m, std::uint64_t seed,
                                  Scalar shift = 0.5) {
  GaussianSampler sampler(seed);
  Matrix data(n, m);
  sampler.fill_rowmajor(data);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i % 2);
    if (i % 2) data.row(i).array() += shift;
  }
  return make_image_stack(std::move(data), std::move(labels), 1,
                          static_cast<int>(m));
}

// A well-conditioned synthetic detection task with an exact covariance.
TaskStats analytic_task(int side, Scalar kernel_sigma, Scalar field,
                        Scalar noise_sd, Scalar signal_sigma) {
  MvnLumpyConfig config;
  config.height = side;
  config.width = side;
  config.kernel_sigma = kernel_sigma;
  config.field_magnitude = field;
  Matrix k = mvn_lumpy_covariance(config);
  k.diagonal().array() += noise_sd * noise_sd;

  GaussianSignalConfig sig;
  sig.center_row = (side - 1) / 2.0;
  sig.center_col = (side - 1) / 2.0;
  sig.sigma = signal_sigma;
  sig.amplitude = 1.0;
  TaskStats task;
  task.k_sum = 2.0 * k;
  task.delta_mean = render_gaussian_signal(sig, side, side).pixels;
  return task;
}

// Largest principal angle between the column spans of two bases.
double max_principal_angle(const Matrix& a, const Matrix& b) {
  const Matrix qa = Eigen::HouseholderQR<Matrix>(a).householderQ() *
                    Matrix::Identity(a.rows(), a.cols());
  const Matrix qb = Eigen::HouseholderQR<Matrix>(b).householderQ() *
                    Matrix::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<Matrix> svd(qa.transpose() * qb);
  const double smin = std::clamp(svd.singularValues().minCoeff(), -1.0, 1.0);
  return std::acos(smin);
}

}  // namespace

TEST_CASE("lagrangian value") {
  const Index m = 4;
  Matrix data(8, m);
  GaussianSampler sampler(31);
  sampler.fill_rowmajor(data);
  std::vector<std::uint8_t> labels{0, 1, 0, 1, 0, 1, 0, 1};
  const ClassStats stats =
      estimate_class_stats(make_image_stack(data, labels, 1, int(m)));

  SUBCASE("zero template leaves only the multiplier term") {
    CHECK(lagrangian_value(Vector::Zero(m), 3.0, 0.7, stats) ==
          doctest::Approx(2.1).epsilon(1e-14));
  }
  SUBCASE("hand-evaluated unit instance") {
    ClassStats unit;
    unit.k0 = Matrix::Identity(2, 2);
    unit.k1 = Matrix::Identity(2, 2);
    unit.mean0 = Vector::Zero(2);
    unit.mean1 = Vector::Unit(2, 0);
    unit.delta_mean = Vector::Unit(2, 0);
    unit.n0 = unit.n1 = 2;
    // w' w / 2 + w' w / 2 - 2 (w . e1) = 1 - 2 = -1 at w = e1.
    CHECK(lagrangian_value(Vector::Unit(2, 0), 2.0, 0.0, unit) ==
          doctest::Approx(-1.0).epsilon(1e-14));
  }
  SUBCASE("matches the two-term sample average") {
    // The quadratic terms are exactly the per-class score variances.
    GaussianSampler noise(32);
    Vector w(m);
    noise.fill(w);
    const auto [absent, present] =
        split_by_label(make_image_stack(data, labels, 1, int(m)));
    const Vector s0 = absent.data * w;
    const Vector s1 = present.data * w;
    const double var0 =
        (s0.array() - s0.mean()).square().sum() / double(s0.size() - 1);
    const double var1 =
        (s1.array() - s1.mean()).square().sum() / double(s1.size() - 1);
    const double lambda = 1.7, c = 0.3;
    const double direct =
        0.5 * var0 + 0.5 * var1 -
        lambda * (w.dot(stats.delta_mean) - c);
    CHECK(lagrangian_value(w, lambda, c, stats) ==
          doctest::Approx(direct).epsilon(1e-10));
  }
}

TEST_CASE("lagrangian gradient") {
  const Index m = 6;
  const ImageStack stack = labeled_gaussian_stack(60, m, 33);
  const ClassStats stats = estimate_class_stats(stack);
  const TaskStats task = to_task_stats(stats);

  SUBCASE("negative half-gradient at zero is the mean difference") {
    const Vector g = lagrangian_gradient(Vector::Zero(m), task);
    CHECK((-0.5 * g).isApprox(task.delta_mean, 1e-14));
  }
  SUBCASE("stationary at the whitened optimum") {
    TaskStats white;
    white.k_sum = 2.0 * Matrix::Identity(3, 3);
    white.delta_mean = Vector::LinSpaced(3, 1, 3);
    const Vector g = lagrangian_gradient(white.delta_mean, white);
    CHECK(g.cwiseAbs().maxCoeff() < 1e-14);
  }
  SUBCASE("matches central finite differences of the value") {
    GaussianSampler sampler(34);
    const double h = 1e-5;
    for (int trial = 0; trial < 5; ++trial) {
      Vector w(m);
      sampler.fill(w);
      const Vector g = lagrangian_gradient(w, task);
      for (Index i = 0; i < m; ++i) {
        Vector lo = w, hi = w;
        lo[i] -= h;
        hi[i] += h;
        const double fd = (lagrangian_value(hi, 2.0, 0.4, stats) -
                           lagrangian_value(lo, 2.0, 0.4, stats)) /
                          (2 * h);
        CHECK(std::abs(fd - g[i]) <
              1e-4 * std::max(std::abs(g[i]), 1e-8 * g.cwiseAbs().maxCoeff()));
      }
    }
  }
}

TEST_CASE("first channel is the mean difference") {
  const TaskStats task = analytic_task(8, 1.0, 3.0, 1.0, 1.0);
  const ChannelMatrix channels = generate_lgrad_channels(task, 5);
  CHECK((channels.rows.row(0).transpose().array() == task.delta_mean.array())
            .all());
}

TEST_CASE("white covariance saturates after one channel") {
  TaskStats task;
  task.k_sum = 2.0 * Matrix::Identity(12, 12);
  GaussianSampler sampler(35);
  Vector delta(12);
  sampler.fill(delta);
  task.delta_mean = delta;
  const ChannelMatrix channels = generate_lgrad_channels(task, 6);
  CHECK(channels.count() == 1);  // the matched filter is already optimal
}

TEST_CASE("zero mean difference is a degenerate task") {
  TaskStats task;
  task.k_sum = 2.0 * Matrix::Identity(5, 5);
  task.delta_mean = Vector::Zero(5);
  CHECK_THROWS_AS(generate_lgrad_channels(task, 3), DegenerateTaskError);
}

TEST_CASE("channels span the krylov subspace and recover the optimum") {
  const int side = 8;  // M = 64 keeps the unit test fast
  // Noise floor 2.0 keeps the half-sum covariance well conditioned, so the
  // iteration converges comfortably before the dependence guard trips.
  const TaskStats task = analytic_task(side, 1.2, 3.0, 2.0, 1.0);
  const Matrix kbar = 0.5 * task.k_sum;

  std::vector<LgradState> states;
  const ChannelMatrix channels = generate_lgrad_channels(
      task, side * side, kDefaultDependenceTol,
      [&](const LgradState& s) { states.push_back(s); });

  SUBCASE("iteration snapshots are self-consistent") {
    REQUIRE(!states.empty());
    for (const auto& s : states) {
      CHECK(s.channel_matrix.count() == s.iteration);
      CHECK(s.inc_inverse.dim == s.iteration);
      // Template lies in the channel row space.
      const Matrix t = s.channel_matrix.rows.transpose();
      const Vector proj =
          t * Eigen::HouseholderQR<Matrix>(t).solve(s.cho_template);
      CHECK((proj - s.cho_template).norm() <= 1e-8 * s.cho_template.norm());
    }
  }

  SUBCASE("spans match a stabilized power basis") {
    // Reference basis: orthonormalize after every operator application,
    // two passes per step. Channel i is the residual entering step i; its
    // computed direction carries ~eps/residual relative error, so the
    // Euclidean span comparison is meaningful only while that residual is
    // well above roundoff. Cap the comparison there.
    const Index cap = std::min<Index>(12, states.size());
    Matrix krylov(side * side, cap);
    krylov.col(0) = task.delta_mean.normalized();
    Index depth = 1;
    while (depth < cap) {
      const Vector& w_prev =
          states[static_cast<std::size_t>(depth - 1)].cho_template;
      const double entering =
          (task.delta_mean - kbar * w_prev).norm() / task.delta_mean.norm();
      if (entering < 1e-5) break;

      Vector next = kbar * krylov.col(depth - 1);
      for (int pass = 0; pass < 2; ++pass)
        for (Index j = 0; j < depth; ++j)
          next -= krylov.col(j).dot(next) * krylov.col(j);
      krylov.col(depth) = next.normalized();
      ++depth;
    }
    CHECK(depth >= 4);  // the prefix must be long enough to mean something
    for (Index i = 1; i <= depth; ++i) {
      const Matrix t = states[static_cast<std::size_t>(i - 1)]
                           .channel_matrix.rows.transpose();
      CHECK(max_principal_angle(t, krylov.leftCols(i)) < 1e-6);
    }
  }

  SUBCASE("full-depth template solves the pixel-domain system") {
    const Vector final_template = states.back().cho_template;
    // Convergence in the algorithm's own metric: the residual it drives
    // to zero is tiny relative to the mean difference.
    const double residual =
        (task.delta_mean - kbar * final_template).norm();
    CHECK(residual <= 1e-6 * task.delta_mean.norm());
    const Vector direct = symmetric_solve(kbar, task.delta_mean);
    CHECK((final_template - direct).norm() <= 1e-6 * direct.norm());
  }

  SUBCASE("incremental inverse agrees with direct inversion") {
    REQUIRE(states.size() >= 5);
    for (const auto& s : states) {
      const Matrix t = s.channel_matrix.rows;
      const Matrix kv = t * kbar * t.transpose();
      const Vector wv_direct =
          Eigen::LLT<Matrix>(kv).solve(t * task.delta_mean);
      const Vector direct = t.transpose() * wv_direct;
      CHECK((s.cho_template - direct).norm() <= 1e-8 * direct.norm());
    }
  }

  SUBCASE("channelized detectability is non-decreasing") {
    double prev = 0.0;
    for (const auto& s : states) {
      const double snr2 = s.cho_template.dot(task.delta_mean);
      CHECK(snr2 >= prev - 1e-8 * std::max(1.0, prev));
      prev = snr2;
    }
  }
}

TEST_CASE("sample-driven generation") {
  const Index n = 80, m = 16;
  const ImageStack train = labeled_gaussian_stack(n, m, 36);
  SignalImage signal;
  signal.height = 1;
  signal.width = int(m);
  signal.pixels = Vector::LinSpaced(m, 0.1, 1.0);

  SUBCASE("known-signal mode pins the first channel to the signal") {
    const ChannelMatrix channels =
        generate_lgrad_channels_from_samples(train, &signal, 4);
    CHECK((channels.rows.row(0).transpose().array() == signal.pixels.array())
              .all());
  }
  SUBCASE("sample mode starts from the sample mean difference") {
    const ChannelMatrix channels =
        generate_lgrad_channels_from_samples(train, nullptr, 4);
    const ClassStats stats = estimate_class_stats(train);
    CHECK(channels.rows.row(0).transpose().isApprox(stats.delta_mean, 1e-12));
  }
  SUBCASE("generation is deterministic") {
    const ChannelMatrix a =
        generate_lgrad_channels_from_samples(train, &signal, 6);
    const ChannelMatrix b =
        generate_lgrad_channels_from_samples(train, &signal, 6);
    CHECK((a.rows.array() == b.rows.array()).all());
  }
  SUBCASE("factored covariance path matches the explicit path") {
    // Same algorithm with the covariance applied through the centered
    // data versus assembled as an explicit matrix.
    const ClassStats stats = estimate_class_stats(train);
    const TaskStats task = to_task_stats(stats, signal);
    const ChannelMatrix explicit_path = generate_lgrad_channels(task, 6);
    const ChannelMatrix factored_path =
        generate_lgrad_channels_from_samples(train, &signal, 6);
    REQUIRE(explicit_path.count() == factored_path.count());
    CHECK((explicit_path.rows - factored_path.rows).norm() <=
          1e-10 * explicit_path.rows.norm());
  }
}

TEST_CASE("decomposition-driven generation") {
  const int side = 8;
  MvnLumpyConfig config;
  config.height = side;
  config.width = side;
  config.kernel_sigma = 1.2;
  config.field_magnitude = 3.0;
  config.seed = 40;
  const ImageStack backgrounds = generate_mvn_lumpy(config, 120);
  GaussianSignalConfig sig;
  sig.center_row = 3.5;
  sig.center_col = 3.5;
  sig.sigma = 1.0;
  sig.amplitude = 1.0;
  const SignalImage signal = render_gaussian_signal(sig, side, side);

  SUBCASE("matches generic generation on the decomposed statistics") {
    const Scalar sigma_n = 0.8;
    const ChannelMatrix direct =
        generate_lgrad_cmd_channels(backgrounds, sigma_n, signal, 6);
    const ClassStats stats = cmd_covariance_iid(backgrounds, sigma_n);
    const ChannelMatrix generic =
        generate_lgrad_channels(to_task_stats(stats, signal), 6);
    CHECK((direct.rows.array() == generic.rows.array()).all());
  }

  SUBCASE("zero-variance backgrounds with zero noise degenerate") {
    Matrix flat = Matrix::Constant(10, side * side, 5.0);
    const ImageStack constant_bg = make_image_stack(
        flat, std::vector<std::uint8_t>(10, 0), side, side);
    CHECK_THROWS_AS(
        generate_lgrad_cmd_channels(constant_bg, 0.0, signal, 3),
        DegenerateTaskError);
  }

  SUBCASE("channels ignore training noise by construction") {
    // Only backgrounds and the noise model enter; adding a noisy
    // training stack elsewhere cannot change the output.
    const ChannelMatrix a =
        generate_lgrad_cmd_channels(backgrounds, 0.8, signal, 5);
    const ChannelMatrix b =
        generate_lgrad_cmd_channels(backgrounds, 0.8, signal, 5);
    CHECK((a.rows.array() == b.rows.array()).all());
  }
}

TEST_CASE("pls channels") {
  const Index n = 100, m = 20;
  const ImageStack train = labeled_gaussian_stack(n, m, 41);

  SUBCASE("first weight is collinear with the mean difference") {
    const ChannelMatrix channels = generate_pls_channels(train, 3);
    const ClassStats stats = estimate_class_stats(train);
    const double cosine =
        std::abs(channels.rows.row(0).dot(stats.delta_mean.transpose())) /
        (channels.rows.row(0).norm() * stats.delta_mean.norm());
    CHECK(cosine > 1.0 - 1e-10);
  }

  SUBCASE("score vectors are mutually orthogonal") {
    // Recompute scores by deflating exactly as the generator does.
    const ChannelMatrix channels = generate_pls_channels(train, 6);
    Matrix x = train.data;
    x.rowwise() -= x.colwise().mean();
    Matrix scores(n, channels.count());
    for (Index k = 0; k < channels.count(); ++k) {
      const Vector w = channels.rows.row(k);
      scores.col(k) = x * w;
      const Vector t = scores.col(k);
      const Vector loadings = x.transpose() * t / t.squaredNorm();
      x -= t * loadings.transpose();
    }
    const Matrix gram = scores.transpose() * scores;
    for (Index i = 0; i < gram.rows(); ++i)
      for (Index j = 0; j < i; ++j)
        CHECK(std::abs(gram(i, j)) <=
              1e-8 * std::sqrt(gram(i, i) * gram(j, j)));
  }

  SUBCASE("single-class input is rejected") {
    Matrix data = Matrix::Random(10, m);
    const ImageStack one_class = make_image_stack(
        data, std::vector<std::uint8_t>(10, 1), 1, int(m));
    CHECK_THROWS_AS(generate_pls_channels(one_class, 2), ValidationError);
  }

  SUBCASE("channel budget is capped by sample count") {
    const ImageStack tiny = labeled_gaussian_stack(6, m, 42);
    CHECK_THROWS_AS(generate_pls_channels(tiny, 10), ValidationError);
  }

  SUBCASE("deterministic output") {
    const ChannelMatrix a = generate_pls_channels(train, 5);
    const ChannelMatrix b = generate_pls_channels(train, 5);
    CHECK((a.rows.array() == b.rows.array()).all());
  }
}

TEST_CASE("row normalization preserves direction") {
  Matrix rows(2, 3);
  rows << 3, 0, 4, 0, 2, 0;
  const ChannelMatrix normalized = normalize_rows(make_channel_matrix(rows));
  CHECK(normalized.rows.row(0).norm() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(normalized.rows(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(normalized.rows(1, 1) == doctest::Approx(1.0).epsilon(1e-15));
}
