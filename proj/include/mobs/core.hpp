#pragma once

// Core types shared by every module: image stacks, signals, channel
// matrices, observer templates, the MOBS on-disk format, and the seeded
// random-number utilities that make every pipeline bit-reproducible.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mobs {

using Scalar = double;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

// Root of the library's exception hierarchy.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// File could not be opened / read / written at the OS level.
struct IoError : Error {
  using Error::Error;
};

// Stream is not in the expected format (bad magic, unknown version/dtype).
struct FormatError : Error {
  using Error::Error;
};

// Stream is in the right format but internally inconsistent or truncated.
struct CorruptionError : Error {
  using Error::Error;
};

// An argument violates a documented precondition.
struct ValidationError : Error {
  using Error::Error;
};

// Not enough samples to estimate the requested statistic.
struct InsufficientDataError : Error {
  using Error::Error;
};

// Configuration file or CLI flags are unusable.
struct ConfigError : Error {
  using Error::Error;
};

// A directory of ROIs could not be ingested.
struct IngestionError : Error {
  using Error::Error;
};

// A symmetric solve hit a matrix that is not positive definite. The index
// is the order (1-based) of the first non-positive leading minor.
class SingularityError : public Error {
 public:
  SingularityError(const std::string& what, Index leading_minor)
      : Error(what), leading_minor_(leading_minor) {}
  Index leading_minor() const { return leading_minor_; }

 private:
  Index leading_minor_;
};

// A channel-domain covariance is numerically rank deficient. Carries the
// indices of the channels implicated in the dependency.
class DegenerateChannelError : public Error {
 public:
  DegenerateChannelError(const std::string& what, std::vector<Index> channels)
      : Error(what), channels_(std::move(channels)) {}
  const std::vector<Index>& channels() const { return channels_; }

 private:
  std::vector<Index> channels_;
};

// The detection task itself is degenerate (zero mean separation under a
// vanishing covariance), so no informative channel exists.
struct DegenerateTaskError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Core types
// ---------------------------------------------------------------------------

// N images of fixed height x width, one image per row, pixels flattened
// row-major (pixel (r, c) lands at column r * width + c). labels[i] is 0
// for signal-absent, 1 for signal-present.
struct ImageStack {
  Matrix data;                        // N x (height * width)
  std::vector<std::uint8_t> labels;   // size N, values in {0, 1}
  int height = 0;
  int width = 0;

  Index count() const { return data.rows(); }
  Index pixels() const { return data.cols(); }
};

// Noiseless signal profile on the same pixel grid, flattened row-major.
struct SignalImage {
  Vector pixels;  // height * width
  int height = 0;
  int width = 0;
};

// D channels, one per row, each a length-M pixel-domain vector.
struct ChannelMatrix {
  Matrix rows;  // D x M

  Index count() const { return rows.rows(); }
  Index pixels() const { return rows.cols(); }
};

enum class ObserverKind { HO, RHO, CHO };

// Linear observer: score(g) = weights . g.
struct ObserverTemplate {
  Vector weights;  // length M
  ObserverKind kind = ObserverKind::HO;
};

// Validation helpers. Each throws ValidationError on violation.
void validate_stack(const ImageStack& stack);
ImageStack make_image_stack(Matrix data, std::vector<std::uint8_t> labels,
                            int height, int width);
void validate_channels(const ChannelMatrix& channels);
ChannelMatrix make_channel_matrix(Matrix rows);
void validate_template(const ObserverTemplate& tmpl);

// Splits a stack into (signal-absent, signal-present) sub-stacks, each
// preserving the relative order of its rows.
std::pair<ImageStack, ImageStack> split_by_label(const ImageStack& stack);

// ---------------------------------------------------------------------------
// MOBS container format
// ---------------------------------------------------------------------------
//
// Little-endian binary layout:
//   bytes 0-3    magic "MOBS"
//   bytes 4-7    u32 version, currently 1
//   bytes 8-15   u64 image count N
//   bytes 16-19  u32 height
//   bytes 20-23  u32 width
//   bytes 24-27  u32 dtype code, 8 = float64 (the only supported code)
//   bytes 28-31  reserved, written as zeros, ignored on read
//   then N * height * width float64 pixel values, image-major then
//   row-major within an image, then N label bytes (0 or 1).

inline constexpr std::uint32_t kMobsVersion = 1;
inline constexpr std::uint32_t kMobsDtypeFloat64 = 8;
inline constexpr std::size_t kMobsHeaderBytes = 32;

void write_image_stack(std::ostream& out, const ImageStack& stack);
void write_image_stack(const std::filesystem::path& path,
                       const ImageStack& stack);
ImageStack read_image_stack(std::istream& in);
ImageStack read_image_stack(const std::filesystem::path& path);

// Channels and signals travel as stacks with all-zero labels.
ImageStack channels_to_stack(const ChannelMatrix& channels, int height,
                             int width);
ChannelMatrix stack_to_channels(const ImageStack& stack);
ImageStack signal_to_stack(const SignalImage& signal);
SignalImage stack_to_signal(const ImageStack& stack);

// Writes a matrix as CSV with 17 significant digits (round-trip exact).
void write_matrix_csv(std::ostream& out, const Matrix& m);
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m);

// ---------------------------------------------------------------------------
// Seeded randomness
// ---------------------------------------------------------------------------

// One splitmix64 step: advances state and returns the next 64-bit output.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Derives a decorrelated child seed from (base, stream). Distinct streams
// give independent-looking engines, so per-image and per-purpose streams
// can be drawn in any order (or in parallel) without interleaving effects.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t s = base;
  const std::uint64_t head = splitmix64(s);
  s ^= 0xD1B54A32D192ED03ull * (stream + 0x632BE59BD9B4E019ull);
  return splitmix64(s) ^ head;
}

// Standard-normal sampler: mt19937_64 (sequence pinned by the standard)
// plus an explicit Box-Muller transform, so the variate stream is
// bit-identical on every platform. std::normal_distribution is
// implementation-defined and deliberately not used.
class GaussianSampler {
 public:
  explicit GaussianSampler(std::uint64_t seed) : engine_(seed) {}

  double next() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] keeps log finite; u2 in [0, 1).
    const double u1 =
        (static_cast<double>(engine_() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Fills in linear order.
  void fill(Eigen::Ref<Vector> out) {
    for (Index i = 0; i < out.size(); ++i) out[i] = next();
  }

  // Fills a matrix row-by-row (row-major order), independent of storage.
  void fill_rowmajor(Eigen::Ref<Matrix> out) {
    for (Index r = 0; r < out.rows(); ++r)
      for (Index c = 0; c < out.cols(); ++c) out(r, c) = next();
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Uniform integer in [0, bound) from a raw 64-bit draw. Modulo bias is
// below 2^-40 for bound <= 2^24 and accepted for the sake of a pinned,
// portable sequence.
inline std::uint64_t uniform_below(std::mt19937_64& engine,
                                   std::uint64_t bound) {
  return engine() % bound;
}

}  // namespace mobs
