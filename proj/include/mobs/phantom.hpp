#pragma once

// Synthetic data generation: stationary Gaussian lumpy backgrounds with a
// closed-form covariance, Gaussian signal profiles, measurement noise, and
// ingestion of external ROI directories.

#include "mobs/core.hpp"

#include <filesystem>

namespace mobs {

// Stationary Gaussian random field: dc_offset plus a unit-normalized
// circular Gaussian kernel convolved with white noise, scaled so every
// pixel's marginal standard deviation is field_magnitude.
struct MvnLumpyConfig {
  int height = 64;
  int width = 64;
  Scalar dc_offset = 0.0;
  Scalar kernel_sigma = 5.0;   // lump correlation width, pixels
  Scalar field_magnitude = 1.0;
  std::uint64_t seed = 0;
};

struct GaussianSignalConfig {
  Scalar center_row = 0.0;
  Scalar center_col = 0.0;
  Scalar sigma = 1.0;      // pixels
  Scalar amplitude = 1.0;  // peak intensity
};

struct NoiseConfig {
  Scalar sigma_n = 0.0;  // iid Gaussian noise standard deviation
  std::uint64_t seed = 0;
};

void validate_config(const MvnLumpyConfig& config);
void validate_config(const GaussianSignalConfig& config);
void validate_config(const NoiseConfig& config);

// Noiseless backgrounds (labels all zero). Deterministic given
// config.seed; image i draws from its own derived stream, so any subset
// can be regenerated in isolation. Warns (stderr) when the image is
// narrower than 4 * kernel_sigma.
ImageStack generate_mvn_lumpy(const MvnLumpyConfig& config, Index count);

// The periodized unit-L2-norm kernel used for one axis of the field, and
// its circular autocorrelation (lag 0 equals 1). Exposed because the
// population covariance of the field factors over axes.
Vector circular_gaussian_kernel(int length, Scalar sigma);
Vector circular_autocorrelation(const Vector& kernel);

// Exact population covariance of generate_mvn_lumpy output (without dc,
// which only shifts the mean):
//   K_b[(r1,c1),(r2,c2)] = fm^2 * rho_rows[(r1-r2) mod H] *
//                          rho_cols[(c1-c2) mod W].
Matrix mvn_lumpy_covariance(const MvnLumpyConfig& config);

// s(r, c) = amplitude * exp(-((r-cr)^2 + (c-cc)^2) / (2 sigma^2)).
SignalImage render_gaussian_signal(const GaussianSignalConfig& config,
                                   int height, int width);

// Adds the signal to round(fraction_present * N) images chosen by a seeded
// shuffle, labels accordingly, and adds iid Gaussian noise to every image.
// Row order of `backgrounds` is preserved.
ImageStack assemble_dataset(const ImageStack& backgrounds,
                            const SignalImage& signal,
                            const NoiseConfig& noise, Scalar fraction_present);

// Loads every ROI file in `path` as noiseless backgrounds. With a
// manifest.txt ("height=", "width=", "dtype=f32|f64", "order=row-major")
// the other files are bare little-endian pixel payloads; without one,
// every file must be a MOBS stack. Files load in lexicographic name order.
ImageStack load_roi_backgrounds(const std::filesystem::path& path);

// load_roi_backgrounds + assemble_dataset.
ImageStack ingest_roi_directory(const std::filesystem::path& path,
                                const SignalImage& signal,
                                const NoiseConfig& noise,
                                Scalar fraction_present);

}  // namespace mobs
