#include "mobs/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace mobs {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

// Builds the H x H circulant convolution matrix C[i][j] = k[(i - j) mod H]
// so that (C * x)[i] is the circular convolution of kernel and x.
Matrix circulant(const Vector& kernel) {
  const Index n = kernel.size();
  Matrix c(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) c(i, j) = kernel[(i - j + n) % n];
  return c;
}

}  // namespace

void validate_config(const MvnLumpyConfig& config) {
  require(config.height > 0 && config.width > 0,
          "mvn lumpy config: height and width must be positive");
  require(config.kernel_sigma > 0.0,
          "mvn lumpy config: kernel_sigma must be > 0");
  require(config.field_magnitude >= 0.0,
          "mvn lumpy config: field_magnitude must be >= 0");
  if (std::min(config.height, config.width) <
      4.0 * config.kernel_sigma)
    std::cerr << "warning: image side " << config.height << "x"
              << config.width << " is below 4 * kernel_sigma = "
              << 4.0 * config.kernel_sigma
              << "; lumps wrap around noticeably\n";
}

void validate_config(const GaussianSignalConfig& config) {
  require(config.sigma > 0.0, "signal config: sigma must be > 0");
  require(config.amplitude != 0.0, "signal config: amplitude must be nonzero");
}

void validate_config(const NoiseConfig& config) {
  require(config.sigma_n >= 0.0, "noise config: sigma_n must be >= 0");
}

Vector circular_gaussian_kernel(int length, Scalar sigma) {
  require(length > 0, "kernel: length must be positive");
  require(sigma > 0.0, "kernel: sigma must be positive");
  // Periodize the infinite Gaussian onto the ring: sum windows until the
  // farthest term underflows.
  const int wraps =
      std::max<int>(3, static_cast<int>(std::ceil(40.0 * sigma / length)) + 1);
  Vector k(length);
  for (int i = 0; i < length; ++i) {
    double sum = 0.0;
    for (int a = -wraps; a <= wraps; ++a) {
      const double d = static_cast<double>(i) + static_cast<double>(a) * length;
      sum += std::exp(-d * d / (2.0 * sigma * sigma));
    }
    k[i] = sum;
  }
  k /= k.norm();  // unit L2 norm: white noise through it keeps unit variance
  return k;
}

Vector circular_autocorrelation(const Vector& kernel) {
  const Index n = kernel.size();
  Vector rho(n);
  for (Index d = 0; d < n; ++d) {
    double sum = 0.0;
    for (Index i = 0; i < n; ++i) sum += kernel[i] * kernel[(i + d) % n];
    rho[d] = sum;
  }
  return rho;
}

Matrix mvn_lumpy_covariance(const MvnLumpyConfig& config) {
  validate_config(config);
  const int h = config.height, w = config.width;
  const Vector rho_r =
      circular_autocorrelation(circular_gaussian_kernel(h, config.kernel_sigma));
  const Vector rho_c =
      circular_autocorrelation(circular_gaussian_kernel(w, config.kernel_sigma));
  const Scalar fm2 = config.field_magnitude * config.field_magnitude;
  const Index m = static_cast<Index>(h) * w;
  Matrix k(m, m);
  for (Index p = 0; p < m; ++p) {
    const Index r1 = p / w, c1 = p % w;
    for (Index q = 0; q <= p; ++q) {
      const Index r2 = q / w, c2 = q % w;
      const Index dr = (r1 - r2 + h) % h;
      const Index dc = (c1 - c2 + w) % w;
      const Scalar v = fm2 * rho_r[dr] * rho_c[dc];
      k(p, q) = v;
      k(q, p) = v;
    }
  }
  return k;
}

ImageStack generate_mvn_lumpy(const MvnLumpyConfig& config, Index count) {
  validate_config(config);
  require(count > 0, "generate_mvn_lumpy: count must be positive");

  const int h = config.height, w = config.width;
  const Matrix conv_rows = circulant(circular_gaussian_kernel(h, config.kernel_sigma));
  const Matrix conv_cols = circulant(circular_gaussian_kernel(w, config.kernel_sigma));

  ImageStack stack;
  stack.height = h;
  stack.width = w;
  stack.data.resize(count, static_cast<Index>(h) * w);
  stack.labels.assign(static_cast<std::size_t>(count), 0);

  Matrix white(h, w), field(h, w);
  for (Index i = 0; i < count; ++i) {
    GaussianSampler rng(derive_seed(config.seed, static_cast<std::uint64_t>(i)));
    rng.fill_rowmajor(white);
    // Separable circular convolution: rows then columns.
    field.noalias() = conv_rows * white * conv_cols.transpose();
    field = ((field * config.field_magnitude).array() + config.dc_offset)
                .matrix();
    // Flatten row-major: pixel (r, c) -> column r * w + c.
    stack.data.row(i) = field.transpose().reshaped().transpose();
  }
  return stack;
}

SignalImage render_gaussian_signal(const GaussianSignalConfig& config,
                                   int height, int width) {
  validate_config(config);
  require(height > 0 && width > 0,
          "render_gaussian_signal: dimensions must be positive");
  require(config.center_row >= 0.0 && config.center_row <= height - 1 &&
              config.center_col >= 0.0 && config.center_col <= width - 1,
          "render_gaussian_signal: center outside image bounds");

  SignalImage signal;
  signal.height = height;
  signal.width = width;
  signal.pixels.resize(static_cast<Index>(height) * width);
  const Scalar inv = 1.0 / (2.0 * config.sigma * config.sigma);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Scalar dr = r - config.center_row;
      const Scalar dc = c - config.center_col;
      signal.pixels[static_cast<Index>(r) * width + c] =
          config.amplitude * std::exp(-(dr * dr + dc * dc) * inv);
    }
  }
  return signal;
}

ImageStack assemble_dataset(const ImageStack& backgrounds,
                            const SignalImage& signal,
                            const NoiseConfig& noise,
                            Scalar fraction_present) {
  validate_stack(backgrounds);
  validate_config(noise);
  require(signal.pixels.size() == backgrounds.pixels() &&
              signal.height == backgrounds.height &&
              signal.width == backgrounds.width,
          "assemble_dataset: signal dimensions do not match backgrounds");
  require(fraction_present >= 0.0 && fraction_present <= 1.0,
          "assemble_dataset: fraction_present must be in [0, 1]");

  const Index n = backgrounds.count();
  const Index n_present = static_cast<Index>(
      std::llround(fraction_present * static_cast<double>(n)));

  // Seeded Fisher-Yates shuffle decides which images carry the signal.
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 shuffler(derive_seed(noise.seed, 0x5348554646ull));
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(
        uniform_below(shuffler, static_cast<std::uint64_t>(i) + 1));
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(j)]);
  }

  ImageStack out;
  out.height = backgrounds.height;
  out.width = backgrounds.width;
  out.data = backgrounds.data;
  out.labels.assign(static_cast<std::size_t>(n), 0);
  for (Index k = 0; k < n_present; ++k)
    out.labels[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] =
        1;

  for (Index i = 0; i < n; ++i) {
    if (out.labels[static_cast<std::size_t>(i)])
      out.data.row(i) += signal.pixels.transpose();
    if (noise.sigma_n > 0.0) {
      GaussianSampler rng(
          derive_seed(noise.seed, 1 + static_cast<std::uint64_t>(i)));
      for (Index j = 0; j < out.data.cols(); ++j)
        out.data(i, j) += noise.sigma_n * rng.next();
    }
  }
  return out;
}

namespace {

struct RoiManifest {
  int height = 0;
  int width = 0;
  int value_bytes = 0;  // 4 for f32, 8 for f64
};

RoiManifest parse_roi_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IngestionError("cannot read manifest: " + file.string());
  RoiManifest m;
  bool have_h = false, have_w = false, have_dtype = false, have_order = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw IngestionError("manifest line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "height") {
        m.height = std::stoi(value);
        have_h = true;
      } else if (key == "width") {
        m.width = std::stoi(value);
        have_w = true;
      } else if (key == "dtype") {
        if (value == "f32")
          m.value_bytes = 4;
        else if (value == "f64")
          m.value_bytes = 8;
        else
          throw IngestionError("manifest dtype must be f32 or f64, got " +
                               value);
        have_dtype = true;
      } else if (key == "order") {
        if (value != "row-major")
          throw IngestionError("manifest order must be row-major, got " +
                               value);
        have_order = true;
      } else {
        throw IngestionError("manifest has unknown key: " + key);
      }
    } catch (const std::invalid_argument&) {
      throw IngestionError("manifest value is not an integer: " + line);
    } catch (const std::out_of_range&) {
      throw IngestionError("manifest value out of range: " + line);
    }
  }
  if (!(have_h && have_w && have_dtype && have_order))
    throw IngestionError(
        "manifest must declare height, width, dtype, and order: " +
        file.string());
  if (m.height <= 0 || m.width <= 0)
    throw IngestionError("manifest dimensions must be positive");
  return m;
}

double f32_from_le(const unsigned char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= std::uint32_t(p[i]) << (8 * i);
  float v;
  std::memcpy(&v, &bits, sizeof v);
  return static_cast<double>(v);
}

double f64_from_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

}  // namespace

ImageStack load_roi_backgrounds(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path))
    throw IngestionError("not a directory: " + path.string());

  std::vector<fs::path> files;
  bool have_manifest = false;
  for (const auto& entry : fs::directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().filename() == "manifest.txt") {
      have_manifest = true;
      continue;
    }
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw IngestionError("no ROI files in directory: " + path.string());

  std::vector<Matrix> blocks;
  int height = 0, width = 0;

  if (have_manifest) {
    const RoiManifest m = parse_roi_manifest(path / "manifest.txt");
    height = m.height;
    width = m.width;
    const std::size_t pixels = std::size_t(m.height) * std::size_t(m.width);
    const std::size_t expect = pixels * std::size_t(m.value_bytes);
    for (const auto& file : files) {
      std::error_code ec;
      const auto size = fs::file_size(file, ec);
      if (ec) throw IngestionError("cannot stat ROI file: " + file.string());
      if (size != expect)
        throw IngestionError(
            "ROI file " + file.string() + " is " + std::to_string(size) +
            " bytes, expected " + std::to_string(expect) + " (" +
            std::to_string(m.height) + "x" + std::to_string(m.width) + " " +
            (m.value_bytes == 4 ? "f32" : "f64") + ")");
      std::ifstream in(file, std::ios::binary);
      if (!in) throw IngestionError("cannot open ROI file: " + file.string());
      std::vector<unsigned char> buf(expect);
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(expect));
      if (static_cast<std::size_t>(in.gcount()) != expect)
        throw IngestionError("short read on ROI file: " + file.string());
      Matrix row(1, static_cast<Index>(pixels));
      for (std::size_t j = 0; j < pixels; ++j)
        row(0, static_cast<Index>(j)) =
            m.value_bytes == 4 ? f32_from_le(buf.data() + 4 * j)
                               : f64_from_le(buf.data() + 8 * j);
      blocks.push_back(std::move(row));
    }
  } else {
    for (const auto& file : files) {
      ImageStack stack;
      try {
        stack = read_image_stack(file);
      } catch (const Error& e) {
        throw IngestionError("cannot load ROI file " + file.string() + ": " +
                             e.what());
      }
      if (height == 0) {
        height = stack.height;
        width = stack.width;
      } else if (stack.height != height || stack.width != width) {
        throw IngestionError(
            "ROI file " + file.string() + " is " +
            std::to_string(stack.height) + "x" + std::to_string(stack.width) +
            " but earlier files are " + std::to_string(height) + "x" +
            std::to_string(width));
      }
      blocks.push_back(std::move(stack.data));
    }
  }

  Index total = 0;
  for (const auto& b : blocks) total += b.rows();
  ImageStack out;
  out.height = height;
  out.width = width;
  out.data.resize(total, static_cast<Index>(height) * width);
  Index at = 0;
  for (const auto& b : blocks) {
    out.data.middleRows(at, b.rows()) = b;
    at += b.rows();
  }
  out.labels.assign(static_cast<std::size_t>(total), 0);
  return out;
}

ImageStack ingest_roi_directory(const std::filesystem::path& path,
                                const SignalImage& signal,
                                const NoiseConfig& noise,
                                Scalar fraction_present) {
  return assemble_dataset(load_roi_backgrounds(path), signal, noise,
                          fraction_present);
}

}  // namespace mobs
