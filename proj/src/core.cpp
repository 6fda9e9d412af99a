#include "mobs/core.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace mobs {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

// ---- little-endian packing (explicit, independent of host order) ----

void pack_u32(std::uint32_t v, unsigned char* out) {
  for (int i = 0; i < 4; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

void pack_u64(std::uint64_t v, unsigned char* out) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

std::uint32_t unpack_u32(const unsigned char* in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[i]) << (8 * i);
  return v;
}

std::uint64_t unpack_u64(const unsigned char* in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[i]) << (8 * i);
  return v;
}

void pack_f64(double v, unsigned char* out) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  pack_u64(bits, out);
}

double unpack_f64(const unsigned char* in) {
  const std::uint64_t bits = unpack_u64(in);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void read_exact(std::istream& in, unsigned char* buf, std::size_t n,
                const char* what) {
  in.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw CorruptionError(std::string("truncated stream while reading ") +
                          what);
}

}  // namespace

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

void validate_stack(const ImageStack& stack) {
  require(stack.height > 0 && stack.width > 0,
          "image stack: height and width must be positive");
  const Index m =
      static_cast<Index>(stack.height) * static_cast<Index>(stack.width);
  require(stack.data.cols() == m,
          "image stack: data has " + std::to_string(stack.data.cols()) +
              " columns but height * width = " + std::to_string(m));
  require(static_cast<Index>(stack.labels.size()) == stack.data.rows(),
          "image stack: label count " + std::to_string(stack.labels.size()) +
              " does not match image count " +
              std::to_string(stack.data.rows()));
  for (std::size_t i = 0; i < stack.labels.size(); ++i)
    if (stack.labels[i] > 1)
      throw ValidationError("image stack: label at index " +
                            std::to_string(i) + " is " +
                            std::to_string(int(stack.labels[i])) +
                            ", expected 0 or 1");
  if (!stack.data.allFinite())
    throw ValidationError("image stack: data contains non-finite values");
}

ImageStack make_image_stack(Matrix data, std::vector<std::uint8_t> labels,
                            int height, int width) {
  ImageStack stack{std::move(data), std::move(labels), height, width};
  validate_stack(stack);
  return stack;
}

void validate_channels(const ChannelMatrix& channels) {
  require(channels.rows.rows() >= 1, "channel matrix: needs at least one row");
  require(channels.rows.cols() >= 1,
          "channel matrix: needs at least one pixel");
  require(channels.rows.rows() <= channels.rows.cols(),
          "channel matrix: channel count " +
              std::to_string(channels.rows.rows()) +
              " exceeds pixel count " + std::to_string(channels.rows.cols()));
  for (Index i = 0; i < channels.rows.rows(); ++i) {
    if (!channels.rows.row(i).allFinite())
      throw ValidationError("channel matrix: row " + std::to_string(i) +
                            " has non-finite entries");
    if (channels.rows.row(i).norm() == 0.0)
      throw ValidationError("channel matrix: row " + std::to_string(i) +
                            " is the zero vector");
  }
}

ChannelMatrix make_channel_matrix(Matrix rows) {
  ChannelMatrix channels{std::move(rows)};
  validate_channels(channels);
  return channels;
}

void validate_template(const ObserverTemplate& tmpl) {
  require(tmpl.weights.size() >= 1, "observer template: empty weight vector");
  if (!tmpl.weights.allFinite())
    throw ValidationError("observer template: non-finite weights");
}

std::pair<ImageStack, ImageStack> split_by_label(const ImageStack& stack) {
  validate_stack(stack);
  Index n1 = 0;
  for (auto b : stack.labels) n1 += b;
  const Index n0 = stack.count() - n1;
  ImageStack absent, present;
  absent.height = present.height = stack.height;
  absent.width = present.width = stack.width;
  absent.data.resize(n0, stack.pixels());
  present.data.resize(n1, stack.pixels());
  absent.labels.assign(static_cast<std::size_t>(n0), 0);
  present.labels.assign(static_cast<std::size_t>(n1), 1);
  Index i0 = 0, i1 = 0;
  for (Index i = 0; i < stack.count(); ++i) {
    if (stack.labels[static_cast<std::size_t>(i)])
      present.data.row(i1++) = stack.data.row(i);
    else
      absent.data.row(i0++) = stack.data.row(i);
  }
  return {std::move(absent), std::move(present)};
}

// ---------------------------------------------------------------------------
// MOBS I/O
// ---------------------------------------------------------------------------

void write_image_stack(std::ostream& out, const ImageStack& stack) {
  validate_stack(stack);
  require(stack.count() >= 1, "MOBS write: stack has no images");

  std::array<unsigned char, kMobsHeaderBytes> header{};
  header[0] = 'M';
  header[1] = 'O';
  header[2] = 'B';
  header[3] = 'S';
  pack_u32(kMobsVersion, header.data() + 4);
  pack_u64(static_cast<std::uint64_t>(stack.count()), header.data() + 8);
  pack_u32(static_cast<std::uint32_t>(stack.height), header.data() + 16);
  pack_u32(static_cast<std::uint32_t>(stack.width), header.data() + 20);
  pack_u32(kMobsDtypeFloat64, header.data() + 24);
  // bytes 28-31 stay zero (reserved)
  out.write(reinterpret_cast<const char*>(header.data()), header.size());

  std::vector<unsigned char> row_buf(
      static_cast<std::size_t>(stack.pixels()) * 8);
  for (Index i = 0; i < stack.count(); ++i) {
    for (Index j = 0; j < stack.pixels(); ++j)
      pack_f64(stack.data(i, j), row_buf.data() + 8 * j);
    out.write(reinterpret_cast<const char*>(row_buf.data()),
              static_cast<std::streamsize>(row_buf.size()));
  }
  out.write(reinterpret_cast<const char*>(stack.labels.data()),
            static_cast<std::streamsize>(stack.labels.size()));
  if (!out) throw IoError("MOBS write: stream failure");
}

void write_image_stack(const std::filesystem::path& path,
                       const ImageStack& stack) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_image_stack(out, stack);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

ImageStack read_image_stack(std::istream& in) {
  std::array<unsigned char, kMobsHeaderBytes> header{};
  read_exact(in, header.data(), header.size(), "header");
  if (std::memcmp(header.data(), "MOBS", 4) != 0)
    throw FormatError("not a MOBS stream: bad magic");
  const std::uint32_t version = unpack_u32(header.data() + 4);
  if (version != kMobsVersion)
    throw FormatError("unsupported MOBS version " + std::to_string(version));
  const std::uint64_t n = unpack_u64(header.data() + 8);
  const std::uint32_t height = unpack_u32(header.data() + 16);
  const std::uint32_t width = unpack_u32(header.data() + 20);
  const std::uint32_t dtype = unpack_u32(header.data() + 24);
  if (dtype != kMobsDtypeFloat64)
    throw FormatError("unsupported MOBS dtype code " + std::to_string(dtype));
  if (n == 0 || height == 0 || width == 0)
    throw CorruptionError("MOBS header: zero image count or dimensions");
  const std::uint64_t m = std::uint64_t(height) * std::uint64_t(width);
  if (n > (std::uint64_t(1) << 40) / std::max<std::uint64_t>(m, 1))
    throw CorruptionError("MOBS header: implausible stack size");

  ImageStack stack;
  stack.height = static_cast<int>(height);
  stack.width = static_cast<int>(width);
  stack.data.resize(static_cast<Index>(n), static_cast<Index>(m));
  std::vector<unsigned char> row_buf(static_cast<std::size_t>(m) * 8);
  for (std::uint64_t i = 0; i < n; ++i) {
    read_exact(in, row_buf.data(), row_buf.size(), "pixel payload");
    for (std::uint64_t j = 0; j < m; ++j)
      stack.data(static_cast<Index>(i), static_cast<Index>(j)) =
          unpack_f64(row_buf.data() + 8 * j);
  }
  std::vector<unsigned char> label_buf(static_cast<std::size_t>(n));
  read_exact(in, label_buf.data(), label_buf.size(), "labels");
  stack.labels.resize(static_cast<std::size_t>(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    if (label_buf[i] > 1)
      throw ValidationError("MOBS labels: byte at index " + std::to_string(i) +
                            " is " + std::to_string(int(label_buf[i])) +
                            ", expected 0 or 1");
    stack.labels[i] = label_buf[i];
  }
  return stack;
}

ImageStack read_image_stack(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  return read_image_stack(in);
}

// ---------------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------------

ImageStack channels_to_stack(const ChannelMatrix& channels, int height,
                             int width) {
  validate_channels(channels);
  require(static_cast<Index>(height) * static_cast<Index>(width) ==
              channels.pixels(),
          "channels_to_stack: height * width does not match channel length");
  ImageStack stack;
  stack.data = channels.rows;
  stack.labels.assign(static_cast<std::size_t>(channels.count()), 0);
  stack.height = height;
  stack.width = width;
  return stack;
}

ChannelMatrix stack_to_channels(const ImageStack& stack) {
  validate_stack(stack);
  return make_channel_matrix(stack.data);
}

ImageStack signal_to_stack(const SignalImage& signal) {
  require(signal.height > 0 && signal.width > 0,
          "signal image: height and width must be positive");
  require(signal.pixels.size() == static_cast<Index>(signal.height) *
                                      static_cast<Index>(signal.width),
          "signal image: pixel count does not match dimensions");
  ImageStack stack;
  stack.data = signal.pixels.transpose();
  stack.labels.assign(1, 0);
  stack.height = signal.height;
  stack.width = signal.width;
  return stack;
}

SignalImage stack_to_signal(const ImageStack& stack) {
  validate_stack(stack);
  require(stack.count() == 1, "stack_to_signal: expected exactly one image");
  SignalImage signal;
  signal.pixels = stack.data.row(0).transpose();
  signal.height = stack.height;
  signal.width = stack.width;
  return signal;
}

void write_matrix_csv(std::ostream& out, const Matrix& m) {
  std::ostringstream line;
  line.precision(17);
  for (Index r = 0; r < m.rows(); ++r) {
    line.str("");
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) line << ',';
      line << m(r, c);
    }
    line << '\n';
    out << line.str();
  }
  if (!out) throw IoError("CSV write: stream failure");
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_matrix_csv(out, m);
}

}  // namespace mobs
