#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "mobs/core.hpp"

using namespace mobs;

namespace {

ImageStack random_stack(Index n, int h, int w, std::uint64_t seed) {
  GaussianSampler sampler(seed);
  Matrix data(n, Index(h) * w);
  sampler.fill_rowmajor(data);
  std::vector<std::uint8_t> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i)
    labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i % 2);
  return make_image_stack(std::move(data), std::move(labels), h, w);
}

}  // namespace

TEST_CASE("stack serialization length is header + payload + labels") {
  const ImageStack stack = random_stack(2, 2, 2, 1);
  std::ostringstream out(std::ios::binary);
  write_image_stack(out, stack);
  // 32-byte header, 2 * 4 doubles, 2 label bytes.
  CHECK(out.str().size() == 32 + 2 * 4 * 8 + 2);
  CHECK(kMobsHeaderBytes == 32);
}

TEST_CASE("header layout: magic, version, counts, dtype") {
  const ImageStack stack = random_stack(3, 2, 5, 2);
  std::ostringstream out(std::ios::binary);
  write_image_stack(out, stack);
  const std::string bytes = out.str();
  CHECK(bytes.compare(0, 4, "MOBS") == 0);
  const auto u32at = [&](std::size_t off) {
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
  };
  CHECK(u32at(4) == 1);       // version
  CHECK(u32at(16) == 2);      // height
  CHECK(u32at(20) == 5);      // width
  CHECK(u32at(24) == 8);      // dtype tag: 8-byte float
  CHECK(u32at(28) == 0);      // reserved zeros
  std::uint64_t n;
  std::memcpy(&n, bytes.data() + 8, 8);
  CHECK(n == 3);
}

TEST_CASE("round trip is bitwise") {
  const ImageStack stack = random_stack(100, 8, 8, 3);
  std::stringstream io(std::ios::in | std::ios::out | std::ios::binary);
  write_image_stack(io, stack);
  const ImageStack back = read_image_stack(io);
  CHECK(back.height == stack.height);
  CHECK(back.width == stack.width);
  CHECK(back.labels == stack.labels);
  REQUIRE(back.data.rows() == stack.data.rows());
  CHECK((back.data.array() == stack.data.array()).all());
}

TEST_CASE("file round trip") {
  const auto path = std::filesystem::temp_directory_path() / "mobs_core_rt.mobs";
  const ImageStack stack = random_stack(7, 3, 4, 4);
  write_image_stack(path, stack);
  const ImageStack back = read_image_stack(path);
  CHECK((back.data.array() == stack.data.array()).all());
  CHECK(back.labels == stack.labels);
  std::filesystem::remove(path);
}

TEST_CASE("empty stack is rejected") {
  ImageStack stack;
  stack.height = 2;
  stack.width = 2;
  stack.data.resize(0, 4);
  std::ostringstream out;
  CHECK_THROWS_AS(write_image_stack(out, stack), ValidationError);
}

TEST_CASE("bad magic is a format error") {
  const ImageStack stack = random_stack(2, 2, 2, 5);
  std::ostringstream out(std::ios::binary);
  write_image_stack(out, stack);
  std::string bytes = out.str();
  bytes[0] = 'X';
  bytes[1] = 'X';
  std::istringstream in(bytes, std::ios::binary);
  CHECK_THROWS_AS(read_image_stack(in), FormatError);
}

TEST_CASE("label byte outside {0,1} is a validation error") {
  const ImageStack stack = random_stack(2, 2, 2, 6);
  std::ostringstream out(std::ios::binary);
  write_image_stack(out, stack);
  std::string bytes = out.str();
  bytes[bytes.size() - 1] = 7;
  std::istringstream in(bytes, std::ios::binary);
  CHECK_THROWS_AS(read_image_stack(in), ValidationError);
}

TEST_CASE("truncated payload is a corruption error") {
  const ImageStack stack = random_stack(4, 4, 4, 7);
  std::ostringstream out(std::ios::binary);
  write_image_stack(out, stack);
  std::string bytes = out.str();
  bytes.resize(bytes.size() - 40);
  std::istringstream in(bytes, std::ios::binary);
  CHECK_THROWS_AS(read_image_stack(in), CorruptionError);
}

TEST_CASE("stack validation rejects inconsistent shapes and labels") {
  Matrix data = Matrix::Zero(2, 4);
  CHECK_THROWS_AS(
      make_image_stack(data, std::vector<std::uint8_t>{0, 1}, 2, 3),
      ValidationError);  // 2*3 != 4
  CHECK_THROWS_AS(make_image_stack(data, std::vector<std::uint8_t>{0}, 2, 2),
                  ValidationError);  // label count
  CHECK_THROWS_AS(
      make_image_stack(data, std::vector<std::uint8_t>{0, 2}, 2, 2),
      ValidationError);  // label value
  Matrix bad = data;
  bad(1, 2) = std::numeric_limits<Scalar>::quiet_NaN();
  CHECK_THROWS_AS(
      make_image_stack(bad, std::vector<std::uint8_t>{0, 1}, 2, 2),
      ValidationError);
}

TEST_CASE("split by label partitions and preserves order") {
  const ImageStack stack = random_stack(9, 2, 2, 8);
  const auto [absent, present] = split_by_label(stack);
  CHECK(absent.count() + present.count() == stack.count());
  CHECK(absent.count() == 5);  // labels alternate starting at 0
  for (auto b : absent.labels) CHECK(b == 0);
  for (auto b : present.labels) CHECK(b == 1);
  // Relative order preserved: row k of `absent` is input row 2k.
  for (Index i = 0; i < absent.count(); ++i)
    CHECK((absent.data.row(i).array() == stack.data.row(2 * i).array()).all());
}

TEST_CASE("channel and signal stack conversions round trip") {
  Matrix rows(3, 6);
  GaussianSampler sampler(9);
  sampler.fill_rowmajor(rows);
  const ChannelMatrix channels = make_channel_matrix(rows);
  const ImageStack as_stack = channels_to_stack(channels, 2, 3);
  CHECK(as_stack.count() == 3);
  const ChannelMatrix back = stack_to_channels(as_stack);
  CHECK((back.rows.array() == channels.rows.array()).all());

  SignalImage signal;
  signal.height = 2;
  signal.width = 3;
  signal.pixels = rows.row(0);
  const SignalImage sig_back = stack_to_signal(signal_to_stack(signal));
  CHECK((sig_back.pixels.array() == signal.pixels.array()).all());
}

TEST_CASE("zero channel rows are rejected") {
  Matrix rows = Matrix::Ones(2, 4);
  rows.row(1).setZero();
  CHECK_THROWS_AS(make_channel_matrix(rows), ValidationError);
}

TEST_CASE("derived seeds are deterministic and spread") {
  CHECK(derive_seed(42, 1) == derive_seed(42, 1));
  CHECK(derive_seed(42, 1) != derive_seed(42, 2));
  CHECK(derive_seed(42, 1) != derive_seed(43, 1));
  // Consecutive streams should not collide over a modest range.
  std::vector<std::uint64_t> seen;
  for (std::uint64_t s = 0; s < 1000; ++s) seen.push_back(derive_seed(7, s));
  std::sort(seen.begin(), seen.end());
  CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
}

TEST_CASE("gaussian sampler has unit moments") {
  GaussianSampler sampler(123);
  const Index n = 200000;
  double sum = 0.0, sq = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double x = sampler.next();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::abs(mean) < 5.0 / std::sqrt(double(n)));
  CHECK(std::abs(var - 1.0) < 5.0 * std::sqrt(2.0 / double(n)));
}

TEST_CASE("matrix csv writer emits full precision") {
  Matrix m(1, 2);
  m << 0.1, 1.0 / 3.0;
  std::ostringstream out;
  write_matrix_csv(out, m);
  const std::string text = out.str();
  Matrix parsed(1, 2);
  std::sscanf(text.c_str(), "%lf,%lf", &parsed(0, 0), &parsed(0, 1));
  CHECK(parsed(0, 0) == m(0, 0));  // 17 significant digits round-trip
  CHECK(parsed(0, 1) == m(0, 1));
}
