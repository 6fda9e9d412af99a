#include "mobs/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>

namespace mobs {
namespace {

namespace fs = std::filesystem;

// Seed-stream tags: every dataset a run touches draws from
// derive_seed(master_seed, tag), so any split can be regenerated alone.
constexpr std::uint64_t kObserverBackgroundStream = 1;
constexpr std::uint64_t kTestBackgroundStream = 2;
constexpr std::uint64_t kCmdBackgroundStream = 3;
constexpr std::uint64_t kRoiShuffleStream = 50;
constexpr std::uint64_t kObserverNoiseStream = 11;
constexpr std::uint64_t kTestNoiseStream = 12;
constexpr std::uint64_t kTrainBackgroundStreamBase = 100;
constexpr std::uint64_t kTrainNoiseStreamBase = 200;
constexpr std::uint64_t kBootstrapStream = 9000;

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> items;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

double parse_double(const std::string& value, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw ConfigError(where + ": '" + value + "' is not a number");
  }
  if (used != value.size())
    throw ConfigError(where + ": trailing characters in '" + value + "'");
  return v;
}

long long parse_int(const std::string& value, const std::string& where) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(value, &used);
  } catch (const std::exception&) {
    throw ConfigError(where + ": '" + value + "' is not an integer");
  }
  if (used != value.size())
    throw ConfigError(where + ": trailing characters in '" + value + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& value, const std::string& where) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(value, &used);
  } catch (const std::exception&) {
    throw ConfigError(where + ": '" + value + "' is not an unsigned integer");
  }
  if (used != value.size())
    throw ConfigError(where + ": trailing characters in '" + value + "'");
  return v;
}

bool parse_bool(const std::string& value, const std::string& where) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(where + ": expected true/false, got '" + value + "'");
}

Method parse_method(const std::string& name, const std::string& where) {
  if (name == "lgrad") return Method::Lgrad;
  if (name == "lgrad_cmd") return Method::LgradCmd;
  if (name == "pls") return Method::Pls;
  if (name == "ho_cmd") return Method::HoCmd;
  if (name == "rho") return Method::Rho;
  throw ConfigError(where + ": unknown method '" + name + "'");
}

std::string fmt(double v, const char* spec = "%.12g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    out += c == '\n' ? ' ' : c;
  }
  out += '"';
  return out;
}

void validate_experiment_config(const ExperimentConfig& config) {
  const auto positive = [](Index v, const char* what) {
    if (v < 1)
      throw ConfigError(std::string(what) + " must be positive, got " +
                        std::to_string(v));
  };
  if (config.methods.empty())
    throw ConfigError("experiment.methods: at least one method is required");
  if (config.seeds.empty())
    throw ConfigError("experiment.seeds: at least one seed is required");
  if (config.channel_train_sizes.empty())
    throw ConfigError("experiment.channel_train_sizes: list is empty");
  if (config.channel_counts.empty())
    throw ConfigError("experiment.channel_counts: list is empty");
  for (Index v : config.channel_train_sizes)
    positive(v, "experiment.channel_train_sizes entries");
  for (Index v : config.channel_counts)
    positive(v, "experiment.channel_counts entries");
  positive(config.observer_train_size, "experiment.observer_train_size");
  positive(config.test_size, "experiment.test_size");
  positive(config.cmd_backgrounds, "experiment.cmd_backgrounds");
  if (config.bootstrap_resamples < 100)
    throw ConfigError("experiment.bootstrap_resamples must be >= 100");
  if (!(config.fraction_present >= 0.0 && config.fraction_present <= 1.0))
    throw ConfigError("experiment.fraction_present must be in [0, 1]");
  if (config.task == TaskKind::RoiDirectory && config.roi_path.empty())
    throw ConfigError("roi.path is required when task = roi_directory");
  if (config.task == TaskKind::MvnLumpy &&
      (config.height < 1 || config.width < 1))
    throw ConfigError("phantom.height and phantom.width must be positive");
  if (!(config.signal_sigma > 0.0))
    throw ConfigError("signal.sigma must be > 0");
  if (config.amplitude == 0.0) throw ConfigError("signal.amplitude is zero");
  if (!(config.sigma_n >= 0.0)) throw ConfigError("noise.sigma_n must be >= 0");
  if (!(config.ridge >= 0.0)) throw ConfigError("observers.ridge must be >= 0");
  if (!(config.rank_tol > 0.0 && config.rank_tol <= 1.0))
    throw ConfigError("observers.rank_tol must be in (0, 1]");
  if (!(config.dependence_tol >= 0.0))
    throw ConfigError("observers.dependence_tol must be >= 0");
}

}  // namespace

const char* to_string(Method method) {
  switch (method) {
    case Method::Lgrad:
      return "lgrad";
    case Method::LgradCmd:
      return "lgrad_cmd";
    case Method::Pls:
      return "pls";
    case Method::HoCmd:
      return "ho_cmd";
    case Method::Rho:
      return "rho";
  }
  return "unknown";
}

ExperimentConfig default_experiment_config() { return ExperimentConfig{}; }

ExperimentConfig parse_experiment_config(std::istream& in) {
  ExperimentConfig config = default_experiment_config();
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#' || text[0] == ';') continue;
    if (text.front() == '[') {
      if (text.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": unterminated section header");
      section = trim(text.substr(1, text.size() - 2));
      if (section != "experiment" && section != "phantom" &&
          section != "roi" && section != "signal" && section != "noise" &&
          section != "observers")
        throw ConfigError("line " + std::to_string(lineno) +
                          ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value, got '" + text + "'");
    const std::string key = trim(text.substr(0, eq));
    const std::string value = trim(text.substr(eq + 1));
    const std::string where = "[" + section + "] " + key;
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) +
                        ": key '" + key + "' outside any section");

    if (section == "experiment") {
      if (key == "task") {
        if (value == "mvn_lumpy")
          config.task = TaskKind::MvnLumpy;
        else if (value == "roi_directory")
          config.task = TaskKind::RoiDirectory;
        else
          throw ConfigError(where + ": expected mvn_lumpy or roi_directory");
      } else if (key == "methods") {
        config.methods.clear();
        for (const auto& item : split_list(value))
          config.methods.push_back(parse_method(item, where));
      } else if (key == "channel_train_sizes") {
        config.channel_train_sizes.clear();
        for (const auto& item : split_list(value))
          config.channel_train_sizes.push_back(
              static_cast<Index>(parse_int(item, where)));
      } else if (key == "channel_counts") {
        config.channel_counts.clear();
        for (const auto& item : split_list(value))
          config.channel_counts.push_back(
              static_cast<Index>(parse_int(item, where)));
      } else if (key == "seeds") {
        config.seeds.clear();
        for (const auto& item : split_list(value))
          config.seeds.push_back(parse_u64(item, where));
      } else if (key == "observer_train_size") {
        config.observer_train_size =
            static_cast<Index>(parse_int(value, where));
      } else if (key == "test_size") {
        config.test_size = static_cast<Index>(parse_int(value, where));
      } else if (key == "cmd_backgrounds") {
        config.cmd_backgrounds = static_cast<Index>(parse_int(value, where));
      } else if (key == "fraction_present") {
        config.fraction_present = parse_double(value, where);
      } else if (key == "reuse_channel_train_for_observer") {
        config.reuse_channel_train_for_observer = parse_bool(value, where);
      } else if (key == "bootstrap_resamples") {
        config.bootstrap_resamples =
            static_cast<Index>(parse_int(value, where));
      } else if (key == "output_dir") {
        config.output_dir = value;
      } else {
        throw ConfigError(where + ": unknown key");
      }
    } else if (section == "phantom") {
      if (key == "height")
        config.height = static_cast<int>(parse_int(value, where));
      else if (key == "width")
        config.width = static_cast<int>(parse_int(value, where));
      else if (key == "dc_offset")
        config.dc_offset = parse_double(value, where);
      else if (key == "kernel_sigma")
        config.kernel_sigma = parse_double(value, where);
      else if (key == "field_magnitude")
        config.field_magnitude = parse_double(value, where);
      else
        throw ConfigError(where + ": unknown key");
    } else if (section == "roi") {
      if (key == "path")
        config.roi_path = value;
      else
        throw ConfigError(where + ": unknown key");
    } else if (section == "signal") {
      if (key == "center_row")
        config.center_row = parse_double(value, where);
      else if (key == "center_col")
        config.center_col = parse_double(value, where);
      else if (key == "sigma")
        config.signal_sigma = parse_double(value, where);
      else if (key == "amplitude")
        config.amplitude = parse_double(value, where);
      else
        throw ConfigError(where + ": unknown key");
    } else if (section == "noise") {
      if (key == "sigma_n")
        config.sigma_n = parse_double(value, where);
      else
        throw ConfigError(where + ": unknown key");
    } else if (section == "observers") {
      if (key == "ridge")
        config.ridge = parse_double(value, where);
      else if (key == "rank_tol")
        config.rank_tol = parse_double(value, where);
      else if (key == "dependence_tol")
        config.dependence_tol = parse_double(value, where);
      else
        throw ConfigError(where + ": unknown key");
    }
  }
  validate_experiment_config(config);
  return config;
}

ExperimentConfig parse_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  return parse_experiment_config(in);
}

// ---------------------------------------------------------------------------
// PGM + montage
// ---------------------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  if (image.rows() < 1 || image.cols() < 1)
    throw ValidationError("write_pgm: empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
  // PGM is row-major top to bottom; Eigen default storage is col-major.
  std::vector<char> row(static_cast<std::size_t>(image.cols()));
  for (Index r = 0; r < image.rows(); ++r) {
    for (Index c = 0; c < image.cols(); ++c)
      row[static_cast<std::size_t>(c)] = static_cast<char>(image(r, c));
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("PGM write failed: " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw FormatError("read_pgm: expected P5, got " + magic);
  long long w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w < 1 || h < 1 || maxval != 255)
    throw FormatError("read_pgm: bad header in " + path.string());
  in.get();  // single whitespace after maxval
  GrayImage image(h, w);
  std::vector<char> row(static_cast<std::size_t>(w));
  for (long long r = 0; r < h; ++r) {
    in.read(row.data(), w);
    if (in.gcount() != w)
      throw CorruptionError("read_pgm: truncated pixel data");
    for (long long c = 0; c < w; ++c)
      image(r, c) = static_cast<std::uint8_t>(row[static_cast<std::size_t>(c)]);
  }
  return image;
}

void emit_channel_montage(const ChannelMatrix& channels, int height,
                          int width, const std::filesystem::path& path) {
  validate_channels(channels);
  if (static_cast<Index>(height) * static_cast<Index>(width) !=
      channels.pixels())
    throw ValidationError(
        "emit_channel_montage: channels of length " +
        std::to_string(channels.pixels()) + " do not reshape to " +
        std::to_string(height) + "x" + std::to_string(width));

  const Index d = channels.count();
  const auto cols = static_cast<Index>(
      std::ceil(std::sqrt(static_cast<double>(d))));
  const Index rows = (d + cols - 1) / cols;
  const Index canvas_h = rows * height + (rows - 1);
  const Index canvas_w = cols * width + (cols - 1);
  GrayImage canvas =
      GrayImage::Constant(canvas_h, canvas_w, 255);  // separators stay white

  for (Index k = 0; k < rows * cols; ++k) {
    const Index tr = (k / cols) * (height + 1);
    const Index tc = (k % cols) * (width + 1);
    if (k >= d) {
      canvas.block(tr, tc, height, width).setConstant(128);
      continue;
    }
    const auto row = channels.rows.row(k);
    const Scalar lo = row.minCoeff();
    const Scalar hi = row.maxCoeff();
    const Scalar range = hi - lo;
    for (Index r = 0; r < height; ++r) {
      for (Index c = 0; c < width; ++c) {
        const Scalar v = row[r * width + c];
        const double unit = range > 0.0 ? (v - lo) / range : 0.5;
        canvas(tr + r, tc + c) =
            static_cast<std::uint8_t>(std::llround(unit * 255.0));
      }
    }
  }
  write_pgm(path, canvas);
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

namespace {

ImageStack take_rows(const ImageStack& pool, const std::vector<Index>& order,
                     Index begin, Index count) {
  ImageStack out;
  out.height = pool.height;
  out.width = pool.width;
  out.data.resize(count, pool.pixels());
  out.labels.assign(static_cast<std::size_t>(count), 0);
  for (Index i = 0; i < count; ++i)
    out.data.row(i) = pool.data.row(order[static_cast<std::size_t>(begin + i)]);
  return out;
}

// Shared context for one master seed.
struct SeedData {
  std::uint64_t seed = 0;
  ImageStack test;
  std::optional<ImageStack> observer;  // absent when reusing channel train
  std::vector<Index> roi_order;        // ROI task: shuffled pool indices
  Index roi_train_base = 0;            // first pool slot for train segments
};

// Per-(seed, train size) data: the noisy labeled training stack plus the
// noiseless backgrounds underneath it.
struct SizedData {
  ImageStack train;
  ImageStack backgrounds;
};

class DataSource {
 public:
  DataSource(const ExperimentConfig& config, const ImageStack* roi_pool,
             const SignalImage& signal)
      : config_(config), roi_pool_(roi_pool), signal_(signal) {}

  SeedData prepare_seed(std::uint64_t seed) const {
    SeedData data;
    data.seed = seed;
    const bool need_observer = !config_.reuse_channel_train_for_observer;
    if (config_.task == TaskKind::MvnLumpy) {
      data.test = assemble_dataset(
          backgrounds(seed, kTestBackgroundStream, config_.test_size),
          signal_, {config_.sigma_n, derive_seed(seed, kTestNoiseStream)},
          config_.fraction_present);
      if (need_observer)
        data.observer = assemble_dataset(
            backgrounds(seed, kObserverBackgroundStream,
                        config_.observer_train_size),
            signal_, {config_.sigma_n, derive_seed(seed, kObserverNoiseStream)},
            config_.fraction_present);
      return data;
    }

    const Index pool_n = roi_pool_->count();
    data.roi_order.resize(static_cast<std::size_t>(pool_n));
    std::iota(data.roi_order.begin(), data.roi_order.end(), Index{0});
    std::mt19937_64 shuffler(derive_seed(seed, kRoiShuffleStream));
    for (Index i = pool_n - 1; i > 0; --i) {
      const auto j = static_cast<Index>(
          uniform_below(shuffler, static_cast<std::uint64_t>(i) + 1));
      std::swap(data.roi_order[static_cast<std::size_t>(i)],
                data.roi_order[static_cast<std::size_t>(j)]);
    }
    const Index obs = need_observer ? config_.observer_train_size : 0;
    if (pool_n < config_.test_size + obs)
      throw InsufficientDataError(
          "roi pool has " + std::to_string(pool_n) +
          " images; test + observer splits need " +
          std::to_string(config_.test_size + obs));
    data.test = assemble_dataset(
        take_rows(*roi_pool_, data.roi_order, 0, config_.test_size), signal_,
        {config_.sigma_n, derive_seed(seed, kTestNoiseStream)},
        config_.fraction_present);
    if (need_observer)
      data.observer = assemble_dataset(
          take_rows(*roi_pool_, data.roi_order, config_.test_size, obs),
          signal_,
          {config_.sigma_n, derive_seed(seed, kObserverNoiseStream)},
          config_.fraction_present);
    data.roi_train_base = config_.test_size + obs;
    return data;
  }

  SizedData prepare_size(const SeedData& seed_data, std::size_t size_index) const {
    const Index size = config_.channel_train_sizes[size_index];
    SizedData data;
    if (config_.task == TaskKind::MvnLumpy) {
      data.backgrounds = backgrounds(
          seed_data.seed, kTrainBackgroundStreamBase + size_index, size);
    } else {
      if (seed_data.roi_train_base + size > roi_pool_->count())
        throw InsufficientDataError(
            "roi pool exhausted: training size " + std::to_string(size) +
            " needs pool slots beyond " +
            std::to_string(roi_pool_->count()));
      data.backgrounds = take_rows(*roi_pool_, seed_data.roi_order,
                                   seed_data.roi_train_base, size);
    }
    data.train = assemble_dataset(
        data.backgrounds, signal_,
        {config_.sigma_n,
         derive_seed(seed_data.seed, kTrainNoiseStreamBase + size_index)},
        config_.fraction_present);
    return data;
  }

  // Noiseless reference backgrounds for the decomposition-based observer.
  ImageStack prepare_cmd_backgrounds(const SeedData& seed_data) const {
    if (config_.task == TaskKind::MvnLumpy)
      return backgrounds(seed_data.seed, kCmdBackgroundStream,
                         config_.cmd_backgrounds);
    const Index max_train = *std::max_element(
        config_.channel_train_sizes.begin(), config_.channel_train_sizes.end());
    const Index begin = seed_data.roi_train_base + max_train;
    if (begin + config_.cmd_backgrounds > roi_pool_->count())
      throw InsufficientDataError(
          "roi pool exhausted: reference backgrounds need " +
          std::to_string(config_.cmd_backgrounds) + " slots past " +
          std::to_string(begin));
    return take_rows(*roi_pool_, seed_data.roi_order, begin,
                     config_.cmd_backgrounds);
  }

 private:
  ImageStack backgrounds(std::uint64_t seed, std::uint64_t stream,
                         Index count) const {
    MvnLumpyConfig mvn;
    mvn.height = config_.height;
    mvn.width = config_.width;
    mvn.dc_offset = config_.dc_offset;
    mvn.kernel_sigma = config_.kernel_sigma;
    mvn.field_magnitude = config_.field_magnitude;
    mvn.seed = derive_seed(seed, stream);
    return generate_mvn_lumpy(mvn, count);
  }

  const ExperimentConfig& config_;
  const ImageStack* roi_pool_;
  const SignalImage& signal_;
};

std::uint64_t bootstrap_seed(std::uint64_t seed, std::size_t method_index,
                             std::size_t size_index,
                             std::size_t count_index) {
  const std::uint64_t grid_id =
      (static_cast<std::uint64_t>(method_index) * 4096 + size_index) * 4096 +
      count_index;
  return derive_seed(derive_seed(seed, kBootstrapStream), grid_id);
}

const char kPlotScript[] = R"PY(#!/usr/bin/env python3
"""Plots results.csv produced by the experiment runner.

Usage: python3 plot_results.py [results.csv [out_prefix]]

Emits <out_prefix>_vs_train.png (AUC against training-set size at the
largest channel count) and <out_prefix>_vs_channels.png (AUC against
channel count at the largest training size), mean over seeds with the
bootstrap interval of the first seed as an error band.
"""
import collections
import csv
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "results.csv"
prefix = sys.argv[2] if len(sys.argv) > 2 else "results"

rows = []
with open(path) as fh:
    for row in csv.DictReader(fh):
        rows.append(row)

def collect(fixed, sweep):
    by = collections.defaultdict(lambda: collections.defaultdict(list))
    for r in rows:
        by[r["method"]][int(r[sweep])].append(
            (float(r["auc"]), float(r["auc_lo"]), float(r["auc_hi"])))
    return by

def draw(sweep, fname, xlabel):
    by = collect(None, sweep)
    fig, ax = plt.subplots(figsize=(6, 4))
    for method, series in sorted(by.items()):
        xs = sorted(series)
        mean = [sum(v[0] for v in series[x]) / len(series[x]) for x in xs]
        lo = [min(v[1] for v in series[x]) for x in xs]
        hi = [max(v[2] for v in series[x]) for x in xs]
        ax.plot(xs, mean, marker="o", label=method)
        ax.fill_between(xs, lo, hi, alpha=0.15)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("AUC")
    ax.legend()
    fig.tight_layout()
    fig.savefig(fname, dpi=150)

draw("num_train", prefix + "_vs_train.png", "training images")
draw("num_channels", prefix + "_vs_channels.png", "channels")
print("wrote", prefix + "_vs_train.png", "and", prefix + "_vs_channels.png")
)PY";

}  // namespace

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

RunSummary run_experiment(const ExperimentConfig& config) {
  validate_experiment_config(config);
  fs::create_directories(config.output_dir);

  ImageStack roi_pool;
  if (config.task == TaskKind::RoiDirectory)
    roi_pool = load_roi_backgrounds(config.roi_path);
  const int height =
      config.task == TaskKind::MvnLumpy ? config.height : roi_pool.height;
  const int width =
      config.task == TaskKind::MvnLumpy ? config.width : roi_pool.width;

  GaussianSignalConfig signal_config;
  signal_config.center_row =
      config.center_row < 0.0 ? (height - 1) / 2.0 : config.center_row;
  signal_config.center_col =
      config.center_col < 0.0 ? (width - 1) / 2.0 : config.center_col;
  signal_config.sigma = config.signal_sigma;
  signal_config.amplitude = config.amplitude;
  const SignalImage signal =
      render_gaussian_signal(signal_config, height, width);
  write_image_stack(config.output_dir / "signal.mobs",
                    signal_to_stack(signal));

  const DataSource source(config,
                          config.task == TaskKind::RoiDirectory ? &roi_pool
                                                                : nullptr,
                          signal);

  const Index d_max = *std::max_element(config.channel_counts.begin(),
                                        config.channel_counts.end());

  std::ofstream results(config.output_dir / "results.csv");
  if (!results)
    throw IoError("cannot write results.csv in " +
                  config.output_dir.string());
  results << "seed,method,num_train,num_channels,auc,auc_lo,auc_hi,seconds\n";

  std::vector<std::string> error_rows;
  RunSummary summary;

  const auto log_error = [&](std::uint64_t seed, Method method, Index size,
                             Index count, const std::string& message) {
    error_rows.push_back(std::to_string(seed) + "," + to_string(method) +
                         "," + std::to_string(size) + "," +
                         std::to_string(count) + "," + csv_quote(message));
    std::cerr << "grid point failed (seed " << seed << ", "
              << to_string(method) << ", train " << size << ", channels "
              << count << "): " << message << "\n";
  };

  const auto emit_row = [&](std::uint64_t seed, Method method, Index size,
                            Index count, Scalar auc, Scalar lo, Scalar hi,
                            double seconds) {
    results << seed << ',' << to_string(method) << ',' << size << ',' << count
            << ',' << fmt(auc) << ',' << fmt(lo) << ',' << fmt(hi) << ','
            << fmt(seconds, "%.6f") << '\n';
    ++summary.rows;
  };

  for (std::size_t seed_index = 0; seed_index < config.seeds.size();
       ++seed_index) {
    const std::uint64_t seed = config.seeds[seed_index];
    SeedData seed_data;
    try {
      seed_data = source.prepare_seed(seed);
    } catch (const Error& e) {
      log_error(seed, config.methods.front(), 0, 0,
                std::string("seed preparation failed: ") + e.what());
      continue;
    }

    // Size-independent methods first.
    for (std::size_t m = 0; m < config.methods.size(); ++m) {
      if (config.methods[m] != Method::HoCmd) continue;
      try {
        const auto start = std::chrono::steady_clock::now();
        const ImageStack cmd_bg = source.prepare_cmd_backgrounds(seed_data);
        const ClassStats stats = cmd_covariance_iid(cmd_bg, config.sigma_n);
        const ObserverTemplate ho =
            build_ho(to_task_stats(stats, signal), config.ridge);
        const auto stop = std::chrono::steady_clock::now();
        const ScoreSet scores = score(ho, seed_data.test);
        const RocResult roc = compute_auc(scores);
        const auto ci =
            bootstrap_auc_ci(scores, config.bootstrap_resamples,
                             bootstrap_seed(seed, m, 0, 0));
        emit_row(seed, Method::HoCmd, config.cmd_backgrounds, 0, roc.auc,
                 ci.first, ci.second,
                 std::chrono::duration<double>(stop - start).count());
      } catch (const Error& e) {
        log_error(seed, Method::HoCmd, config.cmd_backgrounds, 0, e.what());
      }
    }

    for (std::size_t size_index = 0;
         size_index < config.channel_train_sizes.size(); ++size_index) {
      const Index size = config.channel_train_sizes[size_index];
      SizedData sized;
      bool sized_ok = false;
      std::string sized_error;
      try {
        sized = source.prepare_size(seed_data, size_index);
        sized_ok = true;
      } catch (const Error& e) {
        sized_error = e.what();
      }
      const ImageStack& observer_train =
          config.reuse_channel_train_for_observer ? sized.train
                                                  : *seed_data.observer;

      for (std::size_t m = 0; m < config.methods.size(); ++m) {
        const Method method = config.methods[m];
        if (method == Method::HoCmd) continue;

        if (!sized_ok) {
          if (method == Method::Rho) {
            log_error(seed, method, size, 0, sized_error);
          } else {
            for (std::size_t c = 0; c < config.channel_counts.size(); ++c)
              log_error(seed, method, size, config.channel_counts[c],
                        sized_error);
          }
          continue;
        }

        if (method == Method::Rho) {
          try {
            const auto start = std::chrono::steady_clock::now();
            const ObserverTemplate rho =
                build_rho(sized.train, &signal, config.rank_tol);
            const auto stop = std::chrono::steady_clock::now();
            const ScoreSet scores = score(rho, seed_data.test);
            const RocResult roc = compute_auc(scores);
            const auto ci =
                bootstrap_auc_ci(scores, config.bootstrap_resamples,
                                 bootstrap_seed(seed, m, size_index, 0));
            emit_row(seed, method, size, 0, roc.auc, ci.first, ci.second,
                     std::chrono::duration<double>(stop - start).count());
          } catch (const Error& e) {
            log_error(seed, method, size, 0, e.what());
          }
          continue;
        }

        // Channel methods: generate once at the largest requested count,
        // evaluate every count as a prefix (both generators are
        // iterative, so channel i does not depend on how many follow).
        ChannelMatrix channels;
        double gen_seconds = 0.0;
        try {
          const auto start = std::chrono::steady_clock::now();
          switch (method) {
            case Method::Lgrad:
              channels = generate_lgrad_channels_from_samples(
                  sized.train, &signal, d_max, config.dependence_tol);
              break;
            case Method::LgradCmd:
              channels = generate_lgrad_cmd_channels(
                  sized.backgrounds, config.sigma_n, signal, d_max,
                  config.dependence_tol);
              break;
            case Method::Pls:
              channels = generate_pls_channels(sized.train, d_max);
              break;
            default:
              throw ValidationError("unexpected method");
          }
          const auto stop = std::chrono::steady_clock::now();
          gen_seconds = std::chrono::duration<double>(stop - start).count();
        } catch (const Error& e) {
          for (std::size_t c = 0; c < config.channel_counts.size(); ++c)
            log_error(seed, method, size, config.channel_counts[c], e.what());
          continue;
        }

        const std::string stem = std::string("channels_") + to_string(method) +
                                 "_n" + std::to_string(size) + "_seed" +
                                 std::to_string(seed);
        write_image_stack(config.output_dir / (stem + ".mobs"),
                          channels_to_stack(channels, height, width));
        write_matrix_csv(config.output_dir / (stem + ".csv"), channels.rows);

        // Channelize both stacks once; per-count models use the leading
        // block of the channel-domain statistics.
        Matrix v_obs, v_test;
        ClassStats stats_v;
        Vector delta_v;
        try {
          v_obs = observer_train.data * channels.rows.transpose();
          stats_v = estimate_class_stats(v_obs, observer_train.labels);
          delta_v = channels.rows * signal.pixels;
          v_test = seed_data.test.data * channels.rows.transpose();
        } catch (const Error& e) {
          for (std::size_t c = 0; c < config.channel_counts.size(); ++c)
            log_error(seed, method, size, config.channel_counts[c], e.what());
          continue;
        }
        const Matrix kv_full = 0.5 * (stats_v.k0 + stats_v.k1);

        for (std::size_t c = 0; c < config.channel_counts.size(); ++c) {
          const Index count = config.channel_counts[c];
          try {
            if (count > channels.count())
              throw InsufficientDataError(
                  "channel generation saturated at " +
                  std::to_string(channels.count()) + " channels, " +
                  std::to_string(count) + " requested");
            const Vector w_v =
                symmetric_solve(kv_full.topLeftCorner(count, count),
                                delta_v.head(count), 0.0);
            ScoreSet scores;
            scores.scores = v_test.leftCols(count) * w_v;
            scores.labels = seed_data.test.labels;
            validate_scores(scores);
            const RocResult roc = compute_auc(scores);
            const auto ci = bootstrap_auc_ci(
                scores, config.bootstrap_resamples,
                bootstrap_seed(seed, m, size_index, c));
            emit_row(seed, method, size, count, roc.auc, ci.first, ci.second,
                     gen_seconds);
          } catch (const Error& e) {
            log_error(seed, method, size, count, e.what());
          }
        }
      }
    }
  }

  results.flush();
  if (!results) throw IoError("results.csv write failed");

  if (!error_rows.empty()) {
    std::ofstream errors(config.output_dir / "errors.csv");
    errors << "seed,method,num_train,num_channels,error\n";
    for (const auto& row : error_rows) errors << row << '\n';
    summary.errors = static_cast<Index>(error_rows.size());
  }

  // Manifest: resolved parameters plus every derived stream seed, enough
  // to regenerate any grid point in isolation.
  std::ofstream manifest(config.output_dir / "manifest.txt");
  manifest << "task = "
           << (config.task == TaskKind::MvnLumpy ? "mvn_lumpy"
                                                 : "roi_directory")
           << "\n";
  if (config.task == TaskKind::MvnLumpy) {
    manifest << "phantom.height = " << height << "\n"
             << "phantom.width = " << width << "\n"
             << "phantom.dc_offset = " << fmt(config.dc_offset) << "\n"
             << "phantom.kernel_sigma = " << fmt(config.kernel_sigma) << "\n"
             << "phantom.field_magnitude = " << fmt(config.field_magnitude)
             << "\n";
  } else {
    manifest << "roi.path = " << config.roi_path.string() << "\n"
             << "roi.pool_size = " << roi_pool.count() << "\n";
  }
  manifest << "signal.center_row = " << fmt(signal_config.center_row) << "\n"
           << "signal.center_col = " << fmt(signal_config.center_col) << "\n"
           << "signal.sigma = " << fmt(signal_config.sigma) << "\n"
           << "signal.amplitude = " << fmt(signal_config.amplitude, "%.17g")
           << "\n"
           << "noise.sigma_n = " << fmt(config.sigma_n) << "\n"
           << "experiment.fraction_present = " << fmt(config.fraction_present)
           << "\n"
           << "experiment.test_size = " << config.test_size << "\n"
           << "experiment.observer_train_size = "
           << config.observer_train_size << "\n"
           << "experiment.cmd_backgrounds = " << config.cmd_backgrounds
           << "\n"
           << "experiment.reuse_channel_train_for_observer = "
           << (config.reuse_channel_train_for_observer ? "true" : "false")
           << "\n"
           << "experiment.bootstrap_resamples = "
           << config.bootstrap_resamples << "\n"
           << "observers.ridge = " << fmt(config.ridge) << "\n"
           << "observers.rank_tol = " << fmt(config.rank_tol) << "\n"
           << "observers.dependence_tol = " << fmt(config.dependence_tol)
           << "\n";
  manifest << "experiment.methods =";
  for (auto method : config.methods) manifest << ' ' << to_string(method);
  manifest << "\nexperiment.channel_train_sizes =";
  for (auto v : config.channel_train_sizes) manifest << ' ' << v;
  manifest << "\nexperiment.channel_counts =";
  for (auto v : config.channel_counts) manifest << ' ' << v;
  manifest << "\n";
  for (const std::uint64_t seed : config.seeds) {
    manifest << "[seed " << seed << "]\n";
    manifest << "stream.test.background = "
             << derive_seed(seed, kTestBackgroundStream) << "\n"
             << "stream.test.noise = " << derive_seed(seed, kTestNoiseStream)
             << "\n";
    if (!config.reuse_channel_train_for_observer)
      manifest << "stream.observer.background = "
               << derive_seed(seed, kObserverBackgroundStream) << "\n"
               << "stream.observer.noise = "
               << derive_seed(seed, kObserverNoiseStream) << "\n";
    manifest << "stream.cmd.background = "
             << derive_seed(seed, kCmdBackgroundStream) << "\n";
    if (config.task == TaskKind::RoiDirectory)
      manifest << "stream.roi.shuffle = "
               << derive_seed(seed, kRoiShuffleStream) << "\n";
    for (std::size_t k = 0; k < config.channel_train_sizes.size(); ++k)
      manifest << "stream.train" << config.channel_train_sizes[k]
               << ".background = "
               << derive_seed(seed, kTrainBackgroundStreamBase + k) << "\n"
               << "stream.train" << config.channel_train_sizes[k]
               << ".noise = " << derive_seed(seed, kTrainNoiseStreamBase + k)
               << "\n";
    for (std::size_t m = 0; m < config.methods.size(); ++m)
      for (std::size_t k = 0; k < config.channel_train_sizes.size(); ++k)
        for (std::size_t c = 0; c < config.channel_counts.size(); ++c)
          manifest << "bootstrap." << to_string(config.methods[m]) << ".n"
                   << config.channel_train_sizes[k] << ".d"
                   << config.channel_counts[c] << " = "
                   << bootstrap_seed(seed, m, k, c) << "\n";
  }
  manifest.flush();

  std::ofstream plot(config.output_dir / "plot_results.py");
  plot << kPlotScript;

  return summary;
}

void emit_datasets(const ExperimentConfig& config) {
  validate_experiment_config(config);
  fs::create_directories(config.output_dir);

  ImageStack roi_pool;
  if (config.task == TaskKind::RoiDirectory)
    roi_pool = load_roi_backgrounds(config.roi_path);
  const int height =
      config.task == TaskKind::MvnLumpy ? config.height : roi_pool.height;
  const int width =
      config.task == TaskKind::MvnLumpy ? config.width : roi_pool.width;

  GaussianSignalConfig signal_config;
  signal_config.center_row =
      config.center_row < 0.0 ? (height - 1) / 2.0 : config.center_row;
  signal_config.center_col =
      config.center_col < 0.0 ? (width - 1) / 2.0 : config.center_col;
  signal_config.sigma = config.signal_sigma;
  signal_config.amplitude = config.amplitude;
  const SignalImage signal =
      render_gaussian_signal(signal_config, height, width);
  write_image_stack(config.output_dir / "signal.mobs",
                    signal_to_stack(signal));

  const DataSource source(config,
                          config.task == TaskKind::RoiDirectory ? &roi_pool
                                                                : nullptr,
                          signal);
  for (const std::uint64_t seed : config.seeds) {
    const SeedData seed_data = source.prepare_seed(seed);
    const std::string tag = "_seed" + std::to_string(seed);
    write_image_stack(config.output_dir / ("test" + tag + ".mobs"),
                      seed_data.test);
    if (seed_data.observer)
      write_image_stack(config.output_dir / ("observer_train" + tag + ".mobs"),
                        *seed_data.observer);
    for (std::size_t k = 0; k < config.channel_train_sizes.size(); ++k) {
      const SizedData sized = source.prepare_size(seed_data, k);
      const std::string stem =
          "channel_train_n" + std::to_string(config.channel_train_sizes[k]) +
          tag;
      write_image_stack(config.output_dir / (stem + ".mobs"), sized.train);
      write_image_stack(
          config.output_dir / (stem + "_backgrounds.mobs"),
          sized.backgrounds);
    }
    write_image_stack(config.output_dir / ("cmd_backgrounds" + tag + ".mobs"),
                      source.prepare_cmd_backgrounds(seed_data));
  }
}

}  // namespace mobs
