// mobs: batch front end for the model-observer toolkit.
//
// Subcommands:
//   generate  write every dataset split a config describes as MOBS files
//   run       full experiment grid -> results.csv + channel dumps + manifest
//   bench     channel-generation timing grid -> timing.csv
//   montage   render a channel stack (MOBS) to a PGM grid image
//
// Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure
// (partial outputs may exist).

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "mobs/channels.hpp"
#include "mobs/core.hpp"
#include "mobs/eval.hpp"
#include "mobs/experiment.hpp"
#include "mobs/phantom.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

mobs::ExperimentConfig load_config(const CommonOpts& opts) {
  mobs::ExperimentConfig config =
      opts.config_path.empty()
          ? mobs::default_experiment_config()
          : mobs::parse_experiment_config(
                std::filesystem::path(opts.config_path));
  if (opts.seed_set) config.seeds = {opts.seed};
  if (!opts.out_dir.empty()) config.output_dir = opts.out_dir;
  return config;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "Config file (INI sections)")
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", opts.out_dir, "Output directory (overrides config)");
  cmd->add_option("--seed", opts.seed, "Replace the config seed list")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
}

int run_bench(const mobs::ExperimentConfig& config, int repeats) {
  std::filesystem::create_directories(config.output_dir);
  std::ofstream out(config.output_dir / "timing.csv");
  if (!out) throw mobs::IoError("cannot write timing.csv");
  out << "method,num_train,num_channels,seconds,repeats\n";

  mobs::GaussianSignalConfig sig;
  sig.center_row = config.center_row < 0.0 ? (config.height - 1) / 2.0
                                           : config.center_row;
  sig.center_col = config.center_col < 0.0 ? (config.width - 1) / 2.0
                                           : config.center_col;
  sig.sigma = config.signal_sigma;
  sig.amplitude = config.amplitude;
  const mobs::SignalImage signal =
      mobs::render_gaussian_signal(sig, config.height, config.width);

  const mobs::Index d = *std::max_element(config.channel_counts.begin(),
                                          config.channel_counts.end());
  const std::uint64_t seed = config.seeds.front();
  for (std::size_t k = 0; k < config.channel_train_sizes.size(); ++k) {
    const mobs::Index n = config.channel_train_sizes[k];
    mobs::MvnLumpyConfig mvn;
    mvn.height = config.height;
    mvn.width = config.width;
    mvn.dc_offset = config.dc_offset;
    mvn.kernel_sigma = config.kernel_sigma;
    mvn.field_magnitude = config.field_magnitude;
    mvn.seed = mobs::derive_seed(seed, 100 + k);
    const mobs::ImageStack backgrounds = mobs::generate_mvn_lumpy(mvn, n);
    const mobs::ImageStack train = mobs::assemble_dataset(
        backgrounds, signal, {config.sigma_n, mobs::derive_seed(seed, 200 + k)},
        config.fraction_present);

    for (const mobs::Method method : config.methods) {
      mobs::ChannelMethod cm;
      const mobs::ImageStack* stack = &train;
      switch (method) {
        case mobs::Method::Lgrad:
          cm = mobs::ChannelMethod::Lgrad;
          break;
        case mobs::Method::LgradCmd:
          cm = mobs::ChannelMethod::LgradCmd;
          stack = &backgrounds;
          break;
        case mobs::Method::Pls:
          cm = mobs::ChannelMethod::Pls;
          break;
        default:
          continue;  // timing grid covers channel generators only
      }
      const mobs::TimingRecord record = mobs::benchmark_generation(
          cm, *stack, &signal, config.sigma_n, d, repeats);
      out << mobs::to_string(record.method) << ',' << record.num_train << ','
          << record.num_channels << ',' << record.seconds << ','
          << record.repeats << '\n';
      std::cout << mobs::to_string(record.method) << " n=" << record.num_train
                << " d=" << record.num_channels << ": " << record.seconds
                << " s\n";
    }
  }
  std::cout << "wrote " << (config.output_dir / "timing.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-observer toolkit: efficient channels, CHO/HO, AUC"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads,
                 "Eigen thread count (0 keeps the default)");

  CommonOpts generate_opts, run_opts, bench_opts;
  CLI::App* generate =
      app.add_subcommand("generate", "Write dataset splits as MOBS files");
  add_common(generate, generate_opts);
  CLI::App* run = app.add_subcommand("run", "Run the experiment grid");
  add_common(run, run_opts);
  CLI::App* bench =
      app.add_subcommand("bench", "Time channel generation over the grid");
  add_common(bench, bench_opts);
  int bench_repeats = 3;
  bench->add_option("--repeats", bench_repeats, "Timed repeats per point")
      ->check(CLI::PositiveNumber);

  std::string montage_input, montage_output = "montage.pgm";
  CLI::App* montage =
      app.add_subcommand("montage", "Render a channel MOBS stack to PGM");
  montage->add_option("input", montage_input, "Channel stack (.mobs)")
      ->required()
      ->check(CLI::ExistingFile);
  montage->add_option("--out", montage_output, "Output PGM path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // bad usage is a config error
  }

  if (threads > 0) Eigen::setNbThreads(threads);

  try {
    if (generate->parsed()) {
      mobs::emit_datasets(load_config(generate_opts));
      std::cout << "datasets written\n";
    } else if (run->parsed()) {
      const mobs::ExperimentConfig config = load_config(run_opts);
      const mobs::RunSummary summary = mobs::run_experiment(config);
      std::cout << "rows: " << summary.rows << ", errors: " << summary.errors
                << " -> " << config.output_dir.string() << "\n";
      if (summary.rows == 0 && summary.errors > 0) return 2;
    } else if (bench->parsed()) {
      return run_bench(load_config(bench_opts), bench_repeats);
    } else if (montage->parsed()) {
      const mobs::ImageStack stack =
          mobs::read_image_stack(std::filesystem::path(montage_input));
      mobs::emit_channel_montage(mobs::stack_to_channels(stack), stack.height,
                                 stack.width,
                                 std::filesystem::path(montage_output));
      std::cout << "wrote " << montage_output << "\n";
    }
  } catch (const mobs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const mobs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
