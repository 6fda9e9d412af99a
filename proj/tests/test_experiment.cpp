#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mobs/core.hpp"
#include "mobs/experiment.hpp"

using namespace mobs;
namespace fs = std::filesystem;

namespace {

ExperimentConfig smoke_config(const fs::path& out) {
  ExperimentConfig config;
  config.height = 12;
  config.width = 12;
  config.dc_offset = 20.0;
  config.kernel_sigma = 1.5;
  config.field_magnitude = 5.0;
  config.signal_sigma = 1.2;
  config.amplitude = 4.0;
  config.sigma_n = 3.0;
  config.channel_train_sizes = {30};
  config.observer_train_size = 150;
  config.test_size = 120;
  config.cmd_backgrounds = 150;
  config.channel_counts = {2, 4};
  config.seeds = {5};
  config.methods = {Method::Lgrad, Method::Pls};
  config.bootstrap_resamples = 120;
  config.output_dir = out;
  return config;
}

// Strips the timing column, which legitimately varies between runs.
std::string results_without_seconds(const fs::path& file) {
  std::ifstream in(file);
  REQUIRE(in.good());
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    const auto cut = line.rfind(',');
    out << line.substr(0, cut) << '\n';
  }
  return out.str();
}

int count_lines(const fs::path& file) {
  std::ifstream in(file);
  int n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("empty input keeps every default") {
    std::istringstream in("");
    const ExperimentConfig config = parse_experiment_config(in);
    const ExperimentConfig defaults = default_experiment_config();
    CHECK(config.height == defaults.height);
    CHECK(config.amplitude == defaults.amplitude);
    CHECK(config.methods.size() == defaults.methods.size());
    CHECK(config.seeds == defaults.seeds);
  }
  SUBCASE("sections and lists parse") {
    std::istringstream in(
        "# comment\n"
        "[experiment]\n"
        "methods = lgrad , rho\n"
        "channel_train_sizes = 10, 20, 30\n"
        "seeds = 4, 9\n"
        "; another comment\n"
        "[signal]\n"
        "amplitude = 2.5\n"
        "[noise]\n"
        "sigma_n = 0.25\n");
    const ExperimentConfig config = parse_experiment_config(in);
    REQUIRE(config.methods.size() == 2);
    CHECK(config.methods[1] == Method::Rho);
    CHECK(config.channel_train_sizes == std::vector<Index>{10, 20, 30});
    CHECK(config.seeds == std::vector<std::uint64_t>{4, 9});
    CHECK(config.amplitude == 2.5);
    CHECK(config.sigma_n == 0.25);
  }
  SUBCASE("unknown keys fail fast") {
    std::istringstream in("[experiment]\nbogus = 1\n");
    CHECK_THROWS_AS(parse_experiment_config(in), ConfigError);
  }
  SUBCASE("unknown sections fail fast") {
    std::istringstream in("[bogus]\nx = 1\n");
    CHECK_THROWS_AS(parse_experiment_config(in), ConfigError);
  }
  SUBCASE("keys outside any section fail") {
    std::istringstream in("task = mvn_lumpy\n");
    CHECK_THROWS_AS(parse_experiment_config(in), ConfigError);
  }
  SUBCASE("malformed numbers fail") {
    std::istringstream in("[noise]\nsigma_n = three\n");
    CHECK_THROWS_AS(parse_experiment_config(in), ConfigError);
    std::istringstream in2("[noise]\nsigma_n = 1.5x\n");
    CHECK_THROWS_AS(parse_experiment_config(in2), ConfigError);
  }
  SUBCASE("unknown method names fail") {
    std::istringstream in("[experiment]\nmethods = lgrad, svd\n");
    CHECK_THROWS_AS(parse_experiment_config(in), ConfigError);
  }
  SUBCASE("empty method list fails validation") {
    std::istringstream in("[experiment]\nmethods =\n");
    CHECK_THROWS_AS(parse_experiment_config(in), ConfigError);
  }
  SUBCASE("roi task requires a path") {
    std::istringstream in("[experiment]\ntask = roi_directory\n");
    CHECK_THROWS_AS(parse_experiment_config(in), ConfigError);
  }
  SUBCASE("fraction bounds are enforced") {
    std::istringstream in("[experiment]\nfraction_present = 1.5\n");
    CHECK_THROWS_AS(parse_experiment_config(in), ConfigError);
  }
}

TEST_CASE("graymap round trip") {
  const fs::path path = fs::temp_directory_path() / "mobs_test.pgm";
  GrayImage image(3, 5);
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < 5; ++c)
      image(r, c) = static_cast<std::uint8_t>(10 * r + c);
  write_pgm(path, image);
  const GrayImage back = read_pgm(path);
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 5);
  CHECK((back.array() == image.array()).all());
  fs::remove(path);
}

TEST_CASE("montage layout") {
  const fs::path path = fs::temp_directory_path() / "mobs_montage.pgm";

  SUBCASE("nine square channels tile three by three") {
    GaussianSampler sampler(80);
    Matrix rows(9, 64 * 64);
    sampler.fill_rowmajor(rows);
    emit_channel_montage(make_channel_matrix(rows), 64, 64, path);
    const GrayImage image = read_pgm(path);
    // 3 tiles of 64 plus 2 one-pixel separators per axis.
    CHECK(image.rows() == 194);
    CHECK(image.cols() == 194);
    // Separator columns stay at the sentinel white level.
    CHECK(image(0, 64) == 255);
    CHECK(image(193, 129) == 255);
  }

  SUBCASE("constant channel renders mid-gray") {
    Matrix rows = Matrix::Constant(1, 16, 3.0);
    emit_channel_montage(make_channel_matrix(rows), 4, 4, path);
    const GrayImage image = read_pgm(path);
    REQUIRE(image.rows() == 4);
    CHECK(image(2, 2) == 128);
  }

  SUBCASE("single channel matches its own normalized dump") {
    GaussianSampler sampler(81);
    Matrix rows(1, 36);
    sampler.fill_rowmajor(rows);
    emit_channel_montage(make_channel_matrix(rows), 6, 6, path);
    const GrayImage image = read_pgm(path);
    const double lo = rows.minCoeff(), hi = rows.maxCoeff();
    for (Index r = 0; r < 6; ++r)
      for (Index c = 0; c < 6; ++c) {
        const auto expected = static_cast<std::uint8_t>(
            std::llround((rows(0, r * 6 + c) - lo) / (hi - lo) * 255.0));
        CHECK(image(r, c) == expected);
      }
  }

  SUBCASE("unfilled tiles are flat gray") {
    GaussianSampler sampler(82);
    Matrix rows(3, 16);  // 2x2 grid with one empty slot
    sampler.fill_rowmajor(rows);
    emit_channel_montage(make_channel_matrix(rows), 4, 4, path);
    const GrayImage image = read_pgm(path);
    REQUIRE(image.rows() == 9);
    CHECK(image(7, 7) == 128);  // bottom-right tile interior
  }

  SUBCASE("reshape mismatch is rejected") {
    Matrix rows = Matrix::Ones(2, 10);
    CHECK_THROWS_AS(emit_channel_montage(make_channel_matrix(rows), 3, 4, path),
                    ValidationError);
  }

  fs::remove(path);
}

TEST_CASE("experiment runner") {
  const fs::path work = fs::temp_directory_path() / "mobs_experiment_test";
  fs::remove_all(work);

  SUBCASE("grid row count and determinism") {
    const ExperimentConfig config = smoke_config(work / "a");
    const RunSummary summary = run_experiment(config);
    CHECK(summary.errors == 0);
    // |methods| x |sizes| x |counts| = 2 * 1 * 2 rows for one seed.
    CHECK(summary.rows == 4);
    CHECK(count_lines(work / "a" / "results.csv") == 5);  // header + rows
    CHECK(fs::exists(work / "a" / "manifest.txt"));
    CHECK(fs::exists(work / "a" / "plot_results.py"));
    CHECK(fs::exists(work / "a" / "signal.mobs"));
    CHECK(!fs::exists(work / "a" / "errors.csv"));

    ExperimentConfig again = config;
    again.output_dir = work / "b";
    run_experiment(again);
    CHECK(results_without_seconds(work / "a" / "results.csv") ==
          results_without_seconds(work / "b" / "results.csv"));
  }

  SUBCASE("size-independent method emits one row per seed") {
    ExperimentConfig config = smoke_config(work / "c");
    config.methods = {Method::HoCmd};
    config.seeds = {5, 6};
    const RunSummary summary = run_experiment(config);
    CHECK(summary.rows == 2);
    CHECK(summary.errors == 0);
    // No channel dumps for a channel-free method.
    bool any_dump = false;
    for (const auto& entry : fs::directory_iterator(work / "c"))
      if (entry.path().filename().string().rfind("channels_", 0) == 0)
        any_dump = true;
    CHECK(!any_dump);
    // num_train column carries the reference-background count.
    std::ifstream in(work / "c" / "results.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(row.find("ho_cmd,150,0,") != std::string::npos);
  }

  SUBCASE("infeasible grid points are logged and skipped") {
    ExperimentConfig config = smoke_config(work / "d");
    config.methods = {Method::Pls, Method::HoCmd};
    config.channel_train_sizes = {6};  // PLS cap: min(N-1, M) = 5 < 8
    config.channel_counts = {8};
    const RunSummary summary = run_experiment(config);
    CHECK(summary.rows == 1);    // the channel-free method still succeeds
    CHECK(summary.errors == 1);  // the regression baseline cannot
    CHECK(fs::exists(work / "d" / "errors.csv"));
    CHECK(count_lines(work / "d" / "errors.csv") == 2);
  }

  SUBCASE("manifest records derived streams") {
    ExperimentConfig config = smoke_config(work / "e");
    run_experiment(config);
    std::ifstream in(work / "e" / "manifest.txt");
    const std::string text((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    CHECK(text.find("[seed 5]") != std::string::npos);
    CHECK(text.find("stream.test.background = ") != std::string::npos);
    CHECK(text.find("bootstrap.lgrad.n30.d4 = ") != std::string::npos);
    CHECK(text.find("signal.amplitude = 4") != std::string::npos);
  }

  SUBCASE("dataset emission writes every split") {
    ExperimentConfig config = smoke_config(work / "f");
    emit_datasets(config);
    for (const char* name :
         {"signal.mobs", "test_seed5.mobs", "observer_train_seed5.mobs",
          "channel_train_n30_seed5.mobs",
          "channel_train_n30_seed5_backgrounds.mobs",
          "cmd_backgrounds_seed5.mobs"}) {
      CAPTURE(name);
      CHECK(fs::exists(work / "f" / name));
    }
    const ImageStack test = read_image_stack(work / "f" / "test_seed5.mobs");
    CHECK(test.count() == 120);
    CHECK(test.height == 12);
  }

  fs::remove_all(work);
}
