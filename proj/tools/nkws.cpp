// nkws: command-line driver for corpus synthesis, training, evaluation,
// sweeps, operating points and reports.
//
// Exit codes: 0 success, 1 validation error (bad config, flags or inputs),
// 2 runtime failure.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "neurokws/error.hpp"
#include "neurokws/harness/commands.hpp"

namespace {

std::vector<double> parse_list(const std::string& s, const char* what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw nkws::ValidationError(std::string(what) + ": '" + item + "' is not a number");
    }
  }
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nkws: keyword detection from neural recordings"};
  app.require_subcommand(1);
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  bool verbose = false;
  app.add_option("-c,--config", config_path, "run configuration (JSON, comments allowed)");
  app.add_option("--set", overrides, "override a config value, e.g. --set training.max_epochs=5")
      ->allow_extra_args(false);
  app.add_flag("-v,--verbose", verbose, "per-epoch progress");

  auto* synth = app.add_subcommand("synth", "generate the synthetic corpus named by corpus.path");
  auto* train = app.add_subcommand("train", "train one detector per seed");
  auto* evaluate = app.add_subcommand("evaluate", "score the evaluation partition and compute metrics");
  auto* scaling = app.add_subcommand("sweep-scaling", "training-data scaling sweep");
  std::string fractions;
  scaling->add_option("--fractions", fractions, "comma-separated fractions in (0, 1]");
  auto* offsets = app.add_subcommand("sweep-offsets", "temporal offset grid sweep");
  std::string neg, pos;
  offsets->add_option("--neg", neg, "comma-separated pre-onset buffers in seconds");
  offsets->add_option("--pos", pos, "comma-separated post-offset buffers in seconds");
  auto* keywords = app.add_subcommand("sweep-keywords", "keyword choice sweep");
  std::string keyword_list;
  keywords->add_option("--keywords", keyword_list, "comma-separated keywords, or 'auto'");
  auto* operating = app.add_subcommand("operating-points", "FA/h and recall operating points per scenario");
  std::vector<std::string> score_files;
  std::optional<std::string> fixture;
  std::optional<double> window_s;
  operating->add_option("--scores", score_files, "scores CSV files, one per seed");
  operating->add_option("--curves", fixture, "JSON file with per-seed PR curves instead of scores");
  operating->add_option("--window-s", window_s, "window length in seconds for empirical FP/h");
  auto* report = app.add_subcommand("report", "assemble report.md/report.json from existing outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  using namespace nkws::harness;
  try {
    CommandContext ctx;
    const std::optional<std::filesystem::path> path =
        config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt;
    ctx.cfg = load_run_config(path, overrides);
    ctx.verbose = verbose;
    if (*synth) cmd_synth(ctx);
    else if (*train) cmd_train(ctx);
    else if (*evaluate) cmd_evaluate(ctx);
    else if (*scaling) cmd_sweep_scaling(ctx, fractions.empty() ? std::vector<double>{} : parse_list(fractions, "--fractions"));
    else if (*offsets)
      cmd_sweep_offsets(ctx, neg.empty() ? std::vector<double>{} : parse_list(neg, "--neg"),
                        pos.empty() ? std::vector<double>{} : parse_list(pos, "--pos"));
    else if (*keywords) cmd_sweep_keywords(ctx, split_words(keyword_list));
    else if (*operating) {
      OperatingOptions opt;
      for (const auto& f : score_files) opt.scores.emplace_back(f);
      if (fixture) opt.fixture = *fixture;
      opt.window_s = window_s;
      cmd_operating_points(ctx, opt);
    } else if (*report) cmd_report(ctx);
    return 0;
  } catch (const nkws::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_validation() ? 1 : 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
