#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "icl/errors.hpp"
#include "icl/xcli/config.hpp"
#include "icl/xcli/gradsuite.hpp"
#include "icl/xcli/plot.hpp"
#include "icl/xcli/presets.hpp"
#include "icl/xcli/runner.hpp"

namespace {

using namespace icl;
using namespace icl::xcli;

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;
constexpr int kCheckFailed = 3;

nlohmann::json load_target(const std::string& target) {
  if (auto p = find_preset(target)) return p->config;
  std::ifstream in(target);
  if (!in) throw FormatError(target + ": not a preset name and not a readable file");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(target + ": " + e.what());
  }
}

int cmd_run(const std::string& target, const std::string& out, std::size_t threads, bool dry_run, bool quiet) {
  const auto config = config_from_json(load_target(target));
  if (dry_run) {
    std::cout << to_json(config).dump(2) << '\n';
    return kOk;
  }
  RunOptions opts;
  opts.out_dir = out.empty() ? default_output_root() / config.name : std::filesystem::path(out);
  if (threads > 0) opts.threads = threads;
  if (!quiet) opts.log = [](const std::string& s) { std::cerr << s << std::endl; };
  const auto result = run_experiment(config, opts);
  std::cout << result.dir.string() << '\n';
  if (result.partial) {
    std::cerr << "run incomplete: " << result.error << '\n';
    return kRuntime;
  }
  return kOk;
}

int cmd_gradcheck(std::size_t points, const std::string& corrupt) {
  const auto report = run_grad_suite(points, 1e-5, corrupt.empty() ? std::nullopt : std::optional(corrupt));
  for (const auto& e : report.entries) {
    std::printf("%s %-18s points=%zu max_rel_error=%.3e\n", e.passed ? "PASS" : "FAIL", e.name.c_str(), e.points,
                e.max_rel_error);
  }
  std::printf("%s: %zu checks\n", report.passed() ? "all passed" : "FAILED", report.entries.size());
  return report.passed() ? kOk : kCheckFailed;
}

int cmd_plot(const std::string& csv, const std::string& axis, const std::vector<std::string>& families,
             const std::string& out) {
  PlotOptions opts;
  if (axis == "N") opts.axis = PlotAxis::N;
  else if (axis == "T") opts.axis = PlotAxis::T;
  opts.families = families;
  opts.out_dir = out.empty() ? std::filesystem::path(csv).parent_path() / "plots" : std::filesystem::path(out);
  for (const auto& f : plot_results(csv, opts)) std::cout << f.string() << '\n';
  return kOk;
}

int cmd_list(const std::string& show) {
  if (!show.empty()) {
    const auto p = find_preset(show);
    if (!p) throw FormatError("unknown preset '" + show + "'");
    std::cout << p->config.dump(2) << '\n';
    return kOk;
  }
  for (const auto& p : presets()) std::printf("%-24s %s\n", p.name.c_str(), p.summary.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"In-context learning lab: train, evaluate and plot context and task scaling"};
  app.require_subcommand(1);

  std::string target, out;
  std::size_t threads = 0;
  bool dry_run = false, quiet = false;
  auto* run = app.add_subcommand("run", "Run a preset or a JSON config file");
  run->add_option("config", target, "Preset name or config path")->required();
  run->add_option("--out", out, "Result directory (default: $ICL_OUTPUT_ROOT/<name>, else runs/<name>)");
  run->add_option("--threads", threads, "Worker threads (overrides the config)");
  run->add_flag("--dry-run", dry_run, "Print the resolved config and exit");
  run->add_flag("--quiet", quiet, "No progress lines");

  std::size_t points = 10;
  std::string corrupt;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op and model");
  grad->add_option("--points", points, "Random points per check")->check(CLI::PositiveNumber);
  grad->add_option("--corrupt", corrupt, "Break the backward rule of one check (negative control)");

  std::string csv, axis, plot_out;
  std::vector<std::string> families;
  auto* plot = app.add_subcommand("plot", "Render SVG curves and tidy CSVs from a results CSV");
  plot->add_option("csv", csv, "results.csv")->required();
  plot->add_option("--x", axis, "Horizontal axis")->check(CLI::IsMember({"N", "T"}));
  plot->add_option("--family", families, "Families to plot (default: all)");
  plot->add_option("--out", plot_out, "Output directory (default: <csv dir>/plots)");

  std::string show;
  auto* list = app.add_subcommand("list-presets", "List built-in presets");
  list->add_option("--show", show, "Print one preset's config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*run) return cmd_run(target, out, threads, dry_run, quiet);
    if (*grad) {
      if (!corrupt.empty()) {
        const auto names = grad_suite_names();
        if (std::find(names.begin(), names.end(), corrupt) == names.end()) {
          throw FormatError("--corrupt: unknown check '" + corrupt + "'");
        }
      }
      return cmd_gradcheck(points, corrupt);
    }
    if (*plot) return cmd_plot(csv, axis, families, plot_out);
    if (*list) return cmd_list(show);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kOk;
}
