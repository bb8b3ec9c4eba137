#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "icl/trainer/trainer.hpp"

namespace icl::xcli {

enum class PlotAxis { N, T };

// Parses a results CSV; FormatError messages carry "<source>:<line>:".
std::vector<train::EvalRow> read_results_csv(std::istream& in, const std::string& source);

struct PlotOptions {
  // Both axes when empty.
  std::optional<PlotAxis> axis;
  // Every family when empty.
  std::vector<std::string> families;
  std::filesystem::path out_dir;
};

// One curve of a panel: seed-averaged normalized MSE along the axis, with
// the other axis held at `fixed`.
struct Series {
  std::string model;
  std::size_t fixed = 0;
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> lo;
  std::vector<double> hi;
  std::vector<std::size_t> seeds;
};

std::vector<Series> collect_series(const std::vector<train::EvalRow>& rows, const std::string& family, PlotAxis axis);

// Writes <family>__<N|T>.svg and the plotted points as <family>__<N|T>.csv
// for each panel with at least one curve; returns the files written. Throws
// FormatError before writing anything if the CSV is malformed or empty.
std::vector<std::filesystem::path> plot_results(const std::filesystem::path& csv, const PlotOptions& opts);

}  // namespace icl::xcli
