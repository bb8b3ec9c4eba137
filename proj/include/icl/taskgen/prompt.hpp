#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "icl/ndtensor/tensor.hpp"
#include "icl/taskgen/task.hpp"

namespace icl::tasks {

/// An N x (d+1) prompt: rows are (x_i, y_i). Rows 0..N-2 are context examples
/// and row N-1 is the query. Indices are 0-based.
class PromptMatrix {
 public:
  PromptMatrix(std::size_t rows, std::size_t dim, std::vector<double> data, bool query_label_zeroed);

  std::size_t rows() const { return rows_; }
  std::size_t dim() const { return dim_; }
  std::size_t cols() const { return dim_ + 1; }
  std::size_t context_size() const { return rows_ - 1; }
  bool query_label_zeroed() const { return zeroed_; }

  std::span<const double> row(std::size_t i) const;
  std::span<const double> x(std::size_t i) const { return row(i).first(dim_); }
  double y(std::size_t i) const { return row(i)[dim_]; }
  std::span<const double> query() const { return x(rows_ - 1); }
  std::span<const double> data() const { return data_; }

  nd::Tensor to_tensor() const;
  // The N x d covariate block.
  nd::Tensor features() const;

 private:
  std::size_t rows_;
  std::size_t dim_;
  std::vector<double> data_;
  bool zeroed_;
};

/// A prefix with the held-out label of its query row.
struct LabeledPrompt {
  PromptMatrix prompt;
  double target;
};

// N i.i.d. rows x ~ N(0, I_d), y = f(x) + noise. Labels are all present.
PromptMatrix sample_prompt(const TaskParams& task, const Rng& rng, std::size_t rows);

// First i+1 rows with the label of row i zeroed; 1 <= i <= rows-1.
PromptMatrix make_prefix(const PromptMatrix& a, std::size_t i);
// make_prefix plus the label that was zeroed.
LabeledPrompt make_labeled_prefix(const PromptMatrix& a, std::size_t i);

// Interleaved [x_1, y_1, ..., x_{N-1}, y_{N-1}, zero blocks, x_N, 0] of length
// max_rows * (d+1). Padding sits between the context and the query.
std::vector<double> vectorize(const PromptMatrix& a, std::size_t max_rows);

// Dump format: "ICLTASKS v1 <json>\n" followed by little-endian float64 prompt
// data, prompts back to back. The json carries the family fields plus
// "num_prompts" and "rows".
void write_task_dump(std::ostream& out, const TaskFamily& family, std::span<const PromptMatrix> prompts);
struct TaskDump {
  TaskFamily family;
  std::vector<PromptMatrix> prompts;
};
TaskDump read_task_dump(std::istream& in);

void write_f64_le(std::ostream& out, std::span<const double> values);
void read_f64_le(std::istream& in, std::span<double> values);

}  // namespace icl::tasks
