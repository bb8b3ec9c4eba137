#include "icl/taskgen/prompt.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "icl/errors.hpp"

namespace icl::tasks {

PromptMatrix::PromptMatrix(std::size_t rows, std::size_t dim, std::vector<double> data, bool query_label_zeroed)
    : rows_(rows), dim_(dim), data_(std::move(data)), zeroed_(query_label_zeroed) {
  if (rows_ == 0 || dim_ == 0) throw ContractError("prompt needs at least one row and d >= 1");
  if (data_.size() != rows_ * (dim_ + 1)) {
    throw DimensionError("prompt data has " + std::to_string(data_.size()) + " values, expected " +
                         std::to_string(rows_) + "x" + std::to_string(dim_ + 1));
  }
  if (zeroed_ && data_.back() != 0.0) throw ContractError("query label flagged as zeroed but is nonzero");
}

std::span<const double> PromptMatrix::row(std::size_t i) const {
  if (i >= rows_) throw ContractError("prompt row " + std::to_string(i) + " out of range");
  return std::span<const double>(data_).subspan(i * cols(), cols());
}

nd::Tensor PromptMatrix::to_tensor() const { return nd::Tensor({rows_, cols()}, data_); }

nd::Tensor PromptMatrix::features() const {
  std::vector<double> out;
  out.reserve(rows_ * dim_);
  for (std::size_t i = 0; i < rows_; ++i) {
    auto xi = x(i);
    out.insert(out.end(), xi.begin(), xi.end());
  }
  return nd::Tensor({rows_, dim_}, std::move(out));
}

PromptMatrix sample_prompt(const TaskParams& task, const Rng& rng, std::size_t rows) {
  if (rows == 0) throw ContractError("sample_prompt: need at least one row");
  const auto d = static_cast<std::size_t>(task.dim());
  Stream s = rng.stream(Purpose::Prompt, task.index);
  std::vector<double> data(rows * (d + 1));
  // Row-major draws keep shorter prompts a prefix of longer ones.
  for (std::size_t i = 0; i < rows; ++i) {
    double* r = data.data() + i * (d + 1);
    for (std::size_t j = 0; j < d; ++j) r[j] = s.normal();
    const double eps = s.normal();
    r[d] = task.target(std::span<const double>(r, d)) + task.noise_sigma * eps;
  }
  return PromptMatrix(rows, d, std::move(data), false);
}

PromptMatrix make_prefix(const PromptMatrix& a, std::size_t i) {
  if (i < 1 || i + 1 > a.rows()) {
    throw ContractError("make_prefix: i=" + std::to_string(i) + " outside [1, " + std::to_string(a.rows() - 1) + "]");
  }
  const std::size_t cols = a.cols();
  std::vector<double> data(a.data().begin(), a.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
  data.back() = 0.0;
  return PromptMatrix(i + 1, a.dim(), std::move(data), true);
}

LabeledPrompt make_labeled_prefix(const PromptMatrix& a, std::size_t i) {
  PromptMatrix p = make_prefix(a, i);
  return LabeledPrompt{std::move(p), a.y(i)};
}

std::vector<double> vectorize(const PromptMatrix& a, std::size_t max_rows) {
  if (!a.query_label_zeroed()) throw ContractError("vectorize: query label must be zeroed");
  if (a.rows() > max_rows) {
    throw ContractError("vectorize: prompt has " + std::to_string(a.rows()) + " rows, max is " +
                        std::to_string(max_rows));
  }
  const std::size_t cols = a.cols();
  std::vector<double> v(max_rows * cols, 0.0);
  const auto ctx = static_cast<std::ptrdiff_t>(a.context_size() * cols);
  std::copy(a.data().begin(), a.data().begin() + ctx, v.begin());
  auto q = a.row(a.rows() - 1);
  std::copy(q.begin(), q.end(), v.end() - static_cast<std::ptrdiff_t>(cols));
  return v;
}

void write_f64_le(std::ostream& out, std::span<const double> values) {
  for (double x : values) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char buf[8];
    std::memcpy(buf, &bits, 8);
    out.write(buf, 8);
  }
}

void read_f64_le(std::istream& in, std::span<double> values) {
  for (double& x : values) {
    char buf[8];
    if (!in.read(buf, 8)) throw FormatError("unexpected end of float64 data");
    std::uint64_t bits;
    std::memcpy(&bits, buf, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    x = std::bit_cast<double>(bits);
  }
}

void write_task_dump(std::ostream& out, const TaskFamily& family, std::span<const PromptMatrix> prompts) {
  nlohmann::json header = to_json(family);
  const std::size_t rows = prompts.empty() ? 0 : prompts.front().rows();
  for (const auto& p : prompts) {
    if (p.rows() != rows || static_cast<int>(p.dim()) != input_dim(family)) {
      throw ContractError("write_task_dump: prompts must share one shape matching the family");
    }
  }
  header["num_prompts"] = prompts.size();
  header["rows"] = rows;
  out << "ICLTASKS v1 " << header.dump() << '\n';
  for (const auto& p : prompts) write_f64_le(out, p.data());
}

TaskDump read_task_dump(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("task dump: missing header line");
  const std::string magic = "ICLTASKS v1 ";
  if (line.rfind(magic, 0) != 0) throw FormatError("task dump: bad magic, expected 'ICLTASKS v1'");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line.substr(magic.size()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("task dump header: ") + e.what());
  }
  if (!header.contains("num_prompts") || !header.contains("rows")) {
    throw FormatError("task dump header: missing num_prompts/rows");
  }
  const auto n = header.at("num_prompts").get<std::size_t>();
  const auto rows = header.at("rows").get<std::size_t>();
  header.erase("num_prompts");
  header.erase("rows");
  TaskDump dump{family_from_json(header, "header"), {}};
  const auto d = static_cast<std::size_t>(input_dim(dump.family));
  dump.prompts.reserve(n);
  for (std::size_t t = 0; t < n; ++t) {
    std::vector<double> data(rows * (d + 1));
    read_f64_le(in, data);
    dump.prompts.emplace_back(rows, d, std::move(data), false);
  }
  return dump;
}

}  // namespace icl::tasks
