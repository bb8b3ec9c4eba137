#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "icl/errors.hpp"
#include "icl/taskgen/prompt.hpp"

using namespace icl;
using namespace icl::tasks;

namespace {

const std::vector<double>& beta_of(const TaskParams& t) { return std::get<LinearParams>(t.body).beta; }

}  // namespace

TEST_CASE("sparse tasks keep exactly s coordinates") {
  const Rng rng(7);
  for (std::uint64_t t = 0; t < 200; ++t) {
    const auto task = sample_task(SparseLinear{20, 3}, rng, t);
    const auto& b = beta_of(task);
    CHECK(std::count_if(b.begin(), b.end(), [](double v) { return v != 0.0; }) == 3);
  }
}

TEST_CASE("sparse supports are uniform over subsets (chi-square)") {
  // d=8, s=3: 56 subsets, 10^4 tasks. Critical value for p = 0.001, 55 dof.
  const Rng rng(11);
  std::map<unsigned, int> counts;
  const int tasks = 10000;
  for (int t = 0; t < tasks; ++t) {
    const auto task = sample_task(SparseLinear{8, 3}, rng, static_cast<std::uint64_t>(t));
    const auto& b = beta_of(task);
    unsigned mask = 0;
    for (std::size_t j = 0; j < b.size(); ++j)
      if (b[j] != 0.0) mask |= 1u << j;
    ++counts[mask];
  }
  CHECK(counts.size() == 56);
  const double expected = tasks / 56.0;
  double stat = 0.0;
  for (const auto& [mask, c] : counts) stat += (c - expected) * (c - expected) / expected;
  CHECK(stat < 93.16753277222854);
}

TEST_CASE("decision tree shape and forced path") {
  const Rng rng(3);
  const auto task = sample_task(DecisionTree{5, 4}, rng, 0);
  const auto& tree = std::get<TreeParams>(task.body);
  CHECK(tree.leaf_values.size() == 16);
  CHECK(tree.split_coord.size() == 15);
  const std::vector<double> x{0.3, 1.2, 0.5, 2.0, 0.1};
  CHECK(task.target(x) == tree.leaf_values.back());
  const std::vector<double> neg{-0.3, -1.2, -0.5, -2.0, -0.1};
  CHECK(task.target(neg) == tree.leaf_values.front());
}

TEST_CASE("tree labels are piecewise constant in the split signs") {
  const Rng rng(5);
  for (std::uint64_t t = 0; t < 20; ++t) {
    const auto task = sample_task(DecisionTree{4, 3}, rng, t);
    Stream s(1000 + t);
    for (int k = 0; k < 20; ++k) {
      std::vector<double> a(4), b(4);
      for (int j = 0; j < 4; ++j) {
        a[j] = s.normal();
        b[j] = std::copysign(std::abs(s.normal()), a[j]);
      }
      CHECK(task.target(a) == task.target(b));
    }
  }
}

TEST_CASE("sampling is a pure function of the seed") {
  const std::vector<TaskFamily> families{LinearFixedNoise{5, 0.1}, LinearMixedNoise{5, 0.1, 1.0}, SparseLinear{6, 2},
                                         TwoLayerReLU{4, 8}, DecisionTree{4, 3}};
  for (const auto& f : families) {
    const auto a = sample_task(f, Rng(42), 17);
    const auto b = sample_task(f, Rng(42), 17);
    const auto pa = sample_prompt(a, Rng(42), 12);
    const auto pb = sample_prompt(b, Rng(42), 12);
    CHECK(std::equal(pa.data().begin(), pa.data().end(), pb.data().begin()));
    CHECK(a.noise_sigma == b.noise_sigma);
    const auto other = sample_prompt(sample_task(f, Rng(42, Domain::Eval), 17), Rng(42, Domain::Eval), 12);
    CHECK_FALSE(std::equal(pa.data().begin(), pa.data().end(), other.data().begin()));
  }
}

TEST_CASE("shorter prompts are prefixes of longer ones") {
  const auto task = sample_task(LinearFixedNoise{3, 0.5}, Rng(1), 4);
  const auto short_p = sample_prompt(task, Rng(1), 5);
  const auto long_p = sample_prompt(task, Rng(1), 20);
  CHECK(std::equal(short_p.data().begin(), short_p.data().end(), long_p.data().begin()));
}

TEST_CASE("noiseless linear labels equal beta^T x to machine precision") {
  const auto task = sample_task(LinearFixedNoise{6, 0.0}, Rng(9), 0);
  const auto p = sample_prompt(task, Rng(9), 30);
  const auto& b = beta_of(task);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 6; ++j) s += b[j] * p.x(i)[j];
    CHECK(std::abs(p.y(i) - s) <= 1e-15 * (1.0 + std::abs(s)) * 6);
  }
}

TEST_CASE("linear label second moment is 1 + sigma^2") {
  const double sigma = 0.5;
  const int d = 5;
  const Rng rng(21);
  std::vector<double> ys;
  for (std::uint64_t t = 0; t < 10000; ++t) {
    const auto p = sample_prompt(sample_task(LinearFixedNoise{d, sigma}, rng, t), rng, 10);
    for (std::size_t i = 0; i < p.rows(); ++i) ys.push_back(p.y(i) * p.y(i));
  }
  double m = 0.0;
  for (double v : ys) m += v;
  m /= static_cast<double>(ys.size());
  // Tasks, not rows, are the independent unit: use the per-task means.
  std::vector<double> task_means;
  for (std::size_t t = 0; t < 10000; ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < 10; ++i) s += ys[t * 10 + i];
    task_means.push_back(s / 10.0);
  }
  double var = 0.0;
  for (double v : task_means) var += (v - m) * (v - m);
  var /= static_cast<double>(task_means.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(task_means.size()));
  CHECK(std::abs(m - (1.0 + sigma * sigma)) < 3.0 * se);
}

TEST_CASE("mixed noise picks one level per task") {
  const Rng rng(2);
  int low = 0;
  for (std::uint64_t t = 0; t < 2000; ++t) {
    const auto task = sample_task(LinearMixedNoise{4, 0.1, 1.0}, rng, t);
    CHECK((task.noise_sigma == 0.1 || task.noise_sigma == 1.0));
    low += task.noise_sigma == 0.1 ? 1 : 0;
  }
  CHECK(std::abs(low - 1000) < 150);
}

TEST_CASE("make_prefix") {
  const auto task = sample_task(LinearFixedNoise{3, 0.1}, Rng(1), 0);
  const auto a = sample_prompt(task, Rng(1), 6);
  const auto full = make_prefix(a, 5);
  CHECK(full.rows() == 6);
  CHECK(full.y(5) == 0.0);
  CHECK(full.query_label_zeroed());
  const auto p1 = make_prefix(a, 1);
  CHECK(p1.rows() == 2);
  CHECK(p1.cols() == 4);
  const auto p3 = make_prefix(a, 3);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(p3.row(i)[j] == a.row(i)[j]);
  CHECK_THROWS_AS(make_prefix(a, 0), ContractError);
  CHECK_THROWS_AS(make_prefix(a, 6), ContractError);
  const auto lp = make_labeled_prefix(a, 4);
  CHECK(lp.target == a.y(4));
}

TEST_CASE("vectorize layout") {
  const PromptMatrix a(2, 2, {1, 2, 3, 4, 5, 0}, true);
  CHECK(vectorize(a, 2) == std::vector<double>{1, 2, 3, 4, 5, 0});
  CHECK(vectorize(a, 4) == std::vector<double>{1, 2, 3, 0, 0, 0, 0, 0, 0, 4, 5, 0});
  for (std::size_t nmax = 2; nmax < 6; ++nmax) CHECK(vectorize(a, nmax).size() == nmax * 3);
  CHECK_THROWS_AS(vectorize(a, 1), ContractError);
  const PromptMatrix unzeroed(2, 2, {1, 2, 3, 4, 5, 6}, false);
  CHECK_THROWS_AS(vectorize(unzeroed, 2), ContractError);
}

TEST_CASE("family validation and json") {
  CHECK_THROWS_AS(validate(SparseLinear{3, 4}), ContractError);
  CHECK_THROWS_AS(validate(LinearFixedNoise{0, 0.1}), ContractError);
  CHECK_THROWS_AS(validate(DecisionTree{3, 0}), ContractError);
  const TaskFamily f = LinearMixedNoise{5, 0.1, 1.0};
  const auto back = family_from_json(to_json(f));
  CHECK(to_json(back) == to_json(f));
  try {
    family_from_json(nlohmann::json{{"kind", "sparse_linear"}, {"d", 3}});
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("family.s") != std::string::npos);
  }
}

TEST_CASE("task dump round trip") {
  const TaskFamily f = TwoLayerReLU{3, 4};
  std::vector<PromptMatrix> prompts;
  for (std::uint64_t t = 0; t < 3; ++t) prompts.push_back(sample_prompt(sample_task(f, Rng(8), t), Rng(8), 5));
  std::stringstream ss;
  write_task_dump(ss, f, prompts);
  const std::string text = ss.str();
  CHECK(text.rfind("ICLTASKS v1 {", 0) == 0);
  const auto dump = read_task_dump(ss);
  CHECK(to_json(dump.family) == to_json(f));
  REQUIRE(dump.prompts.size() == 3);
  for (std::size_t t = 0; t < 3; ++t)
    CHECK(std::equal(dump.prompts[t].data().begin(), dump.prompts[t].data().end(), prompts[t].data().begin()));
  std::stringstream bad("ICLTASKS v2 {}\n");
  CHECK_THROWS_AS(read_task_dump(bad), FormatError);
}
