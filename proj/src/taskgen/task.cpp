#include "icl/taskgen/task.hpp"

#include <cmath>
#include <numeric>

#include "icl/errors.hpp"
#include "icl/overloaded.hpp"

namespace icl::tasks {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError("invalid task family: " + what);
}

const nlohmann::json& field(const nlohmann::json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw FormatError(path + "." + key + ": required field missing");
  return j.at(key);
}

int int_field(const nlohmann::json& j, const std::string& path, const char* key) {
  const auto& v = field(j, path, key);
  if (!v.is_number_integer()) throw FormatError(path + "." + key + ": expected integer");
  return v.get<int>();
}

double num_field(const nlohmann::json& j, const std::string& path, const char* key) {
  const auto& v = field(j, path, key);
  if (!v.is_number()) throw FormatError(path + "." + key + ": expected number");
  return v.get<double>();
}

LinearParams gaussian_beta(Stream& s, int d, double stddev) {
  LinearParams p;
  p.beta.resize(static_cast<std::size_t>(d));
  for (double& b : p.beta) b = stddev * s.normal();
  return p;
}

}  // namespace

int input_dim(const TaskFamily& family) {
  return std::visit([](const auto& f) { return f.d; }, family);
}

std::string family_kind(const TaskFamily& family) {
  return std::visit(overloaded{
                        [](const LinearFixedNoise&) { return std::string("linear_fixed_noise"); },
                        [](const LinearMixedNoise&) { return std::string("linear_mixed_noise"); },
                        [](const SparseLinear&) { return std::string("sparse_linear"); },
                        [](const TwoLayerReLU&) { return std::string("two_layer_relu"); },
                        [](const DecisionTree&) { return std::string("decision_tree"); },
                    },
                    family);
}

void validate(const TaskFamily& family) {
  require(input_dim(family) >= 1, "d must be >= 1");
  std::visit(overloaded{
                 [](const LinearFixedNoise& f) { require(f.sigma >= 0, "sigma must be >= 0"); },
                 [](const LinearMixedNoise& f) {
                   require(f.sigma1 >= 0 && f.sigma2 >= 0, "sigma1 and sigma2 must be >= 0");
                 },
                 [](const SparseLinear& f) { require(f.s >= 0 && f.s <= f.d, "need 0 <= s <= d"); },
                 [](const TwoLayerReLU& f) { require(f.r >= 1, "r must be >= 1"); },
                 [](const DecisionTree& f) { require(f.depth >= 1 && f.depth <= 20, "depth must be in [1, 20]"); },
             },
             family);
}

nlohmann::json to_json(const TaskFamily& family) {
  nlohmann::json j;
  j["kind"] = family_kind(family);
  std::visit(overloaded{
                 [&](const LinearFixedNoise& f) {
                   j["d"] = f.d;
                   j["sigma"] = f.sigma;
                 },
                 [&](const LinearMixedNoise& f) {
                   j["d"] = f.d;
                   j["sigma1"] = f.sigma1;
                   j["sigma2"] = f.sigma2;
                 },
                 [&](const SparseLinear& f) {
                   j["d"] = f.d;
                   j["s"] = f.s;
                 },
                 [&](const TwoLayerReLU& f) {
                   j["d"] = f.d;
                   j["r"] = f.r;
                 },
                 [&](const DecisionTree& f) {
                   j["d"] = f.d;
                   j["depth"] = f.depth;
                 },
             },
             family);
  return j;
}

TaskFamily family_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw FormatError(path + ": expected object");
  const auto& kind_v = field(j, path, "kind");
  if (!kind_v.is_string()) throw FormatError(path + ".kind: expected string");
  const std::string kind = kind_v.get<std::string>();
  const int d = int_field(j, path, "d");
  TaskFamily f;
  if (kind == "linear_fixed_noise") {
    f = LinearFixedNoise{d, j.contains("sigma") ? num_field(j, path, "sigma") : 0.0};
  } else if (kind == "linear_mixed_noise") {
    f = LinearMixedNoise{d, num_field(j, path, "sigma1"), num_field(j, path, "sigma2")};
  } else if (kind == "sparse_linear") {
    f = SparseLinear{d, int_field(j, path, "s")};
  } else if (kind == "two_layer_relu") {
    f = TwoLayerReLU{d, int_field(j, path, "r")};
  } else if (kind == "decision_tree") {
    f = DecisionTree{d, j.contains("depth") ? int_field(j, path, "depth") : 4};
  } else {
    throw FormatError(path + ".kind: unknown task family '" + kind + "'");
  }
  try {
    validate(f);
  } catch (const ContractError& e) {
    throw FormatError(path + ": " + e.what());
  }
  return f;
}

double TaskParams::target(std::span<const double> x) const {
  return std::visit(overloaded{
                        [&](const LinearParams& p) {
                          double y = 0.0;
                          for (std::size_t j = 0; j < p.beta.size(); ++j) y += p.beta[j] * x[j];
                          return y;
                        },
                        [&](const ReluTeacherParams& p) {
                          const std::size_t d = x.size();
                          double y = 0.0;
                          for (std::size_t u = 0; u < static_cast<std::size_t>(p.r); ++u) {
                            double pre = 0.0;
                            for (std::size_t j = 0; j < d; ++j) pre += p.hidden[u * d + j] * x[j];
                            if (pre > 0.0) y += p.alpha[u] * pre;
                          }
                          return y;
                        },
                        [&](const TreeParams& p) {
                          std::size_t node = 0;
                          for (int level = 0; level < p.depth; ++level) {
                            const auto coord = static_cast<std::size_t>(p.split_coord[node]);
                            node = x[coord] > 0.0 ? 2 * node + 2 : 2 * node + 1;
                          }
                          return p.leaf_values[node - p.split_coord.size()];
                        },
                    },
                    body);
}

TaskParams sample_task(const TaskFamily& family, const Rng& rng, std::uint64_t t) {
  validate(family);
  Stream s = rng.stream(Purpose::Task, t);
  TaskParams task;
  task.family = family;
  task.master_seed = rng.master_seed();
  task.index = t;
  std::visit(overloaded{
                 [&](const LinearFixedNoise& f) {
                   task.noise_sigma = f.sigma;
                   task.body = gaussian_beta(s, f.d, 1.0 / std::sqrt(static_cast<double>(f.d)));
                 },
                 [&](const LinearMixedNoise& f) {
                   task.noise_sigma = s.uniform() < 0.5 ? f.sigma1 : f.sigma2;
                   task.body = gaussian_beta(s, f.d, 1.0 / std::sqrt(static_cast<double>(f.d)));
                 },
                 [&](const SparseLinear& f) {
                   LinearParams p = gaussian_beta(s, f.d, 1.0);
                   std::vector<std::size_t> idx(static_cast<std::size_t>(f.d));
                   std::iota(idx.begin(), idx.end(), 0);
                   // Partial Fisher-Yates: the first s entries are a uniform s-subset.
                   for (std::size_t k = 0; k < static_cast<std::size_t>(f.s); ++k) {
                     const std::size_t j = k + static_cast<std::size_t>(s.below(idx.size() - k));
                     std::swap(idx[k], idx[j]);
                   }
                   std::vector<double> beta(p.beta.size(), 0.0);
                   for (std::size_t k = 0; k < static_cast<std::size_t>(f.s); ++k) beta[idx[k]] = p.beta[idx[k]];
                   p.beta = std::move(beta);
                   task.body = std::move(p);
                 },
                 [&](const TwoLayerReLU& f) {
                   ReluTeacherParams p;
                   p.r = f.r;
                   p.hidden.resize(static_cast<std::size_t>(f.r * f.d));
                   p.alpha.resize(static_cast<std::size_t>(f.r));
                   const double w_std = 1.0 / std::sqrt(static_cast<double>(f.d));
                   const double a_std = std::sqrt(2.0 / static_cast<double>(f.r));
                   for (double& w : p.hidden) w = w_std * s.normal();
                   for (double& a : p.alpha) a = a_std * s.normal();
                   task.body = std::move(p);
                 },
                 [&](const DecisionTree& f) {
                   TreeParams p;
                   p.depth = f.depth;
                   const std::size_t internal = (std::size_t{1} << f.depth) - 1;
                   p.split_coord.resize(internal);
                   p.leaf_values.resize(internal + 1);
                   for (int& c : p.split_coord) c = static_cast<int>(s.below(static_cast<std::uint64_t>(f.d)));
                   for (double& v : p.leaf_values) v = s.normal();
                   task.body = std::move(p);
                 },
             },
             family);
  return task;
}

}  // namespace icl::tasks
