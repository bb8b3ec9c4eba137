#include "icl/xcli/gradsuite.hpp"

#include <algorithm>
#include <functional>

#include "icl/models/models.hpp"
#include "icl/ndtensor/gradcheck.hpp"
#include "icl/ndtensor/ops.hpp"
#include "icl/taskgen/prompt.hpp"
#include "icl/taskgen/task.hpp"
#include "icl/trainer/trainer.hpp"

namespace icl::xcli {

namespace {

using nd::Shape;
using nd::Tape;
using nd::Tensor;
using nd::Var;

// A case yields the loss and its inputs for one random point.
struct Case {
  std::string name;
  std::function<std::pair<nd::LossBuilder, std::vector<Tensor>>(std::uint64_t seed)> make;
};

// sum(out * w) with fixed random weights, so every output entry matters.
Var weighted(Tape& tape, const Var& out, std::uint64_t seed) {
  return nd::sum(nd::mul(out, tape.constant(nd::random_tensor(out.shape(), seed ^ 0x5bd1e995))));
}

// Op case on random inputs of the given shapes.
Case op(std::string name, std::vector<Shape> shapes, std::function<Var(Tape&, const std::vector<Var>&)> f) {
  return {name, [shapes, f](std::uint64_t seed) {
            std::vector<Tensor> inputs;
            for (std::size_t i = 0; i < shapes.size(); ++i) inputs.push_back(nd::random_tensor(shapes[i], seed * 31 + i));
            nd::LossBuilder loss = [f, seed](Tape& tape, const std::vector<Var>& v) {
              return weighted(tape, f(tape, v), seed);
            };
            return std::make_pair(loss, inputs);
          }};
}

std::vector<tasks::PromptMatrix> prompts(int d, std::size_t count, std::size_t rows, std::uint64_t seed,
                                         bool labeled = false) {
  const tasks::Rng rng(seed);
  std::vector<tasks::PromptMatrix> out;
  for (std::size_t t = 0; t < count; ++t) {
    const auto a = tasks::sample_prompt(tasks::sample_task(tasks::LinearFixedNoise{d, 0.1}, rng, t), rng, rows);
    out.push_back(labeled ? a : tasks::make_prefix(a, rows - 1));
  }
  return out;
}

std::vector<Tensor> values(const models::Model& m) {
  std::vector<Tensor> v;
  for (const auto& e : m.params().entries()) v.push_back(e.value);
  return v;
}

// Model case: the loss is the sum of squared predictions over a few prompts,
// differentiated with respect to every weight array.
Case model_case(std::string name, std::function<models::ModelSpec()> spec, int d, std::size_t rows) {
  return {name, [spec, d, rows](std::uint64_t seed) {
            std::shared_ptr<models::Model> m = models::make_model(spec(), seed);
            const auto batch = prompts(d, 3, rows, seed);
            nd::LossBuilder loss = [m, batch](Tape& tape, const std::vector<Var>& v) {
              const auto out = m->forward(tape, models::Bound{v}, batch);
              return nd::sum(nd::mul(out, out));
            };
            return std::make_pair(loss, values(*m));
          }};
}

std::vector<Case> cases() {
  using namespace nd;
  std::vector<Case> c;
  c.push_back(op("matmul", {{3, 4}, {4, 2}}, [](Tape&, const auto& v) { return matmul(v[0], v[1]); }));
  c.push_back(op("batched_matmul", {{2, 3, 4}, {2, 4, 2}}, [](Tape&, const auto& v) { return batched_matmul(v[0], v[1]); }));
  c.push_back(op("transpose", {{2, 3, 4}}, [](Tape&, const auto& v) { return transpose(v[0]); }));
  c.push_back(op("reshape", {{3, 4}}, [](Tape&, const auto& v) { return reshape(v[0], {2, 6}); }));
  c.push_back(op("add", {{3, 4}, {3, 4}}, [](Tape&, const auto& v) { return add(v[0], v[1]); }));
  c.push_back(op("sub", {{3, 4}, {3, 4}}, [](Tape&, const auto& v) { return sub(v[0], v[1]); }));
  c.push_back(op("mul", {{3, 4}, {3, 4}}, [](Tape&, const auto& v) { return mul(v[0], v[1]); }));
  c.push_back(op("scale", {{3, 4}}, [](Tape&, const auto& v) { return scale(v[0], -1.7); }));
  c.push_back(op("add_scalar", {{3, 4}}, [](Tape&, const auto& v) { return mul(add_scalar(v[0], 0.3), v[0]); }));
  c.push_back(op("add_bias", {{2, 3, 4}, {4}}, [](Tape&, const auto& v) { return add_bias(v[0], v[1]); }));
  c.push_back(op("row_l1_normalize", {{3, 4}}, [](Tape&, const auto& v) { return row_l1_normalize(v[0]); }));
  c.push_back(op("row_softmax", {{2, 4, 4}}, [](Tape&, const auto& v) {
    std::vector<double> mask(32, 0.0);
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j <= i; ++j) mask[b * 16 + i * 4 + j] = 1.0;
    return row_softmax(v[0], Tensor({2, 4, 4}, mask));
  }));
  c.push_back(op("layer_norm", {{3, 5}, {5}, {5}}, [](Tape&, const auto& v) { return layer_norm(v[0], v[1], v[2]); }));
  c.push_back(op("gelu", {{3, 4}}, [](Tape&, const auto& v) { return gelu(v[0]); }));
  c.push_back(op("relu", {{3, 4}}, [](Tape&, const auto& v) { return mul(relu(v[0]), v[0]); }));
  c.push_back(op("concat_last", {{2, 3, 2}, {2, 3, 4}}, [](Tape&, const auto& v) { return concat_last(v[0], v[1]); }));
  c.push_back(op("concat_rows", {{2, 4}, {3, 4}}, [](Tape&, const auto& v) { return concat_rows(v[0], v[1]); }));
  c.push_back(op("select_row", {{2, 3, 4}}, [](Tape&, const auto& v) { return select_row(v[0], 1); }));
  c.push_back(op("slice_last", {{3, 5}}, [](Tape&, const auto& v) { return slice_last(v[0], 1, 3); }));
  c.push_back(op("sum", {{3, 4}}, [](Tape&, const auto& v) { return reshape(sum(mul(v[0], v[0])), {1}); }));
  c.push_back(op("mean", {{3, 4}}, [](Tape&, const auto& v) { return reshape(mean(mul(v[0], v[0])), {1}); }));
  c.push_back(op("squared_error", {{3, 4}}, [](Tape&, const auto& v) {
    return reshape(squared_error(v[0], random_tensor({3, 4}, 99)), {1});
  }));

  c.push_back(model_case("mlp", [] { return models::MLPSpec{3, models::InputKind::Vectorized, {}, 8, 6}; }, 3, 6));
  c.push_back(model_case("sgpt", [] { return models::SGPTSpec{3, 2, 8, models::PhiKind::L1, feat::MaskMode::None}; },
                         3, 6));
  c.push_back(model_case(
      "ref_transformer", [] { return models::RefTransformerSpec{3, 2, 2, 8, false, true, true, feat::MaskMode::None}; },
      3, 6));
  c.push_back({"icl_loss", [](std::uint64_t seed) {
                 std::shared_ptr<models::Model> m =
                     models::make_model(models::SGPTSpec{2, 1, 6, models::PhiKind::L1, feat::MaskMode::None}, seed);
                 const auto batch = prompts(2, 3, 7, seed, true);
                 nd::LossBuilder loss = [m, batch](Tape& tape, const std::vector<Var>& v) {
                   const std::vector<std::size_t> lengths{2, 4, 6};
                   return train::icl_loss(tape, *m, models::Bound{v}, batch, lengths);
                 };
                 return std::make_pair(loss, values(*m));
               }});
  return c;
}

// Wraps a loss in an op whose backward rule is wrong by a factor 3/2.
nd::LossBuilder corrupted(nd::LossBuilder inner) {
  return [inner](Tape& tape, const std::vector<Var>& v) {
    const Var l = inner(tape, v);
    return tape.record("corrupted", Tensor(l.shape(), {2.0 * l.value()[0]}), {l},
                       [l](std::span<const double> g, nd::GradSink& s) { s.grad(l)[0] += 3.0 * g[0]; });
  };
}

}  // namespace

bool GradSuiteReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

std::vector<std::string> grad_suite_names() {
  std::vector<std::string> out;
  for (const auto& c : cases()) out.push_back(c.name);
  return out;
}

GradSuiteReport run_grad_suite(std::size_t points, double tolerance, const std::optional<std::string>& corrupt) {
  GradSuiteReport report;
  for (const auto& c : cases()) {
    GradSuiteEntry e{c.name, points, 0.0, true};
    for (std::size_t p = 0; p < points; ++p) {
      auto [loss, inputs] = c.make(p + 1);
      if (corrupt && *corrupt == c.name) loss = corrupted(loss);
      const auto r = nd::check_gradient(c.name, loss, inputs, tolerance);
      e.max_rel_error = std::max(e.max_rel_error, r.max_rel_error);
      e.passed = e.passed && r.passed;
    }
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace icl::xcli
