#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "icl/errors.hpp"
#include "icl/featmap/featmap.hpp"
#include "icl/models/models.hpp"
#include "icl/ndtensor/gradcheck.hpp"
#include "icl/ndtensor/ops.hpp"
#include "oracles.hpp"

using namespace icl;
using namespace icl::models;
using namespace icl::tasks;
using nd::Tensor;

namespace {

PromptMatrix random_prompt(int d, std::uint64_t seed, std::size_t rows, double sigma = 0.1) {
  const Rng rng(seed);
  const auto a = sample_prompt(sample_task(LinearFixedNoise{d, sigma}, rng, 0), rng, rows);
  return make_prefix(a, rows - 1);
}

std::vector<Tensor> param_values(const Model& m) {
  std::vector<Tensor> v;
  for (const auto& e : m.params().entries()) v.push_back(e.value);
  return v;
}

// Sum of squared predictions as a scalar loss over all parameters.
nd::GradCheckResult check_model(const std::string& name, const Model& model, const std::vector<PromptMatrix>& prompts) {
  auto loss = [&](nd::Tape& tape, const std::vector<nd::Var>& leaves) {
    const Bound b{leaves};
    const auto out = model.forward(tape, b, prompts);
    return nd::sum(nd::mul(out, out));
  };
  return nd::check_gradient(name, loss, param_values(model));
}

void set_param(Model& m, const std::string& name, Tensor v) { m.params().set(m.params().index_of(name), std::move(v)); }

}  // namespace

TEST_CASE("MLP output is zero when the readout is zero or the input is zero") {
  MLPSpec spec{3, InputKind::Vectorized, {}, 16, 6};
  MLPModel m(spec, 1);
  CHECK(mlp_forward(m, std::vector<double>(mlp_input_dim(spec), 0.0)) == 0.0);
  set_param(m, "W1", Tensor::zeros({16, 1}));
  CHECK(m.predict(random_prompt(3, 2, 6)) == 0.0);
}

TEST_CASE("MLP forward matches relu(v W0) W1 computed by hand") {
  MLPSpec spec{2, InputKind::Vectorized, {}, 5, 4};
  MLPModel m(spec, 7);
  const auto a = random_prompt(2, 3, 4);
  const auto v = m.features(a);
  const auto& w0 = m.params()[0].value;
  const auto& w1 = m.params()[1].value;
  double ref = 0.0;
  for (std::size_t j = 0; j < 5; ++j) {
    double h = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) h += v[i] * w0.at(i, j);
    ref += std::max(h, 0.0) * w1.at(j, 0);
  }
  CHECK(std::abs(m.predict(a) - ref) < 1e-12);
  CHECK(std::abs(mlp_forward(m, v) - ref) < 1e-12);
  CHECK_THROWS_AS(mlp_forward(m, std::vector<double>(3)), ContractError);
}

TEST_CASE("MLP input dimensions and feature layouts") {
  const auto a = random_prompt(3, 5, 5);
  MLPSpec concat{3, InputKind::Concat, {FeatureMapSpec::Kind::PsiK, feat::ExponentialKernel{}}, 4, 8};
  CHECK(mlp_input_dim(concat) == 8 * 4 + 4);
  MLPModel m(concat, 1);
  const auto f = m.features(a);
  const auto vec = vectorize(a, 8);
  const auto psi = feat::psi_K_last_row(a, feat::ExponentialKernel{});
  REQUIRE(f.size() == 36);
  for (std::size_t i = 0; i < 32; ++i) CHECK(f[i] == vec[i]);
  for (std::size_t i = 0; i < 4; ++i) CHECK(f[32 + i] == psi[i]);

  MLPSpec last{3, InputKind::PsiLastElement, {FeatureMapSpec::Kind::PsiL, {}}, 4, 8};
  CHECK(mlp_input_dim(last) == 1);
  const auto g = MLPModel(last, 1).features(a);
  REQUIRE(g.size() == 1);
  CHECK(std::abs(g[0] - feat::psi_L_last_row(a).back() / 4.0) < 1e-12);
  CHECK_THROWS_AS(concat_input(a, std::vector<double>(3), 8), DimensionError);
}

TEST_CASE("MLP gradients match finite differences") {
  for (auto kind : {InputKind::Vectorized, InputKind::PsiLastRow, InputKind::Concat}) {
    MLPSpec spec{3, kind, {FeatureMapSpec::Kind::PsiK, feat::HilbertKernel{3}}, 6, 7};
    MLPModel m(spec, 11);
    std::vector<PromptMatrix> prompts{random_prompt(3, 1, 7), random_prompt(3, 2, 4), random_prompt(3, 3, 5)};
    const auto r = check_model("mlp", m, prompts);
    CHECK(r.passed);
    CHECK(r.max_rel_error < 1e-5);
  }
}

TEST_CASE("SGPT gradients match finite differences at several points") {
  for (auto phi : {PhiKind::L1, PhiKind::Softmax}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      SGPTModel m(SGPTSpec{3, 2, 8, phi, feat::MaskMode::None}, seed);
      std::vector<PromptMatrix> prompts{random_prompt(3, seed, 6), random_prompt(3, seed + 9, 6),
                                        random_prompt(3, seed + 4, 3)};
      const auto r = check_model("sgpt", m, prompts);
      CHECK(r.max_rel_error < 1e-5);
    }
  }
  SGPTModel masked(SGPTSpec{2, 2, 8, PhiKind::L1, feat::MaskMode::ExcludeSelf}, 5);
  CHECK(check_model("sgpt_masked", masked, {random_prompt(2, 1, 5)}).max_rel_error < 1e-5);
}

TEST_CASE("SGPT query-only last layer agrees with the full hidden state") {
  for (auto mask : {feat::MaskMode::None, feat::MaskMode::ExcludeSelf, feat::MaskMode::StrictCausal}) {
    for (auto phi : {PhiKind::L1, PhiKind::Softmax}) {
      SGPTModel m(SGPTSpec{4, 2, 8, phi, mask}, 3);
      const std::vector<PromptMatrix> group{random_prompt(4, 1, 9), random_prompt(4, 2, 9)};
      nd::Tape tape;
      const Bound b = bind(tape, m.params());
      const auto h = m.hidden(tape, b, group).value();
      const auto& wo = m.params()[m.params().index_of("W_O")].value;
      const auto fast = m.predict(std::span<const PromptMatrix>(group));
      for (std::size_t t = 0; t < 2; ++t) {
        double ref = 0.0;
        for (std::size_t j = 0; j < 8; ++j) ref += h[(t * 9 + 8) * 8 + j] * wo.at(j, 0);
        CHECK(std::abs(fast[t] - ref) < 1e-12 * std::max(1.0, std::abs(ref)));
      }
    }
  }
}

TEST_CASE("SGPT embedding is frozen") {
  SGPTModel m(SGPTSpec{3, 1, 8}, 2);
  CHECK(m.params()[0].name == "W0");
  CHECK_FALSE(m.params()[0].trainable);
  CHECK(m.params().trainable_count() == 2 * 8 * 8 + 8);
  nd::Tape tape;
  const Bound b = bind(tape, m.params());
  const auto out = m.forward(tape, b, std::vector<PromptMatrix>{random_prompt(3, 1, 5)});
  const auto g = tape.backward(nd::sum(out));
  const auto gw0 = g[b[0]];
  CHECK(std::all_of(gw0.data().begin(), gw0.data().end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("SGPT with zero projection, MLP and readout collapses to zero") {
  SGPTModel m(SGPTSpec{3, 2, 8}, 4);
  for (std::size_t l = 0; l < 2; ++l) {
    set_param(m, "W_proj" + std::to_string(l), Tensor::zeros({8, 8}));
    set_param(m, "W_mlp" + std::to_string(l), Tensor::zeros({8, 8}));
  }
  // H passes through unchanged, so the output is H0_q W_O.
  const auto a = random_prompt(3, 8, 6);
  const auto& w0 = m.params()[0].value;
  const auto& wo = m.params()[m.params().index_of("W_O")].value;
  double ref = 0.0;
  for (std::size_t j = 0; j < 8; ++j) {
    double h = 0.0;
    for (std::size_t i = 0; i < 4; ++i) h += a.row(5)[i] * w0.at(i, j);
    ref += h * wo.at(j, 0);
  }
  CHECK(std::abs(m.predict(a) - ref) < 1e-12);
  set_param(m, "W_O", Tensor::zeros({8, 1}));
  CHECK(m.predict(a) == 0.0);
}

TEST_CASE("constructed SGPT reproduces the exponential-kernel smoother") {
  const int d = 3;
  const std::size_t k = d + 1;
  SGPTModel m(SGPTSpec{d, 1, k, PhiKind::Softmax, feat::MaskMode::ExcludeSelf}, 0);
  set_param(m, "W0", Tensor::identity(k));
  set_param(m, "W_proj0", Tensor::identity(k));
  set_param(m, "W_mlp0", Tensor::zeros({k, k}));
  std::vector<double> eo(k, 0.0);
  eo.back() = 1.0;
  set_param(m, "W_O", Tensor({k, 1}, eo));
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = random_prompt(d, s, 4 + s % 20, 0.3);
    const std::size_t n = a.context_size();
    std::vector<double> w(n);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += a.query()[j] * a.x(i)[j];
      w[i] = std::exp(dot);
      z += w[i];
    }
    double ref = 0.0;
    for (std::size_t i = 0; i < n; ++i) ref += w[i] / z * a.y(i);
    CHECK(std::abs(m.predict(a) - ref) < 1e-12);
  }
}

TEST_CASE("reference transformer gradients match finite differences") {
  for (bool ln : {true, false}) {
    for (bool causal : {true, false}) {
      RefTransformerModel m(RefTransformerSpec{2, 2, 2, 4, causal, ln, true, feat::MaskMode::None}, 6);
      std::vector<PromptMatrix> prompts{random_prompt(2, 1, 5), random_prompt(2, 2, 4)};
      CHECK(check_model("ref", m, prompts).max_rel_error < 1e-5);
    }
  }
}

TEST_CASE("identity single-head attention equals the scaled exponential smoother") {
  const int d = 3;
  const std::size_t m_dim = d + 1;
  RefTransformerModel m(RefTransformerSpec{d, 1, 1, m_dim, false, false, false, feat::MaskMode::ExcludeSelf}, 0);
  for (const char* name : {"embed_W", "block0.W_Q", "block0.W_K", "block0.W_V", "block0.W_attn_out"})
    set_param(m, name, Tensor::identity(m_dim));
  const auto a = random_prompt(d, 12, 9);
  nd::Tape tape;
  const Bound b = bind(tape, m.params());
  const std::vector<PromptMatrix> group{a};
  const auto h = m.hidden(tape, b, group).value();
  const std::size_t n = a.rows();
  const double s = std::pow(static_cast<double>(m_dim), -0.25);
  std::vector<double> scaled(a.data().begin(), a.data().end());
  for (double& v : scaled) v *= s;
  const auto w = feat::khat(Tensor({n, m_dim}, scaled), feat::ExponentialKernel{}, feat::MaskMode::ExcludeSelf);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m_dim; ++j) {
      double ref = 0.0;
      for (std::size_t t = 0; t < n; ++t) ref += w.at(i, t) * a.row(t)[j];
      worst = std::max(worst, std::abs(h[i * m_dim + j] - a.row(i)[j] - ref));
    }
  CHECK(worst < 1e-12);
}

TEST_CASE("unmasked models are invariant to context permutations") {
  const auto a = random_prompt(3, 21, 8);
  std::vector<std::size_t> order{4, 0, 6, 2, 1, 5, 3};
  std::vector<double> permuted;
  for (std::size_t i : order) permuted.insert(permuted.end(), a.row(i).begin(), a.row(i).end());
  permuted.insert(permuted.end(), a.row(7).begin(), a.row(7).end());
  const PromptMatrix b(8, 3, permuted, true);
  SGPTModel sgpt(SGPTSpec{3, 2, 8}, 1);
  CHECK(std::abs(sgpt.predict(a) - sgpt.predict(b)) < 1e-12);
  RefTransformerModel ref(RefTransformerSpec{3, 2, 2, 8, false, true, true, feat::MaskMode::None}, 1);
  CHECK(std::abs(ref.predict(a) - ref.predict(b)) < 1e-12);
  MLPModel mlp(MLPSpec{3, InputKind::PsiLastRow, {FeatureMapSpec::Kind::PsiK, feat::ExponentialKernel{}}, 8, 8}, 1);
  CHECK(std::abs(mlp.predict(a) - mlp.predict(b)) < 1e-12);
}

TEST_CASE("batched prediction equals per-prompt prediction and keeps input order") {
  const std::vector<PromptMatrix> prompts{random_prompt(2, 1, 4), random_prompt(2, 2, 7), random_prompt(2, 3, 7),
                                          random_prompt(2, 4, 4)};
  std::vector<std::unique_ptr<Model>> ms;
  ms.push_back(make_model(SGPTSpec{2, 2, 8}, 3));
  ms.push_back(make_model(RefTransformerSpec{2, 1, 2, 8}, 3));
  ms.push_back(make_model(MLPSpec{2, InputKind::Vectorized, {}, 8, 7}, 3));
  for (const auto& m : ms) {
    const auto batch = m->predict(std::span<const PromptMatrix>(prompts));
    for (std::size_t i = 0; i < prompts.size(); ++i) CHECK(std::abs(batch[i] - m->predict(prompts[i])) < 1e-12);
  }
}

TEST_CASE("causal transformer query row ignores nothing before it and prefixes are self-contained") {
  RefTransformerModel m(RefTransformerSpec{2, 2, 1, 8, true, true, true}, 2);
  const Rng rng(4);
  const auto full = sample_prompt(sample_task(LinearFixedNoise{2, 0.1}, rng, 0), rng, 10);
  const auto p = make_prefix(full, 5);
  // A causal model sees rows 0..5 of both; the later rows must not matter.
  nd::Tape tape;
  const Bound b = bind(tape, m.params());
  const auto h_short = m.hidden(tape, b, std::vector<PromptMatrix>{p}).value();
  auto longer = make_prefix(full, 9);
  std::vector<double> data(longer.data().begin(), longer.data().end());
  data[5 * 3 + 2] = 0.0;
  const PromptMatrix padded(10, 2, data, true);
  const auto h_long = m.hidden(tape, b, std::vector<PromptMatrix>{padded}).value();
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(h_short[5 * 8 + j] - h_long[5 * 8 + j]) < 1e-12);
}

TEST_CASE("model inputs are validated") {
  SGPTModel m(SGPTSpec{3, 1, 8}, 0);
  const Rng rng(0);
  const auto full = sample_prompt(sample_task(LinearFixedNoise{3, 0.0}, rng, 0), rng, 5);
  CHECK_THROWS_AS(m.predict(full), ContractError);
  CHECK_THROWS_AS(m.predict(random_prompt(2, 0, 5)), DimensionError);
  CHECK_THROWS_AS(m.predict(std::span<const PromptMatrix>()), ContractError);
  CHECK_THROWS_AS(RefTransformerModel(RefTransformerSpec{2, 1, 3, 8}, 0), ContractError);
}

TEST_CASE("initialization is deterministic and seed dependent") {
  const auto a = make_model(SGPTSpec{3, 2, 8}, 5);
  const auto b = make_model(SGPTSpec{3, 2, 8}, 5);
  const auto c = make_model(SGPTSpec{3, 2, 8}, 6);
  CHECK(a->params()[1].value.to_vector() == b->params()[1].value.to_vector());
  CHECK(a->params()[1].value.to_vector() != c->params()[1].value.to_vector());
  // Fan-in scaling: entry variance of a [1024 x 64] matrix is near 1/1024.
  const auto mlp = make_model(MLPSpec{3, InputKind::Vectorized, {}, 64, 256}, 1);
  const auto& w = mlp->params()[0].value;
  double ss = 0.0;
  for (double v : w.data()) ss += v * v;
  CHECK(std::abs(ss / static_cast<double>(w.size()) * 1024.0 - 1.0) < 0.05);
}

TEST_CASE("model spec json round trip and field errors") {
  const std::vector<ModelSpec> specs{
      MLPSpec{4, InputKind::Concat, {FeatureMapSpec::Kind::PsiK, feat::HilbertKernel{4}}, 32, 11},
      MLPSpec{4, InputKind::PsiLastElement, {FeatureMapSpec::Kind::PsiL, {}}, 16, 11},
      SGPTSpec{5, 2, 16, PhiKind::Softmax, feat::MaskMode::StrictCausal},
      RefTransformerSpec{5, 2, 4, 16, true, false, true, feat::MaskMode::None},
  };
  for (const auto& s : specs) CHECK(to_json(model_spec_from_json(to_json(s))) == to_json(s));
  auto expect = [](const nlohmann::json& j, const std::string& field) {
    try {
      model_spec_from_json(j);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  expect({{"kind", "sgpt"}}, "model.d");
  expect({{"kind", "nope"}, {"d", 3}}, "model.kind");
  expect({{"kind", "sgpt"}, {"d", 3}, {"phi", "relu"}}, "model.phi");
  expect({{"kind", "mlp"}, {"d", 3}, {"input", "psi_last_row"}}, "model.feature");
  expect({{"kind", "mlp"}, {"d", 3}, {"input", "weird"}}, "model.input");
  expect({{"kind", "ref_transformer"}, {"d", 3}, {"width", 6}, {"heads", 4}}, "model.heads");
  expect({{"kind", "sgpt"}, {"d", 3}, {"width", 0}}, "model.width");
}

TEST_CASE("checkpoint round trip preserves predictions exactly") {
  const auto a = random_prompt(3, 2, 9);
  std::vector<std::unique_ptr<Model>> ms;
  ms.push_back(make_model(SGPTSpec{3, 2, 8, PhiKind::Softmax, feat::MaskMode::ExcludeSelf}, 3));
  ms.push_back(make_model(RefTransformerSpec{3, 1, 2, 8}, 3));
  ms.push_back(make_model(MLPSpec{3, InputKind::Concat, {FeatureMapSpec::Kind::PsiL, {}}, 8, 9}, 3));
  for (const auto& m : ms) {
    std::stringstream ss;
    save_checkpoint(ss, *m, {{"step", 17}});
    const auto loaded = load_checkpoint(ss);
    CHECK(loaded.meta["extra"]["step"] == 17);
    CHECK(loaded.model->predict(a) == m->predict(a));
    for (std::size_t i = 0; i < m->params().size(); ++i) {
      CHECK(loaded.model->params()[i].trainable == m->params()[i].trainable);
      CHECK(loaded.model->params()[i].value.to_vector() == m->params()[i].value.to_vector());
    }
  }
  std::stringstream bad("NOTACKPT\n{}\n");
  CHECK_THROWS_AS(load_checkpoint(bad), FormatError);
  std::stringstream ss;
  save_checkpoint(ss, *ms[0]);
  std::string truncated = ss.str().substr(0, ss.str().size() - 8);
  std::stringstream tr(truncated);
  CHECK_THROWS(load_checkpoint(tr));
}
