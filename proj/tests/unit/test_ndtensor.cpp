#include <doctest.h>

#include <cmath>

#include "icl/errors.hpp"
#include "icl/ndtensor/gradcheck.hpp"
#include "icl/ndtensor/ops.hpp"

using namespace icl;
using namespace icl::nd;

namespace {

// Weighted sum so every output entry gets a distinct upstream gradient.
Var weighted_sum(Tape& tape, const Var& y, std::uint64_t seed) {
  return sum(mul(y, tape.constant(random_tensor(y.shape(), seed))));
}

void require_fd(const std::string& name, const LossBuilder& loss, const std::vector<Tensor>& inputs,
                double tol = 1e-5) {
  const auto r = check_gradient(name, loss, inputs, tol);
  INFO(name << " max rel err " << r.max_rel_error);
  CHECK(r.passed);
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape tape;
  const Tensor m = random_tensor({3, 3}, 1);
  auto out = matmul(tape.leaf(Tensor::identity(3)), tape.leaf(m));
  CHECK(out.value().identical(m));
  auto p = matmul(tape.leaf(Tensor::matrix({{1, 2}, {3, 4}})), tape.leaf(Tensor::matrix({{1}, {1}})));
  CHECK(p.value().at(0, 0) == 3.0);
  CHECK(p.value().at(1, 0) == 7.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  auto a = tape.leaf(Tensor::zeros({2, 3}));
  auto b = tape.leaf(Tensor::zeros({2, 3}));
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum matches finite differences") {
  require_fd("matmul", [](Tape&, const std::vector<Var>& v) { return sum(matmul(v[0], v[1])); },
             {random_tensor({4, 5}, 2), random_tensor({5, 3}, 3)}, 1e-6);
}

TEST_CASE("row_l1_normalize examples and invariant") {
  Tape tape;
  auto y = row_l1_normalize(tape.leaf(Tensor::matrix({{2, -2, 4}, {0, 0, 0}})));
  CHECK(y.value().at(0, 0) == doctest::Approx(0.25));
  CHECK(y.value().at(0, 1) == doctest::Approx(-0.25));
  CHECK(y.value().at(0, 2) == doctest::Approx(0.5));
  for (std::size_t j = 0; j < 3; ++j) CHECK(y.value().at(1, j) == 0.0);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto z = row_l1_normalize(tape.leaf(random_tensor({5, 7}, 100 + seed)));
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 7; ++j) s += std::abs(z.value().at(r, j));
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
  require_fd("row_l1_normalize",
             [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, row_l1_normalize(v[0]), 9); },
             {random_tensor({3, 4}, 4)}, 1e-6);
}

TEST_CASE("row_softmax examples") {
  Tape tape;
  auto a = row_softmax(tape.leaf(Tensor::matrix({{0, 0}, {1000, 0}, {3, 4}})),
                       Tensor::matrix({{1, 1}, {1, 1}, {0, 0}}));
  CHECK(a.value().at(0, 0) == doctest::Approx(0.5));
  CHECK(std::abs(a.value().at(1, 0) - 1.0) < 1e-12);
  CHECK(std::abs(a.value().at(1, 1)) < 1e-12);
  CHECK(a.value().at(2, 0) == 0.0);
  CHECK(a.value().at(2, 1) == 0.0);
}

TEST_CASE("row_softmax rows are stochastic over unmasked entries") {
  Tape tape;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_tensor({6, 6}, 200 + seed, -10, 10);
    const Tensor m = random_tensor({6, 6}, 300 + seed, 0, 1);
    std::vector<double> mv(36);
    for (std::size_t i = 0; i < 36; ++i) mv[i] = (m[i] > 0.4 || i % 7 == 0) ? 1.0 : 0.0;
    auto y = row_softmax(tape.leaf(x), Tensor({6, 6}, mv));
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        if (mv[r * 6 + j] == 0.0) CHECK(y.value().at(r, j) == 0.0);
        s += y.value().at(r, j);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("activations") {
  Tape tape;
  auto x = tape.leaf(Tensor::vector({0.0, -3.0, 3.0}));
  auto g = gelu(x);
  auto r = relu(x);
  CHECK(g.value()[0] == 0.0);
  CHECK(r.value()[0] == 0.0);
  CHECK(r.value()[1] == 0.0);
  CHECK(r.value()[2] == 3.0);
  // Exact form: gelu(1) = Phi(1).
  auto one = gelu(tape.leaf(Tensor::scalar(1.0)));
  CHECK(one.value().item() == doctest::Approx(0.8413447460685429).epsilon(1e-14));

  auto grads = tape.backward(sum(relu(tape.leaf(Tensor::vector({0.0})))));
  (void)grads;
  Tape t2;
  auto z = t2.leaf(Tensor::vector({0.0}));
  CHECK(t2.backward(sum(relu(z)))[z][0] == 0.0);

  require_fd("gelu", [](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, gelu(v[0]), 5); },
             {random_tensor({20}, 6)}, 1e-6);
}

TEST_CASE("backward basics") {
  Tape tape;
  auto x = tape.leaf(Tensor::scalar(3.0));
  auto unused = tape.leaf(Tensor::vector({1.0, 2.0}));
  auto loss = mul(x, x);
  auto g = tape.backward(loss);
  CHECK(g[x].item() == 6.0);
  CHECK(g[unused][0] == 0.0);
  CHECK(g[unused][1] == 0.0);
  CHECK_THROWS_AS(tape.backward(tape.leaf(Tensor::vector({1.0, 2.0}))), ContractError);
}

TEST_CASE("backward is bit-deterministic") {
  Tape tape;
  auto a = tape.leaf(random_tensor({4, 6}, 11));
  auto b = tape.leaf(random_tensor({6, 4}, 12));
  auto loss = mean(gelu(matmul(row_softmax(matmul(a, b)), a)));
  auto g1 = tape.backward(loss);
  auto g2 = tape.backward(loss);
  CHECK(g1[a].identical(g2[a]));
  CHECK(g1[b].identical(g2[b]));
}

TEST_CASE("every differentiable op passes finite differences") {
  const Tensor m34 = random_tensor({3, 4}, 21);
  const Tensor n34 = random_tensor({3, 4}, 22);
  const Tensor b3 = random_tensor({2, 3, 4}, 23);
  const Tensor c3 = random_tensor({2, 4, 5}, 24);
  const Tensor v4 = random_tensor({4}, 25);
  const Tensor w4 = random_tensor({4}, 26);
  using L = LossBuilder;
  auto ws = [](std::uint64_t s, auto op) {
    return L([s, op](Tape& t, const std::vector<Var>& v) { return weighted_sum(t, op(v), s); });
  };
  require_fd("batched_matmul", ws(1, [](auto& v) { return batched_matmul(v[0], v[1]); }), {b3, c3});
  require_fd("transpose2", ws(2, [](auto& v) { return transpose(v[0]); }), {m34});
  require_fd("transpose3", ws(3, [](auto& v) { return transpose(v[0]); }), {b3});
  require_fd("reshape", ws(4, [](auto& v) { return reshape(v[0], {4, 3}); }), {m34});
  require_fd("add", ws(5, [](auto& v) { return add(v[0], v[1]); }), {m34, n34});
  require_fd("sub", ws(6, [](auto& v) { return sub(v[0], v[1]); }), {m34, n34});
  require_fd("mul", ws(7, [](auto& v) { return mul(v[0], v[1]); }), {m34, n34});
  require_fd("scale", ws(8, [](auto& v) { return scale(v[0], -1.7); }), {m34});
  require_fd("add_scalar", ws(9, [](auto& v) { return add_scalar(v[0], 0.3); }), {m34});
  require_fd("add_bias", ws(10, [](auto& v) { return add_bias(v[0], v[1]); }), {b3, v4});
  require_fd("row_l1_normalize3", ws(11, [](auto& v) { return row_l1_normalize(v[0]); }), {b3});
  require_fd("row_softmax", ws(12, [](auto& v) { return row_softmax(v[0]); }), {m34});
  const Tensor mask = Tensor::matrix({{0, 1, 1, 1}, {1, 0, 1, 1}, {1, 1, 0, 0}});
  require_fd("row_softmax_masked", ws(13, [mask](auto& v) { return row_softmax(v[0], mask); }), {m34});
  require_fd("layer_norm", ws(14, [](auto& v) { return layer_norm(v[0], v[1], v[2]); }), {b3, v4, w4});
  require_fd("relu", ws(15, [](auto& v) { return relu(v[0]); }), {m34});
  require_fd("concat_last", ws(16, [](auto& v) { return concat_last(v[0], v[1]); }),
             {m34, random_tensor({3, 2}, 27)});
  require_fd("concat_rows", ws(17, [](auto& v) { return concat_rows(v[0], v[1]); }),
             {m34, random_tensor({2, 4}, 28)});
  require_fd("select_row", ws(18, [](auto& v) { return select_row(v[0], 2); }), {b3});
  require_fd("slice_last", ws(19, [](auto& v) { return slice_last(v[0], 1, 2); }), {b3});
  require_fd("mean", [](Tape&, const std::vector<Var>& v) { return mean(mul(v[0], v[0])); }, {m34});
  require_fd("squared_error", [n34](Tape&, const std::vector<Var>& v) { return squared_error(v[0], n34); },
             {m34});
}

TEST_CASE("gradcheck flags a corrupted backward rule") {
  auto broken = [](Tape& tape, const std::vector<Var>& v) {
    const Var a = v[0];
    std::vector<double> out(a.value().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 2.0 * a.value()[i];
    Var y = tape.record("doubled", Tensor(a.shape(), out), {a}, [a](std::span<const double> g, GradSink& s) {
      auto ga = s.grad(a);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 3.0 * g[i];
    });
    return sum(y);
  };
  const auto r = check_gradient("doubled", broken, {random_tensor({5}, 1)});
  CHECK_FALSE(r.passed);
  CHECK(r.max_rel_error > 0.4);
}
