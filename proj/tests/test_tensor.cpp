#include <catch2/catch_amalgamated.hpp>

#include "deeprnmt/gradcheck.hpp"
#include "deeprnmt/tensor.hpp"
#include "test_util.hpp"

using namespace deeprnmt;
using testutil::check_gradients;
using testutil::random_tensor;

TEST_CASE("matmul identity and hand values") {
  Tensor id = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor col = Tensor::from({2, 1}, {2, 3});
  Tensor r = matmul(id, col);
  REQUIRE(r.shape() == Shape{2, 1});
  CHECK(r.values()[0] == 2.0);
  CHECK(r.values()[1] == 3.0);

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(a, b).values()[0] == 11.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tensor a = Tensor::from({3, 4}, std::vector<Real>(12, 1));
  Tensor b = Tensor::from({5, 2}, std::vector<Real>(10, 1));
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const DimError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[3 x 4]") != std::string::npos);
    CHECK(msg.find("[5 x 2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  double err = check_gradients([&] { return sum(matmul(a, b)); }, {a, b});
  CHECK(err < 1e-5);
}

TEST_CASE("vector forms of matmul") {
  Rng rng(9);
  Tensor x = random_tensor({4}, rng);
  Tensor W = random_tensor({4, 3}, rng);
  Tensor y = matmul(x, W);
  REQUIRE(y.shape() == Shape{3});
  CHECK(check_gradients([&] { return sum(matmul(x, W)); }, {x, W}) < 1e-5);

  Tensor m = random_tensor({3, 4}, rng);
  Tensor v = random_tensor({4}, rng);
  REQUIRE(matmul(m, v).shape() == Shape{3});
  CHECK(check_gradients([&] { return sum(matmul(m, v)); }, {m, v}) < 1e-5);

  // dot product collapses to a scalar
  Tensor u = random_tensor({4}, rng);
  CHECK(matmul(u, v).rank() == 0);
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  CHECK(deeprnmt::tanh(Tensor::scalar(0)).item() == 0.0);

  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = Tensor::from({2}, {3, 4});
  CHECK(add(a, b).values() == std::vector<Real>{4, 6});
  CHECK(sub(a, b).values() == std::vector<Real>{-2, -2});
  CHECK(mul(a, b).values() == std::vector<Real>{3, 8});
  CHECK_THROWS_AS(add(a, Tensor::from({3}, {1, 2, 3})), DimError);
}

TEST_CASE("row broadcast over a matrix") {
  Rng rng(11);
  Tensor m = random_tensor({3, 4}, rng);
  Tensor v = random_tensor({4}, rng);
  Tensor r = add(m, v);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      CHECK(r.values()[static_cast<size_t>(i * 4 + j)] ==
            m.values()[static_cast<size_t>(i * 4 + j)] + v.values()[static_cast<size_t>(j)]);
  CHECK(check_gradients([&] { return sum(mul(add(m, v), sub(m, v))); }, {m, v}) < 1e-5);
}

TEST_CASE("concat and its backward split") {
  Tensor a = Tensor::from({2}, {1, 2}, true);
  Tensor b = Tensor::from({1}, {3}, true);
  Tensor c = concat(a, b);
  REQUIRE(c.values() == std::vector<Real>{1, 2, 3});

  // gradient splits at index 2
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor weights = Tensor::from({3}, {10, 20, 30});
    tape.backward(sum(mul(concat(a, b), weights)));
  }
  CHECK(a.grad() == std::vector<Real>{10, 20});
  CHECK(b.grad() == std::vector<Real>{30});
  a.zero_grad();
  b.zero_grad();
  Rng rng(3);
  Tensor x = random_tensor({3}, rng);
  Tensor y = random_tensor({2}, rng);
  CHECK(check_gradients([&] { return sum(mul(concat(x, y), concat(x, y))); }, {x, y}) < 1e-5);
}

TEST_CASE("slice") {
  Tensor a = Tensor::from({4}, {1, 2, 3, 4}, true);
  CHECK(slice(a, 1, 3).values() == std::vector<Real>{2, 3});
  CHECK_THROWS_AS(slice(a, 2, 7), DimError);
  CHECK(check_gradients([&] { return sum(mul(slice(a, 0, 3), slice(a, 1, 4))); }, {a}) < 1e-5);
}

TEST_CASE("reductions and pick") {
  Tensor a = Tensor::from({3}, {1, 2, 4});
  CHECK(sum(a).item() == 7.0);
  CHECK(mean(a).item() == Catch::Approx(7.0 / 3.0));
  CHECK(pick(a, 2).item() == 4.0);
  CHECK_THROWS_AS(pick(a, 3), DimError);

  Rng rng(5);
  Tensor x = random_tensor({5}, rng);
  CHECK(check_gradients([&] { return mean(mul(x, x)); }, {x}) < 1e-5);
}

TEST_CASE("backward of a linear sum gives ones") {
  Tensor w = Tensor::from({3}, {5, -1, 2}, true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    tape.backward(sum(w));
  }
  CHECK(w.grad() == std::vector<Real>{1, 1, 1});
}

TEST_CASE("backward of sum of squares") {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    tape.backward(sum(mul(w, w)));
  }
  CHECK(w.grad() == std::vector<Real>{2, 4});
}

TEST_CASE("backward rejects non-scalar and detached tensors") {
  Tensor w = Tensor::from({2}, {1, 2}, true);
  Tape tape;
  Tape::Scope scope(tape);
  CHECK_THROWS_AS(tape.backward(mul(w, w)), DimError);
  CHECK_THROWS_AS(deeprnmt::backward(w), std::logic_error);
}

TEST_CASE("gradients accumulate across backward calls") {
  Tensor w = Tensor::from({2}, {0.5, -0.25}, true);

  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor l1 = sum(mul(w, w));
    Tensor l2 = sum(mul(w, mul(w, w)));
    tape.backward(l1);
    tape.backward(l2);
  }
  std::vector<Real> two_calls = w.grad();
  w.zero_grad();

  Tape tape2;
  {
    Tape::Scope scope(tape2);
    Tensor l = add(sum(mul(w, w)), sum(mul(w, mul(w, w))));
    tape2.backward(l);
  }
  for (size_t i = 0; i < two_calls.size(); ++i)
    CHECK(two_calls[i] == Catch::Approx(w.grad()[i]).epsilon(1e-12));
  w.zero_grad();
}

TEST_CASE("forward is bit-identical across runs") {
  Rng rng(17);
  Tensor a = random_tensor({6, 6}, rng, false);
  Tensor b = random_tensor({6, 6}, rng, false);
  Tensor first = matmul(deeprnmt::tanh(a), sigmoid(b));
  Tensor second = matmul(deeprnmt::tanh(a), sigmoid(b));
  REQUIRE(first.values() == second.values());
}

TEST_CASE("scale and composed graph gradcheck") {
  Rng rng(23);
  Tensor x = random_tensor({4}, rng);
  Tensor w = random_tensor({4, 4}, rng);
  auto build = [&] {
    Tensor h = deeprnmt::tanh(matmul(x, w));
    return scale(sum(mul(h, sigmoid(h))), 0.5);
  };
  CHECK(check_gradients(build, {x, w}) < 1e-5);
}

TEST_CASE("a corrupted backward rule is caught by the checker") {
  // negative control: an op whose forward doubles but whose backward claims
  // a factor of three must trip the finite-difference harness
  auto broken_double = [](const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (size_t i = 0; i < x.values().size(); ++i) out.values()[i] = 2 * x.values()[i];
    detail::record(out, "broken_double",
                   [](Tape::Node& n) {
                     const auto& g = n.out.data()->g;
                     auto& gx = n.in[0].grad();
                     for (size_t i = 0; i < g.size(); ++i) gx[i] += 3 * g[i];
                   },
                   x);
    return out;
  };
  Tensor x = Tensor::from({3}, {0.5, -1, 2}, true);
  deeprnmt::GradCheckReport report = deeprnmt::grad_check(
      [&] { return sum(broken_double(x)); }, {{"x", x}});
  CHECK(report.worst_err > 0.3);
  CHECK(report.worst_name == "x");

  // the same harness is quiet on a correct rule
  deeprnmt::GradCheckReport ok =
      deeprnmt::grad_check([&] { return sum(mul(x, x)); }, {{"x", x}});
  CHECK(ok.worst_err < 1e-6);
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimError);
  Tensor t = Tensor::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK_FALSE(t.has_grad());
  t.grad();  // lazily allocates
  CHECK(t.has_grad());
  CHECK(t.grad().size() == 6);
}
