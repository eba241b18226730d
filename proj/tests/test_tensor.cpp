#include <algorithm>
#include <cmath>
#include <string>

#include "doctest.h"
#include "ucrn/gradcheck.hpp"
#include "ucrn/optim.hpp"
#include "ucrn/rng.hpp"
#include "ucrn/tensor.hpp"

using namespace ucrn;

namespace {

bool throws_containing(const std::function<void()>& fn, const std::string& needle) {
  try {
    fn();
  } catch (const std::exception& e) {
    return std::string(e.what()).find(needle) != std::string::npos;
  }
  return false;
}

}  // namespace

TEST_CASE("gelu matches the exact erf form at pinned points") {
  Graph g;
  Tensor x = Tensor::from({5}, {0.0, 1.0, -1.0, 10.0, -10.0}, true);
  Tensor y = g.gelu(x);
  CHECK(y.values()[0] == doctest::Approx(0.0).epsilon(1e-12));
  // x * standard normal CDF at x=1
  CHECK(y.values()[1] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
  CHECK(y.values()[2] == doctest::Approx(-(1.0 - 0.8413447460685429)).epsilon(1e-10));
  CHECK(std::abs(y.values()[3] - 10.0) < 1e-9);
  CHECK(std::abs(y.values()[4]) < 1e-9);
}

TEST_CASE("softmax rows are normalized and causal rows ignore the future") {
  Graph g;
  Tensor x = Tensor::from({3, 3}, {0.3, -2.0, 1.7, 0.0, 0.0, 0.0, 5.0, 1.0, -1.0}, true);
  Tensor s = g.softmax_rows(x);
  for (std::size_t r = 0; r < 3; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 3; ++c) sum += s.values()[r * 3 + c];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor cs = g.causal_softmax(x);
  CHECK(cs.values()[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cs.values()[1] == 0.0);  // exactly masked
  CHECK(cs.values()[2] == 0.0);
  CHECK(cs.values()[3] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(cs.values()[5] == 0.0);
  double last_row = cs.values()[6] + cs.values()[7] + cs.values()[8];
  CHECK(last_row == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("cross entropy saturates at zero and hits ln V for uniform logits") {
  Graph g;
  Tensor confident = Tensor::from({1, 3}, {1000.0, 0.0, 0.0}, true);
  CHECK(g.softmax_cross_entropy(confident, {0}).item() == doctest::Approx(0.0).epsilon(1e-6));
  Tensor uniform = Tensor::zeros({2, 4}, true);
  CHECK(g.softmax_cross_entropy(uniform, {1, 3}).item() ==
        doctest::Approx(1.3862943611198906).epsilon(1e-12));
}

TEST_CASE("layer_norm standardizes each row") {
  Graph g;
  Tensor x = Tensor::from({2, 4}, {1.0, 2.0, 3.0, 4.0, -5.0, 0.0, 5.0, 10.0}, true);
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  Tensor y = g.layer_norm(x, gain, bias);
  for (std::size_t r = 0; r < 2; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 4; ++c) mean += y.values()[r * 4 + c];
    mean /= 4.0;
    for (std::size_t c = 0; c < 4; ++c) {
      double d = y.values()[r * 4 + c] - mean;
      var += d * d;
    }
    var /= 4.0;
    CHECK(std::abs(mean) < 1e-12);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));  // eps shifts variance slightly
  }
}

TEST_CASE("l2 normalization yields unit rows and keeps zero rows zero") {
  Graph g;
  Tensor x = Tensor::from({2, 3}, {3.0, 4.0, 0.0, 0.0, 0.0, 0.0}, true);
  Tensor y = g.l2_normalize_rows(x);
  CHECK(std::hypot(y.values()[0], y.values()[1]) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.values()[3] == 0.0);
  CHECK(y.values()[4] == 0.0);
  CHECK(y.values()[5] == 0.0);
}

TEST_CASE("matmul_nt agrees with explicit transpose") {
  Rng rng(7);
  Tensor a = Tensor::zeros({3, 5}, true);
  Tensor b = Tensor::zeros({4, 5}, true);
  for (double& v : a.values()) v = rng.normal(0.0, 1.0);
  for (double& v : b.values()) v = rng.normal(0.0, 1.0);
  Graph g;
  Tensor direct = g.matmul_nt(a, b);
  Tensor via_t = g.matmul(a, g.transpose(b));
  for (std::size_t i = 0; i < direct.numel(); ++i)
    CHECK(direct.values()[i] == via_t.values()[i]);
}

TEST_CASE("gather accumulates gradients for repeated rows") {
  Graph g;
  Tensor x = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0}, true);
  Tensor taken = g.take_rows(x, {0, 0, 1});
  Tensor loss = g.sum(taken);
  g.backward(loss);
  CHECK(x.grad()[0] == 2.0);  // row 0 taken twice
  CHECK(x.grad()[1] == 2.0);
  CHECK(x.grad()[2] == 1.0);
  CHECK(x.grad()[3] == 1.0);
}

TEST_CASE("clamp passes gradient only below the cap") {
  Graph g;
  Tensor x = Tensor::from({2}, {1.0, 10.0}, true);
  Tensor y = g.clamp_max(x, 5.0);
  CHECK(y.values()[0] == 1.0);
  CHECK(y.values()[1] == 5.0);
  g.backward(g.sum(y));
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("backward accumulates additively when run twice") {
  Graph g;
  Tensor x = Tensor::from({2, 2}, {0.5, -1.0, 2.0, 0.25}, true);
  Tensor loss = g.sum(g.mul(x, x));
  g.backward(loss);
  std::vector<double> once = x.grad();
  g.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(x.grad()[i] == 2.0 * once[i]);
}

TEST_CASE("backward rejects non-scalar and foreign losses") {
  Graph g;
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  Tensor y = g.add(x, x);
  CHECK(throws_containing([&] { g.backward(y); }, "loss must be scalar"));
  Graph other;
  Tensor z = other.sum(x);
  CHECK(throws_containing([&] { g.backward(z); }, "not produced by this graph"));
}

TEST_CASE("shape errors name the operation and both shapes") {
  Graph g;
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  CHECK(throws_containing([&] { g.matmul(a, b); }, "matmul: shape mismatch [2,3] x [2,3]"));
  CHECK(throws_containing([&] { g.add_bias(a, Tensor::zeros({4})); }, "add_bias"));
  CHECK(throws_containing([&] { g.causal_softmax(a); }, "square"));
  CHECK(throws_containing([&] { g.take_rows(a, {5}); }, "out of range"));
  CHECK(throws_containing([&] { g.softmax_cross_entropy(a, {0, 1, 0}); }, "cross_entropy"));
}

TEST_CASE("finite differences confirm every operation gradient") {
  GradReport report = run_gradient_checks(123);
  CHECK(report.max_rel_err < kGradCheckTolerance);
  CHECK(report.cases.size() >= 10);
}

TEST_CASE("adam converges on a quadratic bowl") {
  Tensor x = Tensor::from({2}, {10.0, -10.0}, true);
  Optimizer opt(Optimizer::Kind::adam, 0.1);
  std::vector<Tensor> params = {x};
  for (int step = 0; step < 800; ++step) {
    Graph g;
    Tensor target = Tensor::from({2}, {3.0, -2.0});
    Tensor diff = g.sub(x, target);
    g.backward(g.sum(g.mul(diff, diff)));
    opt.step(params);
  }
  CHECK(x.values()[0] == doctest::Approx(3.0).epsilon(1e-3));
  CHECK(x.values()[1] == doctest::Approx(-2.0).epsilon(1e-3));
}

TEST_CASE("sgd takes plain gradient steps") {
  Tensor x = Tensor::from({1}, {4.0}, true);
  Optimizer opt(Optimizer::Kind::sgd, 0.25);
  std::vector<Tensor> params = {x};
  Graph g;
  g.backward(g.sum(g.mul(x, x)));  // d/dx x^2 = 8
  opt.step(params);
  CHECK(x.values()[0] == doctest::Approx(4.0 - 0.25 * 8.0).epsilon(1e-12));
}

TEST_CASE("optimizer refuses parameters without gradients") {
  Tensor x = Tensor::zeros({2, 2}, true);
  Optimizer opt(Optimizer::Kind::adam, 0.1);
  std::vector<Tensor> params = {x};
  CHECK(throws_containing([&] { opt.step(params); }, "no accumulated gradient"));
}

TEST_CASE("optimizer zeroes gradients after stepping") {
  Tensor x = Tensor::from({1}, {1.0}, true);
  Optimizer opt(Optimizer::Kind::sgd, 0.1);
  std::vector<Tensor> params = {x};
  Graph g;
  g.backward(g.sum(g.mul(x, x)));
  opt.step(params);
  for (double v : x.grad()) CHECK(v == 0.0);
}

TEST_CASE("rng streams are deterministic and derivation separates phases") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng::derive(42, 1) != Rng::derive(42, 2));
  CHECK(Rng::derive(42, 1) == Rng::derive(42, 1));
  Rng c(7);
  std::vector<std::size_t> idx(50);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  c.shuffle(idx);
  std::vector<std::size_t> sorted = idx;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  Rng d(9);
  for (int i = 0; i < 100; ++i) {
    double u = d.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("graph computations are bit-identical across repeated runs") {
  auto run = [] {
    Rng rng(11);
    Tensor x = Tensor::zeros({4, 8}, true);
    Tensor w = Tensor::zeros({8, 8}, true);
    for (double& v : x.values()) v = rng.normal(0.0, 1.0);
    for (double& v : w.values()) v = rng.normal(0.0, 1.0);
    Graph g;
    Tensor y = g.softmax_rows(g.gelu(g.matmul(x, w)));
    g.backward(g.sum(g.mul(y, y)));
    std::vector<double> out = y.values();
    out.insert(out.end(), x.grad().begin(), x.grad().end());
    return out;
  };
  std::vector<double> r1 = run(), r2 = run();
  REQUIRE(r1.size() == r2.size());
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}
