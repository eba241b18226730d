#include "ucrn/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>

#include "ucrn/generator.hpp"
#include "ucrn/lm.hpp"
#include "ucrn/retriever.hpp"
#include "ucrn/rng.hpp"
#include "ucrn/tensor.hpp"

namespace ucrn {

namespace {

constexpr double kStep = 1e-5;
constexpr std::size_t kMaxElementsPerTensor = 48;

Tensor randn(Rng& rng, std::vector<std::size_t> shape, double sigma, bool grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), grad);
  for (double& x : t.values()) x = rng.normal(0.0, sigma);
  return t;
}

// scalar projection of a possibly-matrix output onto fixed coefficients
Tensor project(Graph& g, const Tensor& out, const std::vector<double>& coeff) {
  Tensor c = Tensor::from(out.shape(), coeff);
  return g.sum(g.mul(out, c));
}

std::vector<double> coefficients(Rng& rng, std::size_t n) {
  std::vector<double> c(n);
  for (double& x : c) x = rng.normal(0.0, 1.0);
  return c;
}

struct Case {
  std::string name;
  std::vector<Tensor> params;
  std::function<Tensor(Graph&)> build;
};

GradCase check_case(const Case& c) {
  Graph g;
  Tensor loss = c.build(g);
  g.backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& p : c.params) analytic.push_back(p.grad());
  auto eval = [&]() {
    Graph g2;
    return c.build(g2).item();
  };
  GradCase out;
  out.name = c.name;
  for (std::size_t pi = 0; pi < c.params.size(); ++pi) {
    Tensor p = c.params[pi];
    std::size_t n = p.numel();
    std::size_t stride = n <= kMaxElementsPerTensor ? 1 : n / kMaxElementsPerTensor;
    for (std::size_t i = 0; i < n; i += stride) {
      double saved = p.values()[i];
      p.values()[i] = saved + kStep;
      double up = eval();
      p.values()[i] = saved - kStep;
      double down = eval();
      p.values()[i] = saved;
      double numeric = (up - down) / (2.0 * kStep);
      double a = analytic[pi][i];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
      out.max_rel_err = std::max(out.max_rel_err, rel);
      ++out.checked;
    }
    p.zero_grad();
  }
  return out;
}

}  // namespace

GradReport run_gradient_checks(std::uint64_t seed) {
  auto start = std::chrono::steady_clock::now();
  Rng rng(seed);
  std::vector<Case> cases;

  {  // elementwise arithmetic chain
    Tensor a = randn(rng, {3, 4}, 1.0);
    Tensor b = randn(rng, {3, 4}, 1.0);
    std::vector<double> c = coefficients(rng, 12);
    cases.push_back({"arithmetic", {a, b}, [=](Graph& g) {
                       Tensor x = g.add(g.mul(a, b), g.scale(g.sub(a, b), 0.7));
                       return project(g, g.add_const(x, 0.3), c);
                     }});
  }
  {  // matmul / matmul_nt / add_bias / transpose
    Tensor a = randn(rng, {3, 5}, 0.8);
    Tensor b = randn(rng, {5, 4}, 0.8);
    Tensor c = randn(rng, {3, 4}, 0.8);
    Tensor bias = randn(rng, {4}, 0.5);
    std::vector<double> k = coefficients(rng, 12);
    std::vector<double> k2 = coefficients(rng, 15);
    cases.push_back({"matmul", {a, b, c, bias}, [=](Graph& g) {
                       Tensor m = g.add_bias(g.matmul(a, b), bias);  // 3x4
                       Tensor p1 = project(g, m, k);
                       Tensor mn = g.matmul_nt(m, c);  // 3x3
                       return g.add(p1, project(g, g.matmul(g.transpose(mn), a), k2));
                     }});
  }
  {  // row/col slicing, gather, concatenation
    Tensor a = randn(rng, {4, 6}, 1.0);
    Tensor b = randn(rng, {2, 6}, 1.0);
    std::vector<double> k = coefficients(rng, 36);
    cases.push_back({"reshuffle", {a, b}, [=](Graph& g) {
                       Tensor cat = g.concat_rows({a, b});                 // 6x6
                       Tensor taken = g.take_rows(cat, {0, 5, 2, 2, 4, 1});  // repeats
                       Tensor left = g.slice_cols(taken, 0, 3);
                       Tensor right = g.slice_cols(taken, 3, 3);
                       Tensor swapped = g.concat_cols({right, left});
                       return project(g, g.slice_rows(swapped, 0, 6), k);
                     }});
  }
  {  // nonlinearities; clamp inputs kept away from the kink
    Tensor a = randn(rng, {3, 4}, 1.2);
    std::vector<double> k = coefficients(rng, 12);
    cases.push_back({"nonlinear", {a}, [=](Graph& g) {
                       Tensor x = g.gelu(a);
                       x = g.add(x, g.sigmoid(a));
                       x = g.add(x, g.exp(g.scale(a, 0.3)));
                       x = g.add(x, g.clamp_max(g.scale(a, 0.5), 25.0));
                       return project(g, x, k);
                     }});
  }
  {  // layer norm with gain and bias
    Tensor a = randn(rng, {4, 6}, 1.0);
    Tensor gain = randn(rng, {6}, 0.4);
    Tensor bias = randn(rng, {6}, 0.4);
    std::vector<double> k = coefficients(rng, 24);
    cases.push_back({"layer_norm", {a, gain, bias}, [=](Graph& g) {
                       return project(g, g.layer_norm(a, gain, bias), k);
                     }});
  }
  {  // softmax family and reductions
    Tensor a = randn(rng, {4, 4}, 1.5);
    std::vector<double> k = coefficients(rng, 16);
    std::vector<double> k2 = coefficients(rng, 16);
    std::vector<double> k3 = coefficients(rng, 4);
    cases.push_back({"softmax", {a}, [=](Graph& g) {
                       Tensor s1 = project(g, g.softmax_rows(a), k);
                       Tensor s2 = project(g, g.causal_softmax(a), k2);
                       Tensor s3 = g.softmax_cross_entropy(a, {1, 3, 0, 2});
                       Tensor s4 = project(g, g.mean_rows(a), k3);
                       return g.add(g.add(s1, s2), g.add(s3, s4));
                     }});
  }
  {  // normalization and scalar gating
    Tensor a = randn(rng, {3, 5}, 1.0);
    Tensor s = randn(rng, {1}, 0.5);
    std::vector<double> k = coefficients(rng, 15);
    cases.push_back({"normalize_gate", {a, s}, [=](Graph& g) {
                       Tensor u = g.l2_normalize_rows(a);
                       Tensor gated = g.scale_by(u, g.sigmoid(s));
                       return project(g, gated, k);
                     }});
  }
  {  // two-layer MLP with layer norm into cross entropy
    Tensor x = randn(rng, {4, 6}, 1.0);
    Tensor w1 = randn(rng, {6, 8}, 0.5);
    Tensor b1 = randn(rng, {8}, 0.2);
    Tensor w2 = randn(rng, {8, 5}, 0.5);
    Tensor b2 = randn(rng, {5}, 0.2);
    Tensor gain = randn(rng, {8}, 0.3);
    Tensor bias = randn(rng, {8}, 0.3);
    cases.push_back({"mlp", {x, w1, b1, w2, b2, gain, bias}, [=](Graph& g) {
                       Tensor h = g.gelu(g.add_bias(g.matmul(x, w1), b1));
                       h = g.layer_norm(h, gain, bias);
                       Tensor logits = g.add_bias(g.matmul(h, w2), b2);
                       return g.softmax_cross_entropy(logits, {0, 4, 2, 1});
                     }});
  }
  {  // contrastive objective through the temperature
    Tensor q = randn(rng, {3, 6}, 1.0);
    Tensor d = randn(rng, {3, 6}, 1.0);
    Tensor temp = randn(rng, {1}, 0.3);
    cases.push_back({"contrastive", {q, d, temp}, [=](Graph& g) {
                       Tensor qn = g.l2_normalize_rows(q);
                       Tensor dn = g.l2_normalize_rows(d);
                       Tensor scale = g.exp(g.clamp_max(temp, 4.6));
                       return info_nce(g, qn, dn, scale);
                     }});
  }

  // whole tiny transformer: every parameter gets a finite-difference pass
  ToyLMConfig tiny;
  tiny.layers = 1;
  tiny.d_model = 8;
  tiny.heads = 2;
  tiny.max_sequence = 12;
  tiny.vocab = 11;
  tiny.ff_hidden = 12;
  tiny.tiles = 2;
  tiny.feature_dim = 6;
  tiny.adapter_hidden = 6;
  ToyLM tiny_lm = ToyLM::init(tiny, Rng::derive(seed, 77));
  {
    std::vector<double> feats(6);
    for (double& f : feats) f = rng.normal(0.0, 1.0);
    std::vector<int> ids = {3, 7, 5, 9};
    cases.push_back({"transformer", tiny_lm.parameters(), [=](Graph& g) {
                       Tensor content = g.concat_rows(
                           {tiny_lm.visual_prefix(g, feats), tiny_lm.embed_tokens(g, ids)});
                       ToyLM::Output o = tiny_lm.forward(g, content);
                       return g.softmax_cross_entropy(g.take_rows(o.logits, {1, 2, 3, 4}),
                                                      {7, 5, 9, 2});
                     }});
  }
  {  // adapter gradients flowing through the frozen transformer
    ToyLM frozen = ToyLM::init(tiny, Rng::derive(seed, 78));
    frozen.freeze();
    TileAdapter xi = init_entity_adapter(frozen);
    EntityDocument doc;
    doc.id = 0;
    doc.features.resize(6);
    Rng drng(Rng::derive(seed, 79));
    for (double& f : doc.features) f = drng.normal(0.0, 1.0);
    doc.caption = {4, 6};
    doc.metadata = {8};
    std::vector<double> qfeats(6);
    for (double& f : qfeats) f = drng.normal(0.0, 1.0);
    std::vector<int> question = {5, 9};
    cases.push_back({"adapter_through_frozen", xi.parameters(), [=](Graph& g) {
                       std::vector<Tensor> parts;
                       parts.push_back(frozen.visual_prefix(g, qfeats));
                       parts.push_back(frozen.embed_tokens(g, {kImg}));
                       parts.push_back(frozen.embed_tokens(g, question));
                       parts.push_back(adapt_entity(g, xi, frozen, doc));
                       parts.push_back(frozen.embed_tokens(g, {6, 4}));
                       ToyLM::Output o = frozen.forward(g, g.concat_rows(parts));
                       std::size_t last = 2 + 1 + 2 + 5 + 2 - 1;
                       return g.softmax_cross_entropy(
                           g.take_rows(o.logits, {static_cast<int>(last) - 2,
                                                  static_cast<int>(last) - 1,
                                                  static_cast<int>(last)}),
                           {6, 4, 2});
                     }});
  }

  GradReport report;
  for (const Case& c : cases) {
    report.cases.push_back(check_case(c));
    report.max_rel_err = std::max(report.max_rel_err, report.cases.back().max_rel_err);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace ucrn
