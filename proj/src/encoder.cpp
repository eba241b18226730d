#include "ucrn/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace ucrn {

namespace {

Tensor randn(Rng& rng, std::vector<std::size_t> shape, double sigma) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& x : t.values()) x = rng.normal(0.0, sigma);
  return t;
}

}  // namespace

DualEncoder DualEncoder::init(int vocab, int feature_dim, int dim, int img_hidden,
                              std::uint64_t seed) {
  if (vocab <= 0 || feature_dim <= 0 || dim <= 0 || img_hidden <= 0)
    throw std::runtime_error("encoder: all dimensions must be positive");
  Rng rng(seed);
  DualEncoder e;
  e.vocab = vocab;
  e.feature_dim = feature_dim;
  e.dim = dim;
  std::size_t V = static_cast<std::size_t>(vocab);
  std::size_t F = static_cast<std::size_t>(feature_dim);
  std::size_t D = static_cast<std::size_t>(dim);
  std::size_t H = static_cast<std::size_t>(img_hidden);
  e.word_emb = randn(rng, {V, D}, 0.05);
  e.text_w = randn(rng, {D, D}, 1.0 / std::sqrt(static_cast<double>(dim)));
  e.text_b = Tensor::zeros({D}, true);
  e.img_w1 = randn(rng, {F, H}, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  e.img_b1 = Tensor::zeros({H}, true);
  e.img_w2 = randn(rng, {H, D}, 1.0 / std::sqrt(static_cast<double>(img_hidden)));
  e.img_b2 = Tensor::zeros({D}, true);
  e.logit_scale = Tensor::full({1}, kInitialLogitScale, true);
  return e;
}

std::vector<Tensor> DualEncoder::parameters() const {
  return {word_emb, text_w, text_b, img_w1, img_b1, img_w2, img_b2, logit_scale};
}

NamedTensors DualEncoder::named_parameters() const {
  return {{"enc.word_emb", word_emb}, {"enc.text_w", text_w},   {"enc.text_b", text_b},
          {"enc.img_w1", img_w1},     {"enc.img_b1", img_b1},   {"enc.img_w2", img_w2},
          {"enc.img_b2", img_b2},     {"enc.logit_scale", logit_scale}};
}

void DualEncoder::set_requires_grad(bool b) {
  for (Tensor t : parameters()) t.set_requires_grad(b);
}

Tensor DualEncoder::encode_text(Graph& g, const std::vector<int>& ids) const {
  if (ids.empty()) return Tensor::zeros({1, static_cast<std::size_t>(dim)});
  Tensor bag = g.mean_rows(g.take_rows(word_emb, ids));
  Tensor h = g.add_bias(g.matmul(bag, text_w), text_b);
  return g.l2_normalize_rows(h);
}

Tensor DualEncoder::encode_image(Graph& g, const std::vector<double>& features) const {
  if (features.empty()) return Tensor::zeros({1, static_cast<std::size_t>(dim)});
  if (static_cast<int>(features.size()) != feature_dim)
    throw std::runtime_error("encoder.encode_image: expected " + std::to_string(feature_dim) +
                             " features, got " + std::to_string(features.size()));
  Tensor x = Tensor::from({1, static_cast<std::size_t>(feature_dim)}, features);
  Tensor h = g.gelu(g.add_bias(g.matmul(x, img_w1), img_b1));
  h = g.add_bias(g.matmul(h, img_w2), img_b2);
  return g.l2_normalize_rows(h);
}

Tensor DualEncoder::encode_multimodal(Graph& g, const std::vector<int>& ids,
                                      const std::vector<double>& features) const {
  if (ids.empty() && features.empty())
    throw std::runtime_error("encoder.encode_multimodal: both modalities absent");
  Tensor t = encode_text(g, ids);
  Tensor i = encode_image(g, features);
  return g.l2_normalize_rows(g.add(t, i));
}

}  // namespace ucrn
